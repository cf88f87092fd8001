use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::Real;

/// RGB image, row-major, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct Image<T: Real> {
    pub width: usize,
    pub height: usize,
    /// `3 * width * height` interleaved RGB values.
    pub pixels: Vec<T>,
}

impl<T: Real> Image<T> {
    pub fn filled(width: usize, height: usize, rgb: [T; 3]) -> Self {
        let mut pixels = Vec::with_capacity(3 * width * height);
        for _ in 0..width * height {
            pixels.extend_from_slice(&rgb);
        }
        Self { width, height, pixels }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [T; 3]) -> Self {
        let mut pixels = Vec::with_capacity(3 * width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.extend_from_slice(&f(x, y));
            }
        }
        Self { width, height, pixels }
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        if self.width == 0 || self.height == 0 {
            return Err(EvalError::EmptyImage);
        }
        if self.pixels.len() != 3 * self.width * self.height {
            return Err(EvalError::DimensionMismatch(format!(
                "{}x{} image carries {} values",
                self.width,
                self.height,
                self.pixels.len()
            )));
        }
        if let Some(v) = self.pixels.iter().find(|v| !(**v >= T::zero() && **v <= T::one())) {
            return Err(EvalError::ValueRange(v.as_f64()));
        }
        Ok(())
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [T; 3] {
        let i = 3 * (y * self.width + x);
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, rgb: [T; 3]) {
        let i = 3 * (y * self.width + x);
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }

    fn channel(&self, c: usize) -> Vec<T> {
        self.pixels.iter().skip(c).step_by(3).copied().collect()
    }
}

/// Binary single-channel mask, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    pub values: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height, values: vec![false; width * height] }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.values[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.values.iter().filter(|&&v| v).count()
    }
}

fn check_pair<T: Real>(a: &Image<T>, b: &Image<T>, mask: Option<&Mask>) -> Result<(), EvalError> {
    a.validate()?;
    b.validate()?;
    if (a.width, a.height) != (b.width, b.height) {
        return Err(EvalError::DimensionMismatch(format!(
            "{}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    if let Some(m) = mask {
        if (m.width, m.height) != (a.width, a.height) || m.values.len() != m.width * m.height {
            return Err(EvalError::DimensionMismatch(format!(
                "mask {}x{} vs image {}x{}",
                m.width, m.height, a.width, a.height
            )));
        }
    }
    Ok(())
}

/// `10 log10(1 / MSE)` over masked pixels (all three channels); `+inf` when identical.
pub fn psnr<T: Real>(a: &Image<T>, b: &Image<T>, mask: Option<&Mask>) -> Result<T, EvalError> {
    check_pair(a, b, mask)?;
    let mut sum = T::zero();
    let mut count = 0usize;
    for p in 0..a.width * a.height {
        if mask.is_some_and(|m| !m.values[p]) {
            continue;
        }
        for c in 0..3 {
            let d = a.pixels[3 * p + c] - b.pixels[3 * p + c];
            sum += d * d;
        }
        count += 3;
    }
    if count == 0 {
        return Err(EvalError::EmptyMask);
    }
    let mse = sum / T::from_count(count);
    if mse == T::zero() {
        return Ok(T::lit(f64::INFINITY));
    }
    Ok(-T::lit(10.0) * mse.log10())
}

pub const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

pub(crate) fn gaussian_taps<T: Real>() -> Vec<T> {
    let half = (SSIM_WINDOW / 2) as f64;
    let raw: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-((i as f64 - half).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = raw.iter().sum();
    raw.iter().map(|v| T::lit(v / s)).collect()
}

/// Separable valid-mode filtering; output is `(w - 10) x (h - 10)`.
fn filter_valid<T: Real>(src: &[T], w: usize, h: usize, taps: &[T]) -> Vec<T> {
    let k = taps.len();
    let (ow, oh) = (w - k + 1, h - k + 1);
    let mut rows = vec![T::zero(); ow * h];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..k).fold(T::zero(), |acc, i| acc + taps[i] * src[y * w + x + i]);
        }
    }
    let mut out = vec![T::zero(); ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..k).fold(T::zero(), |acc, i| acc + taps[i] * rows[(y + i) * ow + x]);
        }
    }
    out
}

/// Mean SSIM with an 11x11 Gaussian window (σ = 1.5), computed per RGB channel over
/// windows lying fully inside the image, then averaged over channels. A mask selects
/// windows by their centre pixel.
pub fn ssim<T: Real>(a: &Image<T>, b: &Image<T>, mask: Option<&Mask>) -> Result<T, EvalError> {
    check_pair(a, b, mask)?;
    let (w, h) = (a.width, a.height);
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(EvalError::TooSmall { width: w, height: h, window: SSIM_WINDOW });
    }
    let taps = gaussian_taps::<T>();
    let c1 = T::lit(SSIM_K1 * SSIM_K1);
    let c2 = T::lit(SSIM_K2 * SSIM_K2);
    let half = SSIM_WINDOW / 2;
    let (ow, oh) = (w - SSIM_WINDOW + 1, h - SSIM_WINDOW + 1);
    let keep: Vec<bool> = (0..ow * oh)
        .map(|i| mask.is_none_or(|m| m.get(i % ow + half, i / ow + half)))
        .collect();
    let kept = keep.iter().filter(|&&k| k).count();
    if kept == 0 {
        return Err(EvalError::EmptyMask);
    }
    let mut total = T::zero();
    for c in 0..3 {
        let x = a.channel(c);
        let y = b.channel(c);
        let xx: Vec<T> = x.iter().map(|v| *v * *v).collect();
        let yy: Vec<T> = y.iter().map(|v| *v * *v).collect();
        let xy: Vec<T> = x.iter().zip(&y).map(|(p, q)| *p * *q).collect();
        let mx = filter_valid(&x, w, h, &taps);
        let my = filter_valid(&y, w, h, &taps);
        let sxx = filter_valid(&xx, w, h, &taps);
        let syy = filter_valid(&yy, w, h, &taps);
        let sxy = filter_valid(&xy, w, h, &taps);
        let mut sum = T::zero();
        for i in (0..ow * oh).filter(|&i| keep[i]) {
            let (ux, uy) = (mx[i], my[i]);
            let vx = sxx[i] - ux * ux;
            let vy = syy[i] - uy * uy;
            let cxy = sxy[i] - ux * uy;
            let two = T::lit(2.0);
            sum += ((two * ux * uy + c1) * (two * cxy + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
        }
        total += sum / T::from_count(kept);
    }
    Ok(total / T::lit(3.0))
}
