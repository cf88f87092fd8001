use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use super::{io_err, IoError};
use crate::eval::{Image, Mask};

fn img_err(path: &Path, e: impl std::fmt::Display) -> IoError {
    IoError::Image { path: path.display().to_string(), message: e.to_string() }
}

/// Decodes any 8-bit PNG to `(width, height, rgb bytes)`; alpha is dropped and grey is
/// replicated.
fn decode(path: &Path) -> Result<(usize, usize, Vec<u8>), IoError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(png::Transformations::EXPAND);
    let mut reader = decoder.read_info().map_err(|e| img_err(path, e))?;
    let mut buf = vec![0; reader.output_buffer_size().ok_or_else(|| img_err(path, "image too large"))?];
    let info = reader.next_frame(&mut buf).map_err(|e| img_err(path, e))?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(img_err(path, format!("unsupported bit depth {:?}", info.bit_depth)));
    }
    let channels = info.color_type.samples();
    let (w, h) = (info.width as usize, info.height as usize);
    let mut rgb = Vec::with_capacity(3 * w * h);
    for y in 0..h {
        let row = &buf[y * info.line_size..y * info.line_size + w * channels];
        for px in row.chunks_exact(channels) {
            match channels {
                1 | 2 => rgb.extend_from_slice(&[px[0]; 3]),
                _ => rgb.extend_from_slice(&px[..3]),
            }
        }
    }
    Ok((w, h, rgb))
}

fn encode(path: &Path, w: usize, h: usize, color: png::ColorType, data: &[u8]) -> Result<(), IoError> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), w as u32, h as u32);
    encoder.set_color(color);
    encoder.set_depth(png::BitDepth::Eight);
    let mut writer = encoder.write_header().map_err(|e| img_err(path, e))?;
    writer.write_image_data(data).map_err(|e| img_err(path, e))?;
    writer.finish().map_err(|e| img_err(path, e))
}

/// Reads an 8-bit PNG as RGB in `[0, 1]` (value / 255).
pub fn read_png(path: &Path) -> Result<Image<f64>, IoError> {
    let (w, h, rgb) = decode(path)?;
    Ok(Image { width: w, height: h, pixels: rgb.iter().map(|&b| b as f64 / 255.0).collect() })
}

/// Writes an RGB PNG, quantizing `round(255 v)` with `v` clamped to `[0, 1]`.
pub fn write_png(path: &Path, image: &Image<f64>) -> Result<(), IoError> {
    let bytes: Vec<u8> = image.pixels.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    encode(path, image.width, image.height, png::ColorType::Rgb, &bytes)
}

/// Pixels whose first channel is at least 128 are set.
pub fn read_mask(path: &Path) -> Result<Mask, IoError> {
    let (w, h, rgb) = decode(path)?;
    Ok(Mask { width: w, height: h, values: rgb.chunks_exact(3).map(|p| p[0] >= 128).collect() })
}

/// Greyscale PNG, 255 for set pixels.
pub fn write_mask(path: &Path, mask: &Mask) -> Result<(), IoError> {
    let bytes: Vec<u8> = mask.values.iter().map(|&v| if v { 255 } else { 0 }).collect();
    encode(path, mask.width, mask.height, png::ColorType::Grayscale, &bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn image_and_mask_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let img = Image::from_fn(5, 3, |x, y| [x as f64 / 4.0, y as f64 / 2.0, 1.0]);
        let p = dir.path().join("a.png");
        write_png(&p, &img).unwrap();
        let back = read_png(&p).unwrap();
        assert_eq!((back.width, back.height), (5, 3));
        for (a, b) in img.pixels.iter().zip(&back.pixels) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
        }
        // quantized values survive a second trip exactly
        write_png(&p, &back).unwrap();
        assert_eq!(read_png(&p).unwrap(), back);

        let mut mask = Mask::new(4, 2);
        mask.values[1] = true;
        mask.values[6] = true;
        let m = dir.path().join("m.png");
        write_mask(&m, &mask).unwrap();
        assert_eq!(read_mask(&m).unwrap(), mask);
    }

    #[test]
    fn missing_file_is_an_io_error() {
        assert!(matches!(read_png(Path::new("/nonexistent/x.png")), Err(IoError::Io { .. })));
    }
}
