//! Acceptance suite. Each criterion is its own test and prints one `criterion N: PASS|FAIL`
//! line with the measured quantities (run with `--nocapture` to see them).

use std::collections::BTreeSet;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use avatarfit::body::{lbs_forward, lbs_inverse, rest_pose_template, BodyParams, ParametricModel};
use avatarfit::eval::{chamfer_distance, psnr, render, ssim, Image};
use avatarfit::geometry::primitives::{grid, icosphere};
use avatarfit::geometry::{build_vertex_graph, TriMesh, VertexGraph};
use avatarfit::registration::{fit, node_weight, sample_nodes, shift_residual, solve_shifts, FitConfig, Stages};
use avatarfit::synth::{
    checker_texture, make_cameras, make_dense_scan, make_model, make_rig, random_params, NoiseSpec, RigSpec,
    SynthKind, SynthPreset,
};
use avatarfit::transfer::{apply_transfer, TransferSpec};
use avatarfit::triangulation::{
    adaptive_iterations, project, triangulate_dlt, triangulate_sequence, Camera, RansacParams,
};
use nalgebra::{Matrix3, Rotation3, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn verdict(n: usize, ok: bool, detail: String) {
    println!("criterion {n}: {} {detail}", if ok { "PASS" } else { "FAIL" });
    assert!(ok, "criterion {n} failed: {detail}");
}

fn max_dist(a: &[Vector3<f64>], b: &[Vector3<f64>]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

fn rms(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x * x, n + 1));
    (s / n as f64).sqrt()
}

fn percentile(mut v: Vec<f64>, q: f64) -> f64 {
    v.sort_by(f64::total_cmp);
    v[((v.len() - 1) as f64 * q).round() as usize]
}

#[test]
fn criterion_1_lbs_correctness() {
    let start = Instant::now();
    let models: Vec<ParametricModel<f64>> = [
        SynthPreset { resolution: 2, blend_shapes: true, ..SynthPreset::default() },
        SynthPreset { kind: SynthKind::CylinderChain, resolution: 2, chain_joints: 5, blend_shapes: true, ..SynthPreset::default() },
        SynthPreset { kind: SynthKind::Sphere, resolution: 1, blend_shapes: true, ..SynthPreset::default() },
    ]
    .iter()
    .map(|p| make_model(p).unwrap())
    .collect();
    for m in &models {
        let rest = lbs_forward(m, &BodyParams::zeros(m)).unwrap().vertices;
        assert!(max_dist(&rest, &m.template) < 1e-9);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut rigid, mut round_trip) = (0.0f64, 0.0f64);
    for draw in 0..1000u64 {
        let m = &models[draw as usize % models.len()];
        let mut p = random_params(m, 0.6, draw);
        p.transl = Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0));
        let base = lbs_forward(m, &p).unwrap();

        let w = Vector3::from_fn(|_, _| rng.random_range(-2.0..2.0));
        let t = Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0));
        let r = Rotation3::new(w);
        let root = base.joint_transforms[0].translation;
        let mut q = p.clone();
        q.theta[0] = (r * Rotation3::new(p.theta[0])).scaled_axis();
        q.transl += t;
        let moved = lbs_forward(m, &q).unwrap().vertices;
        let expect: Vec<_> = base.vertices.iter().map(|v| r * (v - root) + root + t).collect();
        rigid = rigid.max(max_dist(&moved, &expect));

        let back = lbs_inverse(m, &base.vertices, &p).unwrap();
        round_trip = round_trip.max(max_dist(&back, &rest_pose_template(m, &p).unwrap()));
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        1,
        rigid < 1e-9 && round_trip < 1e-6 && secs < 10.0,
        format!("rigid {rigid:.2e}, round trip {round_trip:.2e}, {secs:.2} s over 1000 draws"),
    );
}

#[test]
fn criterion_2_transfer_conservation() {
    let m: ParametricModel<f64> = make_model(&SynthPreset { resolution: 2, blend_shapes: true, ..SynthPreset::default() }).unwrap();
    let g = build_vertex_graph(&m.template_mesh().unwrap());
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut row_err, mut weight_err) = (0.0f64, 0.0f64);
    for _ in 0..5 {
        let center = rng.random_range(0..m.num_vertices());
        let spec = TransferSpec { delete_ids: g.hop_neighborhood(center, 2), ..TransferSpec::default() };
        let (lite, _) = apply_transfer(&m, &[spec]).unwrap();
        for j in 0..m.num_joints() {
            row_err = row_err.max((m.joint_regressor.row(j).sum() - lite.joint_regressor.row(j).sum()).abs());
        }
        for v in 0..lite.num_vertices() {
            weight_err = weight_err.max((lite.skin_weights.row(v).sum() - 1.0).abs());
        }
    }
    let (same, _) = apply_transfer(&m, &[TransferSpec::default()]).unwrap();
    let identity = same == m;
    verdict(
        2,
        row_err < 1e-9 && weight_err < 1e-6 && identity,
        format!("regressor row drift {row_err:.2e}, weight row error {weight_err:.2e}, identity bit-exact {identity}"),
    );
}

/// Hop distance from every vertex to the nearest source, or `usize::MAX`.
fn multi_source_hops(g: &VertexGraph<f64>, sources: &[usize]) -> Vec<usize> {
    let mut dist = vec![usize::MAX; g.num_vertices()];
    let mut frontier: Vec<usize> = sources.to_vec();
    for &s in sources {
        dist[s] = 0;
    }
    let mut hops = 0;
    while !frontier.is_empty() {
        hops += 1;
        let mut next = Vec::new();
        for &v in &frontier {
            for &u in g.neighbors(v) {
                if dist[u] == usize::MAX {
                    dist[u] = hops;
                    next.push(u);
                }
            }
        }
        frontier = next;
    }
    dist
}

#[test]
fn criterion_3_node_sampling() {
    let start = Instant::now();
    let meshes: Vec<(&str, TriMesh<f64>)> = vec![
        ("grid 100x100", grid(100, 100, 0.01)),
        ("icosphere 2562", icosphere(4, 1.0)),
        ("biped res 4", make_model::<f64>(&SynthPreset { resolution: 4, ..SynthPreset::default() }).unwrap().template_mesh().unwrap()),
    ];
    let mut checked = 0;
    let mut failures = Vec::new();
    for (name, mesh) in &meshes {
        assert!(mesh.num_vertices() <= 10_000);
        let g = build_vertex_graph(mesh);
        for k in 1..=3 {
            for seed in 0..20 {
                let nodes = sample_nodes(&g, k, seed);
                let node_set: BTreeSet<usize> = nodes.iter().copied().collect();
                let cover = multi_source_hops(&g, &nodes);
                if cover.iter().any(|&h| h > k) {
                    failures.push(format!("{name} k={k} seed={seed}: uncovered vertex"));
                }
                for &a in &nodes {
                    let near = g.hop_neighborhood(a, k);
                    if near.iter().any(|b| *b != a && node_set.contains(b)) {
                        failures.push(format!("{name} k={k} seed={seed}: nodes within {k} hops"));
                        break;
                    }
                }
                checked += 1;
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(3, failures.is_empty() && secs < 60.0, format!("{checked} samplings checked in {secs:.2} s, failures {failures:?}"));
}

#[test]
fn criterion_4_weight_function() {
    let (r, alpha) = (0.037, 1.5);
    let at_zero = node_weight(0.0, r, alpha);
    let at_edge = node_weight(alpha * r, r, alpha);
    let at_mid = node_weight(alpha * r / 2f64.sqrt(), r, alpha);
    let grid: Vec<f64> = (0..1000).map(|i| node_weight(2.0 * alpha * r * i as f64 / 999.0, r, alpha)).collect();
    let monotone = grid.windows(2).all(|w| w[1] <= w[0]);
    verdict(
        4,
        (at_zero - 1.0).abs() <= 1e-12 && at_edge.abs() <= 1e-12 && (at_mid - 0.125).abs() <= 1e-12 && monotone,
        format!("w(0) = {at_zero}, w(ar) = {at_edge}, w(ar/sqrt 2) = {at_mid}, monotone {monotone}"),
    );
}

#[test]
fn criterion_5_registration_recovery() {
    let start = Instant::now();
    let preset = SynthPreset::default();
    let model: ParametricModel<f64> = make_model(&preset).unwrap();
    let params = make_rig(&preset).unwrap().params.remove(0);
    let (scan, truth) = make_dense_scan(&preset, &params, &preset.displacement, preset.scan_oversample).unwrap();
    let cfg = FitConfig::default();
    let out = fit(&model, &params, &scan, &cfg, Stages::Both).unwrap();

    let cd = |m: &TriMesh<f64>| chamfer_distance(m, &scan, 100_000, 3).unwrap();
    let (cd_init, cd_stage1, cd_fit) = (cd(&out.posed), cd(out.stage1.as_ref().unwrap()), cd(&out.fitted));
    let true_rms = rms(truth.iter().map(|d| d.norm()));
    let rel = |d: &[Vector3<f64>]| rms(d.iter().zip(&truth).map(|(a, b)| (a - b).norm())) / true_rms;
    let rel_d = rel(&out.displacement);
    let secs = start.elapsed().as_secs_f64();

    // the fine shift stage on its own, for reference in the report line
    let alone = fit(&model, &params, &scan, &cfg, Stages::Two).unwrap();
    let alone_cd = 1000.0 * cd(&alone.fitted);
    let alone_rel = rel(&alone.displacement);

    let ordered = cd_fit <= cd_stage1 && cd_stage1 <= cd_init;
    verdict(
        5,
        ordered && 1000.0 * cd_fit < 1.0 && rel_d < 0.05 && secs < 300.0,
        format!(
            "cd x1e3 initial {:.3} / stage 1 {:.3} / final {:.3}, ordered {ordered}, displacement rel RMS {rel_d:.4} \
             (needs < 0.05), {secs:.1} s; shift stage alone: cd x1e3 {alone_cd:.3}, rel RMS {alone_rel:.4}",
            1000.0 * cd_init,
            1000.0 * cd_stage1,
            1000.0 * cd_fit
        ),
    );
}

#[test]
fn criterion_6_stage2_closed_form() {
    let mesh: TriMesh<f64> = make_model::<f64>(&SynthPreset { resolution: 2, ..SynthPreset::default() })
        .unwrap()
        .template_mesh()
        .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let targets: Vec<Option<Vector3<f64>>> = mesh
        .vertices
        .iter()
        .map(|v| Some(v + Vector3::from_fn(|_, _| rng.random_range(-0.01..0.01))))
        .collect();
    let (d, _) = solve_shifts(&mesh, &targets, 0.0).unwrap();
    let exact = d
        .iter()
        .zip(&targets)
        .zip(&mesh.vertices)
        .map(|((d, c), v)| (d - (c.unwrap() - v)).norm())
        .fold(0.0, f64::max);
    let mut worst = 0.0f64;
    for lambda in [1e-2, 1.0, 1e2] {
        let (d, _) = solve_shifts(&mesh, &targets, lambda).unwrap();
        worst = worst.max(shift_residual(&mesh, &targets, lambda, &d).into_iter().fold(0.0, f64::max));
    }
    verdict(
        6,
        exact < 1e-8 && worst < 1e-8,
        format!("lambda 0 max deviation {exact:.2e}, worst relative residual {worst:.2e}"),
    );
}

fn triangulation_errors(preset: &SynthPreset, params: &RansacParams) -> (Vec<f64>, bool) {
    let rig = make_rig(preset).unwrap();
    let k3d = triangulate_sequence(&rig.keypoints, &rig.cameras, params).unwrap();
    let mut errors = Vec::new();
    let mut outliers_excluded = true;
    for ((frame, truth), outliers) in k3d.frames.iter().zip(&rig.joints).zip(&rig.outlier_views) {
        for (j, x) in truth.iter().enumerate() {
            let p = frame.points[j].expect("every joint is triangulated");
            errors.push((Vector3::from(p) - x).norm());
            let inl = frame.inliers[j].as_ref().unwrap();
            outliers_excluded &= outliers[j].iter().all(|id| !inl.contains(id));
        }
    }
    (errors, outliers_excluded)
}

#[test]
fn criterion_7_triangulation() {
    let start = Instant::now();
    let cams = make_cameras(&RigSpec::default());
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut exact = 0.0f64;
    for _ in 0..100 {
        let x = Vector3::from_fn(|_, _| rng.random_range(-0.8..0.8));
        let obs: Vec<_> = cams
            .cameras
            .iter()
            .map(|c| (c.projection(), project(&c.projection(), &x).unwrap()))
            .collect();
        exact = exact.max((triangulate_dlt(&obs).unwrap() - x).norm() / x.norm());
    }

    let params = RansacParams::default();
    let base = SynthPreset { frames: 100, ..SynthPreset::default() };
    let (noisy, _) = triangulation_errors(&base, &params);
    let p95 = percentile(noisy, 0.95);
    let with_outliers = SynthPreset { noise: NoiseSpec { outlier_fraction: 3.0 / 8.0, ..NoiseSpec::default() }, ..base };
    let (errs, excluded) = triangulation_errors(&with_outliers, &params);
    let p95_out = percentile(errs, 0.95);

    let mut formula = true;
    for pi in [0.5f64, 0.9, 0.95, 0.99, 0.999] {
        for ri in 1..100 {
            let r = ri as f64 / 100.0;
            for v in 2..6 {
                let rv = r.powi(v as i32);
                let got = adaptive_iterations(pi, r, v) as f64;
                // log(1 - r^v) evaluated without cancellation must match exactly; the literal
                // form loses about eps / r^v relative precision, so it gets that much slack
                let exact = ((1.0 - pi).ln() / (-rv).ln_1p()).ceil();
                let literal = (1.0 - pi).ln() / (1.0 - rv).ln();
                formula &= got == exact && (got - literal).abs() <= 1.0 + literal * 4.0 * f64::EPSILON / rv;
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        7,
        exact < 1e-9 && p95 < 0.005 && excluded && p95_out < 0.005 && formula && secs < 60.0,
        format!(
            "noiseless rel {exact:.2e}, noisy p95 {:.3} mm, outliers excluded {excluded} with p95 {:.3} mm, \
             adaptive formula {formula}, {secs:.1} s",
            1000.0 * p95,
            1000.0 * p95_out
        ),
    );
}

#[test]
fn criterion_8_metrics() {
    let sphere = icosphere::<f64>(5, 1.0);
    let self_cd = chamfer_distance(&sphere, &sphere, 10_000, 0).unwrap();
    let bigger = sphere.with_vertices(sphere.vertices.iter().map(|v| v * 1.01).collect());
    let scaled_cd = chamfer_distance(&sphere, &bigger, 100_000, 0).unwrap();

    let a = Image::from_fn(64, 48, |x, y| [0.2 + x as f64 / 128.0, 0.3 + y as f64 / 128.0, 0.5]);
    let b = Image::from_fn(64, 48, |x, y| a.get(x, y).map(|c| c + 1.0 / 255.0));
    let db = psnr(&a, &b, None).unwrap();
    let s = ssim(&a, &a, None).unwrap();

    // quad in the z = 0 plane seen head-on from z = 2
    let k = Matrix3::new(200.0, 0.0, 64.0, 0.0, 200.0, 48.0, 0.0, 0.0, 1.0);
    let cam = Camera::look_at("c", Vector3::new(0.0, 0.0, 2.0), Vector3::zeros(), k, 128, 96);
    let (x0, x1, y0, y1) = (-0.233, 0.3127, -0.1714, 0.1241);
    let quad = TriMesh::new(
        vec![Vector3::new(x0, y0, 0.0), Vector3::new(x1, y0, 0.0), Vector3::new(x1, y1, 0.0), Vector3::new(x0, y1, 0.0)],
        vec![[0, 1, 2], [0, 2, 3]],
    )
    .unwrap();
    let uv = vec![Vector2::new(0.0, 0.0), Vector2::new(1.0, 0.0), Vector2::new(1.0, 1.0), Vector2::new(0.0, 1.0)];
    let quad = quad.clone().with_uvs(uv, quad.faces.clone()).unwrap();
    let (_, mask) = render(&quad, &checker_texture(32, 4), &cam).unwrap();
    let corners: Vec<Vector2<f64>> = quad.vertices.iter().map(|v| project(&cam.projection(), v).unwrap()).collect();
    let (u0, u1) = (corners.iter().map(|c| c.x).fold(f64::MAX, f64::min), corners.iter().map(|c| c.x).fold(f64::MIN, f64::max));
    let (v0, v1) = (corners.iter().map(|c| c.y).fold(f64::MAX, f64::min), corners.iter().map(|c| c.y).fold(f64::MIN, f64::max));
    let mut mismatched = 0;
    for y in 0..96 {
        for x in 0..128 {
            // pixel centres sit at integer coordinates
            let (cx, cy) = (x as f64, y as f64);
            let inside = cx >= u0 && cx < u1 && cy >= v0 && cy < v1;
            mismatched += usize::from(inside != mask.get(x, y));
        }
    }

    verdict(
        8,
        self_cd == 0.0
            && (scaled_cd - 0.01).abs() <= 0.001
            && (db - 48.13).abs() <= 0.01
            && (s - 1.0).abs() <= 1e-9
            && mismatched == 0
            && mask.count() > 0,
        format!(
            "self chamfer {self_cd:e}, scaled-sphere chamfer {scaled_cd:.5}, PSNR {db:.4} dB, SSIM {s}, \
             mask pixels {} with {mismatched} mismatches",
            mask.count()
        ),
    );
}

fn avatarfit(args: &[&str]) -> Vec<u8> {
    let out = Command::new(env!("CARGO_BIN_EXE_avatarfit")).args(args).output().unwrap();
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out.stdout
}

/// synth, triangulate, fit and eval into `dir`; returns every JSON output concatenated.
fn pipeline(dir: &Path, jobs: &str) -> Vec<u8> {
    let d = |name: &str| dir.join(name).to_str().unwrap().to_string();
    let preset = dir.join("preset_in.json");
    std::fs::write(&preset, r#"{"kind": "capsule_biped", "resolution": 2, "scan_oversample": 2, "frames": 6, "seed": 5,
        "noise": {"pixel_sigma": 1.0, "outlier_fraction": 0.25}}"#)
    .unwrap();
    let mut all = Vec::new();
    all.extend(avatarfit(&["--jobs", jobs, "synth", "--preset", preset.to_str().unwrap(), "--out-dir", &d("s")]));
    all.extend(avatarfit(&[
        "--jobs", jobs, "triangulate", "--keypoints", &d("s/keypoints2d.json"), "--cameras", &d("s/cameras.json"),
        "--seed", "9", "--out", &d("k3d.json"),
    ]));
    all.extend(avatarfit(&[
        "--jobs", jobs, "fit", "--model", &d("s/model.avm"), "--params", &d("s/params.json"), "--scan", &d("s/scan.obj"),
        "--config", &d("s/fit.json"), "--out", &d("fitted.obj"), "--report", &d("report.json"), "--displacement",
        &d("disp.json"),
    ]));
    all.extend(avatarfit(&["--jobs", jobs, "eval-cd", "--a", &d("fitted.obj"), "--b", &d("s/scan.obj"), "--seed", "2"]));
    for name in ["s/scenario.json", "s/params.json", "s/keypoints2d.json", "k3d.json", "report.json", "disp.json", "fitted.obj"] {
        all.extend(std::fs::read(dir.join(name)).unwrap());
    }
    all
}

#[test]
fn criterion_9_determinism() {
    let runs: Vec<Vec<u8>> = ["1", "1", "4"]
        .iter()
        .map(|jobs| {
            let dir = tempfile::tempdir().unwrap();
            pipeline(dir.path(), jobs)
        })
        .collect();
    let repeat = runs[0] == runs[1];
    let jobs = runs[0] == runs[2];
    verdict(9, repeat && jobs, format!("identical across runs {repeat}, across --jobs 1/4 {jobs}, {} bytes compared", runs[0].len()));
}
