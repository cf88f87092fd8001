//! Property tests for the invariants each module promises.

use std::collections::BTreeSet;

use avatarfit::body::{lbs_forward, lbs_inverse, rest_pose_template, BodyParams, ParametricModel};
use avatarfit::eval::{chamfer_points, psnr, render, ssim, Image};
use avatarfit::geometry::primitives::{capsule, grid, icosphere};
use avatarfit::geometry::{build_vertex_graph, nearest_point_on_surface, sample_surface, TriMesh};
use avatarfit::io::{format_obj, parse_obj};
use avatarfit::registration::{node_weight, sample_nodes, shift_residual, solve_shifts};
use avatarfit::synth::{make_model, random_params, SynthKind, SynthPreset};
use avatarfit::transfer::{apply_transfer, TransferSpec};
use avatarfit::triangulation::{
    adaptive_iterations, project, ransac_triangulate_joint, triangulate_dlt, Camera, CameraSet, RansacParams,
};
use nalgebra::{Matrix3, Rotation3, Vector3};
use proptest::prelude::*;

fn config(cases: u32) -> ProptestConfig {
    ProptestConfig { cases, ..ProptestConfig::default() }
}

fn kind() -> impl Strategy<Value = SynthKind> {
    prop_oneof![Just(SynthKind::CapsuleBiped), Just(SynthKind::CylinderChain), Just(SynthKind::Sphere)]
}

fn model(kind: SynthKind) -> ParametricModel<f64> {
    make_model(&SynthPreset { kind, resolution: 1, blend_shapes: true, chain_joints: 4, ..SynthPreset::default() }).unwrap()
}

fn vec3(range: f64) -> impl Strategy<Value = Vector3<f64>> {
    (-range..range, -range..range, -range..range).prop_map(|(x, y, z)| Vector3::new(x, y, z))
}

/// Icosphere with seeded radial noise.
fn lumpy_sphere(level: usize, seed: u64) -> TriMesh<f64> {
    let s = icosphere::<f64>(level, 1.0);
    let verts = s
        .vertices
        .iter()
        .enumerate()
        .map(|(i, v)| v * (1.0 + 0.2 * (((i as u64).wrapping_mul(2654435761).wrapping_add(seed) % 1000) as f64 / 1000.0)))
        .collect();
    s.with_vertices(verts)
}

proptest! {
    #![proptest_config(config(24))]

    #[test]
    fn geodesic_triangle_inequality(seed in 0u64..1000, a in 0usize..162, b in 0usize..162, c in 0usize..162) {
        let mesh = lumpy_sphere(2, seed);
        let g = build_vertex_graph(&mesh);
        let da = g.geodesic_distances(a, None);
        let db = g.geodesic_distances(b, None);
        prop_assert!(da[&c] <= da[&b] + db[&c] + 1e-9);
    }

    #[test]
    fn hop_neighborhoods_nest(source in 0usize..162, k in 0usize..5) {
        let g = build_vertex_graph(&icosphere::<f64>(2, 1.0));
        let inner = g.hop_neighborhood(source, k);
        prop_assert!(inner.is_subset(&g.hop_neighborhood(source, k + 1)));
    }

    #[test]
    fn nearest_surface_point_beats_every_vertex(seed in 0u64..1000, q in vec3(2.0)) {
        let mesh = lumpy_sphere(1, seed);
        let hit = nearest_point_on_surface(&mesh, &q).unwrap();
        for v in &mesh.vertices {
            prop_assert!(hit.distance <= (q - v).norm() + 1e-12);
        }
    }

    #[test]
    fn sample_barycentrics_reconstruct_points(seed in 0u64..10_000) {
        let mesh = lumpy_sphere(1, seed);
        let s = sample_surface(&mesh, 200, seed).unwrap();
        for ((p, &f), b) in s.points.iter().zip(&s.face_ids).zip(&s.barycentrics) {
            let [a, bb, c] = mesh.triangle(f);
            prop_assert!((a * b[0] + bb * b[1] + c * b[2] - p).norm() < 1e-9);
        }
    }

    #[test]
    fn rest_pose_identity_and_displacement_linearity(kind in kind(), seed in 0u64..1000) {
        let m = model(kind);
        let zero = BodyParams::zeros(&m);
        let rest = lbs_forward(&m, &zero).unwrap().vertices;
        for (a, b) in rest.iter().zip(&m.template) {
            prop_assert!((a - b).norm() < 1e-9);
        }
        let d: Vec<_> = (0..m.num_vertices()).map(|i| Vector3::new(1.0, -2.0, 0.5) * (((i as u64 + seed) % 7) as f64 * 1e-3)).collect();
        let shifted = lbs_forward(&m, &BodyParams { displacement: Some(d.clone()), ..zero }).unwrap().vertices;
        for ((s, r), dv) in shifted.iter().zip(&rest).zip(&d) {
            prop_assert!((s - (r + dv)).norm() < 1e-12);
        }
    }

    #[test]
    fn root_rotation_is_rigid_about_root_joint(kind in kind(), seed in 0u64..1000, w in vec3(1.5)) {
        let m = model(kind);
        let p = random_params(&m, 0.4, seed);
        let base = lbs_forward(&m, &p).unwrap();
        let root = base.joint_transforms[0].translation;
        let r = Rotation3::new(w);
        let mut q = p.clone();
        q.theta[0] = (r * Rotation3::new(p.theta[0])).scaled_axis();
        let turned = lbs_forward(&m, &q).unwrap().vertices;
        for (a, b) in turned.iter().zip(&base.vertices) {
            prop_assert!((a - (r * (b - root) + root)).norm() < 1e-9);
        }
    }

    #[test]
    fn forward_inverse_round_trip(kind in kind(), seed in 0u64..1000) {
        let m = model(kind);
        let p = random_params(&m, 0.5, seed);
        let posed = lbs_forward(&m, &p).unwrap().vertices;
        let unposed = lbs_inverse(&m, &posed, &p).unwrap();
        let rest = rest_pose_template(&m, &p).unwrap();
        for (a, b) in unposed.iter().zip(&rest) {
            prop_assert!((a - b).norm() < 1e-6);
        }
    }

    #[test]
    fn transfer_conserves_regressor_and_weights(center in 0usize..122, seed in 0u64..100) {
        let m = model(SynthKind::CylinderChain);
        let g = build_vertex_graph(&m.template_mesh().unwrap());
        let ids: BTreeSet<usize> = g.hop_neighborhood(center, 1 + (seed % 2) as usize);
        let spec = TransferSpec { delete_ids: ids, ..TransferSpec::default() };
        let (lite, _) = apply_transfer(&m, std::slice::from_ref(&spec)).unwrap();
        lite.template_mesh().unwrap().validate().unwrap();
        for j in 0..m.num_joints() {
            let before: f64 = m.joint_regressor.row(j).sum();
            let after: f64 = lite.joint_regressor.row(j).sum();
            prop_assert!((before - after).abs() < 1e-9);
        }
        for v in 0..lite.num_vertices() {
            let row = lite.skin_weights.row(v);
            prop_assert!((row.sum() - 1.0).abs() < 1e-6);
            prop_assert!(row.iter().all(|&w| (0.0..=1.0).contains(&w)));
        }
        let (again, _) = apply_transfer(&m, &[spec]).unwrap();
        prop_assert_eq!(again, lite);
    }

    #[test]
    fn node_sampling_covers_and_separates(nx in 2usize..14, ny in 2usize..14, k in 1usize..4, seed in 0u64..1000) {
        let mesh = grid::<f64>(nx, ny, 0.1);
        let g = build_vertex_graph(&mesh);
        let nodes = sample_nodes(&g, k, seed);
        let node_set: BTreeSet<usize> = nodes.iter().copied().collect();
        for v in 0..mesh.num_vertices() {
            prop_assert!(g.hop_neighborhood(v, k).iter().any(|u| node_set.contains(u)));
        }
        for &a in &nodes {
            let near = g.hop_neighborhood(a, k);
            prop_assert!(nodes.iter().all(|&b| b == a || !near.contains(&b)));
        }
    }

    #[test]
    fn node_weight_monotone_with_compact_support(r in 0.01f64..1.0, alpha in 0.5f64..3.0, a in 0.0f64..4.0, b in 0.0f64..4.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let (wl, wh) = (node_weight(lo * r, r, alpha), node_weight(hi * r, r, alpha));
        prop_assert!(wh <= wl);
        prop_assert!((0.0..=1.0).contains(&wl));
        if hi >= alpha {
            prop_assert_eq!(wh, 0.0);
        }
    }

    #[test]
    fn stage2_normal_equations_hold(seed in 0u64..1000, lambda in prop_oneof![Just(0.01), Just(1.0), Just(100.0)]) {
        let mesh = capsule::<f64>(0.1, 0.3, 12, 3, 6);
        let targets: Vec<_> = mesh
            .vertices
            .iter()
            .enumerate()
            .map(|(i, v)| ((i as u64 + seed) % 5 != 0).then(|| v * 1.05 + Vector3::new(0.0, 0.01 * ((i as u64 * seed) % 3) as f64, 0.0)))
            .collect();
        let (d, _) = solve_shifts(&mesh, &targets, lambda).unwrap();
        let res = shift_residual(&mesh, &targets, lambda, &d);
        prop_assert!(res.iter().all(|&r| r < 1e-8), "{:?}", res);
    }

    #[test]
    fn obj_round_trip_is_idempotent(seed in 0u64..1000) {
        let mesh = lumpy_sphere(1, seed);
        let (once, _) = parse_obj(&format_obj(&mesh)).unwrap();
        let (twice, _) = parse_obj(&format_obj(&once)).unwrap();
        prop_assert_eq!(&once, &mesh);
        prop_assert_eq!(once, twice);
    }
}

fn ring(n: usize, radius: f64, lift: f64) -> CameraSet<f64> {
    let k = Matrix3::new(3000.0, 0.0, 2048.0, 0.0, 3000.0, 1500.0, 0.0, 0.0, 1.0);
    let cameras = (0..n)
        .map(|i| {
            let a = std::f64::consts::TAU * i as f64 / n as f64;
            let eye = Vector3::new(radius * a.cos(), lift * (i % 3) as f64, radius * a.sin());
            Camera::look_at(format!("c{i}"), eye, Vector3::zeros(), k, 4096, 3000)
        })
        .collect();
    CameraSet { cameras }
}

fn observe(cams: &CameraSet<f64>, x: &Vector3<f64>) -> Vec<Option<[f64; 3]>> {
    cams.cameras
        .iter()
        .map(|c| {
            let p = project(&c.projection(), x).unwrap();
            Some([p.x, p.y, 1.0])
        })
        .collect()
}

proptest! {
    #![proptest_config(config(32))]

    #[test]
    fn noiseless_dlt_is_exact(n in 2usize..10, radius in 2.0f64..6.0, x in vec3(0.8)) {
        let cams = ring(n.max(3), radius, 0.4);
        let obs: Vec<_> = cams
            .cameras
            .iter()
            .map(|c| (c.projection(), project(&c.projection(), &x).unwrap()))
            .collect();
        let y = triangulate_dlt(&obs).unwrap();
        prop_assert!((y - x).norm() <= 1e-9 * x.norm().max(1.0));
    }

    #[test]
    fn ransac_inliers_reproject_within_tau_and_are_deterministic(x in vec3(0.8), seed in 0u64..1000, bad in 0usize..4) {
        let cams = ring(8, 3.0, 0.3);
        let mut obs = observe(&cams, &x);
        for (i, o) in obs.iter_mut().take(bad).enumerate() {
            let p = o.as_mut().unwrap();
            p[0] += 120.0 + 10.0 * i as f64;
            p[1] -= 80.0;
        }
        let params = RansacParams { seed, ..RansacParams::default() };
        let est = ransac_triangulate_joint(&obs, &cams, &params).unwrap();
        for &c in &est.inliers {
            let p = project(&cams.cameras[c].projection(), &est.point).unwrap();
            let o = obs[c].unwrap();
            prop_assert!((p.x - o[0]).hypot(p.y - o[1]) < params.tau);
        }
        prop_assert_eq!(est.inliers.len(), 8 - bad);
        let again = ransac_triangulate_joint(&obs, &cams, &params).unwrap();
        prop_assert_eq!(again.inliers, est.inliers);
        prop_assert_eq!(again.point, est.point);
    }

    #[test]
    fn adding_a_consistent_view_never_loses_inliers(x in vec3(0.8), seed in 0u64..1000) {
        let cams = ring(7, 3.0, 0.3);
        let mut obs = observe(&cams, &x);
        obs[0].as_mut().unwrap()[0] += 150.0;
        obs[3].as_mut().unwrap()[1] += 150.0;
        let params = RansacParams { seed, ..RansacParams::default() };
        let before = ransac_triangulate_joint(&obs, &cams, &params).unwrap().inliers.len();
        let mut more = cams.clone();
        let extra = Camera::look_at("extra", Vector3::new(0.5, 2.5, 2.0), Vector3::zeros(), cams.cameras[0].k, 4096, 3000);
        obs.push(Some({
            let p = project(&extra.projection(), &x).unwrap();
            [p.x, p.y, 1.0]
        }));
        more.cameras.push(extra);
        let after = ransac_triangulate_joint(&obs, &more, &params).unwrap().inliers.len();
        prop_assert!(after >= before);
    }

    #[test]
    fn adaptive_iterations_closed_form(p in 0.5f64..0.999, r in 0.01f64..0.99, v in 1usize..6) {
        // log(1 - r^v) through ln_1p; the literal form cancels for small r^v
        let expect = ((1.0 - p).ln() / (-r.powi(v as i32)).ln_1p()).ceil() as usize;
        prop_assert_eq!(adaptive_iterations(p, r, v), expect.max(1));
    }

    #[test]
    fn chamfer_points_symmetric_and_non_negative(a in prop::collection::vec(vec3(1.0), 1..40), b in prop::collection::vec(vec3(1.0), 1..40)) {
        let ab = chamfer_points(&a, &b).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert_eq!(ab, chamfer_points(&b, &a).unwrap());
        prop_assert_eq!(chamfer_points(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn ssim_in_range_and_one_only_for_identical(seed in 0u64..1000, amp in 0.0f64..0.5) {
        let a = Image::from_fn(24, 20, |x, y| {
            let v = (((x * 7 + y * 13) as u64 + seed) % 17) as f64 / 16.0;
            [v, 1.0 - v, 0.5]
        });
        let b = Image::from_fn(24, 20, |x, y| {
            let [r, g, bl] = a.get(x, y);
            let n = if (x + y) % 2 == 0 { amp } else { -amp };
            [(r + n).clamp(0.0, 1.0), g, bl]
        });
        let s = ssim(&a, &b, None).unwrap();
        prop_assert!((-1.0..=1.0 + 1e-12).contains(&s));
        prop_assert!((ssim(&a, &a, None).unwrap() - 1.0).abs() < 1e-9);
        if a != b {
            prop_assert!(s < 1.0 - 1e-12);
        }
    }
}

#[test]
fn psnr_decreases_with_noise_amplitude() {
    let a = Image::from_fn(32, 32, |x, y| [0.5, (x as f64) / 64.0 + 0.25, (y as f64) / 64.0 + 0.25]);
    let mut last = f64::INFINITY;
    for step in 1..=10 {
        let amp = 0.02 * step as f64;
        let b = Image::from_fn(32, 32, |x, y| {
            let n = if (x * 3 + y * 5) % 2 == 0 { amp } else { -amp };
            a.get(x, y).map(|c| c + n)
        });
        let p = psnr(&a, &b, None).unwrap();
        assert!(p < last, "amplitude {amp}: {p} >= {last}");
        last = p;
    }
}

#[test]
fn rendered_mask_ignores_texture() {
    let mesh = icosphere::<f64>(2, 0.5);
    let uv: Vec<_> = mesh.vertices.iter().map(|v| nalgebra::Vector2::new(0.5 + 0.4 * v.x, 0.5 + 0.4 * v.y)).collect();
    let mesh = mesh.clone().with_uvs(uv, mesh.faces.clone()).unwrap();
    let k = Matrix3::new(80.0, 0.0, 32.0, 0.0, 80.0, 24.0, 0.0, 0.0, 1.0);
    let cam = Camera::look_at("c", Vector3::new(0.0, 0.0, 3.0), Vector3::zeros(), k, 64, 48);
    let (_, m1) = render(&mesh, &Image::filled(8, 8, [0.2, 0.4, 0.6]), &cam).unwrap();
    let (_, m2) = render(&mesh, &avatarfit::synth::checker_texture(64, 4), &cam).unwrap();
    assert_eq!(m1, m2);
    assert!(m1.count() > 0);
}
