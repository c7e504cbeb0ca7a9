//! Property checks across modules against closed-form or brute-force oracles.

use lightflow::band::{detect_row_bands, estimate_flow, extract_channel, BandParams, FlowField, FlowParams, ScanProfile};
use lightflow::depth::{fit_plane_rmse, reconstruct_depth};
use lightflow::lut::{DepthRatioLut, LutParams};
use lightflow::presets;
use lightflow::rig::{demodulate, modulate, CameraModel, Channel, Modulation, ProjectorModel, RigCalibration};
use lightflow::sim::{render_frame, SceneSpec, Surface};
use nalgebra::Vector3;
use proptest::prelude::*;

fn modulation() -> impl Strategy<Value = Modulation> {
    prop_oneof![Just(Modulation::None), Just(Modulation::WideRight), Just(Modulation::WideLeft)]
}

/// Box train of lines `spacing` apart swept over `sweep`, area-sampled.
fn band_row(spacing: f64, sweep: f64, phase: f64, n: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    let mut a = phase - spacing;
    while a < n as f64 {
        let b = a + sweep;
        for (x, px) in v.iter_mut().enumerate() {
            let overlap = (b.min(x as f64 + 0.5) - a.max(x as f64 - 0.5)).max(0.0);
            *px += 0.9 * overlap;
        }
        a += spacing;
    }
    v
}

fn small_rig() -> RigCalibration {
    let mut rig = presets::converging_rig();
    rig.camera = CameraModel::new(700.0, [100.0, 75.0], [200, 150]).unwrap();
    rig
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn modulation_round_trip(u in 0.0f64..=1.0, m in modulation()) {
        let v = modulate(u, m).unwrap();
        prop_assert!((0.0..=1.0).contains(&v));
        prop_assert!((demodulate(v, m).unwrap() - u).abs() < 1e-12);
    }

    #[test]
    fn g_derivative_matches_difference(
        px in -0.5f64..0.5, pz in -0.6f64..0.0, tx in -0.2f64..0.2, tz in 0.6f64..1.2,
        u in 0.0f64..800.0, v in 0.0f64..600.0, z in 0.5f64..1.2,
    ) {
        let proj = ProjectorModel::look_at([px, 0.05, pz], [tx, 0.0, tz], 900.0, [1280, 800]).unwrap();
        let ray = presets::camera().pixel_ray([u, v]).unwrap();
        let h = 1e-4;
        if let (Ok(d), Ok(a), Ok(b)) = (proj.g_derivative(&ray, z), proj.g_eval(&ray, z + h), proj.g_eval(&ray, z - h)) {
            let fd = (a - b) / (2.0 * h);
            prop_assert!((d - fd).abs() <= 1e-6 * d.abs().max(1e-3));
        }
    }

    #[test]
    fn band_width_over_spacing_is_flow(spacing in 18.0f64..55.0, frac in 0.15f64..0.7, phase in 0.0f64..40.0) {
        let sweep = frac * spacing;
        let v = band_row(spacing, sweep, phase, 600);
        let profile = ScanProfile { row: 0, channel: Channel::Red, intensities: v };
        let bands = detect_row_bands(&profile, &BandParams::default()).unwrap();
        let valid: Vec<_> = bands.iter().filter(|b| b.valid).collect();
        prop_assert!(valid.len() >= 5);
        for b in valid {
            // sampling the unit-wide ramps limits each edge to a fraction of a pixel
            prop_assert!((b.width - sweep).abs() < 0.25, "width {} sweep {}", b.width, sweep);
            prop_assert!((b.interval().unwrap() - spacing).abs() < 0.25);
        }
    }

    #[test]
    fn power_of_two_scaling_keeps_depth(z in 0.5f64..1.0, e in -6i32..8) {
        let rig = small_rig();
        let lut = DepthRatioLut::build(&rig, &LutParams { grid_stride: 8, n_samples: 64, ..LutParams::default() }).unwrap();
        let (w, h) = (200, 150);
        let rate = |p: usize| -> Vec<f64> {
            (0..w * h)
                .map(|i| {
                    let ray = rig.camera.pixel_ray([(i % w) as f64, (i / w) as f64]).unwrap();
                    rig.line_index_rate(p, &ray, z).unwrap().abs() * 0.03
                })
                .collect()
        };
        let a = FlowField::new(w, h, rate(0), vec![true; w * h], Channel::Red).unwrap();
        let b = FlowField::new(w, h, rate(1), vec![true; w * h], Channel::Blue).unwrap();
        let (d, _) = reconstruct_depth(&a, &b, &lut).unwrap();
        let c = 2f64.powi(e);
        let (s, _) = reconstruct_depth(&a.scaled(c), &b.scaled(c), &lut).unwrap();
        prop_assert_eq!(&s.depth, &d.depth);
        prop_assert_eq!(&s.mask, &d.mask);
    }

    #[test]
    fn table_inverts_itself_between_nodes(x in 0.0f64..799.0, y in 0.0f64..599.0, z in 0.4f64..1.2) {
        let lut = table();
        let r = lut.h_eval([x, y], z).unwrap();
        prop_assert!((lut.h_invert([x, y], r).unwrap() - z).abs() < 1e-9);
    }

    #[test]
    fn plane_fit_is_exact_on_planes(nx in -0.5f64..0.5, ny in -0.5f64..0.5, d in 0.3f64..2.0) {
        let n = Vector3::new(nx, ny, 1.0).normalize();
        let points: Vec<Vector3<f64>> = (0..60)
            .map(|i| {
                let (u, v) = ((i % 8) as f64 * 0.05, (i / 8) as f64 * 0.04);
                let p = Vector3::new(u, v, 0.0);
                p + n * (d - n.dot(&p))
            })
            .collect();
        let fit = fit_plane_rmse(&points).unwrap();
        prop_assert!(fit.rmse < 1e-12);
        prop_assert!((fit.normal.dot(&n).abs() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn scene_text_round_trip(z in 0.3f64..2.0, vz in -0.5f64..0.5, e in 0.01f64..1.0, noise in 0.0f64..0.1, seed in any::<u64>()) {
        let mut scene = SceneSpec::new(Surface::board([0.0, 0.0, 1.0], z, 0.6, 0.4), [0.0, 0.0, vz], e);
        scene.noise_std = noise;
        scene.seed = seed;
        prop_assert_eq!(SceneSpec::from_kv_text(&scene.to_kv_text()).unwrap(), scene);
    }
}

fn table() -> &'static DepthRatioLut {
    static LUT: std::sync::OnceLock<DepthRatioLut> = std::sync::OnceLock::new();
    LUT.get_or_init(|| DepthRatioLut::build(&presets::converging_rig(), &LutParams::default()).unwrap())
}

/// Measured line-index flow of a rendered board agrees with the renderer's
/// own flow, which it derives from the geometry rather than the image.
#[test]
fn measured_flow_tracks_rendered_truth() {
    let rig = small_rig();
    for exposure in [0.2, 0.3] {
        let mut scene = SceneSpec::new(Surface::board([0.0, 0.0, 1.0], 0.6, 0.6, 0.4), [0.0, 0.0, 0.09], exposure);
        scene.noise_std = 0.0;
        let render = render_frame(&scene, &rig).unwrap();
        for p in 0..2 {
            let pattern = rig.pattern(p);
            let plane = extract_channel(&render.frame, pattern.channel, None);
            let params = FlowParams { sigma: 0.0, ..FlowParams::default() };
            let est = estimate_flow(&plane, pattern.channel, pattern.line_width / pattern.interval, &params).unwrap();
            let truth = &render.truth_flow[p];
            let mut rel: Vec<f64> = (0..truth.flow.len())
                .filter(|&i| est.field.mask[i] && truth.mask[i])
                .map(|i| (est.field.flow[i] / truth.flow[i] - 1.0).abs())
                .collect();
            assert!(rel.len() > 5000, "pattern {p}: {} pixels", rel.len());
            rel.sort_by(f64::total_cmp);
            let median = rel[rel.len() / 2];
            assert!(median < 0.01, "pattern {p} at {exposure} s: median relative flow error {median}");
        }
    }
}
