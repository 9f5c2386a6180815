use proptest::prelude::*;
use ricci_mmp_core::sphere::*;

const FOUR_PI: f64 = 4.0 * std::f64::consts::PI;

fn profile(grid: &LatitudeGrid<f64>, coeffs: &[f64]) -> Vec<f64> {
    grid.cosine_series(coeffs)
}

/// Closed form of `(1 - (1/2) Delta log v) / v` for `v = 1 + a cos(theta)`.
fn exact_curvature(a: f64, theta: f64) -> f64 {
    let (s, c) = theta.sin_cos();
    let v = 1.0 + a * c;
    let d = -a * (2.0 * s * c * v + a * s * s * s) / (v * v);
    (1.0 - 0.5 * d / s) / v
}

#[test]
fn gauss_bonnet_for_tilted_profile() {
    let errors: Vec<f64> = [64, 128]
        .iter()
        .map(|&m| {
            let g = LatitudeGrid::new(m).unwrap();
            let s = ConformalState::new(&g, profile(&g, &[1.0, 0.2])).unwrap();
            let k = gauss_curvature(&g, &s);
            assert!(k.gauss_bonnet_residual < 1e-12);
            g.theta().iter().zip(&k.k).map(|(&t, &x)| (x - exact_curvature(0.2, t)).abs()).fold(0.0, f64::max)
        })
        .collect();
    assert!(errors[0] < 1e-2, "{errors:?}");
    // second order in the latitude spacing
    assert!(errors[0] / errors[1] > 3.5, "{errors:?}");
}

#[test]
fn area_decreases_at_four_pi() {
    let g = LatitudeGrid::new(64).unwrap();
    let report = extinction_experiment(&g, profile(&g, &[1.0, 0.0, 0.3]), 0.02, &SphereStepper::default()).unwrap();
    let a0 = report.initial_area;
    for r in &report.log {
        assert!((r.area - (a0 - FOUR_PI * r.t)).abs() < 1e-10 * a0, "t = {}", r.t);
    }
}

#[test]
fn extinction_matches_area_over_four_pi() {
    let g = LatitudeGrid::new(64).unwrap();
    for coeffs in [&[1.0, 0.0, 0.3][..], &[2.0, 0.5], &[1.0, 0.2, 0.0, 0.1]] {
        let r = extinction_experiment(&g, profile(&g, coeffs), 0.02, &SphereStepper::default()).unwrap();
        assert!(r.passed(), "{coeffs:?}: {} vs {}", r.measured, r.predicted);
        assert!((r.predicted - r.initial_area / FOUR_PI).abs() < 1e-15);
    }
}

#[test]
fn extinction_rejects_bad_threshold() {
    let g = LatitudeGrid::new(32).unwrap();
    let v = vec![1.0; 32];
    assert!(matches!(
        extinction_experiment(&g, v.clone(), 2.0, &SphereStepper::default()),
        Err(SphereError::Config(_))
    ));
    assert!(matches!(ConformalState::new(&g, vec![0.0; 32]), Err(SphereError::NonPositive(_))));
    assert!(matches!(ConformalState::new(&g, v[..8].to_vec()), Err(SphereError::Config(_))));
}

#[test]
fn normalized_flow_rounds_out() {
    let g = LatitudeGrid::new(64).unwrap();
    let v0 = profile(&g, &[1.0, 0.0, 0.3]);
    let r = normalized_run(&g, v0, None, 20.0, &SphereStepper::default()).unwrap();
    assert!(r.passed(1e-6), "roundness {} drift {}", r.roundness, r.area_drift);
    let mean = r.final_state.mean_v(&g);
    assert!((mean - r.t0).abs() < 1e-3 * r.t0);
}

#[test]
fn normalized_step_rejects_large_dt() {
    let g = LatitudeGrid::new(32).unwrap();
    let s = ConformalState::new(&g, vec![1.0; 32]).unwrap();
    assert!(step_normalized_fano(&g, &s, 1.0, 1.5, &SphereStepper::default()).is_err());
    assert!(step_unnormalized(&g, &s, 0.0, &SphereStepper::default()).is_err());
}

#[test]
fn config_json_round_trip() {
    let json = r#"{"m": 64, "v0": [1.0, 0.0, 0.3], "mode": "normalized", "t_end": 5.0}"#;
    let cfg: SphereConfig<f64> = serde_json::from_str(json).unwrap();
    assert_eq!(cfg.mode, SphereMode::Normalized);
    assert_eq!(cfg.stepper, SphereStepper::default());
    let back: SphereConfig<f64> = serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
    assert_eq!(back, cfg);
    assert!(serde_json::from_str::<SphereConfig<f64>>(r#"{"m": 64, "v0": [1.0], "bogus": 1}"#).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn discrete_gauss_bonnet_and_area_law(a1 in -0.3f64..0.3, a2 in -0.3f64..0.3, dt in 0.001f64..0.05) {
        let g = LatitudeGrid::new(32).unwrap();
        let s = ConformalState::new(&g, profile(&g, &[1.0, a1, a2])).unwrap();
        prop_assert!(gauss_curvature(&g, &s).gauss_bonnet_residual < 1e-12);
        let next = step_unnormalized(&g, &s, dt, &SphereStepper::default()).unwrap();
        let a0 = s.area(&g);
        prop_assert!((next.area(&g) - (a0 - FOUR_PI * dt)).abs() < 1e-10 * a0);
        prop_assert!(gauss_curvature(&g, &next).gauss_bonnet_residual < 1e-12);
    }
}
