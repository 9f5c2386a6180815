use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use ricci_mmp_core::density::{build_density, DensitySpec, TrigPoly};
use ricci_mmp_core::elliptic::{bump_pairs, solve_linear_ma, solve_semilinear_ma, stability_experiment};
use ricci_mmp_core::grid::{LaplacianKind, PeriodicGrid, ScalarField, SpectralOps};

const TAU: f64 = std::f64::consts::TAU;

fn ops(n: usize) -> SpectralOps<f64> {
    SpectralOps::new(PeriodicGrid::new(n).unwrap(), LaplacianKind::Spectral)
}

/// Dense 1D second-derivative matrix of the trigonometric interpolant,
/// built from the cosine sum directly.
fn dft_second_derivative(n: usize) -> Vec<Vec<f64>> {
    let mut m = vec![vec![0.0; n]; n];
    for (j, row) in m.iter_mut().enumerate() {
        for (l, entry) in row.iter_mut().enumerate() {
            let mut s = 0.0;
            for k in 0..n {
                let kk = k.min(n - k) as f64;
                s += -(TAU * kk).powi(2) * (TAU * (k as f64) * (j as f64 - l as f64) / n as f64).cos();
            }
            *entry = s / n as f64;
        }
    }
    m
}

/// Minimizes `sum e^phi F - chi phi + (1/4) |phi'|^2` in one variable by
/// plain gradient descent.
fn gradient_descent_oracle(chi: &[f64], f: &[f64]) -> Vec<f64> {
    let n = chi.len();
    let d2 = dft_second_derivative(n);
    let mut phi = vec![0.0; n];
    let lipschitz = 0.5 * (TAU * (n / 2) as f64).powi(2) + 4.0;
    let step = 1.0 / lipschitz;
    for _ in 0..400_000 {
        let grad: Vec<f64> = (0..n)
            .map(|j| {
                let lap: f64 = (0..n).map(|l| d2[j][l] * phi[l]).sum();
                phi[j].exp() * f[j] - chi[j] - 0.5 * lap
            })
            .collect();
        let gnorm = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        if gnorm < 1e-13 {
            break;
        }
        for j in 0..n {
            phi[j] -= step * grad[j];
        }
    }
    phi
}

#[test]
fn semilinear_matches_gradient_descent() {
    let o = ops(16);
    let chi = ScalarField::from_fn(o.grid(), |_, y: f64| 1.0 + 0.3 * (TAU * y).cos());
    let f = ScalarField::constant(o.grid(), 1.0);
    let sol = solve_semilinear_ma(&o, &chi, &f, 1e-13).unwrap();
    let chi_1d: Vec<f64> = (0..16).map(|j| 1.0 + 0.3 * (TAU * j as f64 / 16.0).cos()).collect();
    let oracle = gradient_descent_oracle(&chi_1d, &[1.0; 16]);
    for j in 0..16 {
        for i in 0..16 {
            assert!((sol.phi.get(i, j) - oracle[j]).abs() < 1e-8, "({i},{j})");
        }
    }
}

#[test]
fn pole_density_solves_at_fine_grid() {
    let spec = DensitySpec::constant(1.0).with_pole([0.5, 0.5], 0.5);
    let o = ops(256);
    let f = build_density(o.grid(), &spec).unwrap();
    let g0 = ScalarField::constant(o.grid(), 1.0);
    let sol = solve_linear_ma(&o, &g0, &f, 1e-10).unwrap();
    assert!(sol.phi.mean().abs() < 1e-12);
    assert!(sol.phi.is_finite());
}

#[test]
fn spectral_refinement_order() {
    let density = |x: f64, y: f64| (0.5 * (TAU * x).cos() * (TAU * y).sin()).exp();
    let reference = {
        let o = ops(128);
        let g0 = ScalarField::constant(o.grid(), 1.0);
        solve_linear_ma(&o, &g0, &ScalarField::from_fn(o.grid(), density), 1e-12).unwrap().phi
    };
    let errors: Vec<f64> = [16, 32]
        .iter()
        .map(|&n| {
            let o = ops(n);
            let g0 = ScalarField::constant(o.grid(), 1.0);
            let phi = solve_linear_ma(&o, &g0, &ScalarField::from_fn(o.grid(), density), 1e-12).unwrap().phi;
            let stride = 128 / n;
            (0..n)
                .flat_map(|j| (0..n).map(move |i| (i, j)))
                .map(|(i, j)| (phi.get(i, j) - reference.get(i * stride, j * stride)).abs())
                .fold(0.0, f64::max)
        })
        .collect();
    let order = (errors[0] / errors[1]).log2();
    assert!(order >= 4.0 || errors[1] < 1e-13, "errors {errors:?}");
}

#[test]
fn stability_constant_is_grid_stable() {
    let fit = |n: usize| {
        let o = ops(n);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let pairs: Vec<_> = (0..20)
            .map(|_| {
                let f = TrigPoly::random(&mut rng, 1.0, 0.8, 4, 5).sample(o.grid());
                let g = TrigPoly::random(&mut rng, 1.0, 0.8, 4, 5).sample(o.grid());
                (f, g)
            })
            .collect();
        let g0 = ScalarField::constant(o.grid(), 1.0);
        stability_experiment(&o, &g0, &pairs, 0.05).unwrap().fitted_c
    };
    let (a, b) = (fit(64), fit(128));
    assert!(a.is_finite() && a > 0.0);
    assert!((a - b).abs() <= 0.2 * b);
}

#[test]
fn bump_ratio_respects_exponent() {
    let o = ops(64);
    let g0 = ScalarField::constant(o.grid(), 1.0);
    let base = ScalarField::from_fn(o.grid(), |x: f64, _| 1.0 + 0.3 * (TAU * x).sin());
    let deltas = [1e-1, 1e-2, 1e-3, 1e-4];
    let report = stability_experiment(&o, &g0, &bump_pairs(&base, (0.3, 0.6), 0.05, &deltas), 0.05).unwrap();
    let power = 1.0 - report.exponent;
    let scaled: Vec<f64> = report.rows.iter().zip(deltas).map(|(r, d)| r.ratio.unwrap() / d.powf(power)).collect();
    for w in scaled.windows(2) {
        assert!(w[1] <= w[0] * 1.1, "{scaled:?}");
    }
}

fn field_strategy() -> impl Strategy<Value = (u64, f64)> {
    (any::<u64>(), 0.0..0.5f64)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn semilinear_comparison((seed, lift) in field_strategy()) {
        let o = ops(32);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let chi = TrigPoly::random(&mut rng, 1.0, 0.6, 3, 3).sample(o.grid());
        let f2 = TrigPoly::random(&mut rng, 1.0, 0.6, 3, 3).sample(o.grid());
        let bump = TrigPoly::random(&mut rng, 1.0, 0.9, 2, 2).sample(o.grid());
        let f1 = f2.add(&bump.scale(lift));
        let p1 = solve_semilinear_ma(&o, &chi, &f1, 1e-11).unwrap().phi;
        let p2 = solve_semilinear_ma(&o, &chi, &f2, 1e-11).unwrap().phi;
        prop_assert!(p1.values().iter().zip(p2.values()).all(|(a, b)| *a <= *b + 1e-10));
    }

    #[test]
    fn linear_compatibility(seed in any::<u64>()) {
        let o = ops(32);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g0 = TrigPoly::random(&mut rng, 2.0, 1.0, 3, 3).sample(o.grid());
        let f = TrigPoly::random(&mut rng, 1.0, 0.9, 5, 4).sample(o.grid());
        let sol = solve_linear_ma(&o, &g0, &f, 1e-10).unwrap();
        let density = g0.add(&o.half_laplacian(&sol.phi));
        prop_assert!((density.mean() - f.scale(sol.c).mean()).abs() < 1e-13);
        prop_assert!(sol.phi.mean().abs() < 1e-14);
    }
}
