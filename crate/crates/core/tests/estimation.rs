use localindep::design::{build_design, roughness_penalty, DesignRequest, ExpansionOrder};
use localindep::estimation::{derivative_check, fit_mle, penalized_loglik, FitConfig};
use localindep::simulate::{simulate_hawkes, SimulationConfig};
use localindep::stats::median;
use localindep::{ExponentialKernel, IntensityModelSpec, LinkFunction, SplineBasis};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn self_exciting(link: LinkFunction) -> IntensityModelSpec {
    IntensityModelSpec::new(vec![0.25], link)
        .unwrap()
        .with_kernel(0, 0, ExponentialKernel::new(0.4, 0.8).unwrap())
        .unwrap()
}

#[test]
fn linear_self_edge_mass_is_recovered() {
    // identity link: the fitted spline kernel integrates to roughly alpha
    let spec = self_exciting(LinkFunction::Identity);
    let basis = SplineBasis::new(5.0, 6, 3).unwrap();
    // integral over [0, S) of every basis function
    let mass = basis.gram().row_sum();
    let mut integrals = Vec::new();
    for seed in 0..20 {
        let seq = simulate_hawkes(
            &spec,
            &SimulationConfig {
                seed,
                ..Default::default()
            },
        )
        .unwrap();
        let req = DesignRequest {
            target: 0,
            conditioning: vec![0],
            order: ExpansionOrder::First,
            test_mark: None,
        };
        let design = build_design(&seq, &req, &basis, 0.1).unwrap();
        let omega = roughness_penalty(&design.layout, &basis).matrix;
        let fit = fit_mle(&design, LinkFunction::Identity, &omega, &FitConfig::default()).unwrap();
        assert!(fit.convergence.converged);
        let coef = fit.block_coefficients("first:0").unwrap();
        integrals.push(coef.iter().zip(mass.iter()).map(|(c, m)| c * m).sum::<f64>());
    }
    let m = median(&integrals);
    assert!((m - 0.4).abs() < 0.25 * 0.4, "median integrated kernel {m}");
}

#[test]
fn derivatives_match_finite_differences_for_all_links() {
    let errors = localindep::experiments::derivative_errors(11, 5).unwrap();
    assert_eq!(errors.len(), 3);
    for (link, err) in errors {
        assert!(err < 1e-5, "{link}: {err}");
    }
}

#[test]
fn derivative_check_detects_wrong_penalty_sign() {
    // sanity of the oracle itself: a hand-perturbed objective must not pass
    let spec = self_exciting(LinkFunction::PiecewiseLogLinear);
    let seq = simulate_hawkes(
        &spec,
        &SimulationConfig {
            horizon: 100.0,
            seed: 3,
            ..Default::default()
        },
    )
    .unwrap();
    let basis = SplineBasis::new(5.0, 5, 3).unwrap();
    let req = DesignRequest {
        target: 0,
        conditioning: vec![0],
        order: ExpansionOrder::Second,
        test_mark: None,
    };
    let design = build_design(&seq, &req, &basis, 0.1).unwrap();
    let omega = roughness_penalty(&design.layout, &basis).matrix;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let beta = DVector::from_fn(design.ncols(), |_, _| rng.gen_range(-0.05..0.05));
    let ok = derivative_check(&beta, &design, LinkFunction::PiecewiseLogLinear, &omega, 1.0).unwrap();
    assert!(ok.max_error() < 1e-5);
    // the value includes the penalty; a check on an unrelated penalty differs
    let v1 = penalized_loglik(&beta, &design, LinkFunction::PiecewiseLogLinear, &omega, 1.0).unwrap();
    let v0 = penalized_loglik(&beta, &design, LinkFunction::PiecewiseLogLinear, &omega, 0.0).unwrap();
    let quad = beta.dot(&(&omega * &beta));
    assert!((v0 - v1 - quad).abs() < 1e-9 * v0.abs().max(1.0));
}

#[test]
fn poisson_mle_within_three_standard_errors() {
    let spec = IntensityModelSpec::new(vec![0.25], LinkFunction::Identity).unwrap();
    let basis = SplineBasis::new(5.0, 6, 3).unwrap();
    let horizon = 2000.0;
    let mut inside = 0;
    for seed in 0..40 {
        let seq = simulate_hawkes(
            &spec,
            &SimulationConfig {
                horizon,
                burn_in: 0.0,
                seed,
                ..Default::default()
            },
        )
        .unwrap();
        let req = DesignRequest {
            target: 0,
            conditioning: vec![],
            order: ExpansionOrder::First,
            test_mark: None,
        };
        let design = build_design(&seq, &req, &basis, 0.1).unwrap();
        let cfg = FitConfig {
            kappa: 0.0,
            ..Default::default()
        };
        let fit = fit_mle(&design, LinkFunction::Identity, &DMatrix::zeros(1, 1), &cfg).unwrap();
        let rate = fit.coefficients[0];
        assert!((rate - seq.len() as f64 / horizon).abs() < 1e-9);
        if (rate - 0.25).abs() < 3.0 * (0.25f64 / horizon).sqrt() {
            inside += 1;
        }
    }
    assert!(inside >= 38, "{inside} of 40");
}

#[test]
fn order_two_nests_order_one() {
    let spec = IntensityModelSpec::new(vec![0.25, 0.25], LinkFunction::PiecewiseLogLinear)
        .unwrap()
        .with_kernel(0, 0, ExponentialKernel::new(0.4, 0.8).unwrap())
        .unwrap()
        .with_kernel(1, 1, ExponentialKernel::new(0.4, 0.8).unwrap())
        .unwrap()
        .with_kernel(0, 1, ExponentialKernel::new(-0.4, 0.8).unwrap())
        .unwrap();
    let seq = simulate_hawkes(
        &spec,
        &SimulationConfig {
            horizon: 600.0,
            seed: 4,
            ..Default::default()
        },
    )
    .unwrap();
    let basis = SplineBasis::new(5.0, 6, 3).unwrap();
    let cfg = FitConfig {
        kappa: 0.0,
        ..Default::default()
    };
    let mut values = Vec::new();
    let mut names = Vec::new();
    for order in ExpansionOrder::BOTH {
        let req = DesignRequest {
            target: 1,
            conditioning: vec![0, 1],
            order,
            test_mark: None,
        };
        let design = build_design(&seq, &req, &basis, 0.1).unwrap();
        let omega = DMatrix::zeros(design.ncols(), design.ncols());
        let fit = fit_mle(&design, LinkFunction::PiecewiseLogLinear, &omega, &cfg).unwrap();
        values.push(fit.penalized_loglik);
        names.push(design.layout.blocks.iter().map(|b| b.name()).collect::<Vec<_>>());
    }
    assert!(names[0].iter().all(|n| names[1].contains(n)));
    assert!(names[1].len() > names[0].len());
    assert!(values[1] >= values[0] - 1e-6, "{values:?}");
}

#[test]
fn halving_the_grid_spacing_changes_the_likelihood_by_order_delta() {
    let spec = self_exciting(LinkFunction::PiecewiseLogLinear);
    let seq = simulate_hawkes(
        &spec,
        &SimulationConfig {
            horizon: 400.0,
            seed: 8,
            ..Default::default()
        },
    )
    .unwrap();
    let basis = SplineBasis::new(5.0, 6, 3).unwrap();
    let req = DesignRequest {
        target: 0,
        conditioning: vec![0],
        order: ExpansionOrder::First,
        test_mark: None,
    };
    let beta = {
        let design = build_design(&seq, &req, &basis, 0.1).unwrap();
        let omega = roughness_penalty(&design.layout, &basis).matrix;
        fit_mle(&design, LinkFunction::PiecewiseLogLinear, &omega, &FitConfig::default())
            .unwrap()
            .coefficients
    };
    let value = |delta: f64| {
        let design = build_design(&seq, &req, &basis, delta).unwrap();
        let omega = roughness_penalty(&design.layout, &basis).matrix;
        penalized_loglik(&beta, &design, LinkFunction::PiecewiseLogLinear, &omega, 1.0).unwrap()
    };
    let (a, b, c) = (value(0.2), value(0.1), value(0.05));
    // first-order convergence: successive differences shrink by about 2
    let (d1, d2) = ((a - b).abs(), (b - c).abs());
    assert!(d2 < d1, "{d1} {d2}");
    assert!(d2 > 0.25 * d1 && d2 < 0.75 * d1, "ratio {}", d2 / d1);
}
