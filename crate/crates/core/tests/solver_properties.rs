use kexpectile::kernel::gram;
use kexpectile::selection::{split, tv_svm, GridSpec};
use kexpectile::solver::{fit, RegularizedRisk};
use kexpectile::{AlsConfig, Dataset, Points};
use proptest::prelude::*;

fn dataset(xs: &[f64], ys: &[f64]) -> Dataset {
    let n = xs.len().min(ys.len());
    Dataset::new(Points::from_scalars(&xs[..n]).unwrap(), ys[..n].to_vec()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    /// At convergence the coefficients solve the weighted system for the
    /// sign pattern they induce, and that pattern is stable.
    #[test]
    fn converged_fit_is_a_weighted_fixed_point(
        xs in prop::collection::vec(0.0f64..1.0, 3..40),
        ys in prop::collection::vec(-2.0f64..2.0, 40),
        tau in 0.05f64..0.95,
        log_lambda in -4.0f64..-1.0,
        gamma in 0.2f64..1.0,
    ) {
        let data = dataset(&xs, &ys);
        let lambda = 10f64.powf(log_lambda);
        let model = fit(&data, tau, lambda, gamma).unwrap();
        let g = gram(model.kernel(), data.x()).unwrap();
        let c = model.coefficients();
        let gc = g.mul_vec(c);
        let n = data.len() as f64;
        let cfg = AlsConfig::new(tau).unwrap();
        let ymax = data.max_abs_response();
        for i in 0..data.len() {
            let w = cfg.weight(data.y()[i] - gc[i]);
            // (G c)_i + n lambda c_i / w_i = y_i
            let lhs = gc[i] + n * lambda * c[i] / w;
            prop_assert!((lhs - data.y()[i]).abs() <= 1e-8 * (1.0 + ymax), "row {}: {} vs {}", i, lhs, data.y()[i]);
        }
        let objective = RegularizedRisk::new(&g, data.y(), cfg, lambda);
        let grad: f64 = objective.gradient(c).iter().map(|v| v * v).sum::<f64>().sqrt();
        prop_assert!(grad <= 1e-8 * (1.0 + ymax));
        let h = &model.diagnostics().objective_history;
        prop_assert!(h.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn clipping_never_increases_empirical_risk(
        xs in prop::collection::vec(0.0f64..1.0, 3..30),
        ys in prop::collection::vec(-1.0f64..1.0, 30),
        tau in 0.05f64..0.95,
        gamma in 0.05f64..0.5,
    ) {
        let data = dataset(&xs, &ys);
        // a tiny lambda lets the fit overshoot between samples
        let model = fit(&data, tau, 1e-6, gamma).unwrap();
        let cfg = AlsConfig::new(tau).unwrap();
        let probe = dataset(&xs.iter().map(|x| 1.0 - x).collect::<Vec<_>>(), &ys);
        for d in [&data, &probe] {
            let clipped = model.empirical_risk(d, cfg, true).unwrap();
            let raw = model.empirical_risk(d, cfg, false).unwrap();
            prop_assert!(clipped <= raw + 1e-15);
        }
    }

    #[test]
    fn tv_svm_choice_minimizes_independently_recomputed_risks(
        xs in prop::collection::vec(0.0f64..1.0, 6..30),
        ys in prop::collection::vec(-1.0f64..1.0, 30),
        tau in 0.1f64..0.9,
    ) {
        let data = dataset(&xs, &ys);
        let grids = GridSpec::custom(vec![1e-1, 1e-2, 1e-3], vec![0.25, 0.5, 1.0]).unwrap();
        let result = tv_svm(&data, tau, &grids).unwrap();
        let (train, validation) = split(&data).unwrap();
        let cfg = AlsConfig::new(tau).unwrap();
        let chosen = result.chosen_risk();
        for &lambda in grids.lambdas() {
            for &gamma in grids.gammas() {
                let m = fit(&train, tau, lambda, gamma).unwrap();
                let risk = m.empirical_risk(&validation, cfg, true).unwrap();
                prop_assert!(chosen <= risk, "chosen {} > cell ({}, {}) {}", chosen, lambda, gamma, risk);
            }
        }
        let again = tv_svm(&data, tau, &grids).unwrap();
        prop_assert_eq!(again.chosen_lambda, result.chosen_lambda);
        prop_assert_eq!(again.chosen_gamma, result.chosen_gamma);
    }

    #[test]
    fn split_partitions_in_order(ys in prop::collection::vec(-1.0f64..1.0, 4..50)) {
        let xs: Vec<f64> = (0..ys.len()).map(|i| i as f64).collect();
        let data = dataset(&xs, &ys);
        let (a, b) = split(&data).unwrap();
        prop_assert_eq!(a.len(), ys.len() / 2 + 1);
        let joined: Vec<f64> = a.y().iter().chain(b.y()).copied().collect();
        prop_assert_eq!(joined, ys);
    }
}
