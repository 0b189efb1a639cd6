use kexpectile::bench::{lambda_path, measure_rate, synth, RateExperiment};
use kexpectile::als::expectile;
use kexpectile::rng::substream;
use kexpectile::theory::{check_calibration, CheckRegistry, VerifyContext};
use kexpectile::{AlsConfig, DiscreteDistribution, ProblemRegistry, ProblemSpec};

fn problem(kind: &str, tau: f64) -> kexpectile::SyntheticProblem {
    ProblemRegistry::builtin().build(kind, &ProblemSpec::new(tau, 1)).unwrap()
}

#[test]
fn noiseless_sine_sample_is_exact() {
    let (p, data) = synth("noiseless-sine", &ProblemSpec::new(0.5, 1), 8, 0).unwrap();
    for (x, y) in data.x().rows().zip(data.y()) {
        assert_eq!(*y, (2.0 * std::f64::consts::PI * x[0]).sin());
        assert_eq!(p.target(x), *y);
    }
    assert!(synth("no-such-kind", &ProblemSpec::new(0.5, 1), 8, 0).is_err());
}

#[test]
fn gaussian_target_matches_expectile_of_a_large_sample() {
    // the 0.9-expectile of many draws of the noise, shifted by the mean
    let p = problem("gauss-noise", 0.9);
    let x = [0.3];
    let mut rng = substream(5, &[1]);
    let draws: Vec<f64> = (0..400_000).map(|_| p.sample_response(&x, &mut rng)).collect();
    let empirical = expectile(&DiscreteDistribution::uniform(&draws).unwrap(), AlsConfig::new(0.9).unwrap());
    assert!((empirical - p.target(&x)).abs() < 5e-3, "{empirical} vs {}", p.target(&x));
}

#[test]
fn constant_problem_rate() {
    let p = problem("constant", 0.5);
    let exp = RateExperiment::new(1e-2, 1.0, 3.0, 1, vec![128, 256, 512, 1024], 5, 0).unwrap();
    let r = measure_rate(&exp, &p).unwrap();
    let slope = r.slope.unwrap();
    assert!(slope <= -0.5, "slope {slope}");
    assert!(r.results.last().unwrap().mean_excess < r.results[0].mean_excess);
}

#[test]
fn rate_tables_are_reproducible_and_nonnegative() {
    let p = problem("gauss-noise", 0.9);
    let exp = RateExperiment::new(1e-2, 1.0, 3.0, 1, vec![32, 64, 128], 3, 7)
        .unwrap()
        .with_mc_samples(20_000)
        .unwrap();
    let a = measure_rate(&exp, &p).unwrap();
    let b = measure_rate(&exp, &p).unwrap();
    let (mut ca, mut cb) = (Vec::new(), Vec::new());
    a.write_csv(&mut ca).unwrap();
    b.write_csv(&mut cb).unwrap();
    assert_eq!(ca, cb);
    for row in &a.results {
        assert!(row.mean_excess >= -3.0 * row.mc_stderr, "{row:?}");
    }
    let sine = problem("noiseless-sine", 0.5);
    assert!(measure_rate(&exp, &sine).unwrap().slope.unwrap() < 0.0);
}

#[test]
fn regularization_path_is_informational() {
    let p = problem("gauss-noise", 0.5);
    let data = p.sample(256, &mut substream(3, &[1])).unwrap();
    let lambdas: Vec<f64> = (0..10).map(|k| 10f64.powi(-k)).collect();
    let path = lambda_path(&p, &data, 0.4, &lambdas, 20_000, 3).unwrap();
    let (best, _) = path.iter().enumerate().min_by(|a, b| a.1 .1.total_cmp(&b.1 .1)).unwrap();
    println!("lambda path: {path:?}");
    println!("minimum at index {best} (largest lambda is index 0)");
    assert_eq!(path.len(), 10);
}

#[test]
fn calibration_of_the_target_is_exactly_zero() {
    for tau in [0.1, 0.5, 0.9] {
        let p = problem("gauss-noise", tau);
        let r = check_calibration(&p, &|x| p.target(x), 5_000, 0).unwrap();
        assert_eq!(r.estimates["l2_distance"], 0.0);
        assert_eq!(r.estimates["excess_risk"], 0.0);
        assert!(r.passed());
    }
}

#[test]
fn analytic_checks_are_deterministic() {
    let registry = CheckRegistry::builtin();
    let ctx = VerifyContext { seed: 4, mc_samples: 2_000, trials: 2_000, grid_points: 500 };
    for name in ["inner-risk-sandwich", "hp-lemma", "entropy-maximizer", "two-point-expectile"] {
        let a = registry.get(name).unwrap().run(&ctx).unwrap();
        let b = registry.get(name).unwrap().run(&ctx).unwrap();
        assert_eq!(a, b);
        assert!(a.passed(), "{name}: {a:?}");
    }
}
