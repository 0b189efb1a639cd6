#![allow(clippy::needless_range_loop)]

use kexpectile::kernel::{decay_exponent, empirical_eigendecay, entropy_bound, gram, EntropyBoundParams};
use kexpectile::{GaussianKernel, Points};
use proptest::prelude::*;

/// Cyclic Jacobi eigenvalues of a symmetric matrix, sorted descending.
fn jacobi_eigenvalues(mut a: Vec<Vec<f64>>) -> Vec<f64> {
    let n = a.len();
    for _sweep in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[i][j] * a[i][j]).sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut eig: Vec<f64> = (0..n).map(|i| a[i][i]).collect();
    eig.sort_by(|x, y| y.total_cmp(x));
    eig
}

fn uniform_points(n: usize) -> Points {
    Points::from_scalars(&(0..n).map(|i| i as f64 / (n - 1) as f64).collect::<Vec<_>>()).unwrap()
}

#[test]
fn spectrum_of_64_uniform_points_matches_jacobi() {
    let pts = uniform_points(64);
    let g = gram(GaussianKernel::new(0.5).unwrap(), &pts).unwrap();
    let eig = empirical_eigendecay(&g).unwrap();
    let dense: Vec<Vec<f64>> = (0..64).map(|i| (0..64).map(|j| g.get(i, j) / 64.0).collect()).collect();
    let oracle = jacobi_eigenvalues(dense);
    for (a, b) in eig.iter().zip(&oracle) {
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }
    assert!(eig.windows(2).all(|w| w[0] >= w[1]));
    assert!(eig.iter().all(|&v| v >= 0.0));
    assert!((eig.iter().sum::<f64>() - 1.0).abs() < 1e-12);
}

#[test]
fn duplicated_sample_keeps_the_nonzero_spectrum() {
    let pts = uniform_points(40);
    let mut coords = pts.coords().to_vec();
    coords.extend_from_slice(pts.coords());
    let doubled = Points::new(1, coords).unwrap();
    let k = GaussianKernel::new(0.3).unwrap();
    let a = empirical_eigendecay(&gram(k, &pts).unwrap()).unwrap();
    let b = empirical_eigendecay(&gram(k, &doubled).unwrap()).unwrap();
    assert_eq!(b.len(), 80);
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() < 1e-8);
    }
    // the extra dimensions carry no mass
    assert!(b[40..].iter().all(|v| v.abs() < 1e-8));
}

#[test]
fn gaussian_spectrum_decays_fast() {
    let pts = uniform_points(256);
    let eig = empirical_eigendecay(&gram(GaussianKernel::new(0.5).unwrap(), &pts).unwrap()).unwrap();
    let fit = decay_exponent(&eig).unwrap();
    // super-polynomial decay shows up as a steep slope and a small p
    assert!(fit.slope < -2.0, "{fit:?}");
    assert!(fit.p < 0.5);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gram_is_exactly_symmetric_with_unit_diagonal(
        coords in prop::collection::vec(-2.0f64..2.0, 2..60),
        gamma in 0.05f64..1.0,
    ) {
        let d = if coords.len() % 2 == 0 { 2 } else { 1 };
        let pts = Points::new(d, coords).unwrap();
        let g = gram(GaussianKernel::new(gamma).unwrap(), &pts).unwrap();
        for i in 0..g.len() {
            prop_assert_eq!(g.get(i, i), 1.0);
            for j in 0..i {
                prop_assert_eq!(g.get(i, j).to_bits(), g.get(j, i).to_bits());
                prop_assert!(g.get(i, j) >= 0.0 && g.get(i, j) <= 1.0);
            }
        }
    }

    #[test]
    fn entropy_bound_monotone(p in 0.05f64..0.95, d in 1u32..5, gamma in 0.05f64..1.0, i in 1u64..10_000) {
        let params = EntropyBoundParams::new(p, d, 1.0, gamma).unwrap();
        let narrower = EntropyBoundParams::new(p, d, 1.0, gamma * 0.5).unwrap();
        let v = entropy_bound(&params, i).unwrap();
        prop_assert!(entropy_bound(&params, i + 1).unwrap() <= v);
        prop_assert!(entropy_bound(&narrower, i).unwrap() >= v);
    }
}
