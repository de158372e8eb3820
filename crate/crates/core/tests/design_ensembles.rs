use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sparc_vamp::design::{haar_orthogonal, DesignOperator};

fn gaussian_vec(len: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..len).map(|_| rng.sample(StandardNormal)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Two-sample Kolmogorov-Smirnov statistic and its asymptotic p-value.
fn ks_two_sample(mut a: Vec<f64>, mut b: Vec<f64>) -> (f64, f64) {
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    let ne = na * nb / (na + nb);
    let lambda = (ne.sqrt() + 0.12 + 0.11 / ne.sqrt()) * d;
    let p: f64 = (1..=100)
        .map(|k| {
            let k = k as f64;
            2.0 * (-1f64).powf(k - 1.0) * (-2.0 * k * k * lambda * lambda).exp()
        })
        .sum();
    (d, p.clamp(0.0, 1.0))
}

#[test]
fn gaussian_spectrum_fills_marchenko_pastur_support() {
    let (n, big_n) = (512, 2048);
    let op = DesignOperator::gaussian(n, big_n, 17).unwrap();
    let alpha = n as f64 / big_n as f64;
    let (lo, hi) = ((1.0 - alpha.sqrt()).powi(2), (1.0 + alpha.sqrt()).powi(2));
    let lam: Vec<f64> = op
        .singulars()
        .iter()
        .map(|s| s * s * n as f64 / big_n as f64)
        .collect();
    let min = lam.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = lam.iter().cloned().fold(0.0, f64::max);
    assert!(
        min >= 0.95 * lo && min <= 1.05 * lo + 0.05 * (hi - lo),
        "min {min} vs {lo}"
    );
    assert!(max <= 1.05 * hi && max >= 0.95 * hi, "max {max} vs {hi}");
}

#[test]
fn gaussian_second_moment_near_one_before_rescale() {
    let op = DesignOperator::gaussian(1024, 2048, 5).unwrap();
    assert!((op.raw_second_moment() - 1.0).abs() < 0.05);
    let mean: f64 = op.singulars().iter().map(|s| s * s).sum::<f64>() / 1024.0 * op.alpha();
    assert!((mean - 1.0).abs() < 1e-6);
}

#[test]
fn planted_spectrum_survives_materialization() {
    let (n, big_n) = (24, 40);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let planted: Vec<f64> = (0..n).map(|_| rng.random_range(0.3..1.7)).collect();
    let op = DesignOperator::synthetic_spectrum(&planted, n, big_n, 8).unwrap();
    let mut want: Vec<f64> = op.singulars().to_vec();
    let mut got: Vec<f64> = op.materialize().singular_values().iter().cloned().collect();
    want.sort_by(f64::total_cmp);
    got.sort_by(f64::total_cmp);
    for (a, b) in want.iter().zip(&got) {
        assert!((a - b).abs() < 1e-8, "{a} vs {b}");
    }
    // planted values are rescaled only by a common factor
    let ratio = want[0] / planted.iter().cloned().fold(f64::INFINITY, f64::min);
    for (w, p) in want.iter().zip({
        let mut p = planted.clone();
        p.sort_by(f64::total_cmp);
        p
    }) {
        assert!((w / p - ratio).abs() < 1e-10);
    }
}

#[test]
fn adjoint_consistency_all_kinds_many_probes() {
    let ops = [
        DesignOperator::gaussian(20, 48, 1).unwrap(),
        DesignOperator::dct_row_orthogonal(20, 48, 2).unwrap(),
        DesignOperator::synthetic_spectrum(
            &vec![1.3; 10]
                .into_iter()
                .chain(vec![0.5; 10])
                .collect::<Vec<_>>(),
            20,
            48,
            3,
        )
        .unwrap(),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for op in &ops {
        for _ in 0..100 {
            let x = gaussian_vec(48, &mut rng);
            let y = gaussian_vec(20, &mut rng);
            let lhs = dot(&op.apply(&x).unwrap(), &y);
            let rhs = dot(&x, &op.adjoint(&y).unwrap());
            assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(rhs.abs()).max(1.0));
        }
    }
}

#[test]
fn dct_gram_is_scaled_identity() {
    let (n, big_n) = (96, 256);
    let op = DesignOperator::dct_row_orthogonal(n, big_n, 4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let y = gaussian_vec(n, &mut rng);
    let back = op.apply(&op.adjoint(&y).unwrap()).unwrap();
    let scale = big_n as f64 / n as f64;
    let err = back
        .iter()
        .zip(&y)
        .map(|(a, b)| (a - scale * b).abs())
        .fold(0.0, f64::max);
    assert!(err < 1e-10 * scale);
    assert!(op
        .singulars()
        .iter()
        .all(|s| (s - scale.sqrt()).abs() < 1e-12));
}

#[test]
fn haar_is_orthogonal() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let q = haar_orthogonal(50, &mut rng);
    let err = (q.transpose() * &q - DMatrix::identity(50, 50)).abs().max();
    assert!(err < 1e-10);
}

#[test]
fn norm_distribution_invariant_under_fixed_rotation() {
    let (n, big_n) = (12, 24);
    let spectrum: Vec<f64> = (0..n).map(|i| 0.4 + 0.1 * i as f64).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    // one fixed direction and its image under one fixed rotation
    let x: Vec<f64> = {
        let mut v = vec![0.0; big_n];
        v[0] = 1.0;
        v
    };
    let rot = haar_orthogonal(big_n, &mut rng);
    let xr: Vec<f64> = (&rot * nalgebra::DVector::from_vec(x.clone()))
        .iter()
        .cloned()
        .collect();
    let norm = |v: Vec<f64>| dot(&v, &v).sqrt();
    let a: Vec<f64> = (0..1000)
        .map(|s| {
            norm(
                DesignOperator::synthetic_spectrum(&spectrum, n, big_n, s)
                    .unwrap()
                    .apply(&x)
                    .unwrap(),
            )
        })
        .collect();
    let b: Vec<f64> = (1000..2000)
        .map(|s| {
            norm(
                DesignOperator::synthetic_spectrum(&spectrum, n, big_n, s)
                    .unwrap()
                    .apply(&xr)
                    .unwrap(),
            )
        })
        .collect();
    let (d, p) = ks_two_sample(a, b);
    assert!(p > 0.01, "KS D = {d}, p = {p}");
}

#[test]
fn ks_detects_a_shift() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let a = gaussian_vec(500, &mut rng);
    let b: Vec<f64> = gaussian_vec(500, &mut rng)
        .iter()
        .map(|v| v + 0.5)
        .collect();
    assert!(ks_two_sample(a, b).1 < 1e-6);
}
