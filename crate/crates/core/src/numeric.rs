//! Small numerical helpers: adaptive quadrature, Gauss-Hermite rules,
//! Chebyshev grids and stable Gaussian tail functions.

use nalgebra::{DMatrix, SymmetricEigen};
use statrs::function::erf::erfc;

// Gauss-Kronrod 7/15 nodes and weights on [-1, 1].
const GK_NODES: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const K15_WEIGHTS: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const G7_WEIGHTS: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kronrod = K15_WEIGHTS[7] * fc;
    let mut gauss = G7_WEIGHTS[3] * fc;
    for (i, &x) in GK_NODES[..7].iter().enumerate() {
        let s = f(c - h * x) + f(c + h * x);
        kronrod += K15_WEIGHTS[i] * s;
        if i % 2 == 1 {
            gauss += G7_WEIGHTS[i / 2] * s;
        }
    }
    (kronrod * h, ((kronrod - gauss) * h).abs())
}

/// Adaptive Gauss-Kronrod integration of `f` over `[a, b]` to relative
/// tolerance `rel_tol` (with a tiny absolute floor).
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, rel_tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let mut intervals = vec![(a, b, gk15(&f, a, b))];
    for _ in 0..2000 {
        let total: f64 = intervals.iter().map(|iv| iv.2 .0).sum();
        let err: f64 = intervals.iter().map(|iv| iv.2 .1).sum();
        if err <= rel_tol * total.abs() || err < 1e-300 {
            return total;
        }
        let (worst, _) = intervals
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .2 .1.total_cmp(&y.1 .2 .1))
            .unwrap();
        let (lo, hi, _) = intervals.swap_remove(worst);
        let mid = 0.5 * (lo + hi);
        intervals.push((lo, mid, gk15(&f, lo, mid)));
        intervals.push((mid, hi, gk15(&f, mid, hi)));
    }
    intervals.iter().map(|iv| iv.2 .0).sum()
}

/// Gauss-Hermite rule for the standard normal weight: returns `(nodes, weights)`
/// such that `E[f(Z)] ~ sum w_i f(x_i)` for `Z ~ N(0, 1)` (Golub-Welsch).
pub fn gauss_hermite_normal(order: usize) -> (Vec<f64>, Vec<f64>) {
    // Jacobi matrix of the probabilists' Hermite polynomials.
    let mut j = DMatrix::<f64>::zeros(order, order);
    for i in 1..order {
        let b = (i as f64).sqrt();
        j[(i, i - 1)] = b;
        j[(i - 1, i)] = b;
    }
    let eig = SymmetricEigen::new(j);
    let mut pairs: Vec<(f64, f64)> = (0..order)
        .map(|i| (eig.eigenvalues[i], eig.eigenvectors[(0, i)].powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

/// `count` Chebyshev extreme points mapped onto `[a, b]`, endpoints included.
pub fn chebyshev_grid(a: f64, b: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![0.5 * (a + b)];
    }
    (0..count)
        .map(|k| {
            let t = (std::f64::consts::PI * k as f64 / (count - 1) as f64).cos();
            0.5 * (a + b) + 0.5 * (b - a) * t
        })
        .collect()
}

/// Standard normal density.
pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Upper tail `Q(x) = P(Z > x)`.
pub fn normal_q(x: f64) -> f64 {
    0.5 * erfc(x / std::f64::consts::SQRT_2)
}

/// `ln Phi(x)` without cancellation for large positive `x`.
pub fn ln_normal_cdf(x: f64) -> f64 {
    if x > 0.0 {
        (-normal_q(x)).ln_1p()
    } else {
        normal_q(-x).ln()
    }
}

/// Trapezoid rule on the real line for a smooth integrand decaying like a
/// Gaussian; exponentially accurate for step sizes well below 1.
pub fn integrate_gaussian_line<F: Fn(f64) -> f64>(
    f: F,
    center: f64,
    half_width: f64,
    step: f64,
) -> f64 {
    let k = (half_width / step).ceil() as i64;
    (-k..=k).map(|i| f(center + i as f64 * step)).sum::<f64>() * step
}

/// Wilson score interval for a binomial proportion at the given z.
pub fn wilson_interval(successes: usize, total: usize, z: f64) -> (f64, f64) {
    if total == 0 {
        return (0.0, 1.0);
    }
    let n = total as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    ((center - half).max(0.0), (center + half).min(1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kronrod_integrates_smooth_functions() {
        let v = integrate(|x| x.exp(), 0.0, 1.0, 1e-12);
        assert!((v - (1f64.exp() - 1.0)).abs() < 1e-13);
        let v = integrate(|x| 1.0 / (1.0 + x), 0.0, 100.0, 1e-12);
        assert!((v - 101f64.ln()).abs() < 1e-10);
    }

    #[test]
    fn hermite_moments() {
        let (x, w) = gauss_hermite_normal(20);
        let m = |k: i32| x.iter().zip(&w).map(|(a, b)| b * a.powi(k)).sum::<f64>();
        assert!((m(0) - 1.0).abs() < 1e-13);
        assert!(m(1).abs() < 1e-13);
        assert!((m(2) - 1.0).abs() < 1e-12);
        assert!((m(4) - 3.0).abs() < 1e-11);
        assert!((m(6) - 15.0).abs() < 1e-9);
    }

    #[test]
    fn chebyshev_endpoints() {
        let g = chebyshev_grid(-3.0, 0.0, 5);
        assert!((g[0] - 0.0).abs() < 1e-15);
        assert!((g[4] + 3.0).abs() < 1e-15);
        assert!((g[2] + 1.5).abs() < 1e-15);
    }

    #[test]
    fn normal_tails() {
        assert!((normal_q(0.0) - 0.5).abs() < 1e-15);
        assert!((normal_q(1.959_963_984_540_054) - 0.025).abs() < 1e-10);
        assert!((ln_normal_cdf(10.0) + normal_q(10.0)).abs() < 1e-30);
        let line = integrate_gaussian_line(normal_pdf, 0.0, 12.0, 0.05);
        assert!((line - 1.0).abs() < 1e-13);
    }

    #[test]
    fn wilson_contains_estimate() {
        let (lo, hi) = wilson_interval(10, 100, 1.96);
        assert!(lo < 0.1 && hi > 0.1);
        assert_eq!(wilson_interval(0, 0, 1.96), (0.0, 1.0));
        let (lo, _) = wilson_interval(0, 50, 1.96);
        assert_eq!(lo, 0.0);
    }
}
