//! Singular-spectrum models and the functionals built on them.
//!
//! A [`SpectrumModel`] describes the law of the normalized squared singular
//! value `lambda = S^2` of the design (each singular value of `A` being
//! `sqrt(N/n) * S`), stored as weighted atoms with `E[lambda] = 1`. All
//! spectral functionals (`psi`, thresholds, the LMMSE error) are expectations
//! over these atoms.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::numeric;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpectrumKind {
    AnalyticUnit,
    EmpiricalSamples,
    DensityGrid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumModel {
    kind: SpectrumKind,
    atoms: Vec<f64>,
    weights: Vec<f64>,
    /// Factor applied to the squared values on load to enforce `E[lambda] = 1`.
    rescale: f64,
}

impl SpectrumModel {
    /// `S = 1` almost surely: row-orthogonal designs.
    pub fn unit() -> Self {
        Self {
            kind: SpectrumKind::AnalyticUnit,
            atoms: vec![1.0],
            weights: vec![1.0],
            rescale: 1.0,
        }
    }

    /// Empirical spectrum from singular-value variables `S_i` (equal weights).
    pub fn from_singular_values(s: &[f64]) -> Result<Self> {
        let sq: Vec<f64> = s.iter().map(|v| v * v).collect();
        if s.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return invalid("singular values must be finite and non-negative");
        }
        Self::from_weighted(SpectrumKind::EmpiricalSamples, sq, vec![1.0; s.len()])
    }

    /// Discrete law with atoms at `S = s_k` (not squared) carrying weights `w_k`.
    pub fn discrete(s: &[f64], weights: &[f64]) -> Result<Self> {
        if s.len() != weights.len() {
            return Err(Error::DimensionMismatch {
                what: "spectrum weights",
                expected: s.len(),
                actual: weights.len(),
            });
        }
        if s.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return invalid("singular values must be finite and non-negative");
        }
        Self::from_weighted(
            SpectrumKind::EmpiricalSamples,
            s.iter().map(|v| v * v).collect(),
            weights.to_vec(),
        )
    }

    /// Finite-ratio Marchenko-Pastur law of `S^2` for an iid Gaussian design
    /// with sampling ratio `alpha = n/N < 1`, discretized with a Gauss-Chebyshev
    /// rule of the second kind (exact square-root edges).
    pub fn marchenko_pastur(alpha: f64, nodes: usize) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return invalid(format!(
                "Marchenko-Pastur ratio must lie in (0, 1), got {alpha}"
            ));
        }
        if nodes == 0 {
            return invalid("need at least one quadrature node");
        }
        let center = 1.0 + alpha;
        let radius = 2.0 * alpha.sqrt();
        let k1 = (nodes + 1) as f64;
        let mut atoms = Vec::with_capacity(nodes);
        let mut weights = Vec::with_capacity(nodes);
        for k in 1..=nodes {
            let theta = std::f64::consts::PI * k as f64 / k1;
            let lambda = center + radius * theta.cos();
            atoms.push(lambda);
            // sqrt edges absorbed by the rule; the remaining 1/lambda stays in the weight
            weights.push(theta.sin().powi(2) / lambda);
        }
        Self::from_weighted(SpectrumKind::DensityGrid, atoms, weights)
    }

    /// `count` iid draws of `S` from the Marchenko-Pastur law (rejection sampling).
    pub fn sampled_marchenko_pastur(alpha: f64, count: usize, seed: u64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return invalid(format!(
                "Marchenko-Pastur ratio must lie in (0, 1), got {alpha}"
            ));
        }
        let lo = (1.0 - alpha.sqrt()).powi(2);
        let hi = (1.0 + alpha.sqrt()).powi(2);
        let density = |l: f64| {
            ((hi - l) * (l - lo)).max(0.0).sqrt() / (2.0 * std::f64::consts::PI * alpha * l)
        };
        // density is maximized below the mode; bound it on a fine grid with margin
        let bound = (0..=2000)
            .map(|i| density(lo + (hi - lo) * i as f64 / 2000.0))
            .fold(0.0, f64::max)
            * 1.05;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = Vec::with_capacity(count);
        while s.len() < count {
            let l = rng.random_range(lo..hi);
            if rng.random::<f64>() * bound <= density(l) {
                s.push(l.sqrt());
            }
        }
        Self::from_singular_values(&s)
    }

    /// Reads one `S` value per line; blank lines and `#` comments are skipped.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())?;
        Self::from_file_contents(&text)
    }

    pub fn from_file_contents(text: &str) -> Result<Self> {
        let mut s = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let v: f64 = line.parse().map_err(|_| {
                Error::Parse(format!("line {}: not a number: {line:?}", lineno + 1))
            })?;
            s.push(v);
        }
        if s.is_empty() {
            return Err(Error::Parse("spectrum file holds no values".into()));
        }
        Self::from_singular_values(&s)
    }

    fn from_weighted(kind: SpectrumKind, atoms: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if atoms.is_empty() {
            return invalid("spectrum must hold at least one value");
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return invalid("spectrum weights must be finite and non-negative");
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return invalid("spectrum weights sum to zero");
        }
        let weights: Vec<f64> = weights.iter().map(|w| w / total).collect();
        let mean: f64 = atoms.iter().zip(&weights).map(|(a, w)| a * w).sum();
        if !(mean > 0.0 && mean.is_finite()) {
            return invalid("spectrum has zero second moment");
        }
        let rescale = 1.0 / mean;
        if (rescale - 1.0).abs() > 1e-12 {
            log::info!("rescaling spectrum by {rescale:.6e} to enforce E[S^2] = 1");
        }
        let atoms = atoms.iter().map(|a| a * rescale).collect();
        Ok(Self {
            kind,
            atoms,
            weights,
            rescale,
        })
    }

    pub fn kind(&self) -> SpectrumKind {
        self.kind
    }

    /// Factor that was applied to the squared values on load.
    pub fn rescale_factor(&self) -> f64 {
        self.rescale
    }

    /// Atoms of `lambda = S^2` and their weights.
    pub fn atoms(&self) -> (&[f64], &[f64]) {
        (&self.atoms, &self.weights)
    }

    /// `E[f(lambda)]`.
    pub fn expect<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        self.atoms
            .iter()
            .zip(&self.weights)
            .map(|(&l, &w)| w * f(l))
            .sum()
    }

    pub fn second_moment(&self) -> f64 {
        self.expect(|l| l)
    }

    /// Support `[S_min, S_max]` in singular-value units.
    pub fn support(&self) -> (f64, f64) {
        let lo = self.atoms.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = self.atoms.iter().cloned().fold(0.0, f64::max);
        (lo.sqrt(), hi.sqrt())
    }

    /// True when every singular value is strictly positive.
    pub fn strictly_positive(&self) -> bool {
        self.support().0 > 0.0
    }

    /// `Psi(z) = E[lambda / (1 - z lambda)]`, defined for `z < 1 / lambda_max`.
    pub fn psi(&self, z: f64) -> f64 {
        match self.kind {
            SpectrumKind::AnalyticUnit => 1.0 / (1.0 - z),
            _ => self.expect(|l| l / (1.0 - z * l)),
        }
    }

    pub fn is_unit(&self) -> bool {
        self.kind == SpectrumKind::AnalyticUnit
            || self.atoms.iter().all(|&a| (a - 1.0).abs() < 1e-12)
    }
}

/// `F(x) = 1 / (snr Psi(-snr (1 - x)))` on `[0, 1]`.
pub fn f_curve(model: &SpectrumModel, snr: f64, x: f64) -> f64 {
    1.0 / (snr * model.psi(-snr * (1.0 - x)))
}

pub fn capacity(snr: f64) -> f64 {
    crate::sparc::capacity(snr)
}

/// Algorithmic threshold `R_alg = snr Psi(-snr) / 2` in nats.
pub fn r_alg(model: &SpectrumModel, snr: f64) -> f64 {
    0.5 * snr * model.psi(-snr)
}

/// Information-theoretic threshold `R_IT = (1/2) int_0^snr Psi(-u) du` in nats.
pub fn r_it(model: &SpectrumModel, snr: f64) -> f64 {
    0.5 * numeric::integrate(|u| model.psi(-u), 0.0, snr, 1e-12)
}

pub const CONDITION_GRID: usize = 512;

/// Largest margin `c` such that
/// `Psi(z) >= 1 / (1 - z + (D_R + D_R^2)/2 (1 - c))` on every grid point.
/// Zero signals that the condition fails.
pub fn check_condition(model: &SpectrumModel, rate: f64, snr: f64, z_grid: &[f64]) -> Result<f64> {
    let cap = capacity(snr);
    let delta = (cap - rate) / cap;
    if delta <= 0.0 {
        return invalid(format!("rate {rate} is not below capacity {cap}"));
    }
    if delta >= 0.5 {
        return invalid(format!("relative gap {delta} must be below 1/2"));
    }
    let d = 0.5 * (delta + delta * delta);
    let margin = z_grid
        .iter()
        .map(|&z| 1.0 - (1.0 / model.psi(z) - (1.0 - z)) / d)
        .fold(f64::INFINITY, f64::min);
    Ok(margin.clamp(0.0, 1.0))
}

/// Default z-grid for [`check_condition`]: Chebyshev points on `[-snr, 0]`.
pub fn condition_grid(snr: f64) -> Vec<f64> {
    numeric::chebyshev_grid(-snr, 0.0, CONDITION_GRID)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdReport {
    pub snr: f64,
    pub r_alg: f64,
    pub r_it: f64,
    pub capacity: f64,
    pub r_alg_bits: f64,
    pub r_it_bits: f64,
    pub capacity_bits: f64,
    /// `Psi(z) = 1/(1-z)` on the condition grid.
    pub criterion_ok: bool,
    pub rate: Option<f64>,
    pub delta_r: Option<f64>,
    pub condition_margin: Option<f64>,
    pub spectrum_kind: SpectrumKind,
    pub strictly_positive: bool,
}

pub fn threshold_report(model: &SpectrumModel, snr: f64, rate: Option<f64>) -> ThresholdReport {
    let grid = condition_grid(snr);
    let criterion_ok = grid
        .iter()
        .all(|&z| (model.psi(z) * (1.0 - z) - 1.0).abs() < 1e-9);
    let cap = capacity(snr);
    let delta_r = rate.map(|r| (cap - r) / cap);
    let condition_margin = rate.and_then(|r| check_condition(model, r, snr, &grid).ok());
    let r_alg = r_alg(model, snr);
    let r_it = r_it(model, snr);
    ThresholdReport {
        snr,
        r_alg,
        r_it,
        capacity: cap,
        r_alg_bits: crate::sparc::nats_to_bits(r_alg),
        r_it_bits: crate::sparc::nats_to_bits(r_it),
        capacity_bits: crate::sparc::nats_to_bits(cap),
        criterion_ok,
        rate,
        delta_r,
        condition_margin,
        spectrum_kind: model.kind(),
        strictly_positive: model.strictly_positive(),
    }
}
