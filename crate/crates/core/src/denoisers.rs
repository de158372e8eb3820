//! The two matched estimators of the VAMP loop and their error functionals.
//!
//! `g1` is the section-wise posterior mean under the one-hot prior on an AWGN
//! channel of precision `gamma`; `g2` is the LMMSE estimate for the linear
//! model. `eps1` and `eps2` are the matching per-coordinate MSEs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::allocation::PowerAllocation;
use crate::design::DesignOperator;
use crate::error::{invalid, Error, Result};
use crate::numeric;
use crate::sparc::{amplitudes, SparcParams};
use crate::spectra::SpectrumModel;

/// Default number of section draws per `eps1` evaluation.
pub const DEFAULT_MC_SAMPLES: usize = 20_000;

/// Effective scalar channel `R = X0 + N(0, 1/gamma)` seen by `g1`.
#[derive(Debug, Clone, Copy)]
pub struct ScalarChannelQuery<'a> {
    pub gamma: f64,
    pub pa: &'a PowerAllocation,
    pub params: &'a SparcParams,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct McConfig {
    pub samples: usize,
    pub seed: u64,
}

impl Default for McConfig {
    fn default() -> Self {
        Self {
            samples: DEFAULT_MC_SAMPLES,
            seed: 0,
        }
    }
}

fn check_finite(v: &[f64], what: &'static str) -> Result<()> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite(what));
    }
    Ok(())
}

fn check_len(v: &[f64], expected: usize, what: &'static str) -> Result<()> {
    if v.len() != expected {
        return Err(Error::DimensionMismatch {
            what,
            expected,
            actual: v.len(),
        });
    }
    Ok(())
}

// In-place softmax of `logits`, shifted by the maximum.
fn softmax_in_place(logits: &mut [f64]) {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for v in logits.iter_mut() {
        *v = (*v - m).exp();
        z += *v;
    }
    for v in logits.iter_mut() {
        *v /= z;
    }
}

/// Section posterior weights `w_j ∝ exp(gamma a r_j)` for every section.
pub fn posterior_weights(
    r: &[f64],
    gamma: f64,
    pa: &PowerAllocation,
    params: &SparcParams,
) -> Result<Vec<f64>> {
    check_len(r, params.len(), "g1 input")?;
    check_len(&pa.values, params.sections, "power allocation length")?;
    check_finite(r, "g1 input")?;
    if !(gamma >= 0.0 && gamma.is_finite()) {
        return invalid(format!(
            "g1 precision must be finite and non-negative, got {gamma}"
        ));
    }
    let amps = amplitudes(pa, params);
    let mut w = vec![0.0; r.len()];
    for ((out, sec), a) in w
        .chunks_exact_mut(params.section_size)
        .zip(r.chunks_exact(params.section_size))
        .zip(&amps)
    {
        for (o, &v) in out.iter_mut().zip(sec) {
            *o = gamma * a * v;
        }
        softmax_in_place(out);
    }
    Ok(w)
}

/// Posterior mean under the one-hot section prior.
pub fn g1(r: &[f64], gamma: f64, pa: &PowerAllocation, params: &SparcParams) -> Result<Vec<f64>> {
    let mut w = posterior_weights(r, gamma, pa, params)?;
    for (sec, a) in w
        .chunks_exact_mut(params.section_size)
        .zip(amplitudes(pa, params))
    {
        for v in sec {
            *v *= a;
        }
    }
    Ok(w)
}

/// Average diagonal Jacobian of `g1`, `(1/N) sum_i gamma a_l^2 w_i (1 - w_i)`.
pub fn g1_divergence(
    r: &[f64],
    gamma: f64,
    pa: &PowerAllocation,
    params: &SparcParams,
) -> Result<f64> {
    let w = posterior_weights(r, gamma, pa, params)?;
    let amps = amplitudes(pa, params);
    let total: f64 = w
        .chunks_exact(params.section_size)
        .zip(&amps)
        .map(|(sec, a)| a * a * sec.iter().map(|p| p * (1.0 - p)).sum::<f64>())
        .sum();
    Ok(gamma * total / params.len() as f64)
}

/// Both Monte Carlo routes to `eps1` plus the success fraction `x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Eps1Estimate {
    /// `alpha P (1 - x)`.
    pub via_success: f64,
    /// `(1/N) sum_l n P_l E[1 - sum_j w_j^2]`.
    pub via_posterior_variance: f64,
    /// Power-weighted posterior mass on the true index.
    pub x: f64,
    pub std_error_success: f64,
    pub std_error_variance: f64,
}

// Sections sharing the same amplitude are statistically identical; each group
// gets its own random stream.
struct Group {
    amplitude: f64,
    /// Fraction of the total power carried by the group.
    share: f64,
}

fn groups(pa: &PowerAllocation, params: &SparcParams) -> Vec<Group> {
    let amps = amplitudes(pa, params);
    let total: f64 = pa.values.iter().sum();
    let mut out: Vec<Group> = Vec::new();
    for (a, p) in amps.iter().zip(&pa.values) {
        match out.last_mut() {
            Some(g) if g.amplitude.to_bits() == a.to_bits() => g.share += p / total,
            _ => out.push(Group {
                amplitude: *a,
                share: p / total,
            }),
        }
    }
    out
}

// Per-group sums over draws: (1 - w1), (1 - sum w^2), and their squares,
// accumulated over antithetic pair averages.
#[derive(Default, Clone, Copy)]
struct Moments {
    miss: f64,
    miss_sq: f64,
    var: f64,
    var_sq: f64,
    pairs: usize,
}

// Posterior of one section draw with the true index first: returns
// (1 - w_1, 1 - sum_j w_j^2) without cancellation.
fn section_draw(nu: f64, u: &[f64], sign: f64, buf: &mut [f64]) -> (f64, f64) {
    for (b, &x) in buf.iter_mut().zip(u) {
        *b = nu * sign * x;
    }
    buf[0] += nu * nu;
    softmax_in_place(buf);
    let rest: f64 = buf[1..].iter().sum();
    let rest_sq: f64 = buf[1..].iter().map(|w| w * w).sum();
    let w1 = buf[0];
    let miss = rest;
    // 1 - w1^2 - sum_{j>1} w_j^2 = (1 - w1)(1 + w1) - sum_{j>1} w_j^2
    let var = (miss * (1.0 + w1) - rest_sq).max(0.0);
    (miss, var)
}

fn group_moments(nu: f64, m: usize, pairs: usize, seed: u64, stream: u64) -> Moments {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let mut u = vec![0.0; m];
    let mut buf = vec![0.0; m];
    let mut acc = Moments {
        pairs,
        ..Moments::default()
    };
    for _ in 0..pairs {
        for x in u.iter_mut() {
            *x = rng.sample(StandardNormal);
        }
        let (m1, v1) = section_draw(nu, &u, 1.0, &mut buf);
        let (m2, v2) = section_draw(nu, &u, -1.0, &mut buf);
        let miss = 0.5 * (m1 + m2);
        let var = 0.5 * (v1 + v2);
        acc.miss += miss;
        acc.miss_sq += miss * miss;
        acc.var += var;
        acc.var_sq += var * var;
    }
    acc
}

fn estimate_from_groups(
    q: &ScalarChannelQuery<'_>,
    mc: McConfig,
) -> Result<(Vec<Group>, Vec<Moments>)> {
    if !(q.gamma >= 0.0) {
        return invalid(format!(
            "channel precision must be non-negative, got {}",
            q.gamma
        ));
    }
    if mc.samples == 0 {
        return invalid("Monte Carlo sample count must be positive");
    }
    check_len(&q.pa.values, q.params.sections, "power allocation length")?;
    let gs = groups(q.pa, q.params);
    let per_group = mc.samples.div_ceil(gs.len());
    let pairs = per_group.div_ceil(2).max(1);
    let m = q.params.section_size;
    let moments: Vec<Moments> = gs
        .par_iter()
        .enumerate()
        .map(|(k, g)| {
            let nu = g.amplitude * q.gamma.sqrt();
            if nu.is_infinite() {
                return Moments {
                    pairs,
                    ..Moments::default()
                };
            }
            group_moments(nu, m, pairs, mc.seed, k as u64)
        })
        .collect();
    Ok((gs, moments))
}

/// Monte Carlo estimate of the MMSE of `g1` on the scalar channel, by both
/// routes. Draws are shared across calls with the same seed, so curves in
/// `gamma` are smooth.
pub fn eps1_estimate(q: &ScalarChannelQuery<'_>, mc: McConfig) -> Result<Eps1Estimate> {
    let (gs, moments) = estimate_from_groups(q, mc)?;
    let (mut miss, mut var, mut se_miss, mut se_var) = (0.0, 0.0, 0.0, 0.0);
    let (mut var_weight, mut total_share) = (0.0, 0.0);
    for (g, mo) in gs.iter().zip(&moments) {
        let k = mo.pairs as f64;
        let mean_miss = mo.miss / k;
        let mean_var = mo.var / k;
        miss += g.share * mean_miss;
        var += g.share * mean_var;
        if mo.pairs > 1 {
            let s2m = (mo.miss_sq / k - mean_miss * mean_miss).max(0.0) * k / (k - 1.0);
            let s2v = (mo.var_sq / k - mean_var * mean_var).max(0.0) * k / (k - 1.0);
            se_miss += g.share * g.share * s2m / k;
            se_var += g.share * g.share * s2v / k;
        }
        var_weight += g.share;
        total_share += g.share;
    }
    debug_assert!((var_weight - total_share).abs() < 1e-12);
    let scale = q.params.alpha() * q.params.power;
    Ok(Eps1Estimate {
        via_success: scale * miss,
        via_posterior_variance: scale * var,
        x: 1.0 - miss,
        std_error_success: scale * se_miss.sqrt(),
        std_error_variance: scale * se_var.sqrt(),
    })
}

/// `eps1(gamma) = alpha P (1 - x)`, Monte Carlo.
pub fn eps1(q: &ScalarChannelQuery<'_>, mc: McConfig) -> Result<f64> {
    Ok(eps1_estimate(q, mc)?.via_success)
}

/// Probability that the argmax of one section on the scalar channel misses
/// the true index: `1 - int phi(u) Phi(u + nu)^{M-1} du` with `nu = a sqrt(gamma)`.
pub fn section_miss_probability(nu: f64, m: usize) -> f64 {
    if m < 2 {
        return 0.0;
    }
    if nu.is_infinite() {
        return 0.0;
    }
    // P(hit) = E[Phi(U + nu)^{M-1}]; integrate the miss directly for accuracy
    // near 0: 1 - Phi^{M-1} = -expm1((M-1) ln Phi).
    let k = (m - 1) as f64;
    numeric::integrate_gaussian_line(
        |u| {
            let hit_ln = k * numeric::ln_normal_cdf(u + nu);
            numeric::normal_pdf(u) * -hit_ln.exp_m1()
        },
        0.0,
        12.0,
        0.02,
    )
    .clamp(0.0, 1.0)
}

/// Section error rate of the hard decision on the scalar channel of precision
/// `gamma`, averaged over sections with weight `1/L`.
pub fn section_error_probability(q: &ScalarChannelQuery<'_>) -> Result<f64> {
    check_len(&q.pa.values, q.params.sections, "power allocation length")?;
    if !(q.gamma >= 0.0) {
        return invalid(format!(
            "channel precision must be non-negative, got {}",
            q.gamma
        ));
    }
    let amps = amplitudes(q.pa, q.params);
    let m = q.params.section_size;
    let mut total = 0.0;
    let mut cache: Option<(u64, f64)> = None;
    for a in amps {
        let p = match cache {
            Some((bits, p)) if bits == a.to_bits() => p,
            _ => {
                let p = section_miss_probability(a * q.gamma.sqrt(), m);
                cache = Some((a.to_bits(), p));
                p
            }
        };
        total += p;
    }
    Ok(total / q.params.sections as f64)
}

/// Monte Carlo counterpart of [`section_error_probability`] on the same
/// draws as [`eps1_estimate`].
pub fn section_error_probability_mc(q: &ScalarChannelQuery<'_>, mc: McConfig) -> Result<f64> {
    if mc.samples == 0 {
        return invalid("Monte Carlo sample count must be positive");
    }
    check_len(&q.pa.values, q.params.sections, "power allocation length")?;
    let amps = amplitudes(q.pa, q.params);
    let gs = groups(q.pa, q.params);
    let per_group = mc.samples.div_ceil(gs.len());
    let pairs = per_group.div_ceil(2).max(1);
    let m = q.params.section_size;
    // sections per group, to weight by 1/L rather than by power
    let mut counts = vec![0usize; gs.len()];
    let mut k = 0;
    for (i, a) in amps.iter().enumerate() {
        if i > 0 && a.to_bits() != amps[i - 1].to_bits() {
            k += 1;
        }
        counts[k] += 1;
    }
    let rates: Vec<f64> = gs
        .par_iter()
        .enumerate()
        .map(|(k, g)| {
            let nu = g.amplitude * q.gamma.sqrt();
            let mut rng = ChaCha8Rng::seed_from_u64(mc.seed);
            rng.set_stream(k as u64);
            let mut u = vec![0.0; m];
            let mut errors = 0usize;
            for _ in 0..pairs {
                for x in u.iter_mut() {
                    *x = rng.sample(StandardNormal);
                }
                for sign in [1.0, -1.0] {
                    let true_score = nu + sign * u[0];
                    if u[1..].iter().any(|&v| sign * v >= true_score) {
                        errors += 1;
                    }
                }
            }
            errors as f64 / (2 * pairs) as f64
        })
        .collect();
    Ok(rates
        .iter()
        .zip(&counts)
        .map(|(r, &c)| r * c as f64)
        .sum::<f64>()
        / q.params.sections as f64)
}

/// LMMSE estimate `(gamma_w A^T A + gamma I)^{-1} (gamma_w A^T y + gamma r)`
/// through the operator's singular factors.
pub fn g2(r: &[f64], gamma: f64, op: &DesignOperator, y: &[f64], gamma_w: f64) -> Result<Vec<f64>> {
    check_len(r, op.cols(), "g2 input")?;
    check_len(y, op.rows(), "observation")?;
    check_finite(r, "g2 input")?;
    if !(gamma_w > 0.0 && gamma_w.is_finite()) {
        return invalid(format!("noise precision must be positive, got {gamma_w}"));
    }
    let s = op.singulars();
    let full_rank_square = op.rows() == op.cols() && s.iter().all(|&v| v > 0.0);
    if !(gamma.is_finite() && (gamma > 0.0 || (gamma == 0.0 && full_rank_square))) {
        return Err(Error::Singular(format!(
            "LMMSE precision {gamma} leaves null directions unsolvable"
        )));
    }
    // out = r + V_1 [gamma_w s (U^T y - s V_1^T r) / (gamma_w s^2 + gamma)]
    let c = op.range_coords(r)?;
    let uy = op.u_t(y)?;
    let d: Vec<f64> = s
        .iter()
        .zip(c.iter().zip(&uy))
        .map(|(&si, (&ci, &yi))| gamma_w * si * (yi - si * ci) / (gamma_w * si * si + gamma))
        .collect();
    let correction = op.from_range_coords(&d)?;
    Ok(r.iter().zip(&correction).map(|(a, b)| a + b).collect())
}

/// `eps2 = (1 - alpha)/gamma2 + alpha E[1 / (gamma_w lambda / alpha + gamma2)]`:
/// the normalized resolvent trace of `gamma_w A^T A` at `-gamma2`.
pub fn eps2(gamma2: f64, spectrum: &SpectrumModel, alpha: f64, gamma_w: f64) -> Result<f64> {
    if !(gamma2 > 0.0 && gamma2.is_finite()) {
        return invalid(format!("LMMSE precision must be positive, got {gamma2}"));
    }
    if !(alpha > 0.0 && alpha <= 1.0) {
        return invalid(format!("sampling ratio must lie in (0, 1], got {alpha}"));
    }
    let inner = spectrum.expect(|l| 1.0 / (gamma_w * l / alpha + gamma2));
    Ok((1.0 - alpha) / gamma2 + alpha * inner)
}
