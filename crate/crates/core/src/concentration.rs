//! Empirical checks of the VAMP general recursion: its defining identities,
//! the constant-skirt covariance structure predicted by state evolution, and
//! how the empirical deviations shrink with the number of sections.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::allocation::PowerAllocation;
use crate::dct::Dct;
use crate::denoisers::g1;
use crate::design::DesignOperator;
use crate::error::{invalid, Error, Result};
use crate::sparc::{encode, Message, SparcParams};
use crate::state_evolution::SeTrajectory;
use crate::vamp::{decode_from, trial_seeds, DecodeOptions};

/// Tolerance on the defining identities between the recursion and a
/// decoder run, relative to the iterate scale.
pub const IDENTITY_TOLERANCE: f64 = 1e-10;

/// How `p_0 = r_10 - x_0` is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecursionStart {
    /// `r_10 = 0`, so `p_0 = -x_0`.
    Zero,
    /// `p_0` iid `N(0, 1/gamma_10)`, independent of everything else.
    Gaussian,
}

/// Iterates of one run of the general recursion, indexed by `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct RecursionTrace {
    pub p: Vec<Vec<f64>>,
    pub q: Vec<Vec<f64>>,
    pub u: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    /// `(1/N) ||f_p(p_t)||^2`, the empirical `eps1`.
    pub fp_mse: Vec<f64>,
    /// Noise rotated into the left singular basis, `U^T w`.
    pub xi: Vec<f64>,
    pub omega_p: Vec<f64>,
    pub omega_q: Vec<f64>,
    /// Largest deviation from the defining identities against the decoder.
    pub identity_error: f64,
}

/// `f_q(q) = (gamma_w omega xi + gamma q) / (gamma_w omega^2 + gamma)`,
/// coordinatewise, with `xi` and `omega` zero past the first `n` entries.
pub fn f_q(q: &[f64], omega_q: &[f64], xi: &[f64], gamma: f64, gamma_w: f64) -> Vec<f64> {
    q.iter()
        .enumerate()
        .map(|(i, &qi)| {
            let w = omega_q[i];
            let x = xi.get(i).copied().unwrap_or(0.0);
            (gamma_w * w * x + gamma * qi) / (gamma_w * w * w + gamma)
        })
        .collect()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn max_abs(a: &[f64]) -> f64 {
    a.iter().map(|x| x.abs()).fold(0.0, f64::max)
}

/// One trial's inputs: message, codeword, noise, operator and `p_0`.
struct Instance {
    x0: Vec<f64>,
    y: Vec<f64>,
    w: Vec<f64>,
    op: DesignOperator,
    p0: Vec<f64>,
}

fn draw_instance(
    params: &SparcParams,
    pa: &PowerAllocation,
    traj: &SeTrajectory,
    start: RecursionStart,
    seed: u64,
    dct: &Dct,
) -> Result<Instance> {
    let seeds = trial_seeds(seed, 0);
    let op = DesignOperator::dct_with_plan(dct.clone(), params.code_length, seeds.matrix)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seeds.message);
    let msg = Message::random(params, &mut rng);
    let x0 = encode(&msg, pa, params)?.values;
    let mut noise = ChaCha8Rng::seed_from_u64(seeds.noise);
    let sigma = params.sigma2.sqrt();
    let w: Vec<f64> = (0..params.code_length)
        .map(|_| sigma * noise.sample::<f64, _>(StandardNormal))
        .collect();
    let y: Vec<f64> = op.apply(&x0)?.iter().zip(&w).map(|(a, b)| a + b).collect();
    let p0 = match start {
        RecursionStart::Zero => x0.iter().map(|v| -v).collect(),
        RecursionStart::Gaussian => {
            let g = traj.states[0].gamma1;
            if !(g > 0.0) {
                return invalid("a Gaussian start needs a positive initial precision");
            }
            noise.set_stream(1);
            let sd = 1.0 / g.sqrt();
            (0..params.len())
                .map(|_| sd * noise.sample::<f64, _>(StandardNormal))
                .collect()
        }
    };
    Ok(Instance { x0, y, w, op, p0 })
}

/// Runs the general recursion for `t = 0..=t_max` on a row-orthogonal DCT
/// design, next to a decoder pass started from `r_10 = x_0 + p_0`, and
/// checks the defining identities between the two.
pub fn run_general_recursion(
    params: &SparcParams,
    pa: &PowerAllocation,
    traj: &SeTrajectory,
    t_max: usize,
    start: RecursionStart,
    seed: u64,
    dct: &Dct,
) -> Result<RecursionTrace> {
    if t_max + 1 > traj.states.len() || traj.states[..t_max].iter().any(|s| s.lmmse.is_none()) {
        return invalid(format!("schedule too short for t_max = {t_max}"));
    }
    let inst = draw_instance(params, pa, traj, start, seed, dct)?;
    let op = &inst.op;
    let gamma_w = params.gamma_w();
    let n = params.code_length;
    let big_n = params.len();
    let mut omega_q = op.singulars().to_vec();
    omega_q.resize(big_n, 0.0);
    let xi = op.u_t(&inst.w)?;

    let mut tr = RecursionTrace {
        p: Vec::new(),
        q: Vec::new(),
        u: Vec::new(),
        v: Vec::new(),
        fp_mse: Vec::new(),
        xi: xi.clone(),
        omega_p: inst.x0.clone(),
        omega_q: omega_q.clone(),
        identity_error: 0.0,
    };
    let mut p = inst.p0.clone();
    let mut u = op.v_t(&p)?;
    for t in 0..=t_max {
        let s = &traj.states[t];
        let r: Vec<f64> = p.iter().zip(&inst.x0).map(|(a, b)| a + b).collect();
        let fp: Vec<f64> = g1(&r, s.gamma1, pa, params)?
            .iter()
            .zip(&inst.x0)
            .map(|(a, b)| a - b)
            .collect();
        tr.fp_mse
            .push(fp.iter().map(|v| v * v).sum::<f64>() / big_n as f64);
        tr.p.push(p.clone());
        tr.u.push(u.clone());
        if t == t_max {
            break;
        }
        let h = s.lmmse.expect("checked above");
        let a1 = s.alpha1;
        let v: Vec<f64> = fp
            .iter()
            .zip(&p)
            .map(|(f, p)| (f - a1 * p) / (1.0 - a1))
            .collect();
        let q = op.v_t(&v)?;
        let fq = f_q(&q, &omega_q, &xi, h.gamma2, gamma_w);
        let a2 = h.alpha2;
        u = fq
            .iter()
            .zip(&q)
            .map(|(f, q)| (f - a2 * q) / (1.0 - a2))
            .collect();
        p = op.v(&u)?;
        tr.v.push(v);
        tr.q.push(q);
    }
    debug_assert_eq!(xi.len(), n);

    // the decoder on the same instance must reproduce the iterates
    let opts = DecodeOptions {
        iterations: Some(t_max),
        record_trace: true,
        ..DecodeOptions::default()
    };
    let r10: Vec<f64> = inst.p0.iter().zip(&inst.x0).map(|(a, b)| a + b).collect();
    let res = decode_from(&inst.y, op, params, pa, traj, &opts, None, Some(&r10))?;
    let mut err: f64 = 0.0;
    let mut scale: f64 = 1.0;
    for (t, rec) in res.trace.iter().enumerate() {
        let pt: Vec<f64> = rec.r1.iter().zip(&inst.x0).map(|(a, b)| a - b).collect();
        err = err.max(max_abs_diff(&pt, &tr.p[t]));
        err = err.max(max_abs_diff(&op.v_t(&pt)?, &tr.u[t]));
        scale = scale.max(max_abs(&tr.p[t]));
        if t < t_max {
            let vt: Vec<f64> = rec.r2.iter().zip(&inst.x0).map(|(a, b)| a - b).collect();
            err = err.max(max_abs_diff(&vt, &tr.v[t]));
            err = err.max(max_abs_diff(&op.v_t(&vt)?, &tr.q[t]));
            scale = scale.max(max_abs(&tr.v[t]));
        }
    }
    tr.identity_error = err / scale;
    if tr.identity_error > IDENTITY_TOLERANCE {
        return Err(Error::NonFinite(
            "general recursion departs from the decoder iterates",
        ));
    }
    Ok(tr)
}

/// Constant-skirt targets: `[Sigma_p]_{jt} = 1/gamma_1,max(j,t)` and
/// `[Sigma_q]_{jt} = 1/gamma_2,max(j,t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceTargets {
    pub sigma_p: DMatrix<f64>,
    pub sigma_q: DMatrix<f64>,
}

pub fn covariance_targets(traj: &SeTrajectory, t_max: usize) -> Result<CovarianceTargets> {
    if t_max + 1 > traj.states.len() || traj.states[..t_max].iter().any(|s| s.lmmse.is_none()) {
        return invalid(format!("schedule too short for t_max = {t_max}"));
    }
    if !(traj.states[0].gamma1 > 0.0) {
        return invalid("covariance targets need a positive initial precision");
    }
    let g1: Vec<f64> = traj.states[..=t_max].iter().map(|s| s.gamma1).collect();
    let g2: Vec<f64> = traj.states[..t_max]
        .iter()
        .map(|s| s.gamma2().unwrap())
        .collect();
    let sigma_p = DMatrix::from_fn(t_max + 1, t_max + 1, |j, t| 1.0 / g1[j.max(t)]);
    let sigma_q = DMatrix::from_fn(t_max, t_max, |j, t| 1.0 / g2[j.max(t)]);
    Ok(CovarianceTargets { sigma_p, sigma_q })
}

/// Conditional variance `Sigma[t,t] - b^T Sigma_{<t}^{-1} b` of the `t`-th
/// Gaussian given the earlier ones.
pub fn conditional_variance(sigma: &DMatrix<f64>, t: usize) -> Result<f64> {
    if t == 0 {
        return Ok(sigma[(0, 0)]);
    }
    let head = sigma.view((0, 0), (t, t)).into_owned();
    let b = DVector::from_iterator(t, (0..t).map(|j| sigma[(j, t)]));
    let sol = head
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::Singular(format!("covariance block of size {t} is singular")))?;
    Ok(sigma[(t, t)] - b.dot(&sol))
}

fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().cloned().collect())
        .collect()
}

/// Across-seed summary of the empirical Gram matrices at one size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceReport {
    pub sections: usize,
    pub section_size: usize,
    pub seeds: usize,
    pub target_p: Vec<Vec<f64>>,
    pub target_q: Vec<Vec<f64>>,
    /// Mean of `(1/N) p_j^T p_t` over seeds.
    pub mean_p: Vec<Vec<f64>>,
    pub mean_q: Vec<Vec<f64>>,
    /// Standard error of the mean across seeds.
    pub stderr_p: Vec<Vec<f64>>,
    pub stderr_q: Vec<Vec<f64>>,
    /// `|mean - target| / stderr` per entry.
    pub z_p: Vec<Vec<f64>>,
    pub z_q: Vec<Vec<f64>>,
    /// Root mean square over seeds of each seed's largest entrywise
    /// deviation from the targets, for `p` and `q` separately.
    pub rms_max_dev_p: f64,
    pub rms_max_dev_q: f64,
    /// Same as the two above, restricted to the diagonals of both matrices.
    pub rms_max_dev_diag: f64,
    /// Mean over seeds of `(1/N) q_j^T u_{t+1}` for `j <= t`.
    pub cross_qu: Vec<Vec<f64>>,
    /// Mean `(1/N) ||f_p(p_t)||^2` against `eps1` from the schedule.
    pub fp_mse: Vec<f64>,
    pub eps1: Vec<f64>,
    pub max_identity_error: f64,
}

impl CovarianceReport {
    pub fn max_z(&self) -> f64 {
        self.z_p
            .iter()
            .chain(&self.z_q)
            .flatten()
            .cloned()
            .fold(0.0, f64::max)
    }

    pub fn max_z_diag(&self) -> f64 {
        self.z_p
            .iter()
            .chain(&self.z_q)
            .enumerate()
            .map(|(i, row)| {
                row[if i < self.z_p.len() {
                    i
                } else {
                    i - self.z_p.len()
                }]
            })
            .fold(0.0, f64::max)
    }
}

fn gram(vs: &[Vec<f64>], norm: f64) -> DMatrix<f64> {
    let k = vs.len();
    DMatrix::from_fn(k, k, |i, j| {
        vs[i].iter().zip(&vs[j]).map(|(a, b)| a * b).sum::<f64>() / norm
    })
}

/// Runs the recursion on `seeds` independent instances (Gaussian start) and
/// compares the empirical Gram matrices with the targets.
pub fn empirical_covariance_test(
    params: &SparcParams,
    pa: &PowerAllocation,
    traj: &SeTrajectory,
    t_max: usize,
    seeds: usize,
    master_seed: u64,
) -> Result<CovarianceReport> {
    if seeds < 2 {
        return invalid("need at least two seeds for standard errors");
    }
    let targets = covariance_targets(traj, t_max)?;
    let dct = Dct::new(params.len());
    let big_n = params.len() as f64;
    let traces: Vec<RecursionTrace> = (0..seeds)
        .into_par_iter()
        .map(|s| {
            let seed = trial_seeds(master_seed, s as u64).matrix;
            run_general_recursion(
                params,
                pa,
                traj,
                t_max,
                RecursionStart::Gaussian,
                seed,
                &dct,
            )
        })
        .collect::<Result<_>>()?;

    let grams_p: Vec<DMatrix<f64>> = traces.iter().map(|t| gram(&t.p, big_n)).collect();
    let grams_q: Vec<DMatrix<f64>> = traces.iter().map(|t| gram(&t.q, big_n)).collect();
    let k = seeds as f64;
    let stats = |gs: &[DMatrix<f64>], target: &DMatrix<f64>| {
        let dim = target.nrows();
        let mut mean = DMatrix::zeros(dim, dim);
        for g in gs {
            mean += g;
        }
        mean /= k;
        let mut var = DMatrix::zeros(dim, dim);
        for g in gs {
            let d = g - &mean;
            var += d.component_mul(&d);
        }
        var /= k - 1.0;
        let se = var.map(|v| (v / k).sqrt());
        let z = DMatrix::from_fn(dim, dim, |i, j| {
            (mean[(i, j)] - target[(i, j)]).abs() / se[(i, j)]
        });
        let rms = (gs
            .iter()
            .map(|g| (g - target).abs().max().powi(2))
            .sum::<f64>()
            / k)
            .sqrt();
        (mean, se, z, rms)
    };
    let (mean_p, se_p, z_p, rms_p) = stats(&grams_p, &targets.sigma_p);
    let (mean_q, se_q, z_q, rms_q) = stats(&grams_q, &targets.sigma_q);

    let diag_dev = |g: &DMatrix<f64>, t: &DMatrix<f64>| (g.diagonal() - t.diagonal()).abs().max();
    let rms_diag = (grams_p
        .iter()
        .zip(&grams_q)
        .map(|(gp, gq)| {
            diag_dev(gp, &targets.sigma_p)
                .max(diag_dev(gq, &targets.sigma_q))
                .powi(2)
        })
        .sum::<f64>()
        / k)
        .sqrt();

    let cross: Vec<Vec<f64>> = (0..t_max)
        .map(|j| {
            (0..t_max)
                .map(|t| {
                    if j > t {
                        return 0.0;
                    }
                    traces
                        .iter()
                        .map(|tr| {
                            tr.q[j]
                                .iter()
                                .zip(&tr.u[t + 1])
                                .map(|(a, b)| a * b)
                                .sum::<f64>()
                        })
                        .sum::<f64>()
                        / big_n
                        / k
                })
                .collect()
        })
        .collect();
    let fp_mse: Vec<f64> = (0..=t_max)
        .map(|t| traces.iter().map(|tr| tr.fp_mse[t]).sum::<f64>() / k)
        .collect();
    Ok(CovarianceReport {
        sections: params.sections,
        section_size: params.section_size,
        seeds,
        target_p: matrix_rows(&targets.sigma_p),
        target_q: matrix_rows(&targets.sigma_q),
        mean_p: matrix_rows(&mean_p),
        mean_q: matrix_rows(&mean_q),
        stderr_p: matrix_rows(&se_p),
        stderr_q: matrix_rows(&se_q),
        z_p: matrix_rows(&z_p),
        z_q: matrix_rows(&z_q),
        rms_max_dev_p: rms_p,
        rms_max_dev_q: rms_q,
        rms_max_dev_diag: rms_diag,
        cross_qu: cross,
        fp_mse,
        eps1: traj.states[..=t_max].iter().map(|s| s.eps1).collect(),
        max_identity_error: traces.iter().map(|t| t.identity_error).fold(0.0, f64::max),
    })
}

/// Deviation scale `(t+1)^2 (ln M)^(t+1) / sqrt(L)` used for the tolerance
/// schedule `c0 * scale`.
pub fn tolerance_shape(sections: usize, section_size: usize, t: usize) -> f64 {
    let lm = (section_size as f64).ln();
    ((t + 1) * (t + 1)) as f64 * lm.powi(t as i32 + 1) / (sections as f64).sqrt()
}

/// Scaling study over increasing `L` with the tolerance constant fitted at
/// the first size and then frozen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingReport {
    pub sizes: Vec<CovarianceReport>,
    /// `c0` fitted at the smallest size.
    pub c0: f64,
    /// Per size, entries whose deviation exceeds `c0 * shape`.
    pub flagged: Vec<usize>,
    /// Ratio of `max(rms_max_dev_p, rms_max_dev_q)` between consecutive sizes.
    pub ratios: Vec<f64>,
    /// Same ratio for the diagonal-only deviation.
    pub diag_ratios: Vec<f64>,
}

fn entry_deviations(rep: &CovarianceReport) -> Vec<(usize, f64)> {
    let mut out = Vec::new();
    for (m, tgt) in [(&rep.mean_p, &rep.target_p), (&rep.mean_q, &rep.target_q)] {
        for (j, (row, trow)) in m.iter().zip(tgt).enumerate() {
            for (t, (v, w)) in row.iter().zip(trow).enumerate() {
                out.push((j.max(t), (v - w).abs()));
            }
        }
    }
    out
}

/// `schedule_for(L)` supplies the parameters and SE schedule at each size.
pub fn scaling_study<F>(
    sizes: &[usize],
    t_max: usize,
    seeds: usize,
    master_seed: u64,
    schedule_for: F,
) -> Result<ScalingReport>
where
    F: Fn(usize) -> Result<(SparcParams, PowerAllocation, SeTrajectory)>,
{
    if sizes.is_empty() {
        return invalid("no sizes given");
    }
    let mut reports = Vec::new();
    for &l in sizes {
        let (params, pa, traj) = schedule_for(l)?;
        reports.push(empirical_covariance_test(
            &params,
            &pa,
            &traj,
            t_max,
            seeds,
            master_seed,
        )?);
    }
    let first = &reports[0];
    let c0 = entry_deviations(first)
        .iter()
        .map(|&(t, d)| d / tolerance_shape(first.sections, first.section_size, t))
        .fold(0.0, f64::max);
    let flagged = reports
        .iter()
        .map(|r| {
            entry_deviations(r)
                .iter()
                .filter(|&&(t, d)| {
                    d > c0 * tolerance_shape(r.sections, r.section_size, t) * (1.0 + 1e-12)
                })
                .count()
        })
        .collect();
    let ratios = reports
        .windows(2)
        .map(|w| {
            w[1].rms_max_dev_p.max(w[1].rms_max_dev_q) / w[0].rms_max_dev_p.max(w[0].rms_max_dev_q)
        })
        .collect();
    let diag_ratios = reports
        .windows(2)
        .map(|w| w[1].rms_max_dev_diag / w[0].rms_max_dev_diag)
        .collect();
    Ok(ScalingReport {
        sizes: reports,
        c0,
        flagged,
        ratios,
        diag_ratios,
    })
}

/// Maximum of squared Gaussians per section, averaged over sections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaxGaussianReport {
    pub sections: usize,
    pub section_size: usize,
    pub seeds: usize,
    /// Mean over seeds of `(1/L) sum_l max_j Z_j^2`.
    pub mean_statistic: f64,
    /// Threshold `3 ln M`.
    pub threshold: f64,
    /// Fraction of seeds exceeding the threshold.
    pub failure_rate: f64,
    /// `exp(-(L/5) ln(M/70))`, informative only when `M > 70`.
    pub bound: f64,
}

pub fn max_gaussian_section_check(
    sections: usize,
    section_size: usize,
    seeds: usize,
    master_seed: u64,
) -> Result<MaxGaussianReport> {
    if sections == 0 || section_size == 0 || seeds == 0 {
        return invalid("sections, section size and seeds must be positive");
    }
    let stats: Vec<f64> = (0..seeds)
        .into_par_iter()
        .map(|s| {
            let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
            rng.set_stream(s as u64);
            let mut acc = 0.0;
            for _ in 0..sections {
                let mut best: f64 = 0.0;
                for _ in 0..section_size {
                    let z: f64 = rng.sample(StandardNormal);
                    best = best.max(z * z);
                }
                acc += best;
            }
            acc / sections as f64
        })
        .collect();
    let m = section_size as f64;
    let threshold = 3.0 * m.ln();
    Ok(MaxGaussianReport {
        sections,
        section_size,
        seeds,
        mean_statistic: stats.iter().sum::<f64>() / seeds as f64,
        threshold,
        failure_rate: stats.iter().filter(|&&v| v > threshold).count() as f64 / seeds as f64,
        bound: (-(sections as f64 / 5.0) * (m / 70.0).ln()).exp(),
    })
}
