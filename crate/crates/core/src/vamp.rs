//! VAMP decoding driven by a state-evolution schedule, and batched trials.

use std::time::Instant;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::allocation::PowerAllocation;
use crate::dct::Dct;
use crate::denoisers::{eps2, g1, g1_divergence, g2};
use crate::design::{DesignOperator, EnsembleKind};
use crate::error::{invalid, Error, Result};
use crate::numeric::wilson_interval;
use crate::sparc::{encode, hard_decision, section_errors, Message, SparcParams};
use crate::spectra::SpectrumModel;
use crate::state_evolution::SeTrajectory;

/// Relative tolerance on `eps2` when comparing the operator's spectrum with
/// the one the schedule was computed for.
pub const SPECTRUM_TOLERANCE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DivergenceMode {
    /// Precisions and divergences taken from the SE schedule.
    StateEvolution,
    /// Divergences measured on the current iterate (analytic Jacobian trace
    /// for `g1`, exact resolvent trace of the given operator for `g2`).
    Empirical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeOptions {
    /// Full iterations to run; capped by the schedule length.
    pub iterations: Option<usize>,
    pub divergence: DivergenceMode,
    pub check_spectrum: bool,
    /// Keep every `r_1t, r_2t, x_1t, x_2t`.
    pub record_trace: bool,
}

impl Default for DecodeOptions {
    fn default() -> Self {
        Self {
            iterations: None,
            divergence: DivergenceMode::StateEvolution,
            check_spectrum: true,
            record_trace: false,
        }
    }
}

/// Iterates of one decoder pass; the LMMSE half is empty on the last entry.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct IterateRecord {
    pub r1: Vec<f64>,
    pub x1: Vec<f64>,
    pub r2: Vec<f64>,
    pub x2: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeResult {
    pub message: Message,
    /// Final soft estimate `x_1T`.
    pub estimate: Vec<f64>,
    /// `||x_1t - x0||^2 / n` per denoiser evaluation, when the truth is given.
    pub mse: Vec<f64>,
    /// Number of denoiser evaluations.
    pub iterations: usize,
    pub ser: Option<f64>,
    pub trace: Vec<IterateRecord>,
}

fn check_schedule(params: &SparcParams, traj: &SeTrajectory) -> Result<()> {
    let p = &traj.params;
    if p.sections != params.sections
        || p.section_size != params.section_size
        || p.code_length != params.code_length
    {
        return invalid(format!(
            "schedule built for (L, M, n) = ({}, {}, {}), decoding ({}, {}, {})",
            p.sections,
            p.section_size,
            p.code_length,
            params.sections,
            params.section_size,
            params.code_length
        ));
    }
    Ok(())
}

/// Compares `eps2` under the operator's spectrum and the schedule's at
/// `gamma2 = gamma_w`.
pub fn spectrum_consistent(
    op: &DesignOperator,
    spectrum: &SpectrumModel,
    params: &SparcParams,
) -> Result<()> {
    let alpha = params.alpha();
    let gw = params.gamma_w();
    let ours = eps2(gw, &op.spectrum(), alpha, gw)?;
    let theirs = eps2(gw, spectrum, alpha, gw)?;
    let rel = (ours - theirs).abs() / theirs;
    if rel > SPECTRUM_TOLERANCE {
        return Err(Error::SpectrumMismatch(format!(
            "operator LMMSE error {ours:.6e} differs from schedule's {theirs:.6e} by {:.1}%",
            100.0 * rel
        )));
    }
    Ok(())
}

fn onsager(x: &[f64], r: &[f64], alpha: f64, iteration: usize) -> Result<Vec<f64>> {
    if !(alpha.is_finite() && (0.0..1.0).contains(&alpha)) {
        return Err(Error::DegenerateDivergence {
            iteration,
            value: alpha,
        });
    }
    let inv = 1.0 / (1.0 - alpha);
    Ok(x.iter()
        .zip(r)
        .map(|(x, r)| (x - alpha * r) * inv)
        .collect())
}

fn nan_guard(v: &[f64], iteration: usize) -> Result<()> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::DecoderNan(iteration));
    }
    Ok(())
}

/// Runs the decoder from `r_10 = 0`. The truth, when given, is used only to
/// record MSE and SER.
#[allow(clippy::too_many_arguments)]
pub fn decode(
    y: &[f64],
    op: &DesignOperator,
    params: &SparcParams,
    pa: &PowerAllocation,
    traj: &SeTrajectory,
    options: &DecodeOptions,
    truth: Option<(&Message, &[f64])>,
) -> Result<DecodeResult> {
    decode_from(y, op, params, pa, traj, options, truth, None)
}

/// As [`decode`], starting from a supplied `r_10`.
#[allow(clippy::too_many_arguments)]
pub fn decode_from(
    y: &[f64],
    op: &DesignOperator,
    params: &SparcParams,
    pa: &PowerAllocation,
    traj: &SeTrajectory,
    options: &DecodeOptions,
    truth: Option<(&Message, &[f64])>,
    initial_r1: Option<&[f64]>,
) -> Result<DecodeResult> {
    check_schedule(params, traj)?;
    if op.rows() != params.code_length || op.cols() != params.len() {
        return invalid(format!(
            "operator is {}x{}, code needs {}x{}",
            op.rows(),
            op.cols(),
            params.code_length,
            params.len()
        ));
    }
    if y.len() != params.code_length {
        return Err(Error::DimensionMismatch {
            what: "observation",
            expected: params.code_length,
            actual: y.len(),
        });
    }
    if options.check_spectrum {
        spectrum_consistent(op, &traj.spectrum, params)?;
    }
    let last = options
        .iterations
        .map_or(traj.states.len() - 1, |t| t.min(traj.states.len() - 1));
    let gamma_w = params.gamma_w();
    let n = params.code_length as f64;
    let op_spectrum = op.spectrum();

    let mut r1 = match initial_r1 {
        Some(r) => {
            if r.len() != params.len() {
                return Err(Error::DimensionMismatch {
                    what: "initial r1",
                    expected: params.len(),
                    actual: r.len(),
                });
            }
            r.to_vec()
        }
        None => vec![0.0; params.len()],
    };
    let mut gamma1 = traj.states[0].gamma1;
    let mut mse = Vec::with_capacity(last + 1);
    let mut trace = Vec::new();
    let mut x1 = Vec::new();
    for t in 0..=last {
        let state = &traj.states[t];
        if options.divergence == DivergenceMode::StateEvolution || t == 0 {
            gamma1 = state.gamma1;
        }
        x1 = g1(&r1, gamma1, pa, params)?;
        nan_guard(&x1, t)?;
        if let Some((_, x0)) = truth {
            mse.push(
                x1.iter()
                    .zip(x0)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    / n,
            );
        }
        if t == last {
            if options.record_trace {
                trace.push(IterateRecord {
                    r1: r1.clone(),
                    x1: x1.clone(),
                    ..IterateRecord::default()
                });
            }
            break;
        }
        let half = state.lmmse.ok_or_else(|| Error::SeBreakdown {
            iteration: t,
            reason: "schedule ends before the requested iteration".into(),
        })?;
        let (alpha1, gamma2) = match options.divergence {
            DivergenceMode::StateEvolution => (state.alpha1, half.gamma2),
            DivergenceMode::Empirical if t == 0 => (state.alpha1, half.gamma2),
            DivergenceMode::Empirical => {
                let a = g1_divergence(&r1, gamma1, pa, params)?;
                (a, gamma1 * (1.0 - a) / a)
            }
        };
        let r2 = onsager(&x1, &r1, alpha1, t)?;
        nan_guard(&r2, t)?;
        let x2 = g2(&r2, gamma2, op, y, gamma_w)?;
        nan_guard(&x2, t)?;
        let alpha2 = match options.divergence {
            DivergenceMode::StateEvolution => half.alpha2,
            DivergenceMode::Empirical => {
                gamma2 * eps2(gamma2, &op_spectrum, params.alpha(), gamma_w)?
            }
        };
        let next = onsager(&x2, &r2, alpha2, t)?;
        nan_guard(&next, t)?;
        if options.divergence == DivergenceMode::Empirical {
            gamma1 = gamma2 * (1.0 - alpha2) / alpha2;
        }
        if options.record_trace {
            trace.push(IterateRecord {
                r1: std::mem::replace(&mut r1, next),
                x1: x1.clone(),
                r2,
                x2,
            });
        } else {
            r1 = next;
        }
    }
    let (message, _) = hard_decision(&x1, pa, params)?;
    let ser = truth.map(|(m, _)| section_errors(&message, m) as f64 / params.sections as f64);
    Ok(DecodeResult {
        message,
        estimate: x1,
        mse,
        iterations: last + 1,
        ser,
        trace,
    })
}

/// Seeds of one trial, enough to replay it in isolation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialSeeds {
    pub message: u64,
    pub noise: u64,
    pub matrix: u64,
}

/// Deterministic per-trial seeds: stream `trial` of a ChaCha generator keyed
/// by the master seed.
pub fn trial_seeds(master_seed: u64, trial: u64) -> TrialSeeds {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(trial);
    TrialSeeds {
        message: rng.next_u64(),
        noise: rng.next_u64(),
        matrix: rng.next_u64(),
    }
}

/// What to draw for a batch of independent trials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchConfig {
    pub params: SparcParams,
    pub pa: PowerAllocation,
    pub ensemble: EnsembleKind,
    /// Singular-value law planted in synthetic designs.
    pub planted: Option<SpectrumModel>,
    pub trials: usize,
    pub master_seed: u64,
    pub options: DecodeOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub trial: usize,
    pub seeds: TrialSeeds,
    pub ser: f64,
    pub section_errors: usize,
    pub mse: Vec<f64>,
    pub iterations: usize,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub trials: usize,
    pub mean_ser: f64,
    pub section_errors: usize,
    pub sections: usize,
    /// Wilson 95% interval on the section error probability.
    pub ci_low: f64,
    pub ci_high: f64,
    pub mean_iterations: f64,
}

/// `n` singular-value variables drawn from a spectrum model.
pub fn sample_planted(model: &SpectrumModel, n: usize, seed: u64) -> Vec<f64> {
    let (atoms, weights) = model.atoms();
    let mut cdf = Vec::with_capacity(weights.len());
    let mut acc = 0.0;
    for w in weights {
        acc += w;
        cdf.push(acc);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let u: f64 = rng.random::<f64>() * acc;
            let k = cdf.partition_point(|&c| c < u).min(atoms.len() - 1);
            atoms[k].sqrt()
        })
        .collect()
}

/// Draws the design for one trial.
pub fn build_operator(cfg: &BatchConfig, seed: u64, dct: Option<&Dct>) -> Result<DesignOperator> {
    let (n, big_n) = (cfg.params.code_length, cfg.params.len());
    match cfg.ensemble {
        EnsembleKind::DctRowOrthogonal => match dct {
            Some(plan) => DesignOperator::dct_with_plan(plan.clone(), n, seed),
            None => DesignOperator::dct_row_orthogonal(n, big_n, seed),
        },
        EnsembleKind::Gaussian => DesignOperator::gaussian(n, big_n, seed),
        EnsembleKind::SyntheticSpectrum => {
            let model = cfg.planted.as_ref().ok_or_else(|| {
                Error::Config("synthetic ensemble needs a planted spectrum".into())
            })?;
            let s = sample_planted(model, n, seed ^ 0x5eed);
            DesignOperator::synthetic_spectrum(&s, n, big_n, seed)
        }
    }
}

/// Runs trial `trial` of the batch end to end.
pub fn run_trial(
    cfg: &BatchConfig,
    traj: &SeTrajectory,
    trial: usize,
    dct: Option<&Dct>,
) -> Result<TrialResult> {
    let start = Instant::now();
    let seeds = trial_seeds(cfg.master_seed, trial as u64);
    let params = &cfg.params;
    let op = build_operator(cfg, seeds.matrix, dct)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seeds.message);
    let msg = Message::random(params, &mut rng);
    let x0 = encode(&msg, &cfg.pa, params)?.values;
    let mut y = op.apply(&x0)?;
    let sigma = params.sigma2.sqrt();
    let mut noise = ChaCha8Rng::seed_from_u64(seeds.noise);
    for v in y.iter_mut() {
        *v += sigma * noise.sample::<f64, _>(StandardNormal);
    }
    let res = decode(
        &y,
        &op,
        params,
        &cfg.pa,
        traj,
        &cfg.options,
        Some((&msg, &x0)),
    )?;
    let errors = section_errors(&res.message, &msg);
    Ok(TrialResult {
        trial,
        seeds,
        ser: errors as f64 / params.sections as f64,
        section_errors: errors,
        mse: res.mse,
        iterations: res.iterations,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

pub fn summarize(results: &[TrialResult], sections: usize) -> BatchSummary {
    let trials = results.len();
    let errors: usize = results.iter().map(|r| r.section_errors).sum();
    let total = trials * sections;
    let (ci_low, ci_high) = wilson_interval(errors, total, 1.959_963_984_540_054);
    BatchSummary {
        trials,
        mean_ser: if total == 0 {
            0.0
        } else {
            errors as f64 / total as f64
        },
        section_errors: errors,
        sections: total,
        ci_low,
        ci_high,
        mean_iterations: if trials == 0 {
            0.0
        } else {
            results.iter().map(|r| r.iterations as f64).sum::<f64>() / trials as f64
        },
    }
}

/// Runs trials `range` in parallel; results come back in trial order.
pub fn decode_trials(
    cfg: &BatchConfig,
    traj: &SeTrajectory,
    range: std::ops::Range<usize>,
) -> Result<Vec<TrialResult>> {
    let dct = (cfg.ensemble == EnsembleKind::DctRowOrthogonal).then(|| Dct::new(cfg.params.len()));
    range
        .into_par_iter()
        .map(|t| run_trial(cfg, traj, t, dct.as_ref()))
        .collect()
}

/// All `cfg.trials` trials plus their aggregate.
pub fn decode_batch(
    cfg: &BatchConfig,
    traj: &SeTrajectory,
) -> Result<(Vec<TrialResult>, BatchSummary)> {
    let results = decode_trials(cfg, traj, 0..cfg.trials)?;
    let summary = summarize(&results, cfg.params.sections);
    Ok((results, summary))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::allocation;
    use crate::denoisers::McConfig;
    use crate::sparc::Rate;
    use crate::state_evolution::{run_se, SeConfig};

    fn setup(
        l: usize,
        m: usize,
        bits: f64,
        snr: f64,
    ) -> (SparcParams, PowerAllocation, SeTrajectory) {
        let q = SparcParams::new(l, m, Rate::Bits(bits), snr, 1.0).unwrap();
        let pa = allocation::exponential(&q);
        let cfg = SeConfig {
            mc: McConfig {
                samples: 4000,
                seed: 1,
            },
            ..SeConfig::default()
        };
        let traj = run_se(&q, &pa, &SpectrumModel::unit(), &cfg).unwrap();
        (q, pa, traj)
    }

    fn batch(q: &SparcParams, pa: &PowerAllocation, trials: usize, seed: u64) -> BatchConfig {
        BatchConfig {
            params: q.clone(),
            pa: pa.clone(),
            ensemble: EnsembleKind::DctRowOrthogonal,
            planted: None,
            trials,
            master_seed: seed,
            options: DecodeOptions::default(),
        }
    }

    #[test]
    fn literal_transcription_matches() {
        let (q, pa, traj) = setup(16, 8, 1.0, 15.0);
        let cfg = batch(&q, &pa, 1, 3);
        let op = build_operator(&cfg, 7, None).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let msg = Message::random(&q, &mut rng);
        let x0 = encode(&msg, &pa, &q).unwrap().values;
        let y: Vec<f64> = op
            .apply(&x0)
            .unwrap()
            .iter()
            .map(|v| v + q.sigma2.sqrt() * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let opts = DecodeOptions {
            record_trace: true,
            ..DecodeOptions::default()
        };
        let res = decode(&y, &op, &q, &pa, &traj, &opts, None).unwrap();
        // straight transcription of the loop with the same schedule
        let mut r1 = vec![0.0; q.len()];
        for (t, rec) in res.trace.iter().enumerate() {
            let s = &traj.states[t];
            let x1 = g1(&r1, s.gamma1, &pa, &q).unwrap();
            for (a, b) in x1.iter().zip(&rec.x1) {
                assert!((a - b).abs() < 1e-10 * a.abs().max(1.0));
            }
            let Some(h) = s.lmmse else { break };
            let r2: Vec<f64> = x1
                .iter()
                .zip(&r1)
                .map(|(x, r)| (x - s.alpha1 * r) / (1.0 - s.alpha1))
                .collect();
            for (a, b) in r2.iter().zip(&rec.r2) {
                assert!((a - b).abs() < 1e-12 * a.abs().max(1.0));
            }
            let x2 = g2(&r2, h.gamma2, &op, &y, q.gamma_w()).unwrap();
            r1 = x2
                .iter()
                .zip(&r2)
                .map(|(x, r)| (x - h.alpha2 * r) / (1.0 - h.alpha2))
                .collect();
        }
        // the correction is not invariant to a per-section shift of x1
        let rec = &res.trace[1];
        let s = &traj.states[1];
        let mut shifted = rec.x1.clone();
        for v in &mut shifted[..q.section_size] {
            *v += 0.25;
        }
        let r2 = onsager(&shifted, &rec.r1, s.alpha1, 1).unwrap();
        assert!(r2.iter().zip(&rec.r2).any(|(a, b)| (a - b).abs() > 1e-3));
    }

    #[test]
    fn degenerate_divergence_rejected() {
        assert!(matches!(
            onsager(&[1.0], &[0.5], 1.0, 4),
            Err(Error::DegenerateDivergence { iteration: 4, .. })
        ));
        assert!(onsager(&[1.0], &[0.5], f64::NAN, 0).is_err());
    }

    #[test]
    fn mismatched_spectrum_detected() {
        let (q, pa, traj) = setup(16, 8, 1.0, 15.0);
        let op = DesignOperator::synthetic_spectrum(
            &(0..q.code_length)
                .map(|i| if i % 2 == 0 { 0.2 } else { 1.4 })
                .collect::<Vec<_>>(),
            q.code_length,
            q.len(),
            1,
        )
        .unwrap();
        let y = vec![0.0; q.code_length];
        let err = decode(&y, &op, &q, &pa, &traj, &DecodeOptions::default(), None).unwrap_err();
        assert!(matches!(err, Error::SpectrumMismatch(_)));
    }

    #[test]
    fn batch_is_deterministic_and_order_independent() {
        let (q, pa, traj) = setup(32, 8, 1.0, 15.0);
        let cfg = batch(&q, &pa, 6, 99);
        let (a, sa) = decode_batch(&cfg, &traj).unwrap();
        let (b, sb) = decode_batch(&cfg, &traj).unwrap();
        assert_eq!(sa, sb);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(
                (x.seeds, x.section_errors, &x.mse),
                (y.seeds, y.section_errors, &y.mse)
            );
        }
        // two disjoint shards, merged by trial index
        let mut shards = decode_trials(&cfg, &traj, 3..6).unwrap();
        let mut first = decode_trials(&cfg, &traj, 0..3).unwrap();
        first.append(&mut shards);
        let merged = summarize(&first, q.sections);
        assert_eq!(merged, sa);
        let empty = batch(&q, &pa, 0, 1);
        let (none, s) = decode_batch(&empty, &traj).unwrap();
        assert!(none.is_empty());
        assert_eq!(s.trials, 0);
    }

    #[test]
    fn empirical_mode_decodes_easy_instance() {
        let (q, pa, traj) = setup(32, 8, 0.8, 31.0);
        let mut cfg = batch(&q, &pa, 4, 5);
        cfg.options.divergence = DivergenceMode::Empirical;
        let (_, s) = decode_batch(&cfg, &traj).unwrap();
        assert!(s.mean_ser < 0.05, "{s:?}");
    }

    #[test]
    fn trial_seeds_distinct() {
        let a = trial_seeds(1, 0);
        let b = trial_seeds(1, 1);
        let c = trial_seeds(2, 0);
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_eq!(a, trial_seeds(1, 0));
    }
}
