//! Finite-size state evolution for the VAMP decoder, the quantities of the
//! convergence schedule (`T*`, `f_R`, `chi`) and the asymptotic SE.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::allocation::PowerAllocation;
use crate::denoisers::{eps1, eps2, McConfig, ScalarChannelQuery};
use crate::error::{invalid, Error, Result};
use crate::sparc::SparcParams;
use crate::spectra::SpectrumModel;

/// Hard cap on SE iterations when no explicit count is requested.
pub const DEFAULT_MAX_ITER: usize = 50;
pub const DEFAULT_STOP_TOL: f64 = 1e-8;
/// States with `x >= 1 - DECODED_TOL` are treated as fully decoded.
pub const DECODED_TOL: f64 = 1e-12;

/// Starting precision of the first denoising step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeInit {
    /// `gamma_10 = 1/P`.
    InversePower,
    /// `gamma_10 = 0`, matching a decoder started from `r_10 = 0`.
    Uninformative,
}

impl SeInit {
    pub fn gamma(self, power: f64) -> f64 {
        match self {
            SeInit::InversePower => 1.0 / power,
            SeInit::Uninformative => 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeConfig {
    /// Number of full iterations `T`; `None` selects `min(T*, 50)`.
    pub max_iter: Option<usize>,
    pub stop_tol: f64,
    pub mc: McConfig,
    pub init: SeInit,
    pub kappa1: f64,
    /// Condition margin used for `T*`.
    pub margin: f64,
}

impl Default for SeConfig {
    fn default() -> Self {
        Self {
            max_iter: None,
            stop_tol: DEFAULT_STOP_TOL,
            mc: McConfig::default(),
            init: SeInit::Uninformative,
            kappa1: 1.0,
            margin: 1.0,
        }
    }
}

/// The LMMSE half of an SE iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LmmseHalf {
    pub gamma2: f64,
    pub alpha2: f64,
    pub eps2: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeState {
    pub t: usize,
    pub gamma1: f64,
    pub alpha1: f64,
    pub eps1: f64,
    /// Effective noise level `1/gamma1`.
    pub tau2: f64,
    /// Decoded power fraction `1 - eps1 / (alpha P)`.
    pub x: f64,
    /// Absent on the final state, where the decoder stops after `g1`.
    pub lmmse: Option<LmmseHalf>,
}

impl SeState {
    pub fn gamma2(&self) -> Option<f64> {
        self.lmmse.map(|h| h.gamma2)
    }

    pub fn alpha2(&self) -> Option<f64> {
        self.lmmse.map(|h| h.alpha2)
    }
}

/// Denoising half of an iteration: `alpha1 = gamma1 eps1`, and the state's
/// success fraction.
pub fn denoiser_half(t: usize, gamma1: f64, eps1_value: f64, alpha_p: f64) -> Result<SeState> {
    if !(eps1_value >= 0.0 && eps1_value.is_finite()) {
        return Err(Error::SeBreakdown {
            iteration: t,
            reason: format!("eps1 = {eps1_value}"),
        });
    }
    Ok(SeState {
        t,
        gamma1,
        alpha1: gamma1 * eps1_value,
        eps1: eps1_value,
        tau2: 1.0 / gamma1,
        x: 1.0 - eps1_value / alpha_p,
        lmmse: None,
    })
}

/// One SE iteration starting at precision `gamma1`: returns the completed
/// state and the next `gamma1`.
pub fn se_step<F1, F2>(
    t: usize,
    gamma1: f64,
    alpha_p: f64,
    eps1_fn: F1,
    eps2_fn: F2,
) -> Result<(SeState, f64)>
where
    F1: Fn(f64) -> Result<f64>,
    F2: Fn(f64) -> Result<f64>,
{
    let mut state = denoiser_half(t, gamma1, eps1_fn(gamma1)?, alpha_p)?;
    let gamma2 = 1.0 / state.eps1 - gamma1;
    if !(gamma2 > 0.0 && gamma2.is_finite()) {
        return Err(Error::SeBreakdown {
            iteration: t,
            reason: format!(
                "gamma2 = {gamma2} (eps1 = {}, gamma1 = {gamma1})",
                state.eps1
            ),
        });
    }
    let e2 = eps2_fn(gamma2)?;
    let next = 1.0 / e2 - gamma2;
    if !(next > 0.0 && next.is_finite()) {
        return Err(Error::SeBreakdown {
            iteration: t,
            reason: format!("next gamma1 = {next} (eps2 = {e2}, gamma2 = {gamma2})"),
        });
    }
    state.lmmse = Some(LmmseHalf {
        gamma2,
        alpha2: gamma2 * e2,
        eps2: e2,
    });
    Ok((state, next))
}

/// `T* = ceil(2 snr / (c (D + D^2)))`.
pub fn t_star(snr: f64, delta_r: f64, c: f64) -> Result<usize> {
    if !(delta_r > 0.0) {
        return Err(Error::RateTooCloseToCapacity(format!(
            "relative gap {delta_r} is not positive"
        )));
    }
    if !(c > 0.0) {
        return invalid(format!("condition margin must be positive, got {c}"));
    }
    let v = (2.0 * snr / (c * (delta_r + delta_r * delta_r))).ceil();
    if !v.is_finite() || v > usize::MAX as f64 {
        return Err(Error::RateTooCloseToCapacity(format!("T* = {v}")));
    }
    Ok(v as usize)
}

/// `f_R(M) = M^{-kappa1 D^2} / (D sqrt(ln M))`.
pub fn f_r(m: usize, delta_r: f64, kappa1: f64) -> Result<f64> {
    if !(delta_r > 0.0) || delta_r < 1e-12 {
        return Err(Error::RateTooCloseToCapacity(format!(
            "relative gap {delta_r}"
        )));
    }
    if m < 2 {
        return invalid("f_R needs M >= 2");
    }
    let lm = (m as f64).ln();
    Ok((-kappa1 * delta_r * delta_r * lm).exp() / (delta_r * lm.sqrt()))
}

/// Per-step progress `chi = (1/snr) (D + D^2) / 2`.
pub fn chi(snr: f64, delta_r: f64) -> f64 {
    (delta_r + delta_r * delta_r) / (2.0 * snr)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    IterationLimit,
    Decoded,
    Converged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeTrajectory {
    pub states: Vec<SeState>,
    pub params: SparcParams,
    pub pa: PowerAllocation,
    pub spectrum: SpectrumModel,
    pub config: SeConfig,
    /// `None` when the rate is not below capacity.
    pub t_star: Option<usize>,
    pub f_r: Option<f64>,
    pub max_iter: usize,
    pub stop: StopReason,
}

impl SeTrajectory {
    pub fn last(&self) -> &SeState {
        self.states.last().expect("trajectory is never empty")
    }

    /// Number of full iterations (states carrying an LMMSE half).
    pub fn iterations(&self) -> usize {
        self.states.len() - 1
    }

    pub fn x(&self) -> Vec<f64> {
        self.states.iter().map(|s| s.x).collect()
    }

    /// CSV rows `t,gamma1,gamma2,eps1,eps2,x_t,tau2`; the LMMSE columns are
    /// empty on the final state.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,gamma1,gamma2,eps1,eps2,x_t,tau2\n");
        for s in &self.states {
            let (g2, e2) = match s.lmmse {
                Some(h) => (format!("{:.17e}", h.gamma2), format!("{:.17e}", h.eps2)),
                None => (String::new(), String::new()),
            };
            let _ = writeln!(
                out,
                "{},{:.17e},{},{:.17e},{},{:.17e},{:.17e}",
                s.t, s.gamma1, g2, s.eps1, e2, s.x, s.tau2
            );
        }
        out
    }
}

/// Default iteration count `min(T*, 50)`, or 50 when `T*` is undefined.
pub fn default_iterations(params: &SparcParams, margin: f64) -> usize {
    t_star(params.snr, params.delta_r(), margin)
        .map(|t| t.min(DEFAULT_MAX_ITER))
        .unwrap_or(DEFAULT_MAX_ITER)
}

/// Iterates the finite-size SE with the `eps1` draws fixed by `config.mc`.
pub fn run_se(
    params: &SparcParams,
    pa: &PowerAllocation,
    spectrum: &SpectrumModel,
    config: &SeConfig,
) -> Result<SeTrajectory> {
    if pa.values.len() != params.sections {
        return Err(Error::DimensionMismatch {
            what: "power allocation length",
            expected: params.sections,
            actual: pa.values.len(),
        });
    }
    let max_iter = config
        .max_iter
        .unwrap_or_else(|| default_iterations(params, config.margin));
    let alpha = params.alpha();
    let alpha_p = alpha * params.power;
    let gamma_w = params.gamma_w();
    let e1 = |g: f64| {
        eps1(
            &ScalarChannelQuery {
                gamma: g,
                pa,
                params,
            },
            config.mc,
        )
    };
    let e2 = |g: f64| eps2(g, spectrum, alpha, gamma_w);

    let mut states = Vec::with_capacity(max_iter + 1);
    let mut gamma1 = config.init.gamma(params.power);
    let mut stop = StopReason::IterationLimit;
    for t in 0..=max_iter {
        let v = e1(gamma1)?;
        let terminal = denoiser_half(t, gamma1, v, alpha_p)?;
        if t == max_iter || terminal.x >= 1.0 - DECODED_TOL {
            if terminal.x >= 1.0 - DECODED_TOL {
                stop = StopReason::Decoded;
            }
            states.push(terminal);
            break;
        }
        let (state, next) = se_step(t, gamma1, alpha_p, |_| Ok(v), e2)?;
        states.push(state);
        let converged = (next - gamma1).abs() < config.stop_tol * gamma1;
        gamma1 = next;
        if converged {
            let v = e1(gamma1)?;
            states.push(denoiser_half(t + 1, gamma1, v, alpha_p)?);
            stop = StopReason::Converged;
            break;
        }
    }
    let delta = params.delta_r();
    Ok(SeTrajectory {
        states,
        params: params.clone(),
        pa: pa.clone(),
        spectrum: spectrum.clone(),
        config: *config,
        t_star: t_star(params.snr, delta, config.margin).ok(),
        f_r: f_r(params.section_size, delta, config.kappa1).ok(),
        max_iter,
        stop,
    })
}

/// Outcome of checking `x_{t+1} >= x_t + c chi / 2` along a trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProgressReport {
    pub chi: f64,
    pub required_step: f64,
    pub target: f64,
    /// Steps `t` (from `x_t` to `x_{t+1}`) that fell short while below target.
    pub violations: Vec<usize>,
    pub reached_target: bool,
}

pub fn progress_check(traj: &SeTrajectory, margin: f64) -> Result<ProgressReport> {
    let delta = traj.params.delta_r();
    let f = f_r(traj.params.section_size, delta, traj.config.kappa1)?;
    let chi = chi(traj.params.snr, delta);
    let required_step = margin * chi / 2.0;
    let target = 1.0 - f;
    let mut violations = Vec::new();
    for w in traj.states.windows(2) {
        if w[0].x >= target {
            break;
        }
        if w[1].x < w[0].x + required_step && w[1].x < target {
            violations.push(w[0].t);
        }
    }
    Ok(ProgressReport {
        chi,
        required_step,
        target,
        violations,
        reached_target: traj.last().x >= target,
    })
}

/// One point of the asymptotic SE: `(x_bar, tau_bar^2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticPoint {
    pub x: f64,
    pub tau2: f64,
}

/// Large-system SE: `x_t = sum_l (P_l/P) 1{c_l > 2 R tau_t^2}` with
/// `c_l = L P_l / P` and `tau_{t+1}^2 = 1 / (snr Psi(-snr (1 - x_t)))`,
/// from `x_0 = 0`. Stops at `max_steps`, at `x = 1`, or on a fixed point.
pub fn asymptotic_se(
    pa: &PowerAllocation,
    spectrum: &SpectrumModel,
    rate: f64,
    snr: f64,
    max_steps: usize,
) -> Result<Vec<AsymptoticPoint>> {
    if pa.values.is_empty() {
        return invalid("empty power allocation");
    }
    if !(rate > 0.0 && snr > 0.0) {
        return invalid("rate and snr must be positive");
    }
    let p: f64 = pa.values.iter().sum();
    let l = pa.values.len() as f64;
    let mut out = vec![AsymptoticPoint {
        x: 0.0,
        tau2: f64::INFINITY,
    }];
    for _ in 0..max_steps {
        let prev = out.last().unwrap().x;
        let tau2 = 1.0 / (snr * spectrum.psi(-snr * (1.0 - prev)));
        let x: f64 = pa
            .values
            .iter()
            .filter(|&&pl| l * pl / p > 2.0 * rate * tau2)
            .map(|pl| pl / p)
            .sum();
        // an empty sum is -0.0
        let x = x.min(1.0) + 0.0;
        out.push(AsymptoticPoint { x, tau2 });
        if x >= 1.0 - 1e-12 || x == prev {
            break;
        }
    }
    Ok(out)
}
