//! Configuration-driven experiments: SER sweeps with state-evolution
//! overlays, SE-only curves, threshold reports and concentration studies.
//!
//! A config is a TOML document. Unknown keys are rejected, and `key=value`
//! overrides are applied to the parsed document before it is checked.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::allocation::{self, PowerAllocation, DEFAULT_DESIGN_GRID};
use crate::concentration::{
    max_gaussian_section_check, scaling_study, MaxGaussianReport, ScalingReport,
};
use crate::denoisers::{
    section_error_probability, section_error_probability_mc, McConfig, ScalarChannelQuery,
};
use crate::design::EnsembleKind;
use crate::error::{Error, Result};
use crate::sparc::{nats_to_bits, Rate, SparcParams};
use crate::spectra::{threshold_report, SpectrumModel, ThresholdReport};
use crate::state_evolution::{run_se, SeConfig, SeInit, SeTrajectory};
use crate::vamp::{
    decode_batch, BatchConfig, BatchSummary, DecodeOptions, DivergenceMode, TrialResult,
};

pub const DEFAULT_MEMORY_BUDGET_MB: f64 = 8192.0;
const MP_NODES: usize = 400;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    SerVsM,
    SerVsR,
    SeOnly,
    Thresholds,
    Concentration,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AllocationChoice {
    Flat,
    Exponential,
    Spectrum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SpectrumConfig {
    Unit,
    MarchenkoPastur {
        #[serde(default)]
        nodes: Option<usize>,
    },
    /// One `S` value per line.
    File {
        path: PathBuf,
    },
    /// Atoms at `S = s[k]` with weights `weights[k]`.
    Discrete {
        s: Vec<f64>,
        weights: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CodeConfig {
    pub sections: usize,
    #[serde(default = "default_section_size")]
    pub section_size: usize,
    #[serde(default = "default_rate")]
    pub rate_bits: f64,
    pub snr: f64,
    #[serde(default = "default_power")]
    pub power: f64,
}

fn default_section_size() -> usize {
    16
}
fn default_rate() -> f64 {
    1.0
}
fn default_power() -> f64 {
    1.0
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    /// Section sizes for `ser_vs_m` and `se_only`, rates in bits for `ser_vs_r`.
    #[serde(default)]
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeSection {
    #[serde(default)]
    pub iterations: Option<usize>,
    #[serde(default = "default_mc_samples")]
    pub mc_samples: usize,
    #[serde(default)]
    pub mc_seed: u64,
    #[serde(default = "default_init")]
    pub init: SeInit,
    /// Monte Carlo samples for the predicted SER; exact quadrature when absent.
    #[serde(default)]
    pub ser_mc_samples: Option<usize>,
}

fn default_mc_samples() -> usize {
    crate::denoisers::DEFAULT_MC_SAMPLES
}
fn default_init() -> SeInit {
    SeInit::Uninformative
}

impl Default for SeSection {
    fn default() -> Self {
        Self {
            iterations: None,
            mc_samples: default_mc_samples(),
            mc_seed: 0,
            init: default_init(),
            ser_mc_samples: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConcentrationSection {
    #[serde(default = "default_sizes")]
    pub sizes: Vec<usize>,
    #[serde(default = "default_t_max")]
    pub t_max: usize,
    #[serde(default = "default_seeds")]
    pub seeds: usize,
}

fn default_sizes() -> Vec<usize> {
    vec![128, 256, 512]
}
fn default_t_max() -> usize {
    3
}
fn default_seeds() -> usize {
    200
}

impl Default for ConcentrationSection {
    fn default() -> Self {
        Self {
            sizes: default_sizes(),
            t_max: default_t_max(),
            seeds: default_seeds(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    #[serde(default = "default_ensemble")]
    pub ensemble: EnsembleKind,
    #[serde(default = "default_allocation")]
    pub allocation: AllocationChoice,
    #[serde(default)]
    pub trials: usize,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default = "default_budget")]
    pub memory_budget_mb: f64,
    #[serde(default)]
    pub divergence: Option<DivergenceMode>,
    pub code: CodeConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
    #[serde(default)]
    pub spectrum: Option<SpectrumConfig>,
    #[serde(default)]
    pub se: SeSection,
    #[serde(default)]
    pub concentration: ConcentrationSection,
}

fn default_ensemble() -> EnsembleKind {
    EnsembleKind::DctRowOrthogonal
}
fn default_allocation() -> AllocationChoice {
    AllocationChoice::Exponential
}
fn default_budget() -> f64 {
    DEFAULT_MEMORY_BUDGET_MB
}

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

/// Parses an override value as a TOML value, falling back to a bare string.
fn parse_override_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t
            .remove("v")
            .unwrap_or_else(|| toml::Value::String(raw.into())),
        Err(_) => toml::Value::String(raw.into()),
    }
}

/// Applies `a.b.c=value` to a TOML table, creating intermediate tables.
pub fn apply_override(doc: &mut toml::Table, item: &str) -> Result<()> {
    let (key, raw) = item
        .split_once('=')
        .ok_or_else(|| config_err(format!("override `{item}` is not key=value")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(config_err(format!("bad override key `{key}`")));
    }
    let mut table = doc;
    for p in &parts[..parts.len() - 1] {
        let entry = table
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry.as_table_mut().ok_or_else(|| {
            config_err(format!("override key `{key}` passes through a non-table"))
        })?;
    }
    table.insert(
        parts[parts.len() - 1].to_string(),
        parse_override_value(raw.trim()),
    );
    Ok(())
}

impl ExperimentConfig {
    /// Parses a TOML document, applies overrides and validates the result.
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self> {
        let mut doc: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| config_err(e.to_string()))?;
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let cfg: Self = toml::Value::Table(doc)
            .try_into()
            .map_err(|e: toml::de::Error| config_err(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text, overrides)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let c = &self.code;
        if c.sections == 0 {
            return Err(config_err("code.sections must be positive"));
        }
        if !(c.snr > 0.0 && c.power > 0.0 && c.rate_bits > 0.0) {
            return Err(config_err(
                "code.snr, code.power and code.rate_bits must be positive",
            ));
        }
        if self.memory_budget_mb.is_nan() || self.memory_budget_mb <= 0.0 {
            return Err(config_err("memory_budget_mb must be positive"));
        }
        match self.experiment {
            ExperimentKind::SerVsM | ExperimentKind::SerVsR | ExperimentKind::SeOnly => {
                if self.sweep.values.is_empty() {
                    return Err(config_err("sweep.values must not be empty"));
                }
                if self.experiment != ExperimentKind::SerVsR
                    && self
                        .sweep
                        .values
                        .iter()
                        .any(|v| v.fract() != 0.0 || *v < 2.0)
                {
                    return Err(config_err(
                        "section sizes in sweep.values must be integers >= 2",
                    ));
                }
                if self.experiment == ExperimentKind::SerVsR
                    && self.sweep.values.iter().any(|v| !(*v > 0.0))
                {
                    return Err(config_err("rates in sweep.values must be positive"));
                }
            }
            ExperimentKind::Concentration => {
                let cc = &self.concentration;
                if cc.sizes.is_empty() || cc.seeds < 2 {
                    return Err(config_err(
                        "concentration needs sizes and at least two seeds",
                    ));
                }
            }
            ExperimentKind::Thresholds => {}
        }
        if self.ensemble == EnsembleKind::SyntheticSpectrum && self.spectrum.is_none() {
            return Err(config_err(
                "the synthetic ensemble needs a [spectrum] table",
            ));
        }
        Ok(())
    }

    /// Code parameters at one sweep value.
    pub fn params_at(&self, value: Option<f64>) -> Result<SparcParams> {
        let c = &self.code;
        let (m, r) = match (self.experiment, value) {
            (ExperimentKind::SerVsR, Some(v)) => (c.section_size, v),
            (_, Some(v)) => (v as usize, c.rate_bits),
            (_, None) => (c.section_size, c.rate_bits),
        };
        SparcParams::new(c.sections, m, Rate::Bits(r), c.snr, c.power)
    }

    /// Spectrum used by state evolution and, for synthetic designs, planted.
    pub fn spectrum_for(&self, params: &SparcParams) -> Result<SpectrumModel> {
        match &self.spectrum {
            Some(SpectrumConfig::Unit) => Ok(SpectrumModel::unit()),
            Some(SpectrumConfig::MarchenkoPastur { nodes }) => {
                SpectrumModel::marchenko_pastur(params.alpha(), nodes.unwrap_or(MP_NODES))
            }
            Some(SpectrumConfig::File { path }) => SpectrumModel::from_file(path),
            Some(SpectrumConfig::Discrete { s, weights }) => SpectrumModel::discrete(s, weights),
            None => match self.ensemble {
                EnsembleKind::Gaussian => SpectrumModel::marchenko_pastur(params.alpha(), MP_NODES),
                _ => Ok(SpectrumModel::unit()),
            },
        }
    }

    pub fn allocation_for(
        &self,
        params: &SparcParams,
        spectrum: &SpectrumModel,
    ) -> Result<PowerAllocation> {
        Ok(match self.allocation {
            AllocationChoice::Flat => allocation::flat(params),
            AllocationChoice::Exponential => allocation::exponential(params),
            AllocationChoice::Spectrum => {
                allocation::design_from_spectrum(spectrum, params, DEFAULT_DESIGN_GRID)?.1
            }
        })
    }

    pub fn se_config(&self) -> SeConfig {
        SeConfig {
            max_iter: self.se.iterations,
            mc: McConfig {
                samples: self.se.mc_samples,
                seed: self.se.mc_seed,
            },
            init: self.se.init,
            ..SeConfig::default()
        }
    }

    fn sweep_points(&self) -> Vec<Option<f64>> {
        match self.experiment {
            ExperimentKind::SerVsM | ExperimentKind::SerVsR | ExperimentKind::SeOnly => {
                self.sweep.values.iter().map(|&v| Some(v)).collect()
            }
            _ => vec![None],
        }
    }
}

/// Rough peak memory of a run in MiB: one design per worker thread.
pub fn memory_estimate_mb(cfg: &ExperimentConfig, threads: usize) -> Result<f64> {
    let mut worst: f64 = 0.0;
    let sizes: Vec<SparcParams> = if cfg.experiment == ExperimentKind::Concentration {
        cfg.concentration
            .sizes
            .iter()
            .map(|&l| {
                SparcParams::new(
                    l,
                    cfg.code.section_size,
                    Rate::Bits(cfg.code.rate_bits),
                    cfg.code.snr,
                    cfg.code.power,
                )
            })
            .collect::<Result<_>>()?
    } else {
        cfg.sweep_points()
            .into_iter()
            .map(|v| cfg.params_at(v))
            .collect::<Result<_>>()?
    };
    for p in sizes {
        let (n, big_n) = (p.code_length as f64, p.len() as f64);
        let vectors = 24.0 * big_n;
        let per_worker = match (cfg.experiment, cfg.ensemble) {
            (ExperimentKind::Thresholds | ExperimentKind::SeOnly, _) => 0.0,
            (ExperimentKind::Concentration, _) | (_, EnsembleKind::DctRowOrthogonal) => {
                vectors + 2.0 * big_n
            }
            (_, EnsembleKind::Gaussian) => vectors + n * big_n * 2.0 + big_n * big_n + n * n,
            (_, EnsembleKind::SyntheticSpectrum) => vectors + big_n * big_n * 2.0 + n * n,
        };
        worst = worst.max(per_worker * 8.0 * threads.max(1) as f64);
    }
    Ok(worst / (1024.0 * 1024.0))
}

pub fn check_memory(cfg: &ExperimentConfig, threads: usize) -> Result<f64> {
    let estimate_mb = memory_estimate_mb(cfg, threads)?;
    if estimate_mb > cfg.memory_budget_mb {
        return Err(Error::Infeasible {
            estimate_mb,
            budget_mb: cfg.memory_budget_mb,
        });
    }
    Ok(estimate_mb)
}

/// Section error rate predicted by the final scalar channel of `traj`:
/// exact line quadrature, or Monte Carlo when `mc` is given.
pub fn se_predicted_ser(
    traj: &SeTrajectory,
    params: &SparcParams,
    pa: &PowerAllocation,
    mc: Option<McConfig>,
) -> Result<f64> {
    let q = ScalarChannelQuery {
        gamma: traj.last().gamma1,
        pa,
        params,
    };
    match mc {
        Some(mc) => section_error_probability_mc(&q, mc),
        None => section_error_probability(&q),
    }
}

/// One point of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub section_size: usize,
    pub rate_bits: f64,
    pub code_length: usize,
    pub se_ser: f64,
    pub se_iterations: usize,
    pub summary: Option<BatchSummary>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub row: SweepRow,
    pub trajectory: SeTrajectory,
    pub trials: Vec<TrialResult>,
}

/// Runs state evolution and, when `trials > 0` and the kind decodes, the
/// Monte Carlo trials at every sweep value. Nothing is written to disk.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<Vec<SweepPoint>> {
    let decode = cfg.trials > 0
        && matches!(
            cfg.experiment,
            ExperimentKind::SerVsM | ExperimentKind::SerVsR
        );
    let mut out = Vec::new();
    for (idx, v) in cfg.sweep_points().into_iter().enumerate() {
        let params = cfg.params_at(v)?;
        let spectrum = cfg.spectrum_for(&params)?;
        let pa = cfg.allocation_for(&params, &spectrum)?;
        let traj = run_se(&params, &pa, &spectrum, &cfg.se_config())?;
        let mc = cfg.se.ser_mc_samples.map(|samples| McConfig {
            samples,
            seed: cfg.se.mc_seed,
        });
        let se_ser = se_predicted_ser(&traj, &params, &pa, mc)?;
        let (summary, trials) = if decode {
            let batch = BatchConfig {
                params: params.clone(),
                pa: pa.clone(),
                ensemble: cfg.ensemble,
                planted: (cfg.ensemble == EnsembleKind::SyntheticSpectrum)
                    .then(|| spectrum.clone()),
                trials: cfg.trials,
                // each sweep point gets its own family of trial streams
                master_seed: cfg.master_seed.wrapping_add((idx as u64) << 32),
                options: DecodeOptions {
                    divergence: cfg.divergence.unwrap_or(DivergenceMode::StateEvolution),
                    ..DecodeOptions::default()
                },
            };
            let (trials, summary) = decode_batch(&batch, &traj)?;
            log::info!(
                "M={} R={:.3} bits: SER {:.4e} (SE {:.4e})",
                params.section_size,
                nats_to_bits(params.rate),
                summary.mean_ser,
                se_ser
            );
            (Some(summary), trials)
        } else {
            (None, Vec::new())
        };
        out.push(SweepPoint {
            row: SweepRow {
                value: v.unwrap_or(params.section_size as f64),
                section_size: params.section_size,
                rate_bits: nats_to_bits(params.rate),
                code_length: params.code_length,
                se_ser,
                se_iterations: traj.iterations(),
                summary,
            },
            trajectory: traj,
            trials,
        });
    }
    Ok(out)
}

/// Curve CSV: one row per sweep value.
pub fn curve_csv(points: &[SweepPoint]) -> String {
    let mut s = String::from("value,section_size,rate_bits,code_length,trials,empirical_ser,ci_low,ci_high,se_ser,mean_iterations\n");
    for p in points {
        let r = &p.row;
        let (trials, ser, lo, hi, it) = match &r.summary {
            Some(b) => (
                b.trials.to_string(),
                b.mean_ser.to_string(),
                b.ci_low.to_string(),
                b.ci_high.to_string(),
                b.mean_iterations.to_string(),
            ),
            None => (
                "0".into(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
            ),
        };
        let _ = writeln!(
            s,
            "{},{},{},{},{trials},{ser},{lo},{hi},{},{it}",
            r.value, r.section_size, r.rate_bits, r.code_length, r.se_ser
        );
    }
    s
}

/// Per-trial CSV carrying the seeds needed to replay each trial. The MSE
/// trace is `;`-separated. Wall time is the only non-reproducible column.
pub fn trials_csv(points: &[SweepPoint]) -> String {
    let mut s = String::from("value,trial,message_seed,noise_seed,matrix_seed,ser,section_errors,iterations,mse,wall_time_s\n");
    for p in points {
        for t in &p.trials {
            let mse: Vec<String> = t.mse.iter().map(|v| v.to_string()).collect();
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{}",
                p.row.value,
                t.trial,
                t.seeds.message,
                t.seeds.noise,
                t.seeds.matrix,
                t.ser,
                t.section_errors,
                t.iterations,
                mse.join(";"),
                t.wall_time_s
            );
        }
    }
    s
}

#[derive(Debug, Clone, Serialize)]
struct Metadata<'a> {
    package: &'static str,
    version: &'static str,
    experiment: ExperimentKind,
    master_seed: u64,
    config: &'a ExperimentConfig,
    files: Vec<String>,
    rows: Option<Vec<SweepRow>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConcentrationOutput {
    pub scaling: ScalingReport,
    pub max_gaussian: MaxGaussianReport,
}

/// What a run produced.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub files: Vec<PathBuf>,
    pub rows: Vec<SweepRow>,
    pub thresholds: Option<ThresholdReport>,
    pub concentration: Option<ConcentrationOutput>,
}

fn write(dir: &Path, name: &str, body: &str, files: &mut Vec<PathBuf>) -> Result<()> {
    let path = dir.join(name);
    std::fs::write(&path, body)?;
    files.push(path);
    Ok(())
}

fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("report serializes")
}

pub fn run_concentration(cfg: &ExperimentConfig) -> Result<ConcentrationOutput> {
    let cc = &cfg.concentration;
    let schedule = |l: usize| {
        let c = &cfg.code;
        let params = SparcParams::new(l, c.section_size, Rate::Bits(c.rate_bits), c.snr, c.power)?;
        let spectrum = SpectrumModel::unit();
        let pa = cfg.allocation_for(&params, &spectrum)?;
        let se = SeConfig {
            max_iter: Some(cc.t_max + 1),
            stop_tol: 0.0,
            init: SeInit::InversePower,
            ..cfg.se_config()
        };
        let traj = run_se(&params, &pa, &spectrum, &se)?;
        Ok((params, pa, traj))
    };
    let scaling = scaling_study(&cc.sizes, cc.t_max, cc.seeds, cfg.master_seed, schedule)?;
    let largest = *cc.sizes.iter().max().expect("validated non-empty");
    let max_gaussian =
        max_gaussian_section_check(largest, cfg.code.section_size, cc.seeds, cfg.master_seed)?;
    Ok(ConcentrationOutput {
        scaling,
        max_gaussian,
    })
}

/// Runs the configured experiment and writes its files under `out`.
pub fn run(cfg: &ExperimentConfig, out: &Path, threads: usize) -> Result<RunOutput> {
    cfg.validate()?;
    let estimate = check_memory(cfg, threads)?;
    log::info!("memory estimate {estimate:.1} MiB");
    std::fs::create_dir_all(out)?;
    let mut files = Vec::new();
    let mut result = RunOutput {
        files: Vec::new(),
        rows: Vec::new(),
        thresholds: None,
        concentration: None,
    };
    match cfg.experiment {
        ExperimentKind::SerVsM | ExperimentKind::SerVsR | ExperimentKind::SeOnly => {
            let points = run_sweep(cfg)?;
            write(out, "curve.csv", &curve_csv(&points), &mut files)?;
            if points.iter().any(|p| !p.trials.is_empty()) {
                write(out, "trials.csv", &trials_csv(&points), &mut files)?;
            }
            if cfg.experiment == ExperimentKind::SeOnly {
                for p in &points {
                    write(
                        out,
                        &format!("se_{}.csv", p.row.value),
                        &p.trajectory.to_csv(),
                        &mut files,
                    )?;
                }
            }
            result.rows = points.into_iter().map(|p| p.row).collect();
        }
        ExperimentKind::Thresholds => {
            let params = cfg.params_at(None)?;
            let spectrum = cfg.spectrum_for(&params)?;
            let report = threshold_report(&spectrum, params.snr, Some(params.rate));
            write(out, "thresholds.json", &to_json(&report), &mut files)?;
            result.thresholds = Some(report);
        }
        ExperimentKind::Concentration => {
            let conc = run_concentration(cfg)?;
            write(out, "concentration.json", &to_json(&conc), &mut files)?;
            result.concentration = Some(conc);
        }
    }
    let meta = Metadata {
        package: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        experiment: cfg.experiment,
        master_seed: cfg.master_seed,
        config: cfg,
        files: files
            .iter()
            .filter_map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
            .collect(),
        rows: (!result.rows.is_empty()).then(|| result.rows.clone()),
    };
    write(out, "metadata.json", &to_json(&meta), &mut files)?;
    result.files = files;
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
experiment = "ser_vs_m"
trials = 4
master_seed = 3

[code]
sections = 32
rate_bits = 1.0
snr = 15.0

[sweep]
values = [4, 8]
"#;

    #[test]
    fn overrides_reach_nested_tables() {
        let cfg =
            ExperimentConfig::from_toml(BASE, &["code.snr=20".into(), "ensemble=gaussian".into()])
                .unwrap();
        assert_eq!(cfg.code.snr, 20.0);
        assert_eq!(cfg.ensemble, EnsembleKind::Gaussian);
        let cfg = ExperimentConfig::from_toml(BASE, &["se.mc_samples=500".into()]).unwrap();
        assert_eq!(cfg.se.mc_samples, 500);
    }

    #[test]
    fn schema_errors() {
        let bad = [
            format!("{BASE}\nbogus = 1\n"),
            BASE.replace("values = [4, 8]", "values = []"),
            BASE.replace("values = [4, 8]", "values = [4.5]"),
            BASE.replace("sections = 32", "sections = 0"),
        ];
        for text in &bad {
            assert!(
                matches!(
                    ExperimentConfig::from_toml(text, &[]),
                    Err(Error::Config(_))
                ),
                "{text}"
            );
        }
        assert!(ExperimentConfig::from_toml(BASE, &["nokey".into()]).is_err());
        assert!(ExperimentConfig::from_toml(BASE, &["code.snr.x=1".into()]).is_err());
    }

    #[test]
    fn round_trip_echo() {
        let cfg = ExperimentConfig::from_toml(BASE, &[]).unwrap();
        let again = ExperimentConfig::from_toml(&cfg.to_toml(), &[]).unwrap();
        assert_eq!(cfg, again);
    }

    #[test]
    fn infeasible_gaussian_design() {
        let cfg = ExperimentConfig::from_toml(
            BASE,
            &[
                "ensemble=gaussian".into(),
                "code.sections=65536".into(),
                "memory_budget_mb=100".into(),
            ],
        )
        .unwrap();
        assert!(matches!(
            check_memory(&cfg, 1),
            Err(Error::Infeasible { .. })
        ));
    }

    #[test]
    fn zero_trials_gives_se_curve_only() {
        let cfg =
            ExperimentConfig::from_toml(BASE, &["trials=0".into(), "se.mc_samples=2000".into()])
                .unwrap();
        let pts = run_sweep(&cfg).unwrap();
        assert_eq!(pts.len(), 2);
        assert!(pts
            .iter()
            .all(|p| p.row.summary.is_none() && p.trials.is_empty()));
        let csv = curve_csv(&pts);
        assert_eq!(csv.lines().count(), 3);
    }

    #[test]
    fn predicted_ser_limits() {
        let params = SparcParams::new(16, 2, Rate::Bits(0.5), 5.0, 1.0).unwrap();
        let pa = allocation::flat(&params);
        let cfg = SeConfig {
            max_iter: Some(3),
            mc: McConfig {
                samples: 2000,
                seed: 1,
            },
            ..SeConfig::default()
        };
        let mut traj = run_se(&params, &pa, &SpectrumModel::unit(), &cfg).unwrap();
        let exact = se_predicted_ser(&traj, &params, &pa, None).unwrap();
        // M = 2, flat: Q(sqrt(gamma n P_l / 2))
        let nu = (traj.last().gamma1 * params.code_length as f64 * pa.values[0]).sqrt();
        let oracle = 0.5 * statrs::function::erf::erfc(nu / 2.0);
        assert!((exact - oracle).abs() < 1e-3);
        let mc = se_predicted_ser(
            &traj,
            &params,
            &pa,
            Some(McConfig {
                samples: 200_000,
                seed: 2,
            }),
        )
        .unwrap();
        assert!((mc - exact).abs() < 5e-3);
        traj.states.last_mut().unwrap().gamma1 = f64::INFINITY;
        assert_eq!(se_predicted_ser(&traj, &params, &pa, None).unwrap(), 0.0);
    }
}
