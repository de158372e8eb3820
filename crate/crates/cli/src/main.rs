use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sparc_vamp::sim::{self, ExperimentConfig, ExperimentKind};
use sparc_vamp::Error;

#[derive(Parser, Debug)]
#[command(name = "sparc-sim", version, about = "SPARC / VAMP experiment runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the experiment named in the config.
    Run(Common),
    /// Spectral thresholds for the configured spectrum and code.
    Thresholds(Common),
    /// State evolution only, no decoding.
    Se(Common),
    /// Covariance and concentration study of the general recursion.
    Conc(Common),
}

#[derive(Args, Debug)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Output directory; falls back to `output` in the config, then `results`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (defaults to all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Master seed, replacing the one in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// `key=value` override applied to the config, repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Parse(_) => 2,
        Error::Infeasible { .. } => 3,
        _ => 1,
    }
}

fn execute(cmd: Command) -> Result<(), Error> {
    let (common, forced) = match cmd {
        Command::Run(c) => (c, None),
        Command::Thresholds(c) => (c, Some("thresholds")),
        Command::Se(c) => (c, Some("se_only")),
        Command::Conc(c) => (c, Some("concentration")),
    };
    let mut overrides = common.overrides.clone();
    if let Some(kind) = forced {
        overrides.push(format!("experiment=\"{kind}\""));
    }
    if let Some(seed) = common.seed {
        overrides.push(format!("master_seed={seed}"));
    }
    let cfg = ExperimentConfig::from_file(&common.config, &overrides)?;
    let threads = match common.threads {
        Some(0) => return Err(Error::Config("--threads must be positive".into())),
        Some(k) => {
            rayon::ThreadPoolBuilder::new()
                .num_threads(k)
                .build_global()
                .map_err(|e| Error::Config(e.to_string()))?;
            k
        }
        None => rayon::current_num_threads(),
    };
    let out = common
        .out
        .or_else(|| cfg.output.clone())
        .unwrap_or_else(|| PathBuf::from("results"));
    let result = sim::run(&cfg, &out, threads)?;

    match cfg.experiment {
        ExperimentKind::Thresholds => {
            if let Some(r) = &result.thresholds {
                println!(
                    "R_alg = {:.6} bits, R_IT = {:.6} bits, C = {:.6} bits",
                    r.r_alg_bits, r.r_it_bits, r.capacity_bits
                );
            }
        }
        ExperimentKind::Concentration => {
            if let Some(c) = &result.concentration {
                for s in &c.scaling.sizes {
                    println!(
                        "L={:5} max z {:8.2} (diag {:5.2})  rms dev p {:.3e} q {:.3e}",
                        s.sections,
                        s.max_z(),
                        s.max_z_diag(),
                        s.rms_max_dev_p,
                        s.rms_max_dev_q
                    );
                }
                println!(
                    "ratios {:?}, diagonal ratios {:?}",
                    c.scaling.ratios, c.scaling.diag_ratios
                );
            }
        }
        _ => {
            for r in &result.rows {
                match &r.summary {
                    Some(b) => println!(
                        "{:>10} SER {:.4e} [{:.4e}, {:.4e}]  SE {:.4e}",
                        r.value, b.mean_ser, b.ci_low, b.ci_high, r.se_ser
                    ),
                    None => println!(
                        "{:>10} SE {:.4e} ({} iterations)",
                        r.value, r.se_ser, r.se_iterations
                    ),
                }
            }
        }
    }
    for f in &result.files {
        log::info!("wrote {}", f.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
