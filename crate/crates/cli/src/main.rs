use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use cbcal::experiment::{
    calibrate_command, design_filter_command, evaluate_command, montecarlo_command,
    simulate_command, ExperimentConfig, RecordFormat, RecordMode, PRESETS,
};

/// Simulate, calibrate and evaluate control-bounded ADCs.
#[derive(Debug, Parser)]
#[command(name = "cbcal", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Experiment file (TOML), or `preset:<name>` for a built-in one.
    #[arg(long, global = true, default_value = "preset:nominal_n6")]
    config: String,
    /// Output directory; defaults to `output_dir` from the config.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Overrides both the reference seed and the Monte Carlo master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for Monte Carlo trials.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Comma-separated RLS checkpoints, e.g. `1024,4096,16384`.
    #[arg(long, global = true, value_delimiter = ',')]
    checkpoints: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Mode {
    Train,
    Test,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Format {
    Bin,
    Csv,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate the training or test record.
    Simulate {
        #[arg(long, value_enum, default_value = "train")]
        mode: Mode,
        #[arg(long, value_enum, default_value = "bin")]
        format: Format,
    },
    /// Learn a filter bank from a training record.
    Calibrate {
        #[arg(long)]
        record: PathBuf,
        /// Output bank; `.csv` selects CSV, anything else binary.
        #[arg(long)]
        bank: Option<PathBuf>,
    },
    /// Measure SNR, SNDR and SFDR of a bank on a test record.
    Evaluate {
        #[arg(long)]
        bank: PathBuf,
        #[arg(long)]
        record: PathBuf,
    },
    /// Run the component-variation Monte Carlo experiment.
    Montecarlo,
    /// Write the reference filter h0.
    DesignFilter,
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match common.config.strip_prefix("preset:") {
        Some(name) => ExperimentConfig::preset(name).with_context(|| {
            let names: Vec<&str> = PRESETS.iter().map(|p| p.0).collect();
            format!("available presets: {}", names.join(", "))
        })?,
        None => ExperimentConfig::load(Path::new(&common.config))?,
    };
    if let Some(seed) = common.seed {
        cfg.override_seed(seed);
    }
    if let Some(cps) = &common.checkpoints {
        cfg.calibration.checkpoints = cps.clone();
    }
    if let Some(dir) = &common.out_dir {
        cfg.output_dir = dir.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli.common)?;
    let out_dir = cfg.output_dir.clone();
    match cli.command {
        Command::Simulate { mode, format } => {
            let mode = match mode {
                Mode::Train => RecordMode::Train,
                Mode::Test => RecordMode::Test,
            };
            let format = match format {
                Format::Bin => RecordFormat::Binary,
                Format::Csv => RecordFormat::Csv,
            };
            let s = simulate_command(&cfg, mode, format, &out_dir)?;
            println!("wrote {}", s.path.display());
            println!(
                "n = {}, N = {}, T = {:e} s, max |x| = {:.4}",
                s.n_samples, s.order, s.clock_period, s.max_abs_state
            );
        }
        Command::Calibrate { record, bank } => {
            let bank = bank.unwrap_or_else(|| out_dir.join("bank.bin"));
            let s = calibrate_command(&cfg, &record, &bank)?;
            println!("wrote {}", s.bank_path.display());
            for (k, p) in &s.trace {
                println!("iterations {k:>7}: residual power {p:.3e}");
            }
        }
        Command::Evaluate { bank, record } => {
            let r = evaluate_command(&cfg, &bank, &record, &out_dir)?;
            println!(
                "SNR {:.2} dB, SNDR {:.2} dB, SFDR {:.2} dB",
                r.snr_db, r.sndr_db, r.sfdr_db
            );
        }
        Command::Montecarlo => {
            let report = montecarlo_command(&cfg, &out_dir, cli.common.threads)?;
            println!(
                "{} trials completed, {} failed",
                report.trials.len(),
                report.failed.len()
            );
            let show = |name: &str, s: Option<cbcal::evaluation::Summary>| {
                if let Some(s) = s {
                    println!(
                        "{name:>12}: avg {:.2} dB, min {:.2} dB, max {:.2} dB",
                        s.avg, s.min, s.max
                    );
                }
            };
            show("calibrated", report.calibrated());
            show("oracle", report.oracle());
            show("uncalibrated", report.uncalibrated());
            println!("wrote {}", out_dir.display());
        }
        Command::DesignFilter => {
            let path = design_filter_command(&cfg, &out_dir)?;
            println!("wrote {}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
