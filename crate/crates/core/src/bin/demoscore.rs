use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use demoscore::pipeline::{
    emit_report, run_ablation_suite, run_calibration, run_methods, summary_table, write_csvs, ExperimentConfig,
    Method, Report, Variant,
};
use demoscore::{Error, Result};

const DEFAULT_OUT: &str = "demoscore-out";

#[derive(Parser)]
#[command(name = "demoscore", version, about = "Curate demonstrations with rollout-trained success classifiers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one method, or `all`, over every replicate seed.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// demo_score, base, auto_il, rcp, loss_weighting or all.
        #[arg(long)]
        method: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run an ablation suite: variants, budget, classifier_size, all, or a
    /// comma separated list of variant names.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        suite: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check demonstrator reliability and the pure-strategy policy bands.
    Calibrate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Rewrite the CSV tables of a finished run and print its summary.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
    },
}

fn out_dir(cfg: &mut ExperimentConfig, out: Option<PathBuf>) -> PathBuf {
    let dir = out.or_else(|| cfg.out_dir.clone()).unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    cfg.out_dir = Some(dir.clone());
    dir
}

fn finish(report: &Report, dir: &Path) -> Result<()> {
    emit_report(report, dir)?;
    print!("{}", summary_table(&report.methods));
    println!("wrote {}", dir.display());
    Ok(())
}

fn execute(cmd: Command) -> Result<()> {
    match cmd {
        Command::Run { config, method, out } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            let methods = match method.as_deref() {
                None => vec![cfg.method],
                Some("all") => Method::ALL.to_vec(),
                Some(name) => vec![Method::parse(name)?],
            };
            if let [m] = methods[..] {
                cfg.method = m;
            }
            let dir = out_dir(&mut cfg, out);
            let report = run_methods(&cfg, &methods)?;
            finish(&report, &dir)
        }
        Command::Ablate { config, suite, out } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            let variants = Variant::suite(&suite)?;
            let dir = out_dir(&mut cfg, out);
            let report = run_ablation_suite(&cfg, &variants)?;
            finish(&report, &dir)
        }
        Command::Calibrate { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let cal = run_calibration(&cfg)?;
            print!("{}", cal.summary());
            if let Some(dir) = &cfg.out_dir {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
                let p = dir.join("calibration.json");
                std::fs::write(&p, serde_json::to_vec_pretty(&cal)?).map_err(|e| Error::io(&p, e))?;
            }
            if cal.passed() {
                Ok(())
            } else {
                Err(Error::Calibration("environment misses its calibration bands".into()))
            }
        }
        Command::Report { input } => {
            let report = Report::load(&input)?;
            write_csvs(&report.methods, &input)?;
            print!("{}", summary_table(&report.methods));
            Ok(())
        }
    }
}

fn exit_code(err: &Error) -> u8 {
    match err.root() {
        Error::Config(_) => 2,
        Error::DegenerateFilter { .. } => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
