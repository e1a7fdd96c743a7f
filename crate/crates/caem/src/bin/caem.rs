//! Batch CLI over the pipeline commands. Set `RUST_LOG` (e.g. `info`,
//! `debug`) to control stderr logging; everything written into the run
//! directory is timestamp-free and reproducible from config + seed.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use caem::config::RunConfig;
use caem::detect::Metrics;
use caem::model::Variant;
use caem::pipeline;
use caem::Result;

#[derive(Parser)]
#[command(name = "caem", version, about = "Unsupervised anomaly detection for multi-sensor time series")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Configuration file (TOML). Without it the miniature preset is used.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Dotted-path override, e.g. `--set train.lr=0.01` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Replace the configured seed.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Apply a named loss variant (full, wo-pre, wo-rec-mmd, wo-attention,
    /// wo-ar, wo-mmd) on top of the configuration.
    #[arg(long, value_name = "NAME")]
    variant: Option<String>,
    /// Run directory; defaults to runs/<command>.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

impl RunArgs {
    fn config(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::miniature(),
        };
        if !self.set.is_empty() {
            cfg = cfg.with_overrides(&self.set)?;
        }
        if let Some(name) = &self.variant {
            cfg.model = name.parse::<Variant>()?.apply(&cfg.model);
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn out(&self, command: &str) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("runs").join(command))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write a labeled synthetic dataset to <out>/data.csv.
    Generate(RunArgs),
    /// Train a detector on data.path and write checkpoint, trace, report.
    Train(RunArgs),
    /// Score a CSV with a trained checkpoint; writes scores.csv and report.
    Detect {
        #[command(flatten)]
        run: RunArgs,
        /// Checkpoint produced by `train`.
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        /// CSV to score; columns are matched to the checkpoint by name.
        #[arg(long, value_name = "PATH")]
        input: PathBuf,
    },
    /// Recompute metrics from a detect run's scores.csv (needs `truth`).
    Evaluate {
        /// scores.csv written by `detect`.
        #[arg(long, value_name = "PATH")]
        scores: PathBuf,
        /// Output directory for report.json.
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
    /// Finite-difference audit of every layer and loss term.
    Gradcheck,
    /// Train each variant on the same data and emit a comparison table.
    Ablate(RunArgs),
}

fn print_metrics(m: &Metrics) {
    println!("macro: precision {:.4}  recall {:.4}  f1 {:.4}", m.macro_precision, m.macro_recall, m.macro_f1);
    for (name, c) in [("normal", &m.normal), ("anomalous", &m.anomalous)] {
        println!(
            "{name:>9}: precision {:.4}  recall {:.4}  f1 {:.4}  support {}",
            c.precision, c.recall, c.f1, c.support
        );
    }
    let [[tn, fp], [fn_, tp]] = m.confusion;
    println!("confusion: tn {tn}  fp {fp}  fn {fn_}  tp {tp}");
}

fn run() -> Result<bool> {
    let cli = Cli::parse();
    match cli.command {
        Command::Generate(args) => {
            let cfg = args.config()?;
            let report = pipeline::cmd_generate(&cfg, &args.out("generate"))?;
            println!(
                "wrote {} rows ({} normal + {} anomalous windows) to {}",
                report.rows,
                report.normal_windows,
                report.anomalous_windows,
                report.data.display()
            );
        }
        Command::Train(args) => {
            let cfg = args.config()?;
            let out = args.out("train");
            let report = pipeline::cmd_train(&cfg, &out)?;
            println!(
                "trained on {} windows ({} val, {} test), best epoch {} (val {:.6})",
                report.windows.train, report.windows.val, report.windows.test, report.best_epoch, report.best_val
            );
            println!(
                "threshold {:.6} = mean {:.6} + std {:.6} over {} training scores",
                report.threshold.thr, report.threshold.mean, report.threshold.std, report.threshold.n_train
            );
            if let Some(m) = &report.test {
                print_metrics(m);
            }
            println!("artifacts in {}", out.display());
        }
        Command::Detect { run, checkpoint, input } => {
            let cfg = run.config()?;
            let out = run.out("detect");
            let report = pipeline::cmd_detect(&cfg, &checkpoint, &input, &out)?;
            println!(
                "{} of {} windows above threshold {:.6} ({:.1}%)",
                report.flagged,
                report.windows,
                report.threshold.thr,
                100.0 * report.flagged as f64 / report.windows.max(1) as f64
            );
            if let Some(m) = &report.metrics {
                print_metrics(m);
            }
            println!("scores in {}", out.join(pipeline::SCORES_FILE).display());
        }
        Command::Evaluate { scores, out } => {
            let out = out.unwrap_or_else(|| PathBuf::from("runs").join("evaluate"));
            let metrics = pipeline::cmd_evaluate(&scores, &out)?;
            print_metrics(&metrics);
        }
        Command::Gradcheck => {
            let rows = pipeline::cmd_gradcheck()?;
            let mut ok = true;
            for row in &rows {
                let state = if row.passed() { "pass" } else { "FAIL" };
                println!("{:<10} max rel err {:>10.3e}  (tolerance {:.0e})  {state}", row.name, row.max_rel_err, row.tolerance);
                ok &= row.passed();
            }
            return Ok(ok);
        }
        Command::Ablate(args) => {
            let cfg = args.config()?;
            let rows = pipeline::cmd_ablate(&cfg, &Variant::ALL, &args.out("ablate"))?;
            println!("{:<13} {:>8} {:>10} {:>8} {:>6} {:>10}", "variant", "f1", "precision", "recall", "epoch", "threshold");
            for r in &rows {
                println!(
                    "{:<13} {:>8.4} {:>10.4} {:>8.4} {:>6} {:>10.4}",
                    r.variant, r.macro_f1, r.macro_precision, r.macro_recall, r.best_epoch, r.threshold
                );
            }
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp_millis()
        .init();
    match run() {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
