//! Command-line front end. Every subcommand is one call into [`crate::pipeline`].
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 data or I/O
//! error, 4 numeric failure.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::data::Split;
use crate::error::Result;
use crate::pipeline::{self, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "hvan", version, about = "Hybrid-view attention network for paired 3D volumes")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Settings shared by the subcommands that build a run configuration.
#[derive(Debug, Args)]
pub struct RunArgs {
    /// JSON run configuration; unspecified fields take their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Seed for data generation, initialization, and batch order.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Cube edge length of the volumes (a multiple of 32).
    #[arg(long)]
    pub size: Option<usize>,
}

impl RunArgs {
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg = cfg.with_seed(seed);
        }
        if let Some(size) = self.size {
            cfg = cfg.with_size(size);
        }
        Ok(cfg)
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum SplitArg {
    Train,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic dual-view cases and a manifest.
    SynthData {
        #[command(flatten)]
        run: RunArgs,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Number of cases (overrides the config).
        #[arg(long)]
        cases: Option<usize>,
    },
    /// Train on the train split, validating on the test split.
    Train {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        manifest: PathBuf,
        /// Directory for the checkpoint, log, resolved config, and metrics.
        #[arg(long)]
        out: PathBuf,
        /// Resume from this checkpoint instead of starting fresh.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Print test metrics of a checkpoint as JSON.
    Eval {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        /// Also write the metrics JSON to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train and test the eight-row ablation grid; writes `ablation.csv`.
    Ablate {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Export class activation maps of one case.
    Cam {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Case id from the manifest.
        #[arg(long)]
        case: String,
        /// Encoder stage, 1 to 4.
        #[arg(long, default_value_t = 4)]
        stage: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Execute a parsed command.
pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::SynthData { run, out, cases } => {
            let mut cfg = run.resolve()?;
            if let Some(n) = cases {
                cfg.cases = n;
            }
            let manifest = pipeline::synth_data(&cfg, &out)?;
            println!("wrote {} cases to {}", manifest.rows.len(), out.display());
        }
        Command::Train {
            run,
            manifest,
            out,
            checkpoint,
        } => {
            let cfg = run.resolve()?;
            let summary = pipeline::train_run(&cfg, &manifest, &out, checkpoint.as_deref())?;
            for e in &summary.epochs {
                let auc = e.val_auc.map_or("-".to_string(), |a| format!("{a:.4}"));
                println!("epoch {:>3}  loss {:.5}  val_auc {auc}", e.epoch, e.loss);
            }
            println!("run digest {}", summary.digest);
            if let Some(m) = &summary.test {
                println!("{}", serde_json::to_string_pretty(m)?);
            }
        }
        Command::Eval {
            manifest,
            checkpoint,
            split,
            out,
        } => {
            let report = pipeline::eval_run(&checkpoint, &manifest, split.into())?;
            let json = serde_json::to_string_pretty(&report)?;
            if let Some(p) = out {
                std::fs::write(&p, format!("{json}\n")).map_err(|e| crate::HvanError::io(&p, e))?;
            }
            println!("{json}");
        }
        Command::Ablate { run, manifest, out } => {
            let cfg = run.resolve()?;
            let rows = pipeline::ablate(&cfg, &manifest, &out)?;
            for r in &rows {
                let auc = r.metrics.auc.map_or("-".to_string(), |a| format!("{a:.4}"));
                println!("{:<20} auc {auc}", r.ablation.label);
            }
            println!("wrote {}", out.join(pipeline::ABLATION_FILE).display());
        }
        Command::Cam {
            checkpoint,
            manifest,
            case,
            stage,
            out,
        } => {
            let (_, written) = pipeline::cam_case(&checkpoint, &manifest, &case, stage, &out)?;
            for p in written {
                println!("wrote {}", p.display());
            }
        }
    }
    Ok(())
}

/// Parse `argv` (program name first), run, and return the exit code.
/// Messages go to standard error.
pub fn cli_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
