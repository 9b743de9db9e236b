mod commands;
mod config;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use rad_core::feature_io::{Split, SynthSpec};
use rad_core::memory_bank::ScalingMode;
use rad_core::metrics::DEFAULT_FPR_LIMIT;
use rad_core::theory::TheorySettings;

use config::{ConfigFile, ProtocolFlags, RetrievalFlags};

/// Bad user input caught in the CLI layer (exit code 2).
#[derive(Debug)]
pub struct InvalidInput(pub String);

impl fmt::Display for InvalidInput {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for InvalidInput {}

/// A theory check failed (exit code 3).
#[derive(Debug)]
pub struct ContractViolation(pub String);

impl fmt::Display for ContractViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "contract violated: {}", self.0)
    }
}

impl std::error::Error for ContractViolation {}

#[derive(Debug, Parser)]
#[command(
    name = "rad",
    version,
    about = "Retrieval-based anomaly detection over precomputed patch features"
)]
struct Cli {
    /// Worker threads (defaults to all cores). Outputs do not depend on it.
    #[arg(short = 'j', long = "jobs", global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SplitArg {
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
enum Command {
    /// Write a synthetic feature dataset with planted defects.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// JSON file with generator settings; flags below override it.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        categories: Option<usize>,
        #[arg(long)]
        train_per_category: Option<usize>,
        #[arg(long)]
        test_per_category: Option<usize>,
        /// Patch grid as HxW.
        #[arg(long, value_parser = config::parse_resolution)]
        grid: Option<(usize, usize)>,
    },
    /// Build a memory bank from the training split.
    BuildBank {
        /// Manifest file or dataset directory (falls back to RAD_DATA_DIR).
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        layers: Option<Vec<u32>>,
        #[command(flatten)]
        protocol: ProtocolFlags,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Score every image of a split against a memory bank.
    Score {
        #[arg(long)]
        bank: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        retrieval: RetrievalFlags,
        /// Also write a PNG heatmap per image.
        #[arg(long)]
        heatmaps: bool,
    },
    /// Compute detection and localization metrics for scored results.
    Eval {
        /// Output directory of `score`.
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_FPR_LIMIT)]
        fpr_limit: f64,
    },
    /// Sweep bank size or shot count and record metrics for each setting.
    ScaleStudy {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        mode: ScalingMode,
        #[arg(long, value_delimiter = ',', default_value = "0.05,0.1,0.25,0.5,1")]
        tau: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "1,2,4,8")]
        shots: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
        seeds: Vec<u64>,
        #[arg(long, value_delimiter = ',')]
        base: Vec<String>,
        #[arg(long, value_delimiter = ',')]
        target: Vec<String>,
        #[command(flatten)]
        retrieval: RetrievalFlags,
        #[arg(long, default_value_t = DEFAULT_FPR_LIMIT)]
        fpr_limit: f64,
    },
    /// Numerically check the retrieval guarantees and the reconstruction bound.
    VerifyTheory {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Trials for the pairwise and singular-value checks.
        #[arg(long)]
        trials: Option<usize>,
        /// Replace the score with a non-Lipschitz one; checks must then fail.
        #[arg(long)]
        inject_fault: bool,
        /// Write the full report as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn synth_spec(
    path: Option<&PathBuf>,
    categories: Option<usize>,
    train: Option<usize>,
    test: Option<usize>,
    grid: Option<(usize, usize)>,
) -> Result<SynthSpec> {
    let mut spec = match path {
        None => SynthSpec::default(),
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).map_err(|e| InvalidInput(format!("spec {}: {e}", p.display())))?
        }
    };
    if let Some(c) = categories {
        spec.categories = c;
    }
    if let Some(n) = train {
        spec.train_per_category = n;
    }
    if let Some(n) = test {
        spec.test_per_category = n;
    }
    if let Some((h, w)) = grid {
        spec.height = h;
        spec.width = w;
    }
    Ok(spec)
}

fn run(cli: Cli) -> Result<()> {
    if let Some(j) = cli.jobs {
        if j == 0 {
            return Err(InvalidInput("-j must be at least 1".into()).into());
        }
        rayon::ThreadPoolBuilder::new().num_threads(j).build_global()?;
    }
    match cli.command {
        Command::Synth {
            out,
            seed,
            spec,
            categories,
            train_per_category,
            test_per_category,
            grid,
        } => {
            let spec = synth_spec(
                spec.as_ref(),
                categories,
                train_per_category,
                test_per_category,
                grid,
            )?;
            commands::synth(&spec, seed, &out)
        }
        Command::BuildBank {
            data,
            out,
            config,
            layers,
            protocol,
            seed,
        } => {
            let file = ConfigFile::load(config.as_deref())?;
            let flags = RetrievalFlags {
                layers,
                weights: None,
                topk: None,
                rho: None,
                pool_frac: None,
                resolution: None,
                smooth: None,
            };
            let layers = config::retrieval_config(&flags, &file)?.config.layers;
            let seed = seed.or(file.seed).unwrap_or(0);
            let protocol = config::protocol(&protocol, &file, seed)?;
            let dataset = commands::open_dataset(data.as_deref())?;
            commands::build(&dataset, &layers, protocol.as_ref(), &out)
        }
        Command::Score {
            bank,
            data,
            out,
            split,
            config,
            retrieval,
            heatmaps,
        } => {
            let file = ConfigFile::load(config.as_deref())?;
            let resolved = config::retrieval_config(&retrieval, &file)?;
            let dataset = commands::open_dataset(data.as_deref())?;
            commands::score(&bank, &dataset, split.into(), &resolved, heatmaps, &out)
        }
        Command::Eval {
            results,
            data,
            out,
            fpr_limit,
        } => {
            let dataset = commands::open_dataset(data.as_deref())?;
            commands::eval(&results, &dataset, fpr_limit, &out)
        }
        Command::ScaleStudy {
            data,
            out,
            config,
            mode,
            tau,
            shots,
            seeds,
            base,
            target,
            retrieval,
            fpr_limit,
        } => {
            let file = ConfigFile::load(config.as_deref())?;
            let resolved = config::retrieval_config(&retrieval, &file)?;
            let dataset = commands::open_dataset(data.as_deref())?;
            let grid = commands::StudyGrid {
                mode,
                taus: tau,
                shots,
                seeds,
                base,
                target,
            };
            commands::scale_study(
                &dataset,
                &resolved.config.layers,
                &resolved,
                &grid,
                fpr_limit,
                &out,
            )
        }
        Command::VerifyTheory {
            seed,
            trials,
            inject_fault,
            out,
        } => {
            let mut settings = TheorySettings {
                seed,
                inject_fault,
                ..TheorySettings::default()
            };
            if let Some(t) = trials {
                settings.pairs = t;
                settings.samples = t;
                settings.sv_trials = t;
            }
            commands::verify_theory(&settings, out.as_deref()).map(|_| ())
        }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<rad_core::Error>() {
            return if e.is_validation() { 2 } else { 1 };
        }
        if cause.is::<InvalidInput>() {
            return 2;
        }
        if cause.is::<ContractViolation>() {
            return 3;
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
