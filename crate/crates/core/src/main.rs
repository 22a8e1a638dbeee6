//! Command-line front end for the distillation pipeline.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use apodistill::io::{render_metrics, MetricRow};
use apodistill::pipeline::{
    cmd_detect_drift, cmd_eval, cmd_export, cmd_generate, cmd_pipeline, PipelineConfig, StageSet,
};
use apodistill::{Error, Result};

#[derive(Parser)]
#[command(name = "apodistill", version, about = "Multi-teacher distillation pipeline")]
struct Cli {
    /// Configuration file (TOML); flags override file values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Base seed; overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Directory all artifacts land in.
    #[arg(long, global = true, default_value = "run")]
    run_dir: PathBuf,

    /// Worker threads (0: one per core).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct GenerateArgs {
    /// Number of teachers; overrides the config file.
    #[arg(long)]
    teachers: Option<usize>,
    /// Length of the corpus schedule (context steps); overrides the config.
    #[arg(long)]
    contexts: Option<usize>,
    /// Trajectories per (teacher, context step); overrides the config.
    #[arg(long)]
    per_context: Option<usize>,
    /// Keep each record with this probability.
    #[arg(long)]
    subsample_fraction: Option<f64>,
}

#[derive(Args)]
struct DetectDriftArgs {
    /// Corpus step the two windows end at.
    #[arg(long)]
    step: i64,
    /// Window size W; overrides the config.
    #[arg(long)]
    window: Option<usize>,
    /// Significance level; overrides the config.
    #[arg(long)]
    alpha: Option<f64>,
    /// Permutation replicates; overrides the config.
    #[arg(long)]
    permutations: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the teacher trajectory corpus.
    Generate(GenerateArgs),
    /// Run the windowed drift test over the generated corpus.
    DetectDrift(DetectDriftArgs),
    /// Run pipeline stages (corpus is generated first if absent).
    Pipeline {
        /// Stages to run, comma-separated subset of spd,selfdistill,apo.
        #[arg(long, value_delimiter = ',', default_value = "spd,selfdistill,apo")]
        stages: Vec<String>,
    },
    /// Evaluate a checkpoint on the synthetic concept task.
    Eval {
        /// Checkpoint file (a serialized student policy).
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Re-export accumulated metrics to CSV.
    Export,
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut config = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::io(path.display().to_string(), e))?;
            toml::from_str(&text).map_err(|e| Error::InvalidConfig(e.to_string()))?
        }
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    config.validate()?;
    Ok(config)
}

fn print_rows(rows: &[MetricRow]) -> Result<()> {
    let buf = render_metrics(rows)?;
    print!("{}", String::from_utf8_lossy(&buf));
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    let mut config = load_config(cli)?;
    match &cli.command {
        Command::Generate(args) => {
            if let Some(n) = args.teachers {
                config.n_teachers = n;
            }
            if let Some(c) = args.contexts {
                config.corpus_steps = Some(c);
            }
            if let Some(p) = args.per_context {
                config.per_context = p;
            }
            if let Some(f) = args.subsample_fraction {
                config.subsample_fraction = f;
            }
            config.validate()?;
            let n = cmd_generate(&config, &cli.run_dir)?;
            println!("wrote {n} records to {}", cli.run_dir.display());
        }
        Command::DetectDrift(args) => {
            if let Some(w) = args.window {
                config.drift_window = w;
            }
            if let Some(a) = args.alpha {
                config.drift_alpha = a;
            }
            if let Some(p) = args.permutations {
                config.drift_permutations = p;
            }
            config.validate()?;
            let report = cmd_detect_drift(&config, &cli.run_dir, args.step)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Pipeline { stages } => {
            let set = StageSet::parse(stages)?;
            let rows = cmd_pipeline(&config, &cli.run_dir, set)?;
            print_rows(&rows)?;
        }
        Command::Eval { checkpoint } => {
            let rows = cmd_eval(&config, checkpoint)?;
            print_rows(&rows)?;
        }
        Command::Export => {
            let path = cmd_export(&config, &cli.run_dir)?;
            println!("wrote {}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
            .expect("thread pool is configured once at startup");
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
