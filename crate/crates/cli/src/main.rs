use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use se3vf::harness::batch::run_batch;
use se3vf::harness::output::emit_outputs;
use se3vf::harness::{load_config, replay, run_experiment, ConfigError, ExperimentConfig, ExperimentError, OutputError};

const EXIT_CONFIG: u8 = 2;
const EXIT_SOLVER: u8 = 3;
const EXIT_IO: u8 = 4;

#[derive(Parser)]
#[command(name = "se3vf", version, about = "Variational pose filter experiments on SE(3)")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Source {
    /// TOML experiment config.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in configuration instead of a file.
    #[arg(long)]
    preset: Option<String>,
    /// Disable all measurement noise.
    #[arg(long)]
    no_noise: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment.
    Run {
        #[command(flatten)]
        source: Source,
        /// Noise seed; defaults to the first seed in the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory; overrides the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a seeded Monte-Carlo batch in parallel.
    Batch {
        #[command(flatten)]
        source: Source,
        /// Use seeds 1..=N instead of the config's list.
        #[arg(long)]
        seeds: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-run the filter on a recorded run directory.
    Replay {
        #[command(flatten)]
        source: Source,
        /// Directory containing truth.csv and measurements.csv.
        run_dir: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Parse and validate a config file.
    ValidateConfig {
        #[arg(long)]
        config: PathBuf,
    },
    /// Print a built-in config as TOML.
    Preset {
        name: String,
        /// Write to a file instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

enum Failure {
    Config(String),
    Solver(String),
    Io(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => EXIT_CONFIG,
            Failure::Solver(_) => EXIT_SOLVER,
            Failure::Io(_) => EXIT_IO,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Config(m) | Failure::Solver(m) | Failure::Io(m) => m,
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Io { .. } => Failure::Io(e.to_string()),
            _ => Failure::Config(e.to_string()),
        }
    }
}

impl From<ExperimentError> for Failure {
    fn from(e: ExperimentError) -> Self {
        if e.is_non_convergence() {
            return Failure::Solver(e.to_string());
        }
        match e {
            ExperimentError::Config(c) => c.into(),
            ExperimentError::Replay(_) => Failure::Io(e.to_string()),
            _ => Failure::Config(e.to_string()),
        }
    }
}

impl From<OutputError> for Failure {
    fn from(e: OutputError) -> Self {
        Failure::Io(e.to_string())
    }
}

fn load(source: &Source) -> Result<ExperimentConfig, Failure> {
    let mut cfg = match (&source.config, &source.preset) {
        (Some(path), _) => load_config(path)?,
        (None, Some(name)) => ExperimentConfig::preset(name)?,
        (None, None) => return Err(Failure::Config("one of --config or --preset is required".into())),
    };
    if source.no_noise {
        cfg.noise.enabled = false;
    }
    Ok(cfg)
}

fn out_dir(cli: &Option<PathBuf>, cfg: &ExperimentConfig) -> Option<PathBuf> {
    cli.clone().or_else(|| cfg.output.dir.clone())
}

fn to_json<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("summary types serialize")
}

fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Failure::Io(format!("{}: {e}", parent.display())))?;
    }
    std::fs::write(path, text).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Run { source, seed, out } => {
            let cfg = load(&source)?;
            let seed = seed.or_else(|| cfg.seeds.first().copied()).unwrap_or(0);
            let result = run_experiment(&cfg, seed)?;
            if let Some(dir) = out_dir(&out, &cfg) {
                let written = emit_outputs(&result, &cfg.output, &dir)?;
                log::info!("wrote {} files to {}", written.len(), dir.display());
            }
            println!("{}", to_json(&result.summary));
        }
        Command::Batch { source, seeds, out } => {
            let cfg = load(&source)?;
            let seeds: Vec<u64> = match seeds {
                Some(n) => (1..=n).collect(),
                None => cfg.seeds.clone(),
            };
            if seeds.is_empty() {
                return Err(Failure::Config("at least one seed is required".into()));
            }
            let dir = out_dir(&out, &cfg);
            let report = run_batch(&cfg, &seeds, dir.is_some())?;
            let mut solver_failure = None;
            let mut per_seed = Vec::new();
            for run in &report.runs {
                match &run.outcome {
                    Ok(s) => per_seed.push(serde_json::json!({ "seed": run.seed, "summary": s })),
                    Err(e) => {
                        eprintln!("seed {}: {e}", run.seed);
                        per_seed.push(serde_json::json!({ "seed": run.seed, "error": e.to_string() }));
                        if e.is_non_convergence() {
                            solver_failure.get_or_insert_with(|| e.to_string());
                        }
                    }
                }
                if let (Some(dir), Some(detail)) = (&dir, &run.detail) {
                    emit_outputs(detail, &cfg.output, &dir.join(format!("seed_{:04}", run.seed)))?;
                }
            }
            let doc = serde_json::json!({ "aggregate": report.aggregate, "runs": per_seed });
            let text = to_json(&doc);
            if let Some(dir) = &dir {
                write_text(&dir.join("batch_summary.json"), &(text.clone() + "\n"))?;
            }
            println!("{text}");
            if let Some(msg) = solver_failure {
                return Err(Failure::Solver(msg));
            }
            if report.aggregate.is_none() {
                return Err(Failure::Config("every seed failed".into()));
            }
        }
        Command::Replay {
            source,
            run_dir,
            seed,
            out,
        } => {
            let cfg = load(&source)?;
            let seed = seed.or_else(|| cfg.seeds.first().copied()).unwrap_or(0);
            let result = replay(&cfg, &run_dir, seed)?;
            if let Some(dir) = out {
                emit_outputs(&result, &cfg.output, &dir)?;
            }
            println!("{}", to_json(&result.summary));
        }
        Command::ValidateConfig { config } => {
            let cfg = load_config(&config)?;
            let n = cfg.n_steps()?;
            println!("{}: ok ({n} steps, {} seeds)", config.display(), cfg.seeds.len());
        }
        Command::Preset { name, out } => {
            let text = ExperimentConfig::preset(&name)?.to_toml_string();
            match out {
                Some(path) => write_text(&path, &text)?,
                None => print!("{text}"),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
