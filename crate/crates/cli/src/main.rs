use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use flatscan_core::data::write_csv;
use flatscan_core::pipeline::{
    build_dataset, diagnose_point, load_outcomes, loss_index_table, read_outcome, read_params,
    replay, thread_count, write_loss_index, write_params, Experiment, ExperimentConfig,
    PointChoice,
};
use flatscan_core::solvers::read_trace_csv;
use flatscan_core::Cutoffs;

/// Find critical points of nonconvex losses and diagnose gradient-flat
/// regions.
#[derive(Debug, Parser)]
#[command(name = "flatscan", version)]
struct Cli {
    /// More log output; repeat for more.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    /// Only log errors.
    #[arg(short, long, global = true)]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct ConfigArgs {
    /// Experiment config (JSON).
    #[arg(short, long)]
    config: PathBuf,

    /// Override a config value, e.g. `--set finder.solver.rtol=1e-8`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build the configured dataset, preprocess it and write it as CSV.
    GenData {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Run only the pretraining trajectories.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Run the full experiment and write a results directory.
    Find {
        #[command(flatten)]
        config: ConfigArgs,
        /// Results directory; defaults to the config's `output_dir`, then
        /// `results/<name>`.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Evaluate every flatness diagnostic at one parameter vector.
    Diagnose {
        #[command(flatten)]
        config: ConfigArgs,
        /// Parameter file, one value per line.
        #[arg(long)]
        theta: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Export the loss/Morse-index table of a results directory.
    Table {
        #[arg(short, long)]
        results: PathBuf,
        #[arg(long, value_enum, default_value_t = Point::Terminal)]
        point: Point,
        /// Drop rows with a larger squared gradient norm.
        #[arg(long)]
        grad_filter: Option<f64>,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Reclassify a stored trace under different cutoffs.
    Replay {
        #[arg(long)]
        trace: PathBuf,
        /// Stored outcome; defaults to `outcome.json` next to the trace.
        #[arg(long)]
        outcome: Option<PathBuf>,
        #[arg(long)]
        grad_sq: Option<f64>,
        #[arg(long)]
        r_min: Option<f64>,
        #[arg(long)]
        r_h_max: Option<f64>,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Point {
    Terminal,
    MaxFlat,
}

/// Exit status 1: bad configuration or input; 2: failure while running.
enum Failure {
    Config(anyhow::Error),
    Runtime(anyhow::Error),
}

trait Stage<T> {
    fn config_err(self) -> Result<T, Failure>;
    fn runtime_err(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> Stage<T> for Result<T, E> {
    fn config_err(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Config(e.into()))
    }
    fn runtime_err(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Runtime(e.into()))
    }
}

fn load_config(args: &ConfigArgs) -> Result<ExperimentConfig, Failure> {
    if !args.config.exists() {
        return Err(Failure::Config(anyhow!(
            "config file {} not found",
            args.config.display()
        )));
    }
    ExperimentConfig::load(&args.config, &args.overrides).config_err()
}

fn emit(text: &str, output: Option<&Path>) -> Result<(), Failure> {
    match output {
        Some(path) => std::fs::write(path, text)
            .with_context(|| format!("writing {}", path.display()))
            .runtime_err(),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes()).runtime_err()
        }
    }
}

fn to_json<T: serde::Serialize>(value: &T) -> Result<String, Failure> {
    let mut text = serde_json::to_string_pretty(value).runtime_err()?;
    text.push('\n');
    Ok(text)
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::GenData { config, output } => {
            let cfg = load_config(&config)?;
            let data = build_dataset(&cfg)
                .config_err()?
                .ok_or_else(|| Failure::Config(anyhow!("the config has no dataset")))?;
            write_csv(&data, &output).runtime_err()?;
            log::info!(
                "wrote {} samples to {}",
                data.num_samples(),
                output.display()
            );
        }
        Command::Train { config, output } => {
            let cfg = load_config(&config)?;
            let exp = Experiment::new(cfg).config_err()?;
            let traces = exp.train().runtime_err()?;
            std::fs::create_dir_all(&output)
                .with_context(|| format!("creating {}", output.display()))
                .runtime_err()?;
            for (t, trace) in traces.iter().enumerate() {
                trace
                    .write_csv(&output.join(format!("trajectory_{t}.csv")))
                    .runtime_err()?;
                write_params(&trace.terminal, &output.join(format!("final_{t}.csv")))
                    .runtime_err()?;
            }
        }
        Command::Find { config, output } => {
            let mut cfg = load_config(&config)?;
            thread_count().config_err()?;
            let dir = output
                .or_else(|| cfg.output_dir.clone())
                .unwrap_or_else(|| Path::new("results").join(&cfg.name));
            cfg.output_dir = Some(dir.clone());
            let exp = Experiment::new(cfg).config_err()?;
            let results = exp.run().runtime_err()?;
            let mut summary = format!("{}: {} runs", dir.display(), results.runs.len());
            for (class, n) in &results.manifest.class_counts {
                summary.push_str(&format!(", {class} {n}"));
            }
            println!("{summary}");
        }
        Command::Diagnose {
            config,
            theta,
            output,
        } => {
            let cfg = load_config(&config)?;
            let exp = Experiment::new(cfg).config_err()?;
            let theta = read_params(&theta).config_err()?;
            let report = diagnose_point(
                exp.field.as_ref(),
                &theta,
                &exp.config.solver_config(),
                &exp.config.cutoffs,
            )
            .config_err()?;
            emit(&to_json(&report)?, output.as_deref())?;
        }
        Command::Table {
            results,
            point,
            grad_filter,
            output,
        } => {
            let outcomes = load_outcomes(&results).config_err()?;
            let choice = match point {
                Point::Terminal => PointChoice::Terminal,
                Point::MaxFlat => PointChoice::MaxFlat,
            };
            let rows = loss_index_table(&outcomes, choice, grad_filter);
            let mut buf = Vec::new();
            write_loss_index(&rows, &mut buf).runtime_err()?;
            emit(&String::from_utf8(buf).runtime_err()?, output.as_deref())?;
        }
        Command::Replay {
            trace,
            outcome,
            grad_sq,
            r_min,
            r_h_max,
            output,
        } => {
            let rows = read_trace_csv(&trace)
                .with_context(|| format!("reading {}", trace.display()))
                .config_err()?;
            let stored_path = outcome.unwrap_or_else(|| trace.with_file_name("outcome.json"));
            let stored = if stored_path.exists() {
                Some(read_outcome(&stored_path).config_err()?)
            } else {
                None
            };
            let base = stored.as_ref().map_or_else(Cutoffs::default, |o| o.cutoffs);
            let cutoffs = Cutoffs {
                grad_sq: grad_sq.unwrap_or(base.grad_sq),
                r_min: r_min.unwrap_or(base.r_min),
                r_h_max: r_h_max.unwrap_or(base.r_h_max),
                ..base
            };
            let result = replay(&rows, stored.as_ref(), &cutoffs).config_err()?;
            emit(&to_json(&result)?, output.as_deref())?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    let level = match (cli.quiet, cli.verbose) {
        (true, _) => log::LevelFilter::Error,
        (false, 0) => log::LevelFilter::Warn,
        (false, 1) => log::LevelFilter::Info,
        (false, _) => log::LevelFilter::Debug,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .parse_env("FLATSCAN_LOG")
        .init();

    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
