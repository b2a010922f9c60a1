//! `ecc`: train, evaluate, compare and summarize CDRL / ECC experiments.
//!
//! Exit status: 0 on success, 2 on configuration or usage errors, 3 on
//! runtime failures.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use ecc_core::approx::load_checkpoint;
use ecc_core::harness::{
    evaluate_checkpoints, load_table, relative_sample_performance, run_experiment, summarize,
    summary_to_text, CompareOptions, ExperimentConfig, Selector,
};
use ecc_core::Error;

#[derive(Parser, Debug)]
#[command(name = "ecc", version, about = "Categorical distributional RL and ensemble categorical control")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
#[allow(clippy::large_enum_variant)] // parsed once per process
enum Command {
    /// Train over several seeds and write a metrics CSV.
    Train(TrainArgs),
    /// Evaluate saved agents and their average joint policy.
    Evaluate(EvaluateArgs),
    /// Relative sample performance of run A against run B (percent of B).
    Compare(CompareArgs),
    /// Best scores per run with 95% confidence intervals.
    Summarize(SummarizeArgs),
}

/// Flags mirror the experiment config; values in `--config` win.
#[derive(Args, Debug)]
struct TrainArgs {
    /// TOML experiment config; its values override the flags below.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    algorithm: Option<String>,
    #[arg(long)]
    env: Option<String>,
    #[arg(long)]
    n_steps: Option<u64>,
    #[arg(long)]
    n_seeds: Option<usize>,
    #[arg(long)]
    seed_base: Option<u64>,
    #[arg(long)]
    eval_period: Option<u64>,
    #[arg(long)]
    eval_episodes: Option<usize>,
    #[arg(long)]
    eval_epsilon: Option<f64>,
    /// Output CSV; the directory is replaced by $ECC_OUTPUT_DIR when set.
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    checkpoint_dir: Option<PathBuf>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    clone_period: Option<u64>,
    #[arg(long)]
    update_period: Option<u64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    buffer_capacity: Option<usize>,
    /// `tabular_logits` or `one_hidden_layer`.
    #[arg(long)]
    architecture: Option<String>,
    #[arg(long)]
    hidden_dim: Option<usize>,
    /// Advance agents on worker threads (same results as sequential).
    #[arg(long)]
    parallel: bool,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[arg(long)]
    env: String,
    /// Agent checkpoint files; pass several to also score their joint policy.
    #[arg(long = "checkpoint", required = true)]
    checkpoints: Vec<PathBuf>,
    #[arg(long, default_value_t = 100)]
    episodes: usize,
    #[arg(long, default_value_t = 0.001)]
    epsilon: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct CompareArgs {
    run_a: PathBuf,
    run_b: PathBuf,
    /// Curve of run A: `joint`, `agents` or an agent index.
    #[arg(long, default_value = "joint")]
    select_a: String,
    #[arg(long, default_value = "agents")]
    select_b: String,
    /// Compare only up to this many total samples.
    #[arg(long)]
    horizon: Option<u64>,
    /// Moving-average window in evaluation points (1 = raw).
    #[arg(long, default_value_t = 1)]
    smooth: usize,
}

#[derive(Args, Debug)]
struct SummarizeArgs {
    #[arg(required = true)]
    runs: Vec<PathBuf>,
}

/// Failure classes mapped to exit codes.
enum Failure {
    Config(anyhow::Error),
    Runtime(anyhow::Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidConfig(_) | Error::InvalidSupport(_) | Error::Parse { .. } => {
                Failure::Config(e.into())
            }
            other => Failure::Runtime(other.into()),
        }
    }
}

fn config_error(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Config(e.into())
}

/// Flags as a TOML table in config-file layout (unset flags omitted).
fn flags_table(a: &TrainArgs) -> toml::Table {
    let mut top = toml::Table::new();
    let mut training = toml::Table::new();
    let put = |t: &mut toml::Table, k: &str, v: Option<toml::Value>| {
        if let Some(v) = v {
            t.insert(k.into(), v);
        }
    };
    let int = |v: Option<u64>| v.map(|x| toml::Value::Integer(x as i64));
    let uint = |v: Option<usize>| v.map(|x| toml::Value::Integer(x as i64));
    let float = |v: Option<f64>| v.map(toml::Value::Float);
    let text = |v: &Option<String>| v.clone().map(toml::Value::String);
    let path = |v: &Option<PathBuf>| v.as_ref().map(|p| toml::Value::String(p.display().to_string()));
    put(&mut top, "algorithm", text(&a.algorithm));
    put(&mut top, "env", text(&a.env));
    put(&mut top, "n_steps", int(a.n_steps));
    put(&mut top, "n_seeds", uint(a.n_seeds));
    put(&mut top, "seed_base", int(a.seed_base));
    put(&mut top, "eval_period", int(a.eval_period));
    put(&mut top, "eval_episodes", uint(a.eval_episodes));
    put(&mut top, "eval_epsilon", float(a.eval_epsilon));
    put(&mut top, "output", path(&a.output));
    put(&mut top, "checkpoint_dir", path(&a.checkpoint_dir));
    put(&mut training, "k", uint(a.k));
    put(&mut training, "learning_rate", float(a.learning_rate));
    put(&mut training, "clone_period", int(a.clone_period));
    put(&mut training, "update_period", int(a.update_period));
    put(&mut training, "batch_size", uint(a.batch_size));
    put(&mut training, "buffer_capacity", uint(a.buffer_capacity));
    put(&mut training, "architecture", text(&a.architecture));
    put(&mut training, "hidden_dim", uint(a.hidden_dim));
    put(&mut training, "parallel", a.parallel.then_some(toml::Value::Boolean(true)));
    if !training.is_empty() {
        top.insert("training".into(), toml::Value::Table(training));
    }
    top
}

/// Recursively overlays `over` onto `base`.
fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn experiment_config(a: &TrainArgs) -> Result<ExperimentConfig, Failure> {
    let mut table = flags_table(a);
    if let Some(path) = &a.config {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))
            .map_err(config_error)?;
        let file: toml::Table = text
            .parse()
            .with_context(|| format!("invalid TOML in {}", path.display()))
            .map_err(config_error)?;
        merge(&mut table, file);
    }
    let cfg: ExperimentConfig = toml::Value::Table(table)
        .try_into()
        .context("incomplete or invalid experiment config")
        .map_err(config_error)?;
    Ok(cfg)
}

fn train(a: &TrainArgs) -> Result<(), Failure> {
    let cfg = experiment_config(a)?;
    let out = run_experiment(&cfg)?;
    println!("wrote {} rows to {}", out.rows, out.csv_path.display());
    Ok(())
}

fn evaluate(a: &EvaluateArgs) -> Result<(), Failure> {
    let env = ecc_core::envs::env_by_name(&a.env).map_err(config_error)?;
    let agents = a
        .checkpoints
        .iter()
        .map(|p| {
            load_checkpoint(p)
                .with_context(|| format!("cannot load {}", p.display()))
                .map_err(Failure::Runtime)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let res = evaluate_checkpoints(&env, &agents, a.episodes, a.epsilon, a.seed)?;
    println!("agent,mean_return");
    for (i, r) in res.agent_returns.iter().enumerate() {
        println!("{i},{r}");
    }
    println!("joint,{}", res.joint_return);
    Ok(())
}

fn compare(a: &CompareArgs) -> Result<(), Failure> {
    let run_a = load_table(&a.run_a)?;
    let run_b = load_table(&a.run_b)?;
    let opts = CompareOptions {
        selector_a: a.select_a.parse::<Selector>()?,
        selector_b: a.select_b.parse::<Selector>()?,
        horizon: a.horizon,
        smoothing_window: a.smooth,
    };
    print!("{}", relative_sample_performance(&run_a, &run_b, &opts)?.to_text());
    Ok(())
}

fn summarize_runs(a: &SummarizeArgs) -> Result<(), Failure> {
    let runs = a
        .runs
        .iter()
        .map(|p| {
            let table = load_table(p)?;
            let label = p.file_stem().map_or_else(|| p.display().to_string(), |s| s.to_string_lossy().into_owned());
            Ok((label, table))
        })
        .collect::<Result<Vec<_>, Error>>()?;
    print!("{}", summary_to_text(&summarize(&runs)));
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Train(a) => train(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Compare(a) => compare(a),
        Command::Summarize(a) => summarize_runs(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("configuration error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(3)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ecc_core::harness::{Algorithm, OUTPUT_DIR_ENV};

    #[test]
    fn config_file_overrides_flags() {
        let mut base = toml::Table::new();
        base.insert("env".into(), "chain".into());
        let mut training = toml::Table::new();
        training.insert("k".into(), toml::Value::Integer(3));
        base.insert("training".into(), training.into());
        let over: toml::Table = "env = \"cliff\"\n[training]\nbatch_size = 8\n".parse().unwrap();
        merge(&mut base, over);
        assert_eq!(base["env"].as_str(), Some("cliff"));
        assert_eq!(base["training"]["k"].as_integer(), Some(3));
        assert_eq!(base["training"]["batch_size"].as_integer(), Some(8));
    }

    #[test]
    fn algorithm_names_parse() {
        assert_eq!("ecc".parse::<Algorithm>().unwrap(), Algorithm::Ecc);
        assert!(OUTPUT_DIR_ENV.starts_with("ECC_"));
    }
}
