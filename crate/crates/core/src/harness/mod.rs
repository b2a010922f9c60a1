//! Experiment plumbing: configs, multi-seed training runs with periodic
//! evaluation, metrics CSV files, and their analysis.

mod analysis;
mod csv_io;

pub use analysis::{
    best_scores_per_seed, confidence_interval, moving_average, relative_sample_performance,
    score_curve, summarize, summary_to_text, CompareOptions, ComparisonPoint, ComparisonReport,
    Selector, SummaryRow,
};
pub use csv_io::{
    data_section, format_row, load_table, read_table, write_header, write_row, write_table,
    AgentLabel, Metadata, MetricRow, MetricsTable, COLUMNS, FORMAT_TAG, FORMAT_VERSION,
};

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::approx::{save_checkpoint, ApproximatorParams, Architecture, GradientUpdateRule};
use crate::categorical::Support;
use crate::ensemble::{
    average_joint_action, evaluate_policy, run_with_evaluation, CloneSchedule, EccConfig,
    EccTrainer, EvalPoint, EvalProtocol, IndependentCdrl, Learner,
};
use crate::envs::{env_by_name, EnvSpec};
use crate::error::{Error, Result};
use crate::schedule::{derive_seed, EpsilonSchedule, StreamPurpose};

/// Environment variable that, when set, replaces the directory of every
/// experiment output path.
pub const OUTPUT_DIR_ENV: &str = "ECC_OUTPUT_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    /// `k` independent single-agent CDRL learners.
    Cdrl,
    /// The ECC ensemble.
    Ecc,
}

impl Algorithm {
    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::Cdrl => "cdrl",
            Algorithm::Ecc => "ecc",
        }
    }
}

impl std::str::FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cdrl" => Ok(Algorithm::Cdrl),
            "ecc" => Ok(Algorithm::Ecc),
            other => Err(Error::InvalidConfig(format!("unknown algorithm {other:?}"))),
        }
    }
}

/// Optional replacements for the desk-scale training defaults
/// ([`EccConfig::for_env`]).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingOverrides {
    pub k: Option<usize>,
    pub buffer_capacity: Option<usize>,
    pub batch_size: Option<usize>,
    pub update_period: Option<u64>,
    pub clone_period: Option<u64>,
    pub clone_schedule: Option<CloneSchedule>,
    pub learning_rate: Option<f64>,
    pub clip_norm: Option<f64>,
    pub architecture: Option<Architecture>,
    pub hidden_dim: Option<usize>,
    pub epsilon: Option<EpsilonSchedule>,
    pub gamma: Option<f64>,
    /// `[z_min, z_max, n_atoms]`.
    pub support: Option<(f64, f64, usize)>,
    pub parallel: Option<bool>,
}

/// One experiment: an algorithm on an environment over several seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub algorithm: Algorithm,
    pub env: String,
    pub n_steps: u64,
    pub n_seeds: usize,
    /// Seeds are `seed_base, seed_base + 1, …`.
    #[serde(default)]
    pub seed_base: u64,
    pub eval_period: u64,
    pub eval_episodes: usize,
    #[serde(default = "default_eval_epsilon")]
    pub eval_epsilon: f64,
    pub output: PathBuf,
    /// Where to save final per-agent parameters, if anywhere.
    #[serde(default)]
    pub checkpoint_dir: Option<PathBuf>,
    #[serde(default)]
    pub training: TrainingOverrides,
}

fn default_eval_epsilon() -> f64 {
    0.001
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidConfig(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn env_spec(&self) -> Result<EnvSpec> {
        env_by_name(&self.env).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    /// Trainer configuration for one seed.
    pub fn ecc_config(&self, env: &EnvSpec, seed: u64) -> Result<EccConfig> {
        let o = &self.training;
        let mut cfg = EccConfig::for_env(env, self.n_steps, seed);
        cfg.k = o.k.unwrap_or(cfg.k);
        cfg.buffer_capacity = o.buffer_capacity.unwrap_or(cfg.buffer_capacity);
        cfg.batch_size = o.batch_size.unwrap_or(cfg.batch_size);
        cfg.update_period = o.update_period.unwrap_or(cfg.update_period);
        cfg.clone_period = o.clone_period.unwrap_or(cfg.clone_period);
        cfg.clone_schedule = o.clone_schedule.clone().unwrap_or(cfg.clone_schedule);
        cfg.learning = GradientUpdateRule {
            learning_rate: o.learning_rate.unwrap_or(cfg.learning.learning_rate),
            clip_norm: o.clip_norm.or(cfg.learning.clip_norm),
        };
        cfg.architecture = o.architecture.unwrap_or(cfg.architecture);
        cfg.hidden_dim = o.hidden_dim.unwrap_or(cfg.hidden_dim);
        cfg.epsilon = o.epsilon.unwrap_or(cfg.epsilon);
        cfg.gamma = o.gamma.unwrap_or(cfg.gamma);
        if let Some((lo, hi, n)) = o.support {
            cfg.support = Support::new(lo, hi, n).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        }
        cfg.parallel = o.parallel.unwrap_or(cfg.parallel);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<EnvSpec> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if self.n_seeds == 0 {
            return bad("n_seeds must be at least 1");
        }
        if self.n_steps == 0 {
            return bad("n_steps must be positive");
        }
        if self.eval_period == 0 || self.eval_period > self.n_steps {
            return bad("eval_period must lie in 1..=n_steps");
        }
        if self.eval_episodes == 0 {
            return bad("eval_episodes must be positive");
        }
        if !(0.0..=1.0).contains(&self.eval_epsilon) {
            return bad("eval_epsilon must lie in [0, 1]");
        }
        let env = self.env_spec()?;
        self.ecc_config(&env, self.seed_base)?;
        Ok(env)
    }

    pub fn seeds(&self) -> impl Iterator<Item = u64> + '_ {
        (0..self.n_seeds as u64).map(move |i| self.seed_base + i)
    }

    /// The output path after applying [`OUTPUT_DIR_ENV`].
    pub fn resolved_output(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_DIR_ENV) {
            Some(dir) if !dir.is_empty() => {
                let name = self.output.file_name().unwrap_or_else(|| "metrics.csv".as_ref());
                PathBuf::from(dir).join(name)
            }
            _ => self.output.clone(),
        }
    }

    fn metadata(&self, cfg: &EccConfig) -> Metadata {
        let agent_samples = match self.algorithm {
            Algorithm::Ecc => cfg.k,
            Algorithm::Cdrl => 1,
        };
        let seeds: Vec<String> = self.seeds().map(|s| s.to_string()).collect();
        [
            ("algorithm", self.algorithm.name().to_string()),
            ("env", self.env.replace(' ', "")),
            ("k", cfg.k.to_string()),
            ("n_steps", self.n_steps.to_string()),
            ("eval_period", self.eval_period.to_string()),
            ("eval_episodes", self.eval_episodes.to_string()),
            ("eval_epsilon", self.eval_epsilon.to_string()),
            ("dropped_partial_window", (self.n_steps % self.eval_period).to_string()),
            ("agent_samples_per_step", agent_samples.to_string()),
            ("joint_samples_per_step", cfg.k.to_string()),
            ("seeds", seeds.join(",")),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }
}

/// Outcome of [`run_experiment`].
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutput {
    pub csv_path: PathBuf,
    pub rows: usize,
}

fn part_path(output: &Path, seed: u64) -> PathBuf {
    let mut name = output.file_name().unwrap_or_default().to_os_string();
    name.push(format!(".seed{seed}.part"));
    output.with_file_name(name)
}

/// Converts evaluation points into metric rows, tracking best scores.
struct RowBuilder {
    seed: u64,
    k: u64,
    agent_samples_per_step: u64,
    best: Vec<f64>,
    best_joint: f64,
}

impl RowBuilder {
    fn rows(&mut self, p: &EvalPoint) -> Vec<MetricRow> {
        if self.best.is_empty() {
            self.best = vec![f64::NEG_INFINITY; p.agent_returns.len()];
        }
        let mut rows = Vec::with_capacity(p.agent_returns.len() + 1);
        for (i, &r) in p.agent_returns.iter().enumerate() {
            self.best[i] = self.best[i].max(r);
            rows.push(MetricRow {
                seed: self.seed,
                step: p.step,
                total_samples: self.agent_samples_per_step * p.step,
                agent: AgentLabel::Agent(i),
                mean_return: r,
                best_so_far: self.best[i],
                snapshot_version: p.snapshot_version,
            });
        }
        self.best_joint = self.best_joint.max(p.joint_return);
        rows.push(MetricRow {
            seed: self.seed,
            step: p.step,
            total_samples: self.k * p.step,
            agent: AgentLabel::Joint,
            mean_return: p.joint_return,
            best_so_far: self.best_joint,
            snapshot_version: p.snapshot_version,
        });
        rows
    }
}

fn build_learner(
    algorithm: Algorithm,
    env: &EnvSpec,
    cfg: EccConfig,
) -> Result<Box<dyn Learner + Send>> {
    Ok(match algorithm {
        Algorithm::Ecc => Box::new(EccTrainer::new(env, cfg)?),
        Algorithm::Cdrl => Box::new(IndependentCdrl::new(env, cfg)?),
    })
}

/// Trains and evaluates one seed, appending rows to `part` as they appear.
fn run_seed(exp: &ExperimentConfig, env: &EnvSpec, seed: u64, part: &Path) -> Result<usize> {
    let cfg = exp.ecc_config(env, seed)?;
    let mut out = BufWriter::new(File::create(part)?);
    let mut builder = RowBuilder {
        seed,
        k: cfg.k as u64,
        agent_samples_per_step: match exp.algorithm {
            Algorithm::Ecc => cfg.k as u64,
            Algorithm::Cdrl => 1,
        },
        best: Vec::new(),
        best_joint: f64::NEG_INFINITY,
    };
    let proto = EvalProtocol {
        period: exp.eval_period,
        episodes: exp.eval_episodes,
        epsilon: exp.eval_epsilon,
    };
    let mut learner = build_learner(exp.algorithm, env, cfg.clone())?;
    let mut n_rows = 0;
    run_with_evaluation(env, learner.as_mut(), cfg.n_steps, seed, Some(&proto), |p| {
        for row in builder.rows(p) {
            write_row(&row, &mut out)?;
            n_rows += 1;
        }
        out.flush()?;
        Ok(())
    })?;
    if let Some(dir) = &exp.checkpoint_dir {
        std::fs::create_dir_all(dir)?;
        for (i, params) in learner.online().into_iter().enumerate() {
            save_checkpoint(params, &dir.join(format!("{}_seed{seed}_agent{i}.ckpt", exp.algorithm.name())))?;
        }
    }
    Ok(n_rows)
}

/// Runs every seed (in parallel), then merges the per-seed part files in
/// seed order into the output CSV. Part files of failed seeds are kept.
pub fn run_experiment(exp: &ExperimentConfig) -> Result<ExperimentOutput> {
    let env = exp.validate()?;
    let output = exp.resolved_output();
    if let Some(dir) = output.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let meta = exp.metadata(&exp.ecc_config(&env, exp.seed_base)?);
    let seeds: Vec<u64> = exp.seeds().collect();
    log::info!(
        "running {} on {} for {} seeds -> {}",
        exp.algorithm.name(),
        exp.env,
        seeds.len(),
        output.display()
    );
    let results: Vec<Result<usize>> = seeds
        .par_iter()
        .map(|&seed| run_seed(exp, &env, seed, &part_path(&output, seed)))
        .collect();
    let mut rows = 0;
    for (seed, r) in seeds.iter().zip(results) {
        rows += r.inspect_err(|_e| {
            log::error!("seed {seed} failed; partial rows kept in {}", part_path(&output, *seed).display());
        })?;
    }
    let tmp = output.with_extension("csv.tmp");
    {
        let mut w = BufWriter::new(File::create(&tmp)?);
        write_header(&meta, &mut w)?;
        for &seed in &seeds {
            let mut part = File::open(part_path(&output, seed))?;
            std::io::copy(&mut part, &mut w)?;
        }
        w.flush()?;
    }
    std::fs::rename(&tmp, &output)?;
    for &seed in &seeds {
        std::fs::remove_file(part_path(&output, seed))?;
    }
    Ok(ExperimentOutput { csv_path: output, rows })
}

/// Scores of saved agents and their average joint policy.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointEvaluation {
    pub agent_returns: Vec<f64>,
    pub joint_return: f64,
}

/// Evaluates loaded parameters on `env` with common random numbers drawn
/// from `seed`.
pub fn evaluate_checkpoints(
    env: &EnvSpec,
    agents: &[ApproximatorParams],
    episodes: usize,
    epsilon: f64,
    seed: u64,
) -> Result<CheckpointEvaluation> {
    if agents.is_empty() {
        return Err(Error::InvalidConfig("no checkpoints to evaluate".into()));
    }
    let seed = derive_seed(seed, StreamPurpose::Evaluation, 0);
    let agent_returns = agents
        .iter()
        .map(|p| evaluate_policy(env, |o| p.greedy_action(&o.features), episodes, epsilon, seed))
        .collect::<Result<Vec<_>>>()?;
    let joint_return = evaluate_policy(
        env,
        |o| average_joint_action(agents, &o.features),
        episodes,
        epsilon,
        seed,
    )?;
    Ok(CheckpointEvaluation {
        agent_returns,
        joint_return,
    })
}
