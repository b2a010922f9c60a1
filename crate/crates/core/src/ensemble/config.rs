use serde::{Deserialize, Serialize};

use crate::approx::{Architecture, GradientUpdateRule};
use crate::categorical::Support;
use crate::envs::EnvSpec;
use crate::error::{Error, Result};
use crate::schedule::EpsilonSchedule;

/// When the frozen target snapshot is rebuilt from the online parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CloneSchedule {
    /// Every `clone_period` steps.
    Constant,
    /// Piecewise-constant periods: `(from_step, period)` pairs sorted by
    /// `from_step`, the first starting at 0. Within a segment a clone happens
    /// when `(t − from_step)` is a positive multiple of `period`.
    Piecewise { segments: Vec<(u64, u64)> },
}

/// Settings shared by the ensemble trainer and the single-agent trainer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EccConfig {
    /// Ensemble size (or number of independent agents for the baseline).
    pub k: usize,
    pub n_steps: u64,
    pub buffer_capacity: usize,
    pub batch_size: usize,
    pub update_period: u64,
    pub clone_period: u64,
    #[serde(default = "default_clone_schedule")]
    pub clone_schedule: CloneSchedule,
    pub epsilon: EpsilonSchedule,
    pub learning: GradientUpdateRule,
    pub architecture: Architecture,
    #[serde(default = "default_hidden")]
    pub hidden_dim: usize,
    pub support: Support,
    pub gamma: f64,
    pub seed: u64,
    /// Advance agents on worker threads. Results are identical to the
    /// sequential mode.
    #[serde(default)]
    pub parallel: bool,
}

fn default_clone_schedule() -> CloneSchedule {
    CloneSchedule::Constant
}

fn default_hidden() -> usize {
    32
}

impl EccConfig {
    /// Desk-scale defaults for `env`: k = 5, P_update = 4, P_clone = 500,
    /// S = 10 000, minibatch 32, ε from 1.0 to 0.05 over the first tenth.
    pub fn for_env(env: &EnvSpec, n_steps: u64, seed: u64) -> Self {
        Self {
            k: 5,
            n_steps,
            buffer_capacity: 10_000,
            batch_size: 32,
            update_period: 4,
            clone_period: 500,
            clone_schedule: CloneSchedule::Constant,
            epsilon: EpsilonSchedule::default_for(n_steps),
            learning: GradientUpdateRule::new(0.05),
            architecture: Architecture::TabularLogits,
            hidden_dim: 32,
            support: env.support,
            gamma: env.mdp.gamma(),
            seed,
            parallel: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.k == 0 {
            return bad("k must be at least 1".into());
        }
        if self.update_period == 0 {
            return bad("update_period must be at least 1".into());
        }
        if self.clone_period < self.update_period {
            return bad(format!(
                "clone_period ({}) must be at least update_period ({})",
                self.clone_period, self.update_period
            ));
        }
        if self.batch_size == 0 || self.batch_size > self.buffer_capacity {
            return bad(format!(
                "batch_size ({}) must lie in 1..=buffer_capacity ({})",
                self.batch_size, self.buffer_capacity
            ));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return bad(format!("gamma must lie in [0, 1), got {}", self.gamma));
        }
        if self.architecture == Architecture::OneHiddenLayer && self.hidden_dim == 0 {
            return bad("hidden_dim must be positive".into());
        }
        if let CloneSchedule::Piecewise { segments } = &self.clone_schedule {
            if segments.first().map(|s| s.0) != Some(0) {
                return bad("piecewise clone schedule must start at step 0".into());
            }
            if segments.windows(2).any(|w| w[0].0 >= w[1].0) || segments.iter().any(|s| s.1 == 0) {
                return bad("piecewise clone schedule needs increasing starts and positive periods".into());
            }
        }
        self.epsilon.validate()?;
        self.learning.validate()
    }

    /// Whether the snapshot is rebuilt at the end of step `t` (1-based).
    pub fn clones_at(&self, t: u64) -> bool {
        match &self.clone_schedule {
            CloneSchedule::Constant => t.is_multiple_of(self.clone_period),
            CloneSchedule::Piecewise { segments } => {
                let (from, period) = segments
                    .iter()
                    .rev()
                    .find(|(from, _)| *from < t)
                    .copied()
                    .unwrap_or(segments[0]);
                (t - from).is_multiple_of(period)
            }
        }
    }
}
