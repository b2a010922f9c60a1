//! Ensemble Categorical Control: k agents learning from a shared frozen
//! target built from the mean mixture `η̄ = (1/k) Σ_i η_{θ_i^−}`, the average
//! joint policy, and the ensemble error-variance formula.

mod config;
mod replay;
mod trainer;

pub use config::{CloneSchedule, EccConfig};
pub use replay::ReplayBuffer;
pub use trainer::{
    evaluate_policy, run_with_evaluation, train_cdrl, train_ecc, AgentStreams, CdrlTrainer,
    EccTrainer, EvalPoint, EvalProtocol, IndependentCdrl, Learner, TrainingRun,
};

use std::sync::Arc;

use crate::approx::ApproximatorParams;
use crate::categorical::{bellman_target, mix_uniform, project_dirac, Categorical, Support};
use crate::error::{Error, Result};
use crate::mdp::argmax;
use crate::tabular::Transition;

/// Frozen copies `θ_1^−, …, θ_k^−` of every agent's parameters. Immutable;
/// a clone produces a new snapshot with a higher version.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleTargetSnapshot {
    members: Arc<[ApproximatorParams]>,
    version: u64,
}

impl EnsembleTargetSnapshot {
    pub fn new(members: Vec<ApproximatorParams>, version: u64) -> Result<Self> {
        let first = members
            .first()
            .ok_or_else(|| Error::InvalidConfig("snapshot needs at least one member".into()))?;
        for m in &members[1..] {
            if m.support() != first.support() {
                return Err(Error::SupportMismatch);
            }
            if m.dims() != first.dims() || m.architecture() != first.architecture() {
                return Err(Error::DimensionMismatch {
                    expected: first.weights().len(),
                    actual: m.weights().len(),
                });
            }
        }
        Ok(Self {
            members: members.into(),
            version,
        })
    }

    /// Copies the given online parameters into a snapshot with the next version.
    pub fn recapture<'a>(&self, online: impl IntoIterator<Item = &'a ApproximatorParams>) -> Result<Self> {
        Self::new(online.into_iter().cloned().collect(), self.version + 1)
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn k(&self) -> usize {
        self.members.len()
    }

    pub fn members(&self) -> &[ApproximatorParams] {
        &self.members
    }

    pub fn support(&self) -> &Support {
        self.members[0].support()
    }

    /// `η̄(x, a)` for every action.
    pub fn mean_mixture(&self, features: &[f64]) -> Result<Vec<Categorical>> {
        let outputs = self
            .members
            .iter()
            .map(|m| m.forward(features))
            .collect::<Result<Vec<_>>>()?;
        let n_actions = outputs[0].len();
        (0..n_actions)
            .map(|a| {
                let per_agent: Vec<&Categorical> = outputs.iter().map(|o| &o[a]).collect();
                mix_uniform(&per_agent)
            })
            .collect()
    }

    /// `(a*, η̄(x, a*))` with `a* = argmax_a Q_η̄(x, a)`, lowest index on ties.
    pub fn greedy(&self, features: &[f64]) -> Result<(usize, Categorical)> {
        let mut mixture = self.mean_mixture(features)?;
        let q: Vec<f64> = mixture.iter().map(Categorical::mean).collect();
        let a = argmax(&q);
        Ok((a, mixture.swap_remove(a)))
    }
}

/// `η̄(x, a)`: the equal-weight mixture of the k frozen outputs.
pub fn ensemble_target_dist(
    snapshot: &EnsembleTargetSnapshot,
    features: &[f64],
    action: usize,
) -> Result<Categorical> {
    let outputs = snapshot
        .members
        .iter()
        .map(|m| m.forward_action(features, action))
        .collect::<Result<Vec<_>>>()?;
    mix_uniform(&outputs.iter().collect::<Vec<_>>())
}

/// Projected one-step backup from a bootstrap distribution. Terminal
/// transitions ignore `next` and project `δ_r` directly.
pub(crate) fn backup(support: &Support, next: &Categorical, t: &Transition, gamma: f64) -> Categorical {
    if t.terminal {
        project_dirac(support, t.r)
    } else {
        bellman_target(support, next, t.r, gamma)
    }
}

/// ECC learning target for `transition` (Algorithm 2, Steps 2–3):
/// `Π_z (f_r)_# η̄(x′, a*)` with `a*` greedy under the snapshot's mean Q and
/// no bootstrapping on terminal transitions.
pub fn ecc_target(
    snapshot: &EnsembleTargetSnapshot,
    transition: &Transition,
    next_features: &[f64],
    support: &Support,
    gamma: f64,
) -> Result<Categorical> {
    if support != snapshot.support() {
        return Err(Error::SupportMismatch);
    }
    let (_, next) = snapshot.greedy(next_features)?;
    Ok(backup(support, &next, transition, gamma))
}

/// Average joint policy `argmax_a (1/k) Σ_i Q_i(x, a)`, lowest index on ties.
pub fn average_joint_action<'a>(
    agents: impl IntoIterator<Item = &'a ApproximatorParams>,
    features: &[f64],
) -> Result<usize> {
    let mut total: Vec<f64> = Vec::new();
    let mut k = 0usize;
    for agent in agents {
        let q = agent.q_values(features)?;
        if total.is_empty() {
            total = q;
        } else if q.len() != total.len() {
            return Err(Error::DimensionMismatch {
                expected: total.len(),
                actual: q.len(),
            });
        } else {
            total.iter_mut().zip(&q).for_each(|(t, v)| *t += v);
        }
        k += 1;
    }
    if k == 0 {
        return Err(Error::InvalidConfig("joint action needs at least one agent".into()));
    }
    let mean: Vec<f64> = total.iter().map(|t| t / k as f64).collect();
    Ok(argmax(&mean))
}

/// Inputs of the ensemble error-variance formula.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnsembleVarianceQuery {
    pub k: usize,
    /// Pairwise correlation of the agents' errors, in `[0, 1]`.
    pub rho: f64,
    /// Per-agent error variance.
    pub sigma2: f64,
}

/// `E[ε̄²] = (1 + ρ(k − 1)) σ² / k` for the mean of k equicorrelated errors.
pub fn predicted_ensemble_mse(q: &EnsembleVarianceQuery) -> Result<f64> {
    if q.k == 0 || !(0.0..=1.0).contains(&q.rho) || !(q.sigma2 > 0.0 && q.sigma2.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "need k ≥ 1, ρ ∈ [0, 1], σ² > 0; got {q:?}"
        )));
    }
    let k = q.k as f64;
    Ok((1.0 + q.rho * (k - 1.0)) * q.sigma2 / k)
}
