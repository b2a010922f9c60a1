//! Stochastic tabular CDRL: sampled transitions, projected targets and
//! mixture-rate updates of a single state-action entry per step.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::categorical::{bellman_target, Support};
use crate::envs::EnvSpec;
use crate::error::{Error, Result};
use crate::mdp::{
    dist_policy_evaluation, dist_value_iteration, greedy_policy, value_iteration, FiniteMdp,
    ReturnFunction, TabularPolicy,
};
use crate::schedule::{derive_seed, EpsilonSchedule, StepSize, StreamPurpose};

/// A sampled `(x, a, r, x′)` step. `terminal` marks entry into a terminal
/// state, in which case the target does not bootstrap.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub x: usize,
    pub a: usize,
    pub r: f64,
    pub x_next: usize,
    pub terminal: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum CdrlMode {
    /// Bootstrap from `a* ~ π(x′)`.
    Evaluation(TabularPolicy),
    /// Bootstrap from `a* = argmax_a Q_η(x′, a)`.
    Control,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CdrlConfig {
    pub support: Support,
    pub mode: CdrlMode,
    pub step_size: StepSize,
    pub behavior_epsilon: EpsilonSchedule,
    pub seed: u64,
    pub n_steps: u64,
    /// Record a metric row every this many steps (and after the last step).
    pub metric_period: u64,
}

impl CdrlConfig {
    /// Control mode with the default schedules: `α_t = 0.5 / (1 + 0.001 t)`
    /// and ε decaying 1.0 → 0.05 over the first tenth of the run.
    pub fn control(support: Support, seed: u64, n_steps: u64) -> Self {
        Self {
            support,
            mode: CdrlMode::Control,
            step_size: StepSize::Decaying {
                initial: 0.5,
                decay: 1e-3,
            },
            behavior_epsilon: EpsilonSchedule::default_for(n_steps),
            seed,
            n_steps,
            metric_period: (n_steps / 20).max(1),
        }
    }

    pub fn validate(&self, mdp: &FiniteMdp) -> Result<()> {
        self.step_size.validate()?;
        self.behavior_epsilon.validate()?;
        if self.metric_period == 0 {
            return Err(Error::InvalidConfig("metric_period must be positive".into()));
        }
        if let CdrlMode::Evaluation(pi) = &self.mode {
            if pi.n_states() != mdp.n_states() || pi.n_actions() != mdp.n_actions() {
                return Err(Error::InvalidConfig("policy shape does not match the MDP".into()));
            }
        }
        Ok(())
    }
}

/// Target distribution for `t` under `eta`: `Π_z (f_{r,γ})_# η(x′, a*)`.
pub fn cdrl_target<R: Rng + ?Sized>(
    eta: &ReturnFunction,
    t: &Transition,
    mode: &CdrlMode,
    gamma: f64,
    rng: &mut R,
) -> crate::categorical::Categorical {
    let a_star = match mode {
        CdrlMode::Control => eta.greedy_action(t.x_next),
        CdrlMode::Evaluation(pi) => sample_action(pi.row(t.x_next), rng),
    };
    let gamma = if t.terminal { 0.0 } else { gamma };
    bellman_target(eta.support(), eta.get(t.x_next, a_star), t.r, gamma)
}

/// Applies one CDRL update in place and returns the target it moved towards.
pub fn cdrl_update<R: Rng + ?Sized>(
    eta: &mut ReturnFunction,
    t: &Transition,
    mode: &CdrlMode,
    alpha: f64,
    gamma: f64,
    rng: &mut R,
) -> crate::categorical::Categorical {
    let target = cdrl_target(eta, t, mode, gamma, rng);
    // a convex combination of two valid distributions stays valid
    let probs = eta.get_mut(t.x, t.a).probs_mut();
    for (p, q) in probs.iter_mut().zip(target.probs()) {
        *p = (1.0 - alpha) * *p + alpha * q;
    }
    target
}

/// Pure form of [`cdrl_update`] using `cfg.step_size` at step `step`.
pub fn cdrl_step<R: Rng + ?Sized>(
    eta: &ReturnFunction,
    t: &Transition,
    cfg: &CdrlConfig,
    step: u64,
    gamma: f64,
    rng: &mut R,
) -> ReturnFunction {
    let mut next = eta.clone();
    cdrl_update(&mut next, t, &cfg.mode, cfg.step_size.at(step), gamma, rng);
    next
}

pub(crate) fn sample_action<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut cumulative = 0.0;
    for (a, p) in probs.iter().enumerate() {
        cumulative += p;
        if u < cumulative {
            return a;
        }
    }
    probs.len() - 1
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CdrlMetric {
    pub step: u64,
    /// Supremum Cramér distance to the exact projected fixed point.
    pub distance_to_oracle: f64,
    /// Greedy action matches the oracle's in every non-terminal state.
    pub greedy_matches_oracle: bool,
}

#[derive(Debug, Clone)]
pub struct CdrlRun {
    pub eta: ReturnFunction,
    pub metrics: Vec<CdrlMetric>,
}

/// Runs tabular CDRL for `cfg.n_steps` interactions with `env`, starting
/// from uniform distributions everywhere.
pub fn run_tabular_cdrl(env: &EnvSpec, cfg: &CdrlConfig) -> Result<CdrlRun> {
    let mdp = &*env.mdp;
    cfg.validate(mdp)?;
    let mut eta = ReturnFunction::uniform(cfg.support, mdp.n_states(), mdp.n_actions());
    if cfg.n_steps == 0 {
        return Ok(CdrlRun {
            eta,
            metrics: Vec::new(),
        });
    }

    let (oracle_eta, oracle_actions) = oracle(mdp, cfg)?;
    let measure = |eta: &ReturnFunction, step: u64| -> Result<CdrlMetric> {
        let greedy_matches_oracle = (0..mdp.n_states())
            .filter(|&x| !mdp.is_terminal(x))
            .all(|x| eta.greedy_action(x) == oracle_actions[x]);
        Ok(CdrlMetric {
            step,
            distance_to_oracle: eta.sup_cramer_distance(&oracle_eta)?,
            greedy_matches_oracle,
        })
    };

    let mut env_rng = env.instance(derive_seed(cfg.seed, StreamPurpose::Environment, 0));
    let mut explore = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, StreamPurpose::Exploration, 0));
    let mut target_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, StreamPurpose::Replay, 0));
    let mut metrics = Vec::new();
    let mut obs = env_rng.reset();

    for step in 0..cfg.n_steps {
        let epsilon = cfg.behavior_epsilon.value(step);
        let a = if explore.random::<f64>() < epsilon {
            explore.random_range(0..mdp.n_actions())
        } else {
            match &cfg.mode {
                CdrlMode::Control => eta.greedy_action(obs.state),
                CdrlMode::Evaluation(pi) => sample_action(pi.row(obs.state), &mut explore),
            }
        };
        let out = env_rng.step(a)?;
        let t = Transition {
            x: obs.state,
            a,
            r: out.reward,
            x_next: out.observation.state,
            terminal: out.terminal,
        };
        cdrl_update(
            &mut eta,
            &t,
            &cfg.mode,
            cfg.step_size.at(step),
            mdp.gamma(),
            &mut target_rng,
        );
        obs = if out.done() { env_rng.reset() } else { out.observation };

        let done_steps = step + 1;
        if done_steps % cfg.metric_period == 0 || done_steps == cfg.n_steps {
            metrics.push(measure(&eta, done_steps)?);
        }
    }
    Ok(CdrlRun { eta, metrics })
}

/// Exact projected fixed point and the greedy action it implies per state.
fn oracle(mdp: &FiniteMdp, cfg: &CdrlConfig) -> Result<(ReturnFunction, Vec<usize>)> {
    const TOL: f64 = 1e-10;
    const MAX_ITER: usize = 100_000;
    match &cfg.mode {
        CdrlMode::Control => {
            let eta = dist_value_iteration(mdp, cfg.support, TOL, MAX_ITER)?.value;
            let q = value_iteration(mdp, TOL, MAX_ITER)?.value;
            let pi = greedy_policy(&q);
            Ok((eta, (0..mdp.n_states()).map(|x| pi.mode(x)).collect()))
        }
        CdrlMode::Evaluation(pi) => {
            let eta = dist_policy_evaluation(mdp, pi, cfg.support, TOL, MAX_ITER)?.value;
            let actions = (0..mdp.n_states()).map(|x| eta.greedy_action(x)).collect();
            Ok((eta, actions))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::categorical::{cramer_distance, kl, Categorical};
    use crate::envs::chain;

    fn support9() -> Support {
        Support::new(0.0, 4.0, 9).unwrap()
    }

    #[test]
    fn full_replacement_with_unit_rate() {
        let mut eta = ReturnFunction::constant(1, 1, Categorical::dirac_atom(support9(), 0));
        let t = Transition {
            x: 0,
            a: 0,
            r: 1.0,
            x_next: 0,
            terminal: false,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        cdrl_update(&mut eta, &t, &CdrlMode::Control, 1.0, 0.5, &mut rng);
        assert_eq!(eta.get(0, 0), &Categorical::dirac_atom(support9(), 2));
    }

    #[test]
    fn target_is_a_fixed_point_of_the_mixture() {
        // δ_2 is its own target under r = 1, γ = 0.5
        let d2 = Categorical::dirac_atom(support9(), 4);
        let eta = ReturnFunction::constant(1, 1, d2.clone());
        let t = Transition {
            x: 0,
            a: 0,
            r: 1.0,
            x_next: 0,
            terminal: false,
        };
        let cfg = CdrlConfig {
            step_size: StepSize::Constant { alpha: 0.5 },
            ..CdrlConfig::control(support9(), 0, 1)
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let next = cdrl_step(&eta, &t, &cfg, 0, 0.5, &mut rng);
        assert_eq!(next, eta);
    }

    #[test]
    fn only_the_sampled_entry_changes_and_kl_drops() {
        let support = support9();
        let mut eta = ReturnFunction::uniform(support, 3, 2);
        let t = Transition {
            x: 1,
            a: 0,
            r: 1.0,
            x_next: 2,
            terminal: false,
        };
        let before = eta.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let target = cdrl_update(&mut eta, &t, &CdrlMode::Control, 0.3, 0.9, &mut rng);
        for x in 0..3 {
            for a in 0..2 {
                if (x, a) != (1, 0) {
                    assert_eq!(eta.get(x, a), before.get(x, a));
                }
            }
        }
        assert!(kl(&target, eta.get(1, 0)).unwrap() < kl(&target, before.get(1, 0)).unwrap());
    }

    #[test]
    fn terminal_transition_targets_projected_reward() {
        let support = support9();
        let eta = ReturnFunction::uniform(support, 2, 1);
        let t = Transition {
            x: 0,
            a: 0,
            r: 1.25,
            x_next: 1,
            terminal: true,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let target = cdrl_target(&eta, &t, &CdrlMode::Control, 0.9, &mut rng);
        let expected = crate::categorical::project_dirac(&support, 1.25);
        assert!(cramer_distance(&target, &expected).unwrap() < 1e-15);
    }

    #[test]
    fn zero_steps_returns_initialisation() {
        let env = chain(5).unwrap();
        let cfg = CdrlConfig::control(env.support, 3, 0);
        let run = run_tabular_cdrl(&env, &cfg).unwrap();
        assert_eq!(run.eta, ReturnFunction::uniform(env.support, 5, 2));
        assert!(run.metrics.is_empty());
    }

    #[test]
    fn fixed_seed_is_reproducible() {
        let env = chain(5).unwrap();
        let cfg = CdrlConfig::control(env.support, 11, 2_000);
        let a = run_tabular_cdrl(&env, &cfg).unwrap();
        let b = run_tabular_cdrl(&env, &cfg).unwrap();
        assert_eq!(a.eta, b.eta);
        assert_eq!(a.metrics, b.metrics);
    }

    #[test]
    fn invalid_schedule_is_rejected() {
        let env = chain(5).unwrap();
        let cfg = CdrlConfig {
            step_size: StepSize::Constant { alpha: 1.5 },
            ..CdrlConfig::control(env.support, 0, 10)
        };
        assert!(run_tabular_cdrl(&env, &cfg).is_err());
    }
}
