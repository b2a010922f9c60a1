//! Desk-scale environments with both a sampling interface and their exact
//! transition kernel.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::categorical::Support;
use crate::error::{Error, Result};
use crate::mdp::{parse_mdp_file, FiniteMdp, MdpBuilder, MdpFile};

const TWO_PATH_SPEC: &str = include_str!("two_path.mdp");

/// An MDP together with everything needed to run episodes on it.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvSpec {
    pub name: String,
    pub mdp: Arc<FiniteMdp>,
    pub start: usize,
    pub episode_cap: usize,
    /// Support suggested for learning on this environment.
    pub support: Support,
}

impl EnvSpec {
    /// Builds an environment from a parsed MDP file; `start` and
    /// `episode_cap` must be present.
    pub fn from_file(file: MdpFile) -> Result<Self> {
        let start = file
            .start
            .ok_or_else(|| Error::InvalidConfig("environment file lacks 'start'".into()))?;
        let episode_cap = file
            .episode_cap
            .ok_or_else(|| Error::InvalidConfig("environment file lacks 'episode_cap'".into()))?;
        let support = match file.support {
            Some(s) => s,
            None => {
                let (lo, hi) = file.mdp.invariant_return_bounds();
                Support::new(lo, hi.max(lo + 1.0), 51)?
            }
        };
        Ok(Self {
            name: file.name.unwrap_or_else(|| "custom".into()),
            mdp: Arc::new(file.mdp),
            start,
            episode_cap,
            support,
        })
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::from_file(parse_mdp_file(text)?)
    }

    pub fn to_file(&self) -> MdpFile {
        MdpFile {
            mdp: (*self.mdp).clone(),
            name: Some(self.name.clone()),
            start: Some(self.start),
            episode_cap: Some(self.episode_cap),
            support: Some(self.support),
        }
    }

    pub fn n_states(&self) -> usize {
        self.mdp.n_states()
    }

    pub fn n_actions(&self) -> usize {
        self.mdp.n_actions()
    }

    pub fn instance(&self, seed: u64) -> EnvInstance {
        EnvInstance::new(self.clone(), seed)
    }
}

/// Deterministic chain of `n` states. Action 1 moves right, action 0 moves
/// left (staying put at the left end). Entering the last state pays +1 and
/// ends the episode.
pub fn chain(n: usize) -> Result<EnvSpec> {
    if n < 2 {
        return Err(Error::InvalidConfig("chain needs at least 2 states".into()));
    }
    let goal = n - 1;
    let mut b = MdpBuilder::new(n, 2, 0.9).terminal(goal);
    for x in 0..goal {
        b = b.branch(x, 0, 1.0, 0.0, x.saturating_sub(1));
        let reward = if x + 1 == goal { 1.0 } else { 0.0 };
        b = b.branch(x, 1, 1.0, reward, x + 1);
    }
    Ok(EnvSpec {
        name: format!("chain({n})"),
        mdp: Arc::new(b.build()?),
        start: 0,
        episode_cap: 10 * n,
        support: Support::new(0.0, 1.0, 51)?,
    })
}

/// Cliff walk on a `width × height` grid. Actions are up, right, down, left.
/// The agent starts in the bottom-left cell and the goal is the bottom-right
/// cell; the cells between them on the bottom row are cliff. Every move costs
/// -1, stepping into the cliff pays -100 and ends the episode.
pub fn cliff(width: usize, height: usize) -> Result<EnvSpec> {
    if width < 3 || height < 2 {
        return Err(Error::InvalidConfig("cliff needs width ≥ 3 and height ≥ 2".into()));
    }
    let idx = |row: usize, col: usize| row * width + col;
    let bottom = height - 1;
    let start = idx(bottom, 0);
    let goal = idx(bottom, width - 1);
    let is_cliff = |row: usize, col: usize| row == bottom && col > 0 && col + 1 < width;
    let n = width * height;
    let mut b = MdpBuilder::new(n, 4, 0.9).terminal(goal);
    for col in 1..width - 1 {
        b = b.terminal(idx(bottom, col));
    }
    for row in 0..height {
        for col in 0..width {
            let x = idx(row, col);
            if x == goal || is_cliff(row, col) {
                continue;
            }
            let moves = [
                (row.saturating_sub(1), col),
                (row, (col + 1).min(width - 1)),
                ((row + 1).min(bottom), col),
                (row, col.saturating_sub(1)),
            ];
            for (a, &(r, c)) in moves.iter().enumerate() {
                let reward = if is_cliff(r, c) { -100.0 } else { -1.0 };
                b = b.branch(x, a, 1.0, reward, idx(r, c));
            }
        }
    }
    Ok(EnvSpec {
        name: format!("cliff({width}x{height})"),
        mdp: Arc::new(b.build()?),
        start,
        episode_cap: 10 * n,
        support: Support::new(-110.0, 0.0, 51)?,
    })
}

/// Start state choosing between a safe corridor with a small fixed payout
/// and a risky corridor with a bimodal one. Defined by a bundled spec file.
pub fn two_path() -> Result<EnvSpec> {
    EnvSpec::parse(TWO_PATH_SPEC)
}

/// The bundled environment catalogue.
pub fn built_in_envs() -> Result<Vec<EnvSpec>> {
    Ok(vec![chain(5)?, cliff(6, 4)?, two_path()?])
}

/// Resolves `chain`, `chain(N)`, `cliff`, `cliff(WxH)` or `two_path`.
pub fn env_by_name(name: &str) -> Result<EnvSpec> {
    let name = name.trim();
    let arg = |prefix: &str| -> Option<&str> {
        name.strip_prefix(prefix)?.strip_prefix('(')?.strip_suffix(')')
    };
    let bad = || Error::InvalidConfig(format!("unknown environment '{name}'"));
    match name {
        "chain" => chain(5),
        "cliff" => cliff(6, 4),
        "two_path" => two_path(),
        _ => {
            if let Some(n) = arg("chain") {
                chain(n.trim().parse().map_err(|_| bad())?)
            } else if let Some(dims) = arg("cliff") {
                let (w, h) = dims.split_once('x').ok_or_else(bad)?;
                cliff(
                    w.trim().parse().map_err(|_| bad())?,
                    h.trim().parse().map_err(|_| bad())?,
                )
            } else {
                Err(bad())
            }
        }
    }
}

/// One-hot encoding of `state` in `n_states` coordinates.
pub fn one_hot(state: usize, n_states: usize) -> Vec<f64> {
    let mut v = vec![0.0; n_states];
    v[state] = 1.0;
    v
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub state: usize,
    pub features: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub reward: f64,
    pub observation: Observation,
    /// Entered a terminal state.
    pub terminal: bool,
    /// Hit the episode cap without terminating.
    pub truncated: bool,
}

impl StepOutcome {
    pub fn done(&self) -> bool {
        self.terminal || self.truncated
    }
}

/// A running episode on an [`EnvSpec`], driven by its own RNG stream.
#[derive(Debug, Clone)]
pub struct EnvInstance {
    spec: EnvSpec,
    rng: ChaCha8Rng,
    state: usize,
    steps: usize,
    active: bool,
}

impl EnvInstance {
    pub fn new(spec: EnvSpec, seed: u64) -> Self {
        let start = spec.start;
        Self {
            spec,
            rng: ChaCha8Rng::seed_from_u64(seed),
            state: start,
            steps: 0,
            active: false,
        }
    }

    /// Restarts the RNG stream from `seed`.
    pub fn reseed(&mut self, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
    }

    pub fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    pub fn state(&self) -> usize {
        self.state
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn observe(&self) -> Observation {
        Observation {
            state: self.state,
            features: one_hot(self.state, self.spec.n_states()),
        }
    }

    pub fn reset(&mut self) -> Observation {
        self.state = self.spec.start;
        self.steps = 0;
        self.active = true;
        self.observe()
    }

    /// Starts an episode from `state` instead of the start state (exploring
    /// starts, or sampling the kernel of a particular state).
    pub fn reset_to(&mut self, state: usize) -> Result<Observation> {
        if state >= self.spec.n_states() || self.spec.mdp.is_terminal(state) {
            return Err(Error::Env(format!("cannot start an episode in state {state}")));
        }
        self.state = state;
        self.steps = 0;
        self.active = true;
        Ok(self.observe())
    }

    pub fn step(&mut self, action: usize) -> Result<StepOutcome> {
        if !self.active {
            return Err(Error::Env("step called on a finished episode; reset first".into()));
        }
        if action >= self.spec.n_actions() {
            return Err(Error::Env(format!("action {action} out of range")));
        }
        let branches = self.spec.mdp.branches(self.state, action);
        let u: f64 = self.rng.random();
        let mut cumulative = 0.0;
        let mut chosen = branches[branches.len() - 1];
        for b in branches {
            cumulative += b.prob;
            if u < cumulative {
                chosen = *b;
                break;
            }
        }
        self.state = chosen.next_state;
        self.steps += 1;
        let terminal = self.spec.mdp.is_terminal(self.state);
        let truncated = !terminal && self.steps >= self.spec.episode_cap;
        if terminal || truncated {
            self.active = false;
        }
        Ok(StepOutcome {
            reward: chosen.reward,
            observation: self.observe(),
            terminal,
            truncated,
        })
    }
}
