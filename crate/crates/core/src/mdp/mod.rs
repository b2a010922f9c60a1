//! Finite MDPs and the exact operators used as ground truth.
//!
//! A [`FiniteMdp`] enumerates `p(r, x′ | x, a)` as a list of branches per
//! state-action pair. Terminal states are absorbing with zero reward, and any
//! branch that enters a terminal state bootstraps with discount zero.

mod file;
mod operators;
mod solve;

pub use file::{parse_mdp_file, write_mdp_file, MdpFile};
pub use operators::{
    dist_bellman, dist_bellman_with_report, dist_optimality, dist_optimality_with_report,
    expected_bellman, expected_optimality, ClipReport, CLIP_WARN_MASS,
};
pub use solve::{
    dist_policy_evaluation, dist_value_iteration, greedy_policy, policy_evaluation,
    solve_fixed_point, value_iteration, FixedPoint, FixedPointDistance,
};

use crate::categorical::{Categorical, Support, MASS_TOLERANCE};
use crate::error::{Error, Result};

/// One outcome of taking an action: with probability `prob` the agent receives
/// `reward` and lands in `next_state`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Branch {
    pub prob: f64,
    pub reward: f64,
    pub next_state: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FiniteMdp {
    n_states: usize,
    n_actions: usize,
    gamma: f64,
    terminal: Vec<bool>,
    branches: Vec<Vec<Branch>>,
}

impl FiniteMdp {
    /// `branches` is indexed by `x * n_actions + a`. Terminal rows that are
    /// left empty are filled with the absorbing zero-reward self loop.
    pub fn new(
        n_states: usize,
        n_actions: usize,
        gamma: f64,
        terminal_states: &[usize],
        mut branches: Vec<Vec<Branch>>,
    ) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return Err(Error::InvalidMdp("need at least one state and one action".into()));
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::InvalidMdp(format!("gamma must lie in [0, 1), got {gamma}")));
        }
        if branches.len() != n_states * n_actions {
            return Err(Error::InvalidMdp(format!(
                "expected {} state-action rows, got {}",
                n_states * n_actions,
                branches.len()
            )));
        }
        let mut terminal = vec![false; n_states];
        for &x in terminal_states {
            if x >= n_states {
                return Err(Error::InvalidMdp(format!("terminal state {x} out of range")));
            }
            terminal[x] = true;
        }
        for x in 0..n_states {
            for a in 0..n_actions {
                let row = &mut branches[x * n_actions + a];
                if terminal[x] {
                    if row.is_empty() {
                        row.push(Branch {
                            prob: 1.0,
                            reward: 0.0,
                            next_state: x,
                        });
                    } else if row.iter().any(|b| b.next_state != x || b.reward != 0.0) {
                        return Err(Error::InvalidMdp(format!(
                            "terminal state {x} must self-loop with reward 0 (action {a})"
                        )));
                    }
                }
                validate_row(row, n_states).map_err(|m| {
                    Error::InvalidMdp(format!("state {x}, action {a}: {m}"))
                })?;
            }
        }
        Ok(Self {
            n_states,
            n_actions,
            gamma,
            terminal,
            branches,
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn is_terminal(&self, x: usize) -> bool {
        self.terminal[x]
    }

    pub fn terminal_states(&self) -> Vec<usize> {
        (0..self.n_states).filter(|&x| self.terminal[x]).collect()
    }

    pub fn branches(&self, x: usize, a: usize) -> &[Branch] {
        &self.branches[x * self.n_actions + a]
    }

    /// Discount applied when bootstrapping from `next_state`.
    #[inline]
    pub fn bootstrap_gamma(&self, next_state: usize) -> f64 {
        if self.terminal[next_state] {
            0.0
        } else {
            self.gamma
        }
    }

    /// `(min, max)` over every reward in the kernel.
    pub fn reward_range(&self) -> (f64, f64) {
        self.branches
            .iter()
            .flatten()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), b| {
                (lo.min(b.reward), hi.max(b.reward))
            })
    }

    /// An interval `[lo, hi]` that every projected backup maps into itself:
    /// `r + γz` stays inside whenever `z` does. Supports at least this wide
    /// never clip.
    pub fn invariant_return_bounds(&self) -> (f64, f64) {
        let (lo, hi) = self.reward_range();
        (lo.min(0.0) / (1.0 - self.gamma), hi.max(0.0) / (1.0 - self.gamma))
    }
}

fn validate_row(row: &[Branch], n_states: usize) -> std::result::Result<(), String> {
    if row.is_empty() {
        return Err("no transition branches".into());
    }
    let mut total = 0.0;
    for b in row {
        if !b.prob.is_finite() || b.prob < 0.0 {
            return Err(format!("bad probability {}", b.prob));
        }
        if !b.reward.is_finite() {
            return Err(format!("bad reward {}", b.reward));
        }
        if b.next_state >= n_states {
            return Err(format!("next state {} out of range", b.next_state));
        }
        total += b.prob;
    }
    if (total - 1.0).abs() > MASS_TOLERANCE {
        return Err(format!("branch probabilities sum to {total}"));
    }
    Ok(())
}

/// Incremental construction of a [`FiniteMdp`].
#[derive(Debug, Clone)]
pub struct MdpBuilder {
    n_states: usize,
    n_actions: usize,
    gamma: f64,
    terminal: Vec<usize>,
    branches: Vec<Vec<Branch>>,
}

impl MdpBuilder {
    pub fn new(n_states: usize, n_actions: usize, gamma: f64) -> Self {
        Self {
            n_states,
            n_actions,
            gamma,
            terminal: Vec::new(),
            branches: vec![Vec::new(); n_states * n_actions],
        }
    }

    pub fn terminal(mut self, x: usize) -> Self {
        self.terminal.push(x);
        self
    }

    pub fn branch(mut self, x: usize, a: usize, prob: f64, reward: f64, next_state: usize) -> Self {
        self.branches[x * self.n_actions + a].push(Branch {
            prob,
            reward,
            next_state,
        });
        self
    }

    pub fn build(self) -> Result<FiniteMdp> {
        FiniteMdp::new(
            self.n_states,
            self.n_actions,
            self.gamma,
            &self.terminal,
            self.branches,
        )
    }
}

/// Stationary tabular policy `π(a | x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularPolicy {
    n_actions: usize,
    probs: Vec<f64>,
}

impl TabularPolicy {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n_actions = rows.first().map_or(0, Vec::len);
        if n_actions == 0 {
            return Err(Error::InvalidConfig("policy needs at least one action".into()));
        }
        for (x, row) in rows.iter().enumerate() {
            if row.len() != n_actions {
                return Err(Error::DimensionMismatch {
                    expected: n_actions,
                    actual: row.len(),
                });
            }
            let total: f64 = row.iter().sum();
            if row.iter().any(|p| !p.is_finite() || *p < 0.0) || (total - 1.0).abs() > MASS_TOLERANCE
            {
                return Err(Error::InvalidConfig(format!("policy row {x} is not a distribution")));
            }
        }
        Ok(Self {
            n_actions,
            probs: rows.into_iter().flatten().collect(),
        })
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Self {
            n_actions,
            probs: vec![1.0 / n_actions as f64; n_states * n_actions],
        }
    }

    pub fn deterministic(actions: &[usize], n_actions: usize) -> Self {
        let mut probs = vec![0.0; actions.len() * n_actions];
        for (x, &a) in actions.iter().enumerate() {
            probs[x * n_actions + a] = 1.0;
        }
        Self { n_actions, probs }
    }

    pub fn n_states(&self) -> usize {
        self.probs.len() / self.n_actions
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn prob(&self, x: usize, a: usize) -> f64 {
        self.probs[x * self.n_actions + a]
    }

    pub fn row(&self, x: usize) -> &[f64] {
        &self.probs[x * self.n_actions..(x + 1) * self.n_actions]
    }

    /// The action with the most probability (lowest index on ties).
    pub fn mode(&self, x: usize) -> usize {
        argmax(self.row(x))
    }
}

/// Argmax with lowest-index tie-break.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Real-valued state-action table.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    n_states: usize,
    n_actions: usize,
    values: Vec<f64>,
}

impl QTable {
    pub fn zeros(n_states: usize, n_actions: usize) -> Self {
        Self {
            n_states,
            n_actions,
            values: vec![0.0; n_states * n_actions],
        }
    }

    pub fn from_values(n_states: usize, n_actions: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n_states * n_actions {
            return Err(Error::DimensionMismatch {
                expected: n_states * n_actions,
                actual: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("Q-values must be finite".into()));
        }
        Ok(Self {
            n_states,
            n_actions,
            values,
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn get(&self, x: usize, a: usize) -> f64 {
        self.values[x * self.n_actions + a]
    }

    pub fn row(&self, x: usize) -> &[f64] {
        &self.values[x * self.n_actions..(x + 1) * self.n_actions]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn greedy_action(&self, x: usize) -> usize {
        argmax(self.row(x))
    }

    pub fn max_abs_diff(&self, other: &QTable) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// One categorical return distribution per state-action pair, all on one
/// shared support.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnFunction {
    support: Support,
    n_states: usize,
    n_actions: usize,
    table: Vec<Categorical>,
}

impl ReturnFunction {
    pub fn constant(n_states: usize, n_actions: usize, dist: Categorical) -> Self {
        Self {
            support: *dist.support(),
            n_states,
            n_actions,
            table: vec![dist; n_states * n_actions],
        }
    }

    pub fn uniform(support: Support, n_states: usize, n_actions: usize) -> Self {
        Self::constant(n_states, n_actions, Categorical::uniform(support))
    }

    /// `table` indexed by `x * n_actions + a`.
    pub fn from_table(n_states: usize, n_actions: usize, table: Vec<Categorical>) -> Result<Self> {
        if table.len() != n_states * n_actions || table.is_empty() {
            return Err(Error::DimensionMismatch {
                expected: n_states * n_actions,
                actual: table.len(),
            });
        }
        let support = *table[0].support();
        if table.iter().any(|c| *c.support() != support) {
            return Err(Error::SupportMismatch);
        }
        Ok(Self {
            support,
            n_states,
            n_actions,
            table,
        })
    }

    pub fn support(&self) -> &Support {
        &self.support
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn get(&self, x: usize, a: usize) -> &Categorical {
        &self.table[x * self.n_actions + a]
    }

    pub(crate) fn get_mut(&mut self, x: usize, a: usize) -> &mut Categorical {
        &mut self.table[x * self.n_actions + a]
    }

    pub fn set(&mut self, x: usize, a: usize, dist: Categorical) -> Result<()> {
        if *dist.support() != self.support {
            return Err(Error::SupportMismatch);
        }
        self.table[x * self.n_actions + a] = dist;
        Ok(())
    }

    pub fn entries(&self) -> &[Categorical] {
        &self.table
    }

    pub fn q_value(&self, x: usize, a: usize) -> f64 {
        self.get(x, a).mean()
    }

    /// `Q_η`: the first moments of every entry.
    pub fn q_table(&self) -> QTable {
        QTable {
            n_states: self.n_states,
            n_actions: self.n_actions,
            values: self.table.iter().map(Categorical::mean).collect(),
        }
    }

    /// Greedy action at `x` with respect to `Q_η` (lowest index on ties).
    pub fn greedy_action(&self, x: usize) -> usize {
        let q: Vec<f64> = (0..self.n_actions).map(|a| self.q_value(x, a)).collect();
        argmax(&q)
    }

    /// Supremum Cramér distance over all state-action pairs.
    pub fn sup_cramer_distance(&self, other: &ReturnFunction) -> Result<f64> {
        if self.table.len() != other.table.len() {
            return Err(Error::DimensionMismatch {
                expected: self.table.len(),
                actual: other.table.len(),
            });
        }
        let mut sup: f64 = 0.0;
        for (a, b) in self.table.iter().zip(&other.table) {
            sup = sup.max(crate::categorical::cramer_distance(a, b)?);
        }
        Ok(sup)
    }
}
