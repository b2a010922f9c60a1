use super::{
    dist_bellman, dist_optimality, expected_bellman, expected_optimality, FiniteMdp, QTable,
    ReturnFunction, TabularPolicy,
};
use crate::categorical::Support;
use crate::error::{Error, Result};

/// Distance used to detect convergence of an iterated operator.
pub trait FixedPointDistance {
    fn distance(&self, other: &Self) -> f64;
}

impl FixedPointDistance for QTable {
    /// Sup-norm.
    fn distance(&self, other: &Self) -> f64 {
        self.max_abs_diff(other)
    }
}

impl FixedPointDistance for ReturnFunction {
    /// Supremum Cramér distance.
    fn distance(&self, other: &Self) -> f64 {
        self.sup_cramer_distance(other).unwrap_or(f64::INFINITY)
    }
}

#[derive(Debug, Clone)]
pub struct FixedPoint<T> {
    pub value: T,
    /// Operator applications that moved the iterate by at least `tol`.
    pub iterations: usize,
    pub converged: bool,
    /// Distance between the last two iterates.
    pub last_distance: f64,
}

/// Iterates `op` from `init` until two successive iterates are closer than
/// `tol`, or `max_iter` applications have been made. Hitting `max_iter` is
/// reported through `converged = false`, not as an error.
pub fn solve_fixed_point<T, F>(mut op: F, init: T, tol: f64, max_iter: usize) -> Result<FixedPoint<T>>
where
    T: FixedPointDistance,
    F: FnMut(&T) -> Result<T>,
{
    if tol.is_nan() || tol <= 0.0 {
        return Err(Error::InvalidConfig(format!("tolerance must be positive, got {tol}")));
    }
    let mut current = init;
    let mut last_distance = f64::INFINITY;
    for applied in 0..max_iter {
        let next = op(&current)?;
        last_distance = next.distance(&current);
        current = next;
        if last_distance < tol {
            return Ok(FixedPoint {
                value: current,
                iterations: applied,
                converged: true,
                last_distance,
            });
        }
    }
    Ok(FixedPoint {
        value: current,
        iterations: max_iter,
        converged: false,
        last_distance,
    })
}

/// Deterministic greedy policy, lowest action index on ties.
pub fn greedy_policy(q: &QTable) -> TabularPolicy {
    let actions: Vec<usize> = (0..q.n_states()).map(|x| q.greedy_action(x)).collect();
    TabularPolicy::deterministic(&actions, q.n_actions())
}

/// `Q*` by iterating the expected optimality operator from zero.
pub fn value_iteration(mdp: &FiniteMdp, tol: f64, max_iter: usize) -> Result<FixedPoint<QTable>> {
    solve_fixed_point(
        |q| expected_optimality(mdp, q),
        QTable::zeros(mdp.n_states(), mdp.n_actions()),
        tol,
        max_iter,
    )
}

/// `Q_π` by iterating the expected Bellman operator from zero.
pub fn policy_evaluation(
    mdp: &FiniteMdp,
    pi: &TabularPolicy,
    tol: f64,
    max_iter: usize,
) -> Result<FixedPoint<QTable>> {
    solve_fixed_point(
        |q| expected_bellman(mdp, pi, q),
        QTable::zeros(mdp.n_states(), mdp.n_actions()),
        tol,
        max_iter,
    )
}

/// Fixed point of `Π_z T^π` from the uniform initialisation.
pub fn dist_policy_evaluation(
    mdp: &FiniteMdp,
    pi: &TabularPolicy,
    support: Support,
    tol: f64,
    max_iter: usize,
) -> Result<FixedPoint<ReturnFunction>> {
    solve_fixed_point(
        |eta| dist_bellman(mdp, pi, eta),
        ReturnFunction::uniform(support, mdp.n_states(), mdp.n_actions()),
        tol,
        max_iter,
    )
}

/// Iterates `Π_z T*` from the uniform initialisation. Convergence is not
/// guaranteed; check `converged`.
pub fn dist_value_iteration(
    mdp: &FiniteMdp,
    support: Support,
    tol: f64,
    max_iter: usize,
) -> Result<FixedPoint<ReturnFunction>> {
    solve_fixed_point(
        |eta| dist_optimality(mdp, eta),
        ReturnFunction::uniform(support, mdp.n_states(), mdp.n_actions()),
        tol,
        max_iter,
    )
}
