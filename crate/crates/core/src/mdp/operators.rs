use super::{FiniteMdp, QTable, ReturnFunction, TabularPolicy};
use crate::categorical::{accumulate_backup, Categorical};
use crate::error::{Error, Result};

/// Clipped mass per application above which the operators log a warning.
pub const CLIP_WARN_MASS: f64 = 1e-6;

/// Probability mass that fell outside `[z_min, z_max]` during one operator
/// application, summed over all state-action pairs.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ClipReport {
    pub clipped_mass: f64,
}

impl ClipReport {
    fn warn_if_needed(&self, op: &str) {
        if self.clipped_mass >= CLIP_WARN_MASS {
            log::warn!(
                "{op}: {:.3e} probability mass clipped at the support edges; widen the support",
                self.clipped_mass
            );
        }
    }
}

fn check_q_shape(mdp: &FiniteMdp, q: &QTable) -> Result<()> {
    if q.n_states() != mdp.n_states() || q.n_actions() != mdp.n_actions() {
        return Err(Error::DimensionMismatch {
            expected: mdp.n_states() * mdp.n_actions(),
            actual: q.n_states() * q.n_actions(),
        });
    }
    Ok(())
}

fn check_policy_shape(mdp: &FiniteMdp, pi: &TabularPolicy) -> Result<()> {
    if pi.n_states() != mdp.n_states() || pi.n_actions() != mdp.n_actions() {
        return Err(Error::DimensionMismatch {
            expected: mdp.n_states() * mdp.n_actions(),
            actual: pi.n_states() * pi.n_actions(),
        });
    }
    Ok(())
}

fn check_eta_shape(mdp: &FiniteMdp, eta: &ReturnFunction) -> Result<()> {
    if eta.n_states() != mdp.n_states() || eta.n_actions() != mdp.n_actions() {
        return Err(Error::DimensionMismatch {
            expected: mdp.n_states() * mdp.n_actions(),
            actual: eta.n_states() * eta.n_actions(),
        });
    }
    Ok(())
}

/// `(T^π q)(x,a) = E[R] + γ E_{p,π}[q(X′,A′)]`, by enumeration.
pub fn expected_bellman(mdp: &FiniteMdp, pi: &TabularPolicy, q: &QTable) -> Result<QTable> {
    check_q_shape(mdp, q)?;
    check_policy_shape(mdp, pi)?;
    let values = state_actions(mdp)
        .map(|(x, a)| {
            mdp.branches(x, a)
                .iter()
                .map(|b| {
                    let next: f64 = pi
                        .row(b.next_state)
                        .iter()
                        .zip(q.row(b.next_state))
                        .map(|(p, v)| p * v)
                        .sum();
                    b.prob * (b.reward + mdp.bootstrap_gamma(b.next_state) * next)
                })
                .sum()
        })
        .collect();
    QTable::from_values(mdp.n_states(), mdp.n_actions(), values)
}

/// `(T* q)(x,a) = E[R] + γ E_p[max_a′ q(X′,a′)]`, by enumeration.
pub fn expected_optimality(mdp: &FiniteMdp, q: &QTable) -> Result<QTable> {
    check_q_shape(mdp, q)?;
    let values = state_actions(mdp)
        .map(|(x, a)| {
            mdp.branches(x, a)
                .iter()
                .map(|b| {
                    let best = q.row(b.next_state).iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    b.prob * (b.reward + mdp.bootstrap_gamma(b.next_state) * best)
                })
                .sum()
        })
        .collect();
    QTable::from_values(mdp.n_states(), mdp.n_actions(), values)
}

/// Projected distributional Bellman operator `Π_z T^π`.
pub fn dist_bellman(mdp: &FiniteMdp, pi: &TabularPolicy, eta: &ReturnFunction) -> Result<ReturnFunction> {
    let (out, report) = dist_bellman_with_report(mdp, pi, eta)?;
    report.warn_if_needed("dist_bellman");
    Ok(out)
}

pub fn dist_bellman_with_report(
    mdp: &FiniteMdp,
    pi: &TabularPolicy,
    eta: &ReturnFunction,
) -> Result<(ReturnFunction, ClipReport)> {
    check_eta_shape(mdp, eta)?;
    check_policy_shape(mdp, pi)?;
    apply_projected(mdp, eta, |x_next, a_next| pi.prob(x_next, a_next))
}

/// Projected distributional optimality operator: each next state contributes
/// only the branch of `a*(x′) = argmax_a′ Q_η(x′, a′)`.
pub fn dist_optimality(mdp: &FiniteMdp, eta: &ReturnFunction) -> Result<ReturnFunction> {
    let (out, report) = dist_optimality_with_report(mdp, eta)?;
    report.warn_if_needed("dist_optimality");
    Ok(out)
}

pub fn dist_optimality_with_report(
    mdp: &FiniteMdp,
    eta: &ReturnFunction,
) -> Result<(ReturnFunction, ClipReport)> {
    check_eta_shape(mdp, eta)?;
    let greedy: Vec<usize> = (0..mdp.n_states()).map(|x| eta.greedy_action(x)).collect();
    apply_projected(mdp, eta, |x_next, a_next| {
        if greedy[x_next] == a_next {
            1.0
        } else {
            0.0
        }
    })
}

fn apply_projected<F>(
    mdp: &FiniteMdp,
    eta: &ReturnFunction,
    next_action_prob: F,
) -> Result<(ReturnFunction, ClipReport)>
where
    F: Fn(usize, usize) -> f64,
{
    let support = *eta.support();
    let mut report = ClipReport::default();
    let mut table = Vec::with_capacity(mdp.n_states() * mdp.n_actions());
    for (x, a) in state_actions(mdp) {
        let mut acc = vec![0.0; support.len()];
        for b in mdp.branches(x, a) {
            let gamma = mdp.bootstrap_gamma(b.next_state);
            for a_next in 0..mdp.n_actions() {
                let w = next_action_prob(b.next_state, a_next);
                if w > 0.0 {
                    report.clipped_mass += accumulate_backup(
                        &support,
                        eta.get(b.next_state, a_next),
                        b.reward,
                        gamma,
                        b.prob * w,
                        &mut acc,
                    );
                }
            }
        }
        table.push(Categorical::from_raw(support, acc));
    }
    Ok((
        ReturnFunction::from_table(mdp.n_states(), mdp.n_actions(), table)?,
        report,
    ))
}

fn state_actions(mdp: &FiniteMdp) -> impl Iterator<Item = (usize, usize)> + '_ {
    (0..mdp.n_states()).flat_map(move |x| (0..mdp.n_actions()).map(move |a| (x, a)))
}
