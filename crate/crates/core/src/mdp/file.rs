//! Plain-text MDP description.
//!
//! ```text
//! # comment
//! n_states 3
//! n_actions 2
//! gamma 0.9
//! terminal 2
//! 0 0 1.0 0 1        # x a prob reward x_next
//! 0 1 0.5 10 2
//! 0 1 0.5 0 2
//! ```
//!
//! Environment files add optional `name`, `start`, `episode_cap` and
//! `support z_min z_max n_atoms` header lines. Rows of terminal states may be
//! omitted; they default to the absorbing self loop.

use super::{Branch, FiniteMdp};
use crate::categorical::Support;
use crate::error::{Error, Result};
use std::fmt::Write as _;

/// A parsed MDP file together with its optional environment header.
#[derive(Debug, Clone, PartialEq)]
pub struct MdpFile {
    pub mdp: FiniteMdp,
    pub name: Option<String>,
    pub start: Option<usize>,
    pub episode_cap: Option<usize>,
    pub support: Option<Support>,
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

fn parse_num<T: std::str::FromStr>(tok: &str, line: usize, what: &str) -> Result<T> {
    tok.parse()
        .map_err(|_| parse_err(line, format!("cannot parse {what} from '{tok}'")))
}

fn single_value<'a>(tokens: &[&'a str], line: usize, key: &str) -> Result<&'a str> {
    match tokens {
        [_, v] => Ok(v),
        _ => Err(parse_err(line, format!("'{key}' takes exactly one value"))),
    }
}

pub fn parse_mdp_file(text: &str) -> Result<MdpFile> {
    let mut n_states: Option<usize> = None;
    let mut n_actions: Option<usize> = None;
    let mut gamma: Option<f64> = None;
    let mut terminal: Vec<(usize, usize)> = Vec::new();
    let mut name = None;
    let mut start = None;
    let mut episode_cap = None;
    let mut support = None;
    // (line, x, a, branch)
    let mut rows: Vec<(usize, usize, usize, Branch)> = Vec::new();
    let mut last_line = 0;

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        last_line = line;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let tokens: Vec<&str> = content.split_whitespace().collect();
        let head = tokens[0];
        if head.chars().next().is_some_and(|c| c.is_ascii_digit()) {
            let [x, a, p, r, next] = tokens[..] else {
                return Err(parse_err(
                    line,
                    format!("transition needs 5 fields 'x a prob reward x_next', got {}", tokens.len()),
                ));
            };
            rows.push((
                line,
                parse_num(x, line, "state")?,
                parse_num(a, line, "action")?,
                Branch {
                    prob: parse_num(p, line, "probability")?,
                    reward: parse_num(r, line, "reward")?,
                    next_state: parse_num(next, line, "next state")?,
                },
            ));
            continue;
        }
        match head {
            "n_states" => n_states = Some(parse_num(single_value(&tokens, line, head)?, line, head)?),
            "n_actions" => n_actions = Some(parse_num(single_value(&tokens, line, head)?, line, head)?),
            "gamma" => gamma = Some(parse_num(single_value(&tokens, line, head)?, line, head)?),
            "terminal" => {
                for tok in &tokens[1..] {
                    terminal.push((line, parse_num(tok, line, "terminal state")?));
                }
            }
            "name" => name = Some(single_value(&tokens, line, head)?.to_string()),
            "start" => start = Some(parse_num(single_value(&tokens, line, head)?, line, head)?),
            "episode_cap" => {
                let cap: usize = parse_num(single_value(&tokens, line, head)?, line, head)?;
                if cap == 0 {
                    return Err(parse_err(line, "episode_cap must be positive"));
                }
                episode_cap = Some(cap);
            }
            "support" => {
                let [_, lo, hi, k] = tokens[..] else {
                    return Err(parse_err(line, "'support' takes z_min z_max n_atoms"));
                };
                let s = Support::new(
                    parse_num(lo, line, "z_min")?,
                    parse_num(hi, line, "z_max")?,
                    parse_num(k, line, "n_atoms")?,
                )
                .map_err(|e| parse_err(line, e.to_string()))?;
                support = Some(s);
            }
            other => return Err(parse_err(line, format!("unknown key '{other}'"))),
        }
    }

    let n_states = n_states.ok_or_else(|| parse_err(last_line, "missing 'n_states'"))?;
    let n_actions = n_actions.ok_or_else(|| parse_err(last_line, "missing 'n_actions'"))?;
    let gamma = gamma.ok_or_else(|| parse_err(last_line, "missing 'gamma'"))?;
    if n_states == 0 || n_actions == 0 {
        return Err(parse_err(last_line, "n_states and n_actions must be positive"));
    }
    if !(0.0..1.0).contains(&gamma) {
        return Err(parse_err(last_line, format!("gamma must lie in [0, 1), got {gamma}")));
    }
    for &(line, x) in &terminal {
        if x >= n_states {
            return Err(parse_err(line, format!("terminal state {x} out of range")));
        }
    }
    if let Some(s) = start {
        if s >= n_states {
            return Err(parse_err(last_line, format!("start state {s} out of range")));
        }
    }

    let mut branches = vec![Vec::new(); n_states * n_actions];
    let mut first_line = vec![0usize; n_states * n_actions];
    for &(line, x, a, b) in &rows {
        if x >= n_states || a >= n_actions {
            return Err(parse_err(line, format!("state-action ({x}, {a}) out of range")));
        }
        if b.next_state >= n_states {
            return Err(parse_err(line, format!("next state {} out of range", b.next_state)));
        }
        if !(b.prob >= 0.0 && b.prob <= 1.0) {
            return Err(parse_err(line, format!("probability {} outside [0, 1]", b.prob)));
        }
        if first_line[x * n_actions + a] == 0 {
            first_line[x * n_actions + a] = line;
        }
        branches[x * n_actions + a].push(b);
    }
    let terminal_states: Vec<usize> = terminal.iter().map(|&(_, x)| x).collect();
    for x in 0..n_states {
        for a in 0..n_actions {
            let idx = x * n_actions + a;
            let row = &branches[idx];
            if row.is_empty() {
                if !terminal_states.contains(&x) {
                    return Err(parse_err(
                        last_line,
                        format!("no transitions declared for state {x}, action {a}"),
                    ));
                }
                continue;
            }
            let total: f64 = row.iter().map(|b| b.prob).sum();
            if (total - 1.0).abs() > crate::categorical::MASS_TOLERANCE {
                return Err(parse_err(
                    first_line[idx],
                    format!("probabilities for state {x}, action {a} sum to {total}"),
                ));
            }
        }
    }
    let mdp = FiniteMdp::new(n_states, n_actions, gamma, &terminal_states, branches)
        .map_err(|e| parse_err(last_line, e.to_string()))?;
    Ok(MdpFile {
        mdp,
        name,
        start,
        episode_cap,
        support,
    })
}

/// Serialises `file` in the format accepted by [`parse_mdp_file`].
pub fn write_mdp_file(file: &MdpFile) -> String {
    let mdp = &file.mdp;
    let mut out = String::new();
    if let Some(name) = &file.name {
        let _ = writeln!(out, "name {name}");
    }
    let _ = writeln!(out, "n_states {}", mdp.n_states());
    let _ = writeln!(out, "n_actions {}", mdp.n_actions());
    let _ = writeln!(out, "gamma {}", mdp.gamma());
    let terminals = mdp.terminal_states();
    if !terminals.is_empty() {
        let list: Vec<String> = terminals.iter().map(usize::to_string).collect();
        let _ = writeln!(out, "terminal {}", list.join(" "));
    }
    if let Some(s) = file.start {
        let _ = writeln!(out, "start {s}");
    }
    if let Some(c) = file.episode_cap {
        let _ = writeln!(out, "episode_cap {c}");
    }
    if let Some(s) = file.support {
        let _ = writeln!(out, "support {} {} {}", s.z_min(), s.z_max(), s.len());
    }
    for x in 0..mdp.n_states() {
        if mdp.is_terminal(x) {
            continue;
        }
        for a in 0..mdp.n_actions() {
            for b in mdp.branches(x, a) {
                let _ = writeln!(out, "{x} {a} {} {} {}", b.prob, b.reward, b.next_state);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "\
# two-step toy
name toy
n_states 3
n_actions 2
gamma 0.9
terminal 2
start 0
episode_cap 20
support -1 11 13
0 0 1.0 0 1
0 1 0.5 10 2
0 1 0.5 0 2
1 0 1 1 2
1 1 1 0 0
";

    #[test]
    fn parses_sample() {
        let f = parse_mdp_file(SAMPLE).unwrap();
        assert_eq!(f.name.as_deref(), Some("toy"));
        assert_eq!(f.start, Some(0));
        assert_eq!(f.episode_cap, Some(20));
        assert_eq!(f.support, Some(Support::new(-1.0, 11.0, 13).unwrap()));
        assert_eq!(f.mdp.n_states(), 3);
        assert_eq!(f.mdp.branches(0, 1).len(), 2);
        assert!(f.mdp.is_terminal(2));
    }

    #[test]
    fn round_trips() {
        let f = parse_mdp_file(SAMPLE).unwrap();
        let again = parse_mdp_file(&write_mdp_file(&f)).unwrap();
        assert_eq!(f, again);
    }

    fn line_of(text: &str) -> usize {
        match parse_mdp_file(text) {
            Err(Error::Parse { line, .. }) => line,
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn errors_carry_line_numbers() {
        assert_eq!(line_of("n_states 1\nn_actions 1\ngamma 0.5\n0 0 1.0 0\n"), 4);
        assert_eq!(line_of("n_states 1\nn_actions 1\ngamma 0.5\n0 0 1.0 0 7\n"), 4);
        assert_eq!(line_of("n_states 1\nbogus 3\n"), 2);
        assert_eq!(
            line_of("n_states 2\nn_actions 1\ngamma 0.5\n\n1 0 1 0 1\n0 0 0.4 0 1\n0 0 0.4 0 0\n"),
            6
        );
        assert_eq!(line_of("n_states 1\nn_actions 1\ngamma 0.5\nterminal 4\n"), 4);
        assert_eq!(line_of("n_states 2\nn_actions 1\ngamma x\n"), 3);
    }

    #[test]
    fn missing_rows_are_rejected() {
        let text = "n_states 2\nn_actions 1\ngamma 0.5\n0 0 1 0 1\n";
        assert!(parse_mdp_file(text).is_err());
        let with_terminal = "n_states 2\nn_actions 1\ngamma 0.5\nterminal 1\n0 0 1 0 1\n";
        assert!(parse_mdp_file(with_terminal).is_ok());
    }
}
