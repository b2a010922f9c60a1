//! Post-processing of metrics tables: relative sample performance (§4.2),
//! best-score summaries with confidence intervals (Table 1), and optional
//! moving-average smoothing.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use super::csv_io::{AgentLabel, MetricsTable};
use crate::error::{Error, Result};

/// Which rows of a table form a score curve.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Selector {
    /// The average joint policy.
    Joint,
    /// One agent.
    Agent(usize),
    /// The mean over all agents.
    Agents,
}

impl FromStr for Selector {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "joint" => Ok(Selector::Joint),
            "agents" => Ok(Selector::Agents),
            other => other.parse().map(Selector::Agent).map_err(|_| {
                Error::InvalidConfig(format!(
                    "selector must be \"joint\", \"agents\" or an agent index, got {other:?}"
                ))
            }),
        }
    }
}

impl Selector {
    fn matches(&self, label: AgentLabel) -> bool {
        match (self, label) {
            (Selector::Joint, AgentLabel::Joint) => true,
            (Selector::Agent(i), AgentLabel::Agent(j)) => *i == j,
            (Selector::Agents, AgentLabel::Agent(_)) => true,
            _ => false,
        }
    }
}

/// Mean `mean_return` per `total_samples` over every selected row (all
/// seeds, and all agents for [`Selector::Agents`]), sorted by samples.
pub fn score_curve(table: &MetricsTable, selector: Selector) -> Result<Vec<(u64, f64)>> {
    let mut acc: BTreeMap<u64, (f64, usize)> = BTreeMap::new();
    for row in table.rows.iter().filter(|r| selector.matches(r.agent)) {
        let e = acc.entry(row.total_samples).or_insert((0.0, 0));
        e.0 += row.mean_return;
        e.1 += 1;
    }
    if acc.is_empty() {
        return Err(Error::InvalidConfig(format!("no rows match selector {selector:?}")));
    }
    Ok(acc.into_iter().map(|(x, (s, n))| (x, s / n as f64)).collect())
}

/// Trailing moving average over `window` points (the first points average
/// over what is available). `window ≤ 1` returns the input.
pub fn moving_average(curve: &[(u64, f64)], window: usize) -> Vec<(u64, f64)> {
    if window <= 1 {
        return curve.to_vec();
    }
    curve
        .iter()
        .enumerate()
        .map(|(i, &(x, _))| {
            let from = (i + 1).saturating_sub(window);
            let slice = &curve[from..=i];
            (x, slice.iter().map(|p| p.1).sum::<f64>() / slice.len() as f64)
        })
        .collect()
}

/// Last observation at or before `x` (the curve must start at or before `x`).
fn locf(curve: &[(u64, f64)], x: u64) -> f64 {
    let idx = curve.partition_point(|p| p.0 <= x);
    curve[idx - 1].1
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonPoint {
    pub total_samples: u64,
    pub score_a: f64,
    pub score_b: f64,
    /// `100 · a / b`; `None` when `b = 0 ≠ a`.
    pub ratio_pct: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonReport {
    /// How curves are aligned between evaluation points.
    pub alignment: &'static str,
    pub env: String,
    /// Largest total-sample count compared.
    pub horizon: u64,
    pub points: Vec<ComparisonPoint>,
    /// Mean of the defined ratios.
    pub mean_ratio_pct: f64,
}

impl ComparisonReport {
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "# relative-sample-performance alignment={} env={} horizon={} mean_ratio_pct={}\n",
            self.alignment, self.env, self.horizon, self.mean_ratio_pct
        );
        out.push_str("total_samples,score_a,score_b,ratio_pct\n");
        for p in &self.points {
            let ratio = p.ratio_pct.map_or(String::new(), |r| r.to_string());
            let _ = writeln!(out, "{},{},{},{}", p.total_samples, p.score_a, p.score_b, ratio);
        }
        out
    }
}

/// Options for [`relative_sample_performance`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompareOptions {
    pub selector_a: Selector,
    pub selector_b: Selector,
    /// Only compare up to this many total samples.
    pub horizon: Option<u64>,
    /// Moving-average window in evaluation points (1 = raw data).
    pub smoothing_window: usize,
}

impl Default for CompareOptions {
    fn default() -> Self {
        Self {
            selector_a: Selector::Joint,
            selector_b: Selector::Agents,
            horizon: None,
            smoothing_window: 1,
        }
    }
}

/// Ratio of mean evaluation scores of run `a` to run `b` as a function of
/// total environment samples, in percent of `b`. Curves are aligned on the
/// union of both runs' sample counts with last-observation-carried-forward,
/// over the range where both runs have data.
pub fn relative_sample_performance(
    a: &MetricsTable,
    b: &MetricsTable,
    opts: &CompareOptions,
) -> Result<ComparisonReport> {
    let env = match (a.meta("env"), b.meta("env")) {
        (Some(x), Some(y)) if x == y => x.to_string(),
        (x, y) => {
            return Err(Error::InvalidConfig(format!(
                "runs are on different environments ({x:?} vs {y:?})"
            )))
        }
    };
    let ca = moving_average(&score_curve(a, opts.selector_a)?, opts.smoothing_window);
    let cb = moving_average(&score_curve(b, opts.selector_b)?, opts.smoothing_window);
    let start = ca[0].0.max(cb[0].0);
    let mut end = ca[ca.len() - 1].0.min(cb[cb.len() - 1].0);
    if let Some(h) = opts.horizon {
        end = end.min(h);
    }
    if start > end {
        return Err(Error::InvalidConfig(format!(
            "curves do not overlap on the total-samples axis ({start} > {end})"
        )));
    }
    let mut grid: Vec<u64> = ca
        .iter()
        .chain(&cb)
        .map(|p| p.0)
        .filter(|x| (start..=end).contains(x))
        .collect();
    grid.sort_unstable();
    grid.dedup();
    let points: Vec<ComparisonPoint> = grid
        .into_iter()
        .map(|x| {
            let (sa, sb) = (locf(&ca, x), locf(&cb, x));
            let ratio_pct = if sa == sb {
                Some(100.0)
            } else if sb == 0.0 {
                None
            } else {
                Some(100.0 * sa / sb)
            };
            ComparisonPoint {
                total_samples: x,
                score_a: sa,
                score_b: sb,
                ratio_pct,
            }
        })
        .collect();
    let defined: Vec<f64> = points.iter().filter_map(|p| p.ratio_pct).collect();
    if defined.is_empty() {
        return Err(Error::InvalidConfig("no comparable points (zero baseline scores)".into()));
    }
    Ok(ComparisonReport {
        alignment: "locf",
        env,
        horizon: end,
        mean_ratio_pct: defined.iter().sum::<f64>() / defined.len() as f64,
        points,
    })
}

/// Mean and 95% half-width `1.96 · s/√n` (sample standard deviation);
/// no interval for a single value.
pub fn confidence_interval(values: &[f64]) -> (f64, Option<f64>) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, None);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, Some(1.96 * var.sqrt() / n.sqrt()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub label: String,
    /// `joint` or `agents`.
    pub group: &'static str,
    pub n_seeds: usize,
    pub mean: f64,
    pub half_width: Option<f64>,
    pub per_seed: Vec<f64>,
}

/// Final best score per seed: for `Joint` the joint policy's best, for
/// `Agents` the mean over agents of each agent's best.
pub fn best_scores_per_seed(table: &MetricsTable, group: Selector) -> BTreeMap<u64, f64> {
    // (seed, agent) -> (step, best) at the latest step
    let mut last: BTreeMap<(u64, AgentLabel), (u64, f64)> = BTreeMap::new();
    for row in table.rows.iter().filter(|r| group.matches(r.agent)) {
        let e = last.entry((row.seed, row.agent)).or_insert((row.step, row.best_so_far));
        if row.step >= e.0 {
            *e = (row.step, row.best_so_far);
        }
    }
    let mut per_seed: BTreeMap<u64, (f64, usize)> = BTreeMap::new();
    for ((seed, _), (_, best)) in last {
        let e = per_seed.entry(seed).or_insert((0.0, 0));
        e.0 += best;
        e.1 += 1;
    }
    per_seed.into_iter().map(|(s, (t, n))| (s, t / n as f64)).collect()
}

/// Best-score table (Table 1 layout) for labelled runs.
pub fn summarize(runs: &[(String, MetricsTable)]) -> Vec<SummaryRow> {
    let mut out = Vec::new();
    for (label, table) in runs {
        for (group, selector) in [("joint", Selector::Joint), ("agents", Selector::Agents)] {
            let per_seed: Vec<f64> = best_scores_per_seed(table, selector).into_values().collect();
            if per_seed.is_empty() {
                continue;
            }
            let (mean, half_width) = confidence_interval(&per_seed);
            out.push(SummaryRow {
                label: label.clone(),
                group,
                n_seeds: per_seed.len(),
                mean,
                half_width,
                per_seed,
            });
        }
    }
    out
}

pub fn summary_to_text(rows: &[SummaryRow]) -> String {
    let mut out = String::from("run,group,n_seeds,mean_best,ci95_half_width\n");
    for r in rows {
        let hw = r.half_width.map_or(String::new(), |h| h.to_string());
        let _ = writeln!(out, "{},{},{},{},{}", r.label, r.group, r.n_seeds, r.mean, hw);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::csv_io::{Metadata, MetricRow};

    fn table(env: &str, rows: Vec<(u64, u64, u64, AgentLabel, f64)>) -> MetricsTable {
        let mut metadata = Metadata::new();
        metadata.insert("env".into(), env.into());
        let mut best: BTreeMap<(u64, AgentLabel), f64> = BTreeMap::new();
        let rows = rows
            .into_iter()
            .map(|(seed, step, total_samples, agent, r)| {
                let b = best.entry((seed, agent)).or_insert(f64::NEG_INFINITY);
                *b = b.max(r);
                MetricRow {
                    seed,
                    step,
                    total_samples,
                    agent,
                    mean_return: r,
                    best_so_far: *b,
                    snapshot_version: 0,
                }
            })
            .collect();
        MetricsTable { metadata, rows }
    }

    #[test]
    fn locf_alignment() {
        let c = vec![(10, 1.0), (20, 2.0)];
        assert_eq!(locf(&c, 10), 1.0);
        assert_eq!(locf(&c, 19), 1.0);
        assert_eq!(locf(&c, 25), 2.0);
    }

    #[test]
    fn mismatched_envs_are_rejected() {
        let a = table("chain", vec![(0, 1, 1, AgentLabel::Joint, 1.0)]);
        let b = table("cliff", vec![(0, 1, 1, AgentLabel::Joint, 1.0)]);
        assert!(relative_sample_performance(&a, &b, &CompareOptions::default()).is_err());
    }

    #[test]
    fn ratio_uses_samples_axis() {
        // b: one agent scoring t at step t; a: the same curve stretched 2x in samples
        let b = table("e", (1..=4).map(|t| (0, t, t, AgentLabel::Agent(0), t as f64)).collect());
        let a = table("e", (1..=4).map(|t| (0, t, 2 * t, AgentLabel::Joint, t as f64)).collect());
        let opts = CompareOptions {
            selector_a: Selector::Joint,
            selector_b: Selector::Agent(0),
            ..CompareOptions::default()
        };
        let rep = relative_sample_performance(&a, &b, &opts).unwrap();
        let xs: Vec<u64> = rep.points.iter().map(|p| p.total_samples).collect();
        assert_eq!(xs, vec![2, 3, 4]);
        let ratios: Vec<f64> = rep.points.iter().map(|p| p.ratio_pct.unwrap()).collect();
        assert_eq!(ratios, vec![50.0, 100.0 / 3.0, 50.0]);
        assert!(rep.to_text().contains("alignment=locf"));
    }

    #[test]
    fn moving_average_is_trailing() {
        let c = vec![(1, 1.0), (2, 3.0), (3, 5.0)];
        assert_eq!(moving_average(&c, 2), vec![(1, 1.0), (2, 2.0), (3, 4.0)]);
        assert_eq!(moving_average(&c, 1), c);
    }

    #[test]
    fn summary_uses_final_best() {
        let t = table(
            "e",
            vec![
                (0, 1, 1, AgentLabel::Agent(0), 5.0),
                (0, 2, 2, AgentLabel::Agent(0), 1.0),
                (0, 1, 1, AgentLabel::Agent(1), 3.0),
                (0, 2, 2, AgentLabel::Agent(1), 4.0),
                (0, 2, 2, AgentLabel::Joint, 2.0),
            ],
        );
        let rows = summarize(&[("r".into(), t)]);
        assert_eq!(rows.len(), 2);
        assert_eq!((rows[0].group, rows[0].mean, rows[0].half_width), ("joint", 2.0, None));
        assert_eq!((rows[1].group, rows[1].mean), ("agents", 4.5));
    }
}
