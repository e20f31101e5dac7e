//! Trial records, per-policy aggregates and their file formats.
//!
//! `trials.csv` has the fixed header [`CSV_HEADER`], one row per policy per
//! trial, ordered by trial then by policy as given. Numbers are written with
//! 17 significant digits.

use std::fmt::Write as _;

use serde::Serialize;

use super::{Policy, TrialResult};

pub const CSV_HEADER: &str = "trial,policy,control_gap,perception_cost,reward";

/// Mean, sample standard deviation and normal-approximation 95% interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        let half = 1.96 * std / n.sqrt();
        Summary {
            mean,
            std,
            ci_low: mean - half,
            ci_high: mean + half,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PolicyAggregate {
    pub policy: String,
    pub trials: usize,
    pub control_gap: Summary,
    pub perception_cost: Summary,
    pub reward: Summary,
}

/// Statistics of the schedule handed to the `optimal` policy.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlanStats {
    pub objective: f64,
    pub lower_bound: f64,
    pub status: String,
    pub nodes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolverStats {
    pub oracle_nodes: usize,
    /// Trials whose oracle search finished with a proof of optimality.
    pub oracle_proven: usize,
    pub oracle_trials: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub plan: Option<PlanStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvaluationReport {
    pub scenario_hash: String,
    pub master_seed: u64,
    pub n_trials: usize,
    pub policies: Vec<String>,
    pub aggregates: Vec<PolicyAggregate>,
    pub solver: SolverStats,
    #[serde(skip)]
    pub trials: Vec<TrialResult>,
}

/// Aggregates per policy name, in order of first appearance.
pub fn aggregate_records(trials: &[TrialResult]) -> Vec<PolicyAggregate> {
    let mut names: Vec<&str> = Vec::new();
    for t in trials {
        if !names.contains(&t.policy.as_str()) {
            names.push(&t.policy);
        }
    }
    names
        .into_iter()
        .map(|name| {
            let mut rows: Vec<&TrialResult> = trials.iter().filter(|t| t.policy == name).collect();
            rows.sort_by_key(|t| t.trial);
            let col = |f: fn(&TrialResult) -> f64| rows.iter().map(|t| f(t)).collect::<Vec<_>>();
            PolicyAggregate {
                policy: name.to_string(),
                trials: rows.len(),
                control_gap: Summary::of(&col(|t| t.control_gap)),
                perception_cost: Summary::of(&col(|t| t.perception_cost)),
                reward: Summary::of(&col(|t| t.reward)),
            }
        })
        .collect()
}

impl EvaluationReport {
    pub(crate) fn new(scenario_hash: String, master_seed: u64, n_trials: usize, policies: &[Policy], mut trials: Vec<TrialResult>) -> Self {
        trials.sort_by_key(|t| t.trial);
        let oracle: Vec<_> = trials.iter().filter_map(|t| t.solve).collect();
        let solver = SolverStats {
            oracle_nodes: oracle.iter().map(|s| s.0).sum(),
            oracle_proven: oracle.iter().filter(|s| s.1).count(),
            oracle_trials: oracle.len(),
            plan: None,
        };
        EvaluationReport {
            scenario_hash,
            master_seed,
            n_trials,
            policies: policies.iter().map(|p| p.name().to_string()).collect(),
            aggregates: aggregate_records(&trials),
            solver,
            trials,
        }
    }

    pub fn aggregate(&self, policy: &str) -> Option<&PolicyAggregate> {
        self.aggregates.iter().find(|a| a.policy == policy)
    }

    fn rewards(&self, policy: &str) -> Vec<(usize, f64)> {
        self.trials.iter().filter(|t| t.policy == policy).map(|t| (t.trial, t.reward)).collect()
    }

    /// Per-trial reward difference `a - b`, summarized.
    pub fn paired_difference(&self, a: &str, b: &str) -> Option<Summary> {
        let (ra, rb) = (self.rewards(a), self.rewards(b));
        if ra.is_empty() || ra.len() != rb.len() {
            return None;
        }
        let diffs: Vec<f64> = ra.iter().zip(&rb).map(|((i, x), (j, y))| {
            debug_assert_eq!(i, j);
            x - y
        }).collect();
        Some(Summary::of(&diffs))
    }

    /// Policies by decreasing mean reward.
    pub fn ordering(&self) -> Vec<(&str, f64)> {
        let mut out: Vec<(&str, f64)> = self.aggregates.iter().map(|a| (a.policy.as_str(), a.reward.mean)).collect();
        out.sort_by(|a, b| b.1.total_cmp(&a.1));
        out
    }

    pub fn ordering_summary(&self) -> String {
        let mut s = String::new();
        for (rank, (name, mean)) in self.ordering().iter().enumerate() {
            let agg = self.aggregate(name).expect("aggregate exists");
            let _ = writeln!(
                s,
                "{}. {name:<10} reward {mean:.6} [{:.6}, {:.6}]  gap {:.6}  perception {:.6}",
                rank + 1,
                agg.reward.ci_low,
                agg.reward.ci_high,
                agg.control_gap.mean,
                agg.perception_cost.mean
            );
        }
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::with_capacity(64 * (self.trials.len() + 1));
        s.push_str(CSV_HEADER);
        s.push('\n');
        for t in &self.trials {
            let _ = writeln!(
                s,
                "{},{},{:.16e},{:.16e},{:.16e}",
                t.trial, t.policy, t.control_gap, t.perception_cost, t.reward
            );
        }
        s
    }

    pub fn summary_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}
