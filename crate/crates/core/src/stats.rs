//! Aggregate statistics over run reports: grouped summaries, the
//! dataset-vs-task imbalance ordering verdict, and report emitters
//! (Markdown table, plot-data CSV).

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::harness::{
    mean_and_population_std, RunReport, COND_BALANCED, COND_COMBINED, COND_DATASET, COND_TASK,
};

/// Group summary over all seeds of one (learner, condition) pair.
/// Per-episode accuracies are pooled across seeds; `std` is the population
/// convention (divide by n), `ci95 = 1.96 * std / sqrt(n)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub learner: String,
    pub condition: String,
    pub n: usize,
    pub mean: f64,
    pub std: f64,
    pub ci95: f64,
    /// Accuracy-point difference to the learner's balanced condition (x100).
    pub delta_vs_balanced: f64,
}

/// Group reports by (learner, condition) and attach deltas to the balanced
/// condition. Reports lacking per-episode accuracies (e.g. parsed from CSV)
/// contribute their mean as a single observation.
pub fn summarize(reports: &[RunReport]) -> Result<Vec<Summary>> {
    if reports.is_empty() {
        return Err(Error::InvalidInput("no reports to summarize".into()));
    }
    let mut groups: BTreeMap<(String, String), Vec<f64>> = BTreeMap::new();
    for r in reports {
        let accs = groups.entry((r.learner.clone(), r.condition.clone())).or_default();
        if r.episode_acc.is_empty() {
            accs.push(r.mean_acc);
        } else {
            accs.extend_from_slice(&r.episode_acc);
        }
    }

    let mut balanced_mean: BTreeMap<String, f64> = BTreeMap::new();
    for ((learner, condition), accs) in &groups {
        if condition == COND_BALANCED {
            balanced_mean.insert(learner.clone(), mean_and_population_std(accs).0);
        }
    }

    groups
        .into_iter()
        .map(|((learner, condition), accs)| {
            let (mean, std) = mean_and_population_std(&accs);
            let n = accs.len();
            let ci95 = 1.96 * std / (n as f64).sqrt();
            let delta = if condition == COND_BALANCED {
                0.0
            } else {
                let bal = balanced_mean.get(&learner).ok_or_else(|| {
                    Error::InvalidInput(format!("learner {learner} has no balanced condition"))
                })?;
                (mean - bal) * 100.0
            };
            Ok(Summary { learner, condition, n, mean, std, ci95, delta_vs_balanced: delta })
        })
        .collect()
}

/// Verdict on the headline ordering: task-level imbalance hurts more than
/// dataset-level imbalance, whose drop stays within a tolerance.
#[derive(Debug, Clone, PartialEq)]
pub struct OrderingVerdict {
    /// Mean delta to balanced per condition, accuracy points, averaged over
    /// learners.
    pub deltas: Vec<(String, f64)>,
    /// Task-imbalance drop strictly exceeds the dataset-imbalance drop.
    pub task_exceeds_dataset: bool,
    /// Dataset-imbalance delta is no worse than `-threshold` points.
    pub dataset_within_threshold: bool,
    /// Combined delta is at least as negative as the task delta
    /// (compounding); None when no combined condition was run.
    pub combined_compounds: Option<bool>,
    /// `task_exceeds_dataset && dataset_within_threshold`.
    pub holds: bool,
}

/// Default tolerance for the dataset-imbalance drop, in accuracy points.
pub const DEFAULT_DATASET_DROP_TOLERANCE: f64 = 3.0;

pub fn ordering_check(summaries: &[Summary], threshold_points: f64) -> Result<OrderingVerdict> {
    let mut per_condition: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for s in summaries {
        per_condition.entry(&s.condition).or_default().push(s.delta_vs_balanced);
    }
    let mean_delta = |name: &str| -> Result<f64> {
        per_condition
            .get(name)
            .map(|v| v.iter().sum::<f64>() / v.len() as f64)
            .ok_or_else(|| Error::InvalidInput(format!("missing condition {name:?}")))
    };
    let d_dataset = mean_delta(COND_DATASET)?;
    let d_task = mean_delta(COND_TASK)?;
    mean_delta(COND_BALANCED)?;

    // Deltas are signed (negative = worse than balanced): a larger drop is a
    // more negative delta.
    let task_exceeds_dataset = d_task < d_dataset;
    let dataset_within_threshold = d_dataset >= -threshold_points;
    let combined_compounds = per_condition
        .get(COND_COMBINED)
        .map(|v| v.iter().sum::<f64>() / v.len() as f64)
        .map(|d_combined| d_combined <= d_task);

    let mut deltas: Vec<(String, f64)> = per_condition
        .iter()
        .map(|(c, v)| (c.to_string(), v.iter().sum::<f64>() / v.len() as f64))
        .collect();
    deltas.sort_by(|a, b| a.0.cmp(&b.0));

    Ok(OrderingVerdict {
        deltas,
        task_exceeds_dataset,
        dataset_within_threshold,
        combined_compounds,
        holds: task_exceeds_dataset && dataset_within_threshold,
    })
}

fn condition_order(summaries: &[Summary]) -> Vec<String> {
    let mut order = Vec::new();
    if summaries.iter().any(|s| s.condition == COND_BALANCED) {
        order.push(COND_BALANCED.to_string());
    }
    for s in summaries {
        if s.condition != COND_BALANCED && !order.contains(&s.condition) {
            order.push(s.condition.clone());
        }
    }
    order
}

/// Markdown table with conditions as columns, learners as rows, cells
/// `mean ±ci` in percent, and a final average-difference-to-balanced row.
pub fn markdown_table(summaries: &[Summary]) -> String {
    let conditions = condition_order(summaries);
    let mut learners: Vec<String> = summaries.iter().map(|s| s.learner.clone()).collect();
    learners.sort();
    learners.dedup();

    let cell = |learner: &str, condition: &str| -> String {
        summaries
            .iter()
            .find(|s| s.learner == learner && s.condition == condition)
            .map(|s| format!("{:.2} ±{:.2}", s.mean * 100.0, s.ci95 * 100.0))
            .unwrap_or_else(|| "-".to_string())
    };

    let mut out = String::new();
    let _ = write!(out, "| learner |");
    for c in &conditions {
        let _ = write!(out, " {c} |");
    }
    let _ = writeln!(out);
    let _ = write!(out, "|---|");
    for _ in &conditions {
        let _ = write!(out, "---|");
    }
    let _ = writeln!(out);
    for l in &learners {
        let _ = write!(out, "| {l} |");
        for c in &conditions {
            let _ = write!(out, " {} |", cell(l, c));
        }
        let _ = writeln!(out);
    }
    let _ = write!(out, "| avg diff to balanced |");
    for c in &conditions {
        if c == COND_BALANCED {
            let _ = write!(out, " - |");
        } else {
            let ds: Vec<f64> = summaries
                .iter()
                .filter(|s| &s.condition == c)
                .map(|s| s.delta_vs_balanced)
                .collect();
            if ds.is_empty() {
                let _ = write!(out, " - |");
            } else {
                let _ = write!(out, " {:+.2} |", ds.iter().sum::<f64>() / ds.len() as f64);
            }
        }
    }
    let _ = writeln!(out);
    out
}

/// CSV of (condition, learner, delta, ci) pairs for bar-style plots.
pub fn plot_data_csv(summaries: &[Summary]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "condition,learner,delta_points,ci95_points");
    let conditions = condition_order(summaries);
    for c in &conditions {
        for s in summaries.iter().filter(|s| &s.condition == c) {
            let _ = writeln!(
                out,
                "{},{},{:.6},{:.6}",
                s.condition,
                s.learner,
                s.delta_vs_balanced,
                s.ci95 * 100.0
            );
        }
    }
    out
}
