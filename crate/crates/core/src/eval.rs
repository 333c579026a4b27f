//! Accuracy, disparity and intervention metrics of a classifier on a dataset,
//! plus the test-set oracle.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constraints::{ConstraintSpec, LossSpec, Metric};
use crate::construct::{predict, ConstructError, MechanismParams, Recipe};
use crate::data::Dataset;
use crate::region::{feasibility_guard, GridConfig, GuardConfig, GuardResult, RegionError};
use crate::roc::{build_hulls, RocError};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl Confusion {
    pub fn add(&mut self, predicted: bool, label: bool) {
        match (predicted, label) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, false) => self.tn += 1,
            (false, true) => self.fn_ += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    fn ratio(num: u64, den: u64) -> Option<f64> {
        (den > 0).then(|| num as f64 / den as f64)
    }

    /// Metric value from counts; `None` when its denominator is empty.
    pub fn metric(&self, metric: Metric) -> Option<f64> {
        match metric {
            Metric::Dp => Self::ratio(self.tp + self.fp, self.total()),
            Metric::Eopp => Self::ratio(self.tp, self.tp + self.fn_),
            Metric::Peq => Self::ratio(self.fp, self.fp + self.tn),
            Metric::Pp => Self::ratio(self.tp, self.tp + self.fp),
            Metric::For => Self::ratio(self.fn_, self.fn_ + self.tn),
            Metric::Acc => Self::ratio(self.tp + self.tn, self.total()),
            Metric::Custom => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupEval {
    pub group: usize,
    pub name: String,
    pub confusion: Confusion,
    /// Values of the reported metrics in `Metric::REPORTED` order.
    pub metrics: Vec<Option<f64>>,
    pub expected_intervention: f64,
    pub sampled_intervention: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricGap {
    pub metric: Metric,
    /// Max minus min over groups with a defined value.
    pub gap: Option<f64>,
    /// Groups whose value is undefined (empty denominator).
    pub undefined_groups: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub samples: usize,
    pub accuracy: f64,
    pub gaps: Vec<MetricGap>,
    /// Mean over samples of the exact intervention probability.
    pub expected_intervention: f64,
    /// Fraction of samples whose single randomized draw differed from the base draw.
    pub sampled_intervention: f64,
    /// Unweighted mean of per-group sampled intervention rates.
    pub group_mean_intervention: f64,
    pub groups: Vec<GroupEval>,
}

impl EvalReport {
    pub fn gap(&self, metric: Metric) -> Option<f64> {
        self.gaps.iter().find(|g| g.metric == metric).and_then(|g| g.gap)
    }
}

/// Intervention probability for a base selection probability `q`.
fn intervention_probability(params: &MechanismParams, q: f64) -> f64 {
    match *params {
        MechanismParams::AntiDiagonal { lambda, p } => lambda * (q * (1.0 - p) + (1.0 - q) * p),
        MechanismParams::LabelFlipping { p0, p1 } => q * (1.0 - p1) + (1.0 - q) * p0,
    }
}

/// Applies `recipe` once to every row of `data` with the per-row streams of `seed`.
pub fn evaluate_recipe(recipe: &Recipe, data: &Dataset, seed: u64) -> Result<EvalReport, ConstructError> {
    let groups = data.group_count();
    if recipe.groups.len() < groups {
        return Err(ConstructError::UnknownGroup {
            group: groups - 1,
            count: recipe.groups.len(),
        });
    }
    let rows: Vec<(bool, bool, f64)> = data
        .samples()
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let pred = predict(recipe, s, seed, i as u64)?;
            let g = recipe.group(s.group)?;
            let expected = intervention_probability(&g.params, g.base_probability(s.score));
            Ok((pred.label, pred.base, expected))
        })
        .collect::<Result<_, ConstructError>>()?;

    let mut confusion = vec![Confusion::default(); groups];
    let mut expected = vec![0.0; groups];
    let mut flips = vec![0u64; groups];
    for (s, &(label, base, e)) in data.samples().iter().zip(&rows) {
        confusion[s.group].add(label, s.label);
        expected[s.group] += e;
        flips[s.group] += u64::from(label != base);
    }
    let names = data.group_names();
    let group_evals: Vec<GroupEval> = (0..groups)
        .map(|a| {
            let n = confusion[a].total().max(1) as f64;
            GroupEval {
                group: a,
                name: names.get(a).cloned().unwrap_or_else(|| a.to_string()),
                confusion: confusion[a],
                metrics: Metric::REPORTED.iter().map(|&m| confusion[a].metric(m)).collect(),
                expected_intervention: expected[a] / n,
                sampled_intervention: flips[a] as f64 / n,
            }
        })
        .collect();
    Ok(summarize(data.len(), group_evals, expected.iter().sum(), flips.iter().sum()))
}

fn summarize(samples: usize, groups: Vec<GroupEval>, expected_total: f64, flips_total: u64) -> EvalReport {
    let n = samples.max(1) as f64;
    let correct: u64 = groups.iter().map(|g| g.confusion.tp + g.confusion.tn).sum();
    let gaps = Metric::REPORTED
        .iter()
        .enumerate()
        .map(|(k, &metric)| {
            let defined: Vec<f64> = groups.iter().filter_map(|g| g.metrics[k]).collect();
            let undefined_groups = groups.iter().filter(|g| g.metrics[k].is_none()).map(|g| g.group).collect();
            MetricGap {
                metric,
                gap: (!defined.is_empty()).then(|| crate::constraints::max_gap(&defined)),
                undefined_groups,
            }
        })
        .collect();
    let nonempty: Vec<&GroupEval> = groups.iter().filter(|g| g.confusion.total() > 0).collect();
    let group_mean_intervention = if nonempty.is_empty() {
        0.0
    } else {
        nonempty.iter().map(|g| g.sampled_intervention).sum::<f64>() / nonempty.len() as f64
    };
    EvalReport {
        samples,
        accuracy: correct as f64 / n,
        gaps,
        expected_intervention: expected_total / n,
        sampled_intervention: flips_total as f64 / n,
        group_mean_intervention,
        groups,
    }
}

#[derive(Debug, thiserror::Error)]
pub enum OracleError {
    #[error(transparent)]
    Roc(#[from] RocError),
    #[error(transparent)]
    Region(#[from] RegionError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub guard: GuardResult,
    /// One minus the loss of the oracle target rates.
    pub accuracy: f64,
}

/// Guarded region search on `data` itself (meant for the test split).
pub fn oracle_rates(
    data: &Dataset,
    specs: &[ConstraintSpec],
    loss: &LossSpec,
    grid: &GridConfig,
    guard: &GuardConfig,
) -> Result<OracleReport, OracleError> {
    let hulls = build_hulls(data)?;
    let result = feasibility_guard(&hulls, specs, loss, grid, guard)?;
    Ok(OracleReport {
        accuracy: 1.0 - result.target.objective,
        guard: result,
    })
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.4}"))
}

/// Fixed-width table with columns Acc, DP, EOpp, PEq, PP, FOR, Interv.
pub fn report_table(rows: &[(String, EvalReport)]) -> String {
    let mut out = format!(
        "{:<16} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8}\n",
        "", "Acc", "DP", "EOpp", "PEq", "PP", "FOR", "Interv."
    );
    for (label, r) in rows {
        out.push_str(&format!("{label:<16} {:>8}", format!("{:.4}", r.accuracy)));
        for m in Metric::REPORTED {
            out.push_str(&format!(" {:>8}", cell(r.gap(m))));
        }
        out.push_str(&format!(" {:>8}\n", format!("{:.4}", r.sampled_intervention)));
    }
    out
}
