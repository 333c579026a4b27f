//! Group performance functions of the form `<u, rho> / <v, rho>` with
//! `rho = (tpr, fpr, 1)`, their built-in coefficient tables, the linear loss,
//! and pairwise disparity reports.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::GroupStats;
use crate::roc::RatePoint;

pub const DEFAULT_EPSILON: f64 = 1e-7;

/// Solver round-off allowed below the denominator margin.
const MARGIN_SLACK: f64 = 1e-12;

const LINEAR_V: [f64; 3] = [0.0, 0.0, 1.0];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConstraintError {
    #[error("unknown metric `{0}`")]
    UnknownMetric(String),
    #[error("tolerance {0} is outside [0, 1]")]
    BadDelta(f64),
    #[error("denominator margin {0} must be positive")]
    BadEpsilon(f64),
    #[error("{metric}: group {group} denominator {value} is below margin {epsilon}")]
    Denominator {
        metric: Metric,
        group: usize,
        value: f64,
        epsilon: f64,
    },
    #[error("coefficient vectors cover {u} / {v} groups, expected {expected}")]
    GroupMismatch { u: usize, v: usize, expected: usize },
    #[error("linear kind requires v = (0, 0, 1) for every group")]
    KindMismatch,
    #[error("non-finite coefficient")]
    NonFinite,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintKind {
    Linear,
    LinearFractional,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    /// Demographic parity: selection rate.
    Dp,
    /// Equal opportunity: TPR.
    Eopp,
    /// Predictive equality: FPR.
    Peq,
    /// Predictive parity: PPV.
    Pp,
    /// False omission rate.
    For,
    /// Accuracy parity.
    Acc,
    Custom,
}

impl Metric {
    pub const REPORTED: [Metric; 5] = [Metric::Dp, Metric::Eopp, Metric::Peq, Metric::Pp, Metric::For];

    pub fn name(&self) -> &'static str {
        match self {
            Metric::Dp => "dp",
            Metric::Eopp => "eopp",
            Metric::Peq => "peq",
            Metric::Pp => "pp",
            Metric::For => "for",
            Metric::Acc => "acc",
            Metric::Custom => "custom",
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Metric::Dp => "DP",
            Metric::Eopp => "EOpp",
            Metric::Peq => "PEq",
            Metric::Pp => "PP",
            Metric::For => "FOR",
            Metric::Acc => "Acc",
            Metric::Custom => "Custom",
        }
    }
}

impl std::fmt::Display for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

impl std::str::FromStr for Metric {
    type Err = ConstraintError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "dp" => Metric::Dp,
            "eopp" => Metric::Eopp,
            "peq" => Metric::Peq,
            "pp" => Metric::Pp,
            "for" => Metric::For,
            "acc" => Metric::Acc,
            _ => return Err(ConstraintError::UnknownMetric(s.to_string())),
        })
    }
}

/// One fairness constraint: per-group coefficient vectors plus tolerance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintSpec {
    pub kind: ConstraintKind,
    pub metric: Metric,
    pub u: Vec<[f64; 3]>,
    pub v: Vec<[f64; 3]>,
    pub delta: f64,
    pub epsilon: f64,
}

fn dot(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn check_delta(delta: f64) -> Result<(), ConstraintError> {
    if (0.0..=1.0).contains(&delta) {
        Ok(())
    } else {
        Err(ConstraintError::BadDelta(delta))
    }
}

impl ConstraintSpec {
    /// Table coefficients with plug-in prevalences from `stats`.
    pub fn builtin(
        metric: Metric,
        stats: &GroupStats,
        delta: f64,
        epsilon: f64,
    ) -> Result<Self, ConstraintError> {
        check_delta(delta)?;
        if !(epsilon > 0.0) {
            return Err(ConstraintError::BadEpsilon(epsilon));
        }
        let pis = stats.prevalences();
        let (kind, u, v): (ConstraintKind, Vec<[f64; 3]>, Vec<[f64; 3]>) = match metric {
            Metric::Dp => (
                ConstraintKind::Linear,
                pis.iter().map(|&pi| [pi, 1.0 - pi, 0.0]).collect(),
                vec![LINEAR_V; pis.len()],
            ),
            Metric::Eopp => (
                ConstraintKind::Linear,
                vec![[1.0, 0.0, 0.0]; pis.len()],
                vec![LINEAR_V; pis.len()],
            ),
            Metric::Peq => (
                ConstraintKind::Linear,
                vec![[0.0, 1.0, 0.0]; pis.len()],
                vec![LINEAR_V; pis.len()],
            ),
            Metric::Pp => (
                ConstraintKind::LinearFractional,
                pis.iter().map(|&pi| [pi, 0.0, 0.0]).collect(),
                pis.iter().map(|&pi| [pi, 1.0 - pi, 0.0]).collect(),
            ),
            Metric::For => (
                ConstraintKind::LinearFractional,
                pis.iter().map(|&pi| [-pi, 0.0, pi]).collect(),
                pis.iter().map(|&pi| [-pi, -(1.0 - pi), 1.0]).collect(),
            ),
            Metric::Acc => (
                ConstraintKind::Linear,
                pis.iter().map(|&pi| [pi, -(1.0 - pi), 1.0 - pi]).collect(),
                vec![LINEAR_V; pis.len()],
            ),
            Metric::Custom => return Err(ConstraintError::UnknownMetric("custom".into())),
        };
        Ok(Self {
            kind,
            metric,
            u,
            v,
            delta,
            epsilon,
        })
    }

    /// Raw coefficients. The kind must agree with `v`: linear exactly when every `v` is `(0, 0, 1)`.
    pub fn custom(
        kind: ConstraintKind,
        u: Vec<[f64; 3]>,
        v: Vec<[f64; 3]>,
        delta: f64,
        epsilon: f64,
    ) -> Result<Self, ConstraintError> {
        check_delta(delta)?;
        if !(epsilon > 0.0) {
            return Err(ConstraintError::BadEpsilon(epsilon));
        }
        if u.len() != v.len() {
            return Err(ConstraintError::GroupMismatch {
                u: u.len(),
                v: v.len(),
                expected: u.len(),
            });
        }
        if u.iter().chain(&v).flatten().any(|x| !x.is_finite()) {
            return Err(ConstraintError::NonFinite);
        }
        let all_linear_v = v.iter().all(|vv| *vv == LINEAR_V);
        if (kind == ConstraintKind::Linear) != all_linear_v {
            return Err(ConstraintError::KindMismatch);
        }
        Ok(Self {
            kind,
            metric: Metric::Custom,
            u,
            v,
            delta,
            epsilon,
        })
    }

    pub fn group_count(&self) -> usize {
        self.u.len()
    }

    pub fn is_linear(&self) -> bool {
        self.kind == ConstraintKind::Linear
    }

    /// Copy with tolerance `min(alpha * delta, 1)`.
    pub fn scaled(&self, alpha: f64) -> Self {
        Self {
            delta: (alpha * self.delta).min(1.0),
            ..self.clone()
        }
    }

    pub fn numerator(&self, group: usize, rate: RatePoint) -> f64 {
        dot(&self.u[group], &rate.lifted())
    }

    pub fn denominator(&self, group: usize, rate: RatePoint) -> f64 {
        dot(&self.v[group], &rate.lifted())
    }

    /// `G_a(rho)`. Linear kinds return the numerator without dividing.
    pub fn evaluate(&self, group: usize, rate: RatePoint) -> Result<f64, ConstraintError> {
        let num = self.numerator(group, rate);
        if self.is_linear() {
            return Ok(num);
        }
        let den = self.denominator(group, rate);
        if !(den > 0.0 && den >= self.epsilon - MARGIN_SLACK) {
            return Err(ConstraintError::Denominator {
                metric: self.metric,
                group,
                value: den,
                epsilon: self.epsilon,
            });
        }
        Ok(num / den)
    }
}

/// The equalized-odds pair {EOpp, PEq} at a shared tolerance.
pub fn equalized_odds(
    stats: &GroupStats,
    delta_eopp: f64,
    delta_peq: f64,
) -> Result<[ConstraintSpec; 2], ConstraintError> {
    let delta = delta_eopp.max(delta_peq);
    Ok([
        ConstraintSpec::builtin(Metric::Eopp, stats, delta, DEFAULT_EPSILON)?,
        ConstraintSpec::builtin(Metric::Peq, stats, delta, DEFAULT_EPSILON)?,
    ])
}

/// Linear loss coefficients `gamma_a`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub gamma: Vec<[f64; 3]>,
}

impl LossSpec {
    /// Misclassification rate `sum_a p_a [pi_a (1 - tpr_a) + (1 - pi_a) fpr_a]`.
    pub fn misclassification(stats: &GroupStats) -> Self {
        let gamma = (0..stats.group_count())
            .map(|a| {
                let (p, pi) = (stats.proportion(a), stats.prevalence(a));
                [-p * pi, p * (1.0 - pi), p * pi]
            })
            .collect();
        Self { gamma }
    }

    pub fn group_term(&self, group: usize, rate: RatePoint) -> f64 {
        dot(&self.gamma[group], &rate.lifted())
    }

    pub fn loss(&self, rates: &[RatePoint]) -> f64 {
        rates
            .iter()
            .enumerate()
            .map(|(a, r)| self.group_term(a, *r))
            .sum()
    }
}

/// Max pairwise gap of one metric plus the per-group values behind it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricDisparity {
    pub metric: Metric,
    pub delta: f64,
    pub values: Vec<f64>,
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisparityReport {
    pub metrics: Vec<MetricDisparity>,
}

impl DisparityReport {
    pub fn gap(&self, metric: Metric) -> Option<f64> {
        self.metrics.iter().find(|m| m.metric == metric).map(|m| m.gap)
    }
}

pub fn max_gap(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    hi - lo
}

pub fn disparities(specs: &[ConstraintSpec], rates: &[RatePoint]) -> Result<DisparityReport, ConstraintError> {
    let metrics = specs
        .iter()
        .map(|spec| {
            let values = rates
                .iter()
                .enumerate()
                .map(|(a, r)| spec.evaluate(a, *r))
                .collect::<Result<Vec<_>, _>>()?;
            Ok(MetricDisparity {
                metric: spec.metric,
                delta: spec.delta,
                gap: max_gap(&values),
                values,
            })
        })
        .collect::<Result<Vec<_>, ConstraintError>>()?;
    Ok(DisparityReport { metrics })
}
