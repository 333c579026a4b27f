//! Group-wise empirical ROC curves and their upper convex hulls.
//!
//! Members of a group are ranked by score (descending) with ties broken by
//! row order. Only ranks that sit on a score boundary are reachable by an
//! inclusive threshold rule `score >= t`, so those are the hull candidates;
//! with distinct scores that is every rank. Hull geometry is computed on the
//! integer (false positive, true positive) counts, so orientation tests are
//! exact.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Dataset, GroupCounts};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RocError {
    #[error("group {group} needs at least one positive and one negative (has {positives} / {negatives})")]
    DegenerateGroup {
        group: usize,
        positives: u64,
        negatives: u64,
    },
    #[error("group {group} is not present (group count {count})")]
    UnknownGroup { group: usize, count: usize },
    #[error("invalid hull: {0}")]
    InvalidHull(String),
}

/// A (TPR, FPR) operating point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatePoint {
    pub tpr: f64,
    pub fpr: f64,
}

impl RatePoint {
    pub fn new(tpr: f64, fpr: f64) -> Self {
        Self { tpr, fpr }
    }

    pub fn fnr(&self) -> f64 {
        1.0 - self.tpr
    }

    /// `(tpr, fpr, 1)`.
    pub fn lifted(&self) -> [f64; 3] {
        [self.tpr, self.fpr, 1.0]
    }
}

/// Inclusive score cut. `AboveAll` is the rule that selects nobody.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Threshold {
    AboveAll,
    AtLeast(f64),
}

impl Threshold {
    pub fn selects(&self, score: f64) -> bool {
        match *self {
            Threshold::AboveAll => false,
            Threshold::AtLeast(t) => score >= t,
        }
    }

    /// True when `self` selects a subset of what `other` selects.
    pub fn is_at_least(&self, other: &Threshold) -> bool {
        match (self, other) {
            (Threshold::AboveAll, _) => true,
            (Threshold::AtLeast(_), Threshold::AboveAll) => false,
            (Threshold::AtLeast(a), Threshold::AtLeast(b)) => a >= b,
        }
    }
}

impl std::fmt::Display for Threshold {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Threshold::AboveAll => write!(f, "above_all"),
            Threshold::AtLeast(t) => write!(f, "{t}"),
        }
    }
}

/// One vertex of a group's upper ROC hull together with the rule that generates it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HullSupport {
    pub threshold: Threshold,
    pub tpr: f64,
    pub fpr: f64,
    pub fnr: f64,
    pub selection_rate: f64,
    pub true_positives: u64,
    pub false_positives: u64,
}

impl HullSupport {
    pub fn rate(&self) -> RatePoint {
        RatePoint::new(self.tpr, self.fpr)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupHull {
    group: usize,
    supports: Vec<HullSupport>,
    lower: Vec<RatePoint>,
    counts: GroupCounts,
}

impl GroupHull {
    pub fn group(&self) -> usize {
        self.group
    }

    /// Upper hull vertices ordered by increasing FPR (decreasing threshold).
    pub fn supports(&self) -> &[HullSupport] {
        &self.supports
    }

    /// Lower hull vertices, left to right. Only used for region membership.
    pub fn lower_vertices(&self) -> &[RatePoint] {
        &self.lower
    }

    pub fn counts(&self) -> GroupCounts {
        self.counts
    }

    pub fn edge_count(&self) -> usize {
        self.supports.len().saturating_sub(1)
    }
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    threshold: Threshold,
    tp: u64,
    fp: u64,
    selected: u64,
}

fn ranked_members(data: &Dataset, group: usize) -> Result<(Vec<(f64, bool)>, GroupCounts), RocError> {
    if group >= data.group_count() {
        return Err(RocError::UnknownGroup {
            group,
            count: data.group_count(),
        });
    }
    let mut members: Vec<(f64, bool)> = data
        .samples()
        .iter()
        .filter(|s| s.group == group)
        .map(|s| (s.score, s.label))
        .collect();
    // stable: equal scores keep row order
    members.sort_by(|a, b| b.0.total_cmp(&a.0));
    let positives = members.iter().filter(|m| m.1).count() as u64;
    let counts = GroupCounts {
        positives,
        negatives: members.len() as u64 - positives,
    };
    if counts.positives == 0 || counts.negatives == 0 {
        return Err(RocError::DegenerateGroup {
            group,
            positives: counts.positives,
            negatives: counts.negatives,
        });
    }
    Ok((members, counts))
}

/// Rate pairs of the rank classifiers `j = 0..=n_a` (predict 1 on the `j` top-ranked members).
pub fn empirical_roc(data: &Dataset, group: usize) -> Result<Vec<RatePoint>, RocError> {
    let (members, counts) = ranked_members(data, group)?;
    let (n1, n0) = (counts.positives as f64, counts.negatives as f64);
    let mut points = Vec::with_capacity(members.len() + 1);
    let (mut tp, mut fp) = (0u64, 0u64);
    points.push(RatePoint::new(0.0, 0.0));
    for &(_, label) in &members {
        if label {
            tp += 1;
        } else {
            fp += 1;
        }
        points.push(RatePoint::new(tp as f64 / n1, fp as f64 / n0));
    }
    Ok(points)
}

fn threshold_candidates(members: &[(f64, bool)]) -> Vec<Candidate> {
    let mut out = vec![Candidate {
        threshold: Threshold::AboveAll,
        tp: 0,
        fp: 0,
        selected: 0,
    }];
    let (mut tp, mut fp) = (0u64, 0u64);
    for (j, &(score, label)) in members.iter().enumerate() {
        if label {
            tp += 1;
        } else {
            fp += 1;
        }
        let boundary = members.get(j + 1).is_none_or(|next| next.0 != score);
        if boundary {
            out.push(Candidate {
                threshold: Threshold::AtLeast(score),
                tp,
                fp,
                selected: (j + 1) as u64,
            });
        }
    }
    out
}

fn cross(o: (i128, i128), a: (i128, i128), b: (i128, i128)) -> i128 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

/// Monotone chain over points sorted by (x, y). `upper` keeps clockwise turns only.
fn chain(points: &[(i128, i128)], upper: bool) -> Vec<usize> {
    let mut stack: Vec<usize> = Vec::new();
    for (i, &p) in points.iter().enumerate() {
        while stack.len() >= 2 {
            let o = points[stack[stack.len() - 2]];
            let a = points[stack[stack.len() - 1]];
            let c = cross(o, a, p);
            if (upper && c >= 0) || (!upper && c <= 0) {
                stack.pop();
            } else {
                break;
            }
        }
        stack.push(i);
    }
    stack
}

/// Upper convex hull of the threshold-reachable ROC points of `group`.
pub fn build_hull(data: &Dataset, group: usize) -> Result<GroupHull, RocError> {
    let (members, counts) = ranked_members(data, group)?;
    let candidates = threshold_candidates(&members);
    // candidates are already sorted by (fp, tp): both counts are non-decreasing in rank
    let coords: Vec<(i128, i128)> = candidates.iter().map(|c| (c.fp as i128, c.tp as i128)).collect();
    let (n1, n0, n) = (
        counts.positives as f64,
        counts.negatives as f64,
        counts.total() as f64,
    );
    let supports = chain(&coords, true)
        .into_iter()
        .map(|i| {
            let c = candidates[i];
            let tpr = c.tp as f64 / n1;
            HullSupport {
                threshold: c.threshold,
                tpr,
                fpr: c.fp as f64 / n0,
                fnr: (counts.positives - c.tp) as f64 / n1,
                selection_rate: c.selected as f64 / n,
                true_positives: c.tp,
                false_positives: c.fp,
            }
        })
        .collect();
    let lower = chain(&coords, false)
        .into_iter()
        .map(|i| RatePoint::new(candidates[i].tp as f64 / n1, candidates[i].fp as f64 / n0))
        .collect();
    Ok(GroupHull {
        group,
        supports,
        lower,
        counts,
    })
}

/// Hulls for every group, in group order.
pub fn build_hulls(data: &Dataset) -> Result<Vec<GroupHull>, RocError> {
    (0..data.group_count())
        .into_par_iter()
        .map(|g| build_hull(data, g))
        .collect()
}

/// Membership in the convex hull of the group's thresholding ROC points, with slack `tol`.
pub fn hull_contains(hull: &GroupHull, point: RatePoint, tol: f64) -> bool {
    let (x, y) = (point.fpr, point.tpr);
    if !(x >= -tol && x <= 1.0 + tol && y >= -tol && y <= 1.0 + tol) {
        return false;
    }
    // counter-clockwise: lower chain left to right, then upper chain right to left
    let mut polygon: Vec<(f64, f64)> = hull.lower.iter().map(|p| (p.fpr, p.tpr)).collect();
    polygon.extend(hull.supports.iter().rev().skip(1).map(|s| (s.fpr, s.tpr)));
    polygon.pop();
    let k = polygon.len();
    if k < 2 {
        return true;
    }
    (0..k).all(|i| {
        let (ax, ay) = polygon[i];
        let (bx, by) = polygon[(i + 1) % k];
        let (ex, ey) = (bx - ax, by - ay);
        let len = (ex * ex + ey * ey).sqrt();
        if len == 0.0 {
            return true;
        }
        (ex * (y - ay) - ey * (x - ax)) / len >= -tol
    })
}

/// Writes `group,threshold,tpr,fpr,selection_rate` rows for plotting.
pub fn write_hull_csv<W: std::io::Write>(
    hulls: &[GroupHull],
    group_names: &[String],
    writer: W,
) -> Result<(), csv::Error> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["group", "threshold", "tpr", "fpr", "selection_rate"])?;
    for hull in hulls {
        let name = group_names
            .get(hull.group())
            .cloned()
            .unwrap_or_else(|| hull.group().to_string());
        for s in hull.supports() {
            wtr.write_record([
                name.clone(),
                s.threshold.to_string(),
                s.tpr.to_string(),
                s.fpr.to_string(),
                s.selection_rate.to_string(),
            ])?;
        }
    }
    wtr.flush()?;
    Ok(())
}
