//! Minimal-intervention randomized classifiers that attain target rates.
//!
//! The base classifier of a group mixes two adjacent hull thresholds with
//! weight `theta`. Its labels are then randomized either by mixing with a
//! biased coin (anti-diagonal) or by outcome-dependent flips (label
//! flipping). Among all edges and mixing weights that reach the target, the
//! one with the smallest expected intervention rate is kept.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::ScoredSample;
use crate::region::TargetRates;
use crate::roc::{hull_contains, GroupHull, RatePoint, Threshold};

const CLAMP_TOL: f64 = 1e-9;
const ZERO_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum ConstructError {
    #[error("degenerate base point (fnr {fnr}, fpr {fpr}): rate equations are singular")]
    Degenerate { fnr: f64, fpr: f64 },
    #[error("parameters ({0}, {1}) leave [0, 1]")]
    OutOfRange(f64, f64),
    #[error("edge ({0}, {1}) is not a pair of adjacent hull supports")]
    NotAdjacent(usize, usize),
    #[error("group {group}: no edge and mixing weight attains target (tpr {tpr}, fpr {fpr})")]
    Infeasible { group: usize, tpr: f64, fpr: f64 },
    #[error("group {group}: target (tpr {tpr}, fpr {fpr}) lies outside the hull")]
    OutsideHull { group: usize, tpr: f64, fpr: f64 },
    #[error("group {group} is not covered by the recipe ({count} groups)")]
    UnknownGroup { group: usize, count: usize },
    #[error("{0} groups of targets for {1} hulls")]
    GroupMismatch(usize, usize),
    #[error("recipe I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("recipe format: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Mechanism {
    #[default]
    AntiDiagonal,
    LabelFlipping,
}

impl Mechanism {
    pub fn short(&self) -> &'static str {
        match self {
            Mechanism::AntiDiagonal => "ad",
            Mechanism::LabelFlipping => "lf",
        }
    }
}

impl std::str::FromStr for Mechanism {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "ad" | "anti_diagonal" | "antidiagonal" => Ok(Mechanism::AntiDiagonal),
            "lf" | "label_flipping" | "labelflipping" => Ok(Mechanism::LabelFlipping),
            _ => Err(format!("unknown mechanism `{s}` (expected ad or lf)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum MechanismParams {
    AntiDiagonal { lambda: f64, p: f64 },
    LabelFlipping { p0: f64, p1: f64 },
}

impl MechanismParams {
    /// Parameters that leave the base classifier untouched.
    pub fn identity(mechanism: Mechanism) -> Self {
        match mechanism {
            Mechanism::AntiDiagonal => MechanismParams::AntiDiagonal { lambda: 0.0, p: 0.5 },
            Mechanism::LabelFlipping => MechanismParams::LabelFlipping { p0: 0.0, p1: 1.0 },
        }
    }

    pub fn mechanism(&self) -> Mechanism {
        match self {
            MechanismParams::AntiDiagonal { .. } => Mechanism::AntiDiagonal,
            MechanismParams::LabelFlipping { .. } => Mechanism::LabelFlipping,
        }
    }

    /// Rates reached from `base` (forward map).
    pub fn apply(&self, base: &BaseOperatingPoint) -> RatePoint {
        let tpr0 = 1.0 - base.fnr0;
        match *self {
            MechanismParams::AntiDiagonal { lambda, p } => RatePoint::new(
                (1.0 - lambda) * tpr0 + lambda * p,
                (1.0 - lambda) * base.fpr0 + lambda * p,
            ),
            MechanismParams::LabelFlipping { p0, p1 } => RatePoint::new(
                p1 * tpr0 + p0 * (1.0 - tpr0),
                p1 * base.fpr0 + p0 * (1.0 - base.fpr0),
            ),
        }
    }

    /// Probability of predicting 1 given the base label.
    pub fn positive_probability(&self, base_label: bool) -> f64 {
        match *self {
            MechanismParams::AntiDiagonal { lambda, p } => {
                (1.0 - lambda) * if base_label { 1.0 } else { 0.0 } + lambda * p
            }
            MechanismParams::LabelFlipping { p0, p1 } => {
                if base_label {
                    p1
                } else {
                    p0
                }
            }
        }
    }
}

/// Edge-interpolated base characteristics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaseOperatingPoint {
    pub fnr0: f64,
    pub fpr0: f64,
    /// Selection rate of the base classifier.
    pub s_plus0: f64,
}

/// Base point at weight `theta` between supports `h` and `h + 1`.
pub fn edge_point(hull: &GroupHull, h: usize, h_next: usize, theta: f64) -> Result<BaseOperatingPoint, ConstructError> {
    if h_next != h + 1 || h_next >= hull.supports().len() {
        return Err(ConstructError::NotAdjacent(h, h_next));
    }
    let (a, b) = (&hull.supports()[h], &hull.supports()[h_next]);
    let mix = |x: f64, y: f64| (1.0 - theta) * x + theta * y;
    Ok(BaseOperatingPoint {
        fnr0: mix(a.fnr, b.fnr),
        fpr0: mix(a.fpr, b.fpr),
        s_plus0: mix(a.selection_rate, b.selection_rate),
    })
}

fn clamp_unit(x: f64) -> Option<f64> {
    if (-CLAMP_TOL..=1.0 + CLAMP_TOL).contains(&x) {
        Some(x.clamp(0.0, 1.0))
    } else {
        None
    }
}

/// Target given as `(fnr, fpr)`.
pub fn anti_diagonal_params(base: &BaseOperatingPoint, target: (f64, f64)) -> Result<MechanismParams, ConstructError> {
    let (fnr_t, fpr_t) = target;
    let s0 = base.fpr0 + base.fnr0;
    let den = 1.0 - s0;
    if den.abs() < ZERO_TOL {
        return Err(ConstructError::Degenerate {
            fnr: base.fnr0,
            fpr: base.fpr0,
        });
    }
    let lambda = (fpr_t + fnr_t - s0) / den;
    if lambda.abs() < ZERO_TOL {
        if (fpr_t - base.fpr0).abs() > CLAMP_TOL || (fnr_t - base.fnr0).abs() > CLAMP_TOL {
            return Err(ConstructError::OutOfRange(0.0, f64::NAN));
        }
        return Ok(MechanismParams::AntiDiagonal { lambda: 0.0, p: 0.5 });
    }
    let p = (fpr_t - (1.0 - lambda) * base.fpr0) / lambda;
    match (clamp_unit(lambda), clamp_unit(p)) {
        (Some(lambda), Some(p)) => Ok(MechanismParams::AntiDiagonal { lambda, p }),
        _ => Err(ConstructError::OutOfRange(lambda, p)),
    }
}

/// Target given as `(fnr, fpr)`.
pub fn label_flipping_params(base: &BaseOperatingPoint, target: (f64, f64)) -> Result<MechanismParams, ConstructError> {
    let (fnr_t, fpr_t) = target;
    let det = base.fpr0 + base.fnr0 - 1.0;
    if det.abs() < ZERO_TOL {
        return Err(ConstructError::Degenerate {
            fnr: base.fnr0,
            fpr: base.fpr0,
        });
    }
    let p1 = (fpr_t * base.fnr0 - (1.0 - fnr_t) * (1.0 - base.fpr0)) / det;
    let p0 = ((1.0 - fnr_t) * base.fpr0 - fpr_t * (1.0 - base.fnr0)) / det;
    match (clamp_unit(p0), clamp_unit(p1)) {
        (Some(p0), Some(p1)) => Ok(MechanismParams::LabelFlipping { p0, p1 }),
        _ => Err(ConstructError::OutOfRange(p0, p1)),
    }
}

pub fn mechanism_params(
    mechanism: Mechanism,
    base: &BaseOperatingPoint,
    target: (f64, f64),
) -> Result<MechanismParams, ConstructError> {
    match mechanism {
        Mechanism::AntiDiagonal => anti_diagonal_params(base, target),
        Mechanism::LabelFlipping => label_flipping_params(base, target),
    }
}

/// Probability that the randomized prediction differs from the base prediction.
/// `base.s_plus0` is the plug-in base selection rate.
pub fn expected_intervention(base: &BaseOperatingPoint, params: &MechanismParams) -> f64 {
    let s = base.s_plus0;
    match *params {
        MechanismParams::AntiDiagonal { lambda, p } => lambda * (s * (1.0 - p) + (1.0 - s) * p),
        MechanismParams::LabelFlipping { p0, p1 } => s * (1.0 - p1) + (1.0 - s) * p0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConstructConfig {
    pub mechanism: Mechanism,
    /// Snap tolerance numerator; per-axis tolerances divide it by class counts.
    pub snap_xi: f64,
    pub coarse_points: usize,
    pub golden_tol: f64,
    pub golden_max_iter: usize,
}

impl Default for ConstructConfig {
    fn default() -> Self {
        Self {
            mechanism: Mechanism::AntiDiagonal,
            snap_xi: 0.75,
            coarse_points: 101,
            golden_tol: 1e-5,
            golden_max_iter: 40,
        }
    }
}

/// Construction result for one group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupRecipe {
    pub group: usize,
    pub name: String,
    /// Index `h` of the edge `(h, h + 1)` in hull order.
    pub edge: usize,
    /// Threshold of support `h`, used with probability `1 - theta`.
    pub threshold_from: Threshold,
    /// Threshold of support `h + 1`, used with probability `theta`.
    pub threshold_to: Threshold,
    pub theta: f64,
    pub params: MechanismParams,
    pub base: BaseOperatingPoint,
    pub snapped: bool,
    /// Rates handed to construction.
    pub requested: RatePoint,
    /// Expected rates of this recipe.
    pub target: RatePoint,
    pub expected_intervention: f64,
}

impl GroupRecipe {
    pub fn expected_rates(&self) -> RatePoint {
        self.params.apply(&self.base)
    }

    /// Probability that the base classifier selects `score`.
    pub fn base_probability(&self, score: f64) -> f64 {
        let from = if self.threshold_from.selects(score) { 1.0 } else { 0.0 };
        let to = if self.threshold_to.selects(score) { 1.0 } else { 0.0 };
        (1.0 - self.theta) * from + self.theta * to
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recipe {
    pub mechanism: Mechanism,
    pub seed: u64,
    pub config_hash: String,
    pub groups: Vec<GroupRecipe>,
}

/// One randomized prediction together with the base label it started from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Prediction {
    pub label: bool,
    pub base: bool,
}

impl Recipe {
    pub fn group(&self, group: usize) -> Result<&GroupRecipe, ConstructError> {
        self.groups.get(group).ok_or(ConstructError::UnknownGroup {
            group,
            count: self.groups.len(),
        })
    }

    pub fn to_json(&self) -> Result<String, ConstructError> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(s: &str) -> Result<Self, ConstructError> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ConstructError> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConstructError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Stream for sample `index`: reproducible and independent of evaluation order.
pub fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Randomized prediction for `sample`, the `index`-th row of its dataset.
pub fn predict(recipe: &Recipe, sample: &ScoredSample, seed: u64, index: u64) -> Result<Prediction, ConstructError> {
    let g = recipe.group(sample.group)?;
    let mut rng = sample_rng(seed, index);
    let pick: f64 = rng.random();
    let threshold = if pick < g.theta { g.threshold_to } else { g.threshold_from };
    let base = threshold.selects(sample.score);
    let u: f64 = rng.random();
    let label = match g.params {
        MechanismParams::AntiDiagonal { lambda, p } => {
            let coin: f64 = rng.random();
            if u < lambda {
                coin < p
            } else {
                base
            }
        }
        MechanismParams::LabelFlipping { p0, p1 } => u < if base { p1 } else { p0 },
    };
    Ok(Prediction { label, base })
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    edge: usize,
    theta: f64,
    params: MechanismParams,
    base: BaseOperatingPoint,
    value: f64,
}

struct EdgeSearch<'a> {
    hull: &'a GroupHull,
    target: (f64, f64),
    cfg: &'a ConstructConfig,
    best: Option<Candidate>,
}

impl EdgeSearch<'_> {
    fn eval(&mut self, edge: usize, theta: f64) -> Option<f64> {
        let base = edge_point(self.hull, edge, edge + 1, theta).ok()?;
        let params = mechanism_params(self.cfg.mechanism, &base, self.target).ok()?;
        let value = expected_intervention(&base, &params);
        if self.best.is_none_or(|b| value < b.value) {
            self.best = Some(Candidate {
                edge,
                theta,
                params,
                base,
                value,
            });
        }
        Some(value)
    }

    /// Moves from a feasible `inside` toward an infeasible `outside` and returns the last feasible weight.
    fn boundary(&mut self, edge: usize, mut inside: f64, mut outside: f64) -> f64 {
        for _ in 0..50 {
            if (outside - inside).abs() <= 1e-12 {
                break;
            }
            let mid = 0.5 * (inside + outside);
            if self.eval(edge, mid).is_some() {
                inside = mid;
            } else {
                outside = mid;
            }
        }
        inside
    }

    fn golden(&mut self, edge: usize, mut a: f64, mut b: f64) {
        let ratio = (5f64.sqrt() - 1.0) / 2.0;
        let f = |s: &mut Self, t: f64| s.eval(edge, t).unwrap_or(f64::INFINITY);
        let mut c = b - ratio * (b - a);
        let mut d = a + ratio * (b - a);
        let mut fc = f(self, c);
        let mut fd = f(self, d);
        let mut iter = 0;
        while b - a > self.cfg.golden_tol && iter < self.cfg.golden_max_iter {
            if fc <= fd {
                b = d;
                d = c;
                fd = fc;
                c = b - ratio * (b - a);
                fc = f(self, c);
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + ratio * (b - a);
                fd = f(self, d);
            }
            iter += 1;
        }
    }

    fn run_edge(&mut self, edge: usize) {
        let n = self.cfg.coarse_points.max(2);
        let grid: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
        let feasible: Vec<bool> = grid.iter().map(|&t| self.eval(edge, t).is_some()).collect();
        let mut i = 0;
        while i < n {
            if !feasible[i] {
                i += 1;
                continue;
            }
            let start = i;
            while i + 1 < n && feasible[i + 1] {
                i += 1;
            }
            let end = i;
            let lo = if start > 0 {
                self.boundary(edge, grid[start], grid[start - 1])
            } else {
                grid[start]
            };
            let hi = if end + 1 < n {
                self.boundary(edge, grid[end], grid[end + 1])
            } else {
                grid[end]
            };
            if hi > lo {
                self.golden(edge, lo, hi);
            }
            i += 1;
        }
    }
}

/// Per-axis snap tolerances `(fpr, fnr)` of a hull.
pub fn snap_tolerances(hull: &GroupHull, xi: f64) -> (f64, f64) {
    let c = hull.counts();
    (xi / c.negatives as f64, xi / c.positives as f64)
}

/// Nearest upper-hull edge in tolerance-normalized coordinates, if within tolerance on both axes.
pub fn snap_to_hull(hull: &GroupHull, target: RatePoint, xi: f64) -> Option<(usize, f64)> {
    let (tol_fpr, tol_fnr) = snap_tolerances(hull, xi);
    let (x, y) = (target.fpr / tol_fpr, target.fnr() / tol_fnr);
    let mut best: Option<(usize, f64, f64)> = None;
    for (h, w) in hull.supports().windows(2).enumerate() {
        let (ax, ay) = (w[0].fpr / tol_fpr, w[0].fnr / tol_fnr);
        let (bx, by) = (w[1].fpr / tol_fpr, w[1].fnr / tol_fnr);
        let (ex, ey) = (bx - ax, by - ay);
        let len2 = ex * ex + ey * ey;
        let theta = if len2 > 0.0 {
            (((x - ax) * ex + (y - ay) * ey) / len2).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let (px, py) = (ax + theta * ex, ay + theta * ey);
        let dist = ((x - px).powi(2) + (y - py).powi(2)).sqrt();
        if best.is_none_or(|b| dist < b.2) {
            best = Some((h, theta, dist));
        }
    }
    let (h, theta, _) = best?;
    let p = edge_point(hull, h, h + 1, theta).ok()?;
    let within = (p.fpr0 - target.fpr).abs() <= tol_fpr && (p.fnr0 - target.fnr()).abs() <= tol_fnr;
    within.then_some((h, theta))
}

/// Cheapest recipe for one group attaining `target`.
pub fn min_intervention(
    hull: &GroupHull,
    name: &str,
    target: RatePoint,
    cfg: &ConstructConfig,
) -> Result<GroupRecipe, ConstructError> {
    let group = hull.group();
    let (tol_fpr, tol_fnr) = snap_tolerances(hull, cfg.snap_xi);
    if !hull_contains(hull, target, tol_fpr.max(tol_fnr)) {
        return Err(ConstructError::OutsideHull {
            group,
            tpr: target.tpr,
            fpr: target.fpr,
        });
    }
    let supports = hull.supports();
    let finish = |c: Candidate, snapped: bool| {
        let attained = c.params.apply(&c.base);
        GroupRecipe {
            group,
            name: name.to_string(),
            edge: c.edge,
            threshold_from: supports[c.edge].threshold,
            threshold_to: supports[c.edge + 1].threshold,
            theta: c.theta,
            params: c.params,
            base: c.base,
            snapped,
            requested: target,
            target: attained,
            expected_intervention: c.value,
        }
    };

    if let Some((edge, theta)) = snap_to_hull(hull, target, cfg.snap_xi) {
        let base = edge_point(hull, edge, edge + 1, theta)?;
        return Ok(finish(
            Candidate {
                edge,
                theta,
                params: MechanismParams::identity(cfg.mechanism),
                base,
                value: 0.0,
            },
            true,
        ));
    }

    let mut search = EdgeSearch {
        hull,
        target: (target.fnr(), target.fpr),
        cfg,
        best: None,
    };
    for edge in 0..hull.edge_count() {
        search.run_edge(edge);
    }
    match search.best {
        Some(c) => Ok(finish(c, false)),
        None => Err(ConstructError::Infeasible {
            group,
            tpr: target.tpr,
            fpr: target.fpr,
        }),
    }
}

/// Recipes for every group, constructed independently.
pub fn construct_recipe(
    hulls: &[GroupHull],
    targets: &TargetRates,
    group_names: &[String],
    cfg: &ConstructConfig,
    seed: u64,
    config_hash: &str,
) -> Result<Recipe, ConstructError> {
    if targets.rates.len() != hulls.len() {
        return Err(ConstructError::GroupMismatch(targets.rates.len(), hulls.len()));
    }
    let groups = hulls
        .par_iter()
        .zip(targets.rates.par_iter())
        .map(|(h, t)| {
            let name = group_names
                .get(h.group())
                .cloned()
                .unwrap_or_else(|| h.group().to_string());
            min_intervention(h, &name, *t, cfg)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Recipe {
        mechanism: cfg.mechanism,
        seed,
        config_hash: config_hash.to_string(),
        groups,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Dataset;
    use crate::roc::build_hull;
    use proptest::prelude::*;
    use rand::Rng;

    fn base(fnr0: f64, fpr0: f64) -> BaseOperatingPoint {
        BaseOperatingPoint { fnr0, fpr0, s_plus0: 0.4 }
    }

    /// Group whose hull is (0,0), (0.75, 0.25), (1,1) in (tpr, fpr).
    fn three_support() -> GroupHull {
        let mut rows = Vec::new();
        for (score, label, count) in [(0.8, true, 3), (0.8, false, 1), (0.2, true, 1), (0.2, false, 3)] {
            rows.extend((0..count).map(|_| ScoredSample { score, group: 0, label }));
        }
        build_hull(&Dataset::with_group_count(rows, 1).unwrap(), 0).unwrap()
    }

    #[test]
    fn edge_point_endpoints_and_midpoint() {
        let h = three_support();
        let s = h.supports();
        let at0 = edge_point(&h, 0, 1, 0.0).unwrap();
        assert_eq!((at0.fnr0, at0.fpr0, at0.s_plus0), (s[0].fnr, s[0].fpr, s[0].selection_rate));
        let at1 = edge_point(&h, 0, 1, 1.0).unwrap();
        assert_eq!((at1.fnr0, at1.fpr0, at1.s_plus0), (s[1].fnr, s[1].fpr, s[1].selection_rate));
        let mid = edge_point(&h, 1, 2, 0.5).unwrap();
        assert_eq!(mid.fpr0, 0.5 * (s[1].fpr + s[2].fpr));
        assert!(matches!(edge_point(&h, 0, 2, 0.5), Err(ConstructError::NotAdjacent(0, 2))));
    }

    #[test]
    fn anti_diagonal_examples() {
        let b = base(0.2, 0.1);
        assert_eq!(anti_diagonal_params(&b, (0.2, 0.1)).unwrap(), MechanismParams::AntiDiagonal { lambda: 0.0, p: 0.5 });
        let MechanismParams::AntiDiagonal { lambda, p } = anti_diagonal_params(&b, (0.3, 0.2)).unwrap() else {
            unreachable!()
        };
        assert!((lambda - 0.2 / 0.7).abs() < 1e-15);
        assert!((p - 0.45).abs() < 1e-15);
        let r = MechanismParams::AntiDiagonal { lambda, p }.apply(&b);
        assert!((r.fnr() - 0.3).abs() < 1e-15 && (r.fpr - 0.2).abs() < 1e-15);
        for q in [0.0, 0.3, 0.9] {
            let MechanismParams::AntiDiagonal { lambda, p } = anti_diagonal_params(&b, (1.0 - q, q)).unwrap() else {
                unreachable!()
            };
            assert!((lambda - 1.0).abs() < 1e-12 && (p - q).abs() < 1e-12);
        }
        assert!(matches!(anti_diagonal_params(&base(0.5, 0.5), (0.3, 0.2)), Err(ConstructError::Degenerate { .. })));
    }

    #[test]
    fn label_flipping_examples() {
        let b = base(0.2, 0.1);
        assert_eq!(label_flipping_params(&b, (0.2, 0.1)).unwrap(), MechanismParams::LabelFlipping { p0: 0.0, p1: 1.0 });
        let MechanismParams::LabelFlipping { p0, p1 } = label_flipping_params(&b, (0.3, 0.2)).unwrap() else {
            unreachable!()
        };
        assert!((p1 - 0.59 / 0.7).abs() < 1e-15);
        assert!((p0 - 0.09 / 0.7).abs() < 1e-15);
        let r = MechanismParams::LabelFlipping { p0, p1 }.apply(&b);
        assert!((r.fnr() - 0.3).abs() < 1e-15 && (r.fpr - 0.2).abs() < 1e-15);
        let zero = label_flipping_params(&b, (1.0, 0.0)).unwrap();
        let MechanismParams::LabelFlipping { p0, p1 } = zero else { unreachable!() };
        assert!(p0.abs() < 1e-15 && p1.abs() < 1e-15);
        let MechanismParams::LabelFlipping { p0, p1 } = label_flipping_params(&b, (0.0, 1.0)).unwrap() else {
            unreachable!()
        };
        assert!((p0 - 1.0).abs() < 1e-12 && (p1 - 1.0).abs() < 1e-12);
        assert!(matches!(label_flipping_params(&b, (0.9, 0.9)), Err(ConstructError::OutOfRange(..))));
    }

    #[test]
    fn identity_parameters_have_no_intervention() {
        let b = base(0.3, 0.2);
        for m in [Mechanism::AntiDiagonal, Mechanism::LabelFlipping] {
            assert_eq!(expected_intervention(&b, &MechanismParams::identity(m)), 0.0);
        }
    }

    #[test]
    fn intervention_matches_monte_carlo() {
        let b = base(0.3, 0.2);
        let draws = 1_000_000u64;
        for params in [
            MechanismParams::AntiDiagonal { lambda: 0.3, p: 0.7 },
            MechanismParams::LabelFlipping { p0: 0.1, p1: 0.8 },
        ] {
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            let mut flips = 0u64;
            for _ in 0..draws {
                let base_label = rng.random::<f64>() < b.s_plus0;
                let label = rng.random::<f64>() < params.positive_probability(base_label);
                flips += u64::from(label != base_label);
            }
            let expected = expected_intervention(&b, &params);
            let se = (expected * (1.0 - expected) / draws as f64).sqrt();
            assert!((flips as f64 / draws as f64 - expected).abs() <= 3.0 * se);
        }
    }

    #[test]
    fn vertex_target_snaps() {
        let h = three_support();
        let r = min_intervention(&h, "g", h.supports()[1].rate(), &ConstructConfig::default()).unwrap();
        assert!(r.snapped);
        assert_eq!(r.expected_intervention, 0.0);
        assert_eq!(r.expected_rates(), h.supports()[1].rate());
    }

    #[test]
    fn outside_target_is_rejected() {
        let h = three_support();
        let cfg = ConstructConfig { snap_xi: 0.01, ..Default::default() };
        assert!(matches!(
            min_intervention(&h, "g", RatePoint::new(0.2, 0.9), &cfg),
            Err(ConstructError::OutsideHull { .. })
        ));
    }

    /// Exhaustive oracle over all edges and a uniform weight grid.
    fn grid_oracle(h: &GroupHull, target: RatePoint, mechanism: Mechanism, points: usize) -> f64 {
        let mut best = f64::INFINITY;
        for e in 0..h.edge_count() {
            for i in 0..points {
                let theta = i as f64 / (points - 1) as f64;
                let b = edge_point(h, e, e + 1, theta).unwrap();
                if let Ok(p) = mechanism_params(mechanism, &b, (target.fnr(), target.fpr)) {
                    best = best.min(expected_intervention(&b, &p));
                }
            }
        }
        best
    }

    #[test]
    fn interior_target_matches_grid_oracle() {
        let h = three_support();
        let target = RatePoint::new(0.55, 0.3);
        for m in [Mechanism::AntiDiagonal, Mechanism::LabelFlipping] {
            let cfg = ConstructConfig {
                mechanism: m,
                snap_xi: 0.01,
                ..Default::default()
            };
            let r = min_intervention(&h, "g", target, &cfg).unwrap();
            assert!(!r.snapped);
            let oracle = grid_oracle(&h, target, m, 100_000);
            assert!((r.expected_intervention - oracle).abs() <= 1e-4, "{m:?}: {} vs {}", r.expected_intervention, oracle);
            let got = r.expected_rates();
            assert!((got.tpr - target.tpr).abs() < 1e-9 && (got.fpr - target.fpr).abs() < 1e-9);
        }
    }

    #[test]
    fn golden_matches_fine_scan_on_one_edge() {
        let h = three_support();
        let target = RatePoint::new(0.55, 0.3);
        let cfg = ConstructConfig { snap_xi: 0.01, ..Default::default() };
        let mut s = EdgeSearch {
            hull: &h,
            target: (target.fnr(), target.fpr),
            cfg: &cfg,
            best: None,
        };
        s.run_edge(0);
        let found = s.best.unwrap().value;
        let mut scan = f64::INFINITY;
        for i in 0..=1_000_000 {
            let theta = i as f64 * 1e-6;
            let b = edge_point(&h, 0, 1, theta).unwrap();
            if let Ok(p) = anti_diagonal_params(&b, (target.fnr(), target.fpr)) {
                scan = scan.min(expected_intervention(&b, &p));
            }
        }
        assert!((found - scan).abs() <= 1e-4);
    }

    #[test]
    fn degenerate_randomization_is_threshold_rule() {
        let h = three_support();
        let rec = Recipe {
            mechanism: Mechanism::AntiDiagonal,
            seed: 1,
            config_hash: String::new(),
            groups: vec![GroupRecipe {
                group: 0,
                name: "g".into(),
                edge: 0,
                threshold_from: Threshold::AtLeast(0.5),
                threshold_to: Threshold::AtLeast(0.1),
                theta: 0.0,
                params: MechanismParams::identity(Mechanism::AntiDiagonal),
                base: edge_point(&h, 0, 1, 0.0).unwrap(),
                snapped: true,
                requested: RatePoint::new(0.0, 0.0),
                target: RatePoint::new(0.0, 0.0),
                expected_intervention: 0.0,
            }],
        };
        for (i, score) in [0.0, 0.3, 0.5, 0.9].into_iter().enumerate() {
            let s = ScoredSample { score, group: 0, label: true };
            let p = predict(&rec, &s, 3, i as u64).unwrap();
            assert_eq!(p.label, score >= 0.5);
        }
        let mut full = rec.clone();
        full.groups[0].params = MechanismParams::AntiDiagonal { lambda: 1.0, p: 0.3 };
        let n = 100_000;
        let pos = (0..n)
            .filter(|&i| predict(&full, &ScoredSample { score: (i % 7) as f64 / 7.0, group: 0, label: false }, 5, i).unwrap().label)
            .count();
        let se = (0.3f64 * 0.7 / n as f64).sqrt();
        assert!((pos as f64 / n as f64 - 0.3).abs() <= 3.0 * se);
        let bad = ScoredSample { score: 0.5, group: 4, label: true };
        assert!(matches!(predict(&rec, &bad, 0, 0), Err(ConstructError::UnknownGroup { .. })));
    }

    #[test]
    fn recipe_json_round_trip_is_exact() {
        let h = three_support();
        let target = RatePoint::new(0.55, 0.3);
        let cfg = ConstructConfig { snap_xi: 0.01, ..Default::default() };
        let g = min_intervention(&h, "g", target, &cfg).unwrap();
        let r = Recipe {
            mechanism: Mechanism::AntiDiagonal,
            seed: 9,
            config_hash: "abc".into(),
            groups: vec![g],
        };
        let text = r.to_json().unwrap();
        let back = Recipe::from_json(&text).unwrap();
        assert_eq!(back, r);
        assert_eq!(back.to_json().unwrap(), text);
    }

    proptest! {
        #[test]
        fn forward_maps_reproduce_targets(fnr0 in 0.0f64..0.5, fpr0 in 0.0f64..0.5, lam in 0.0f64..1.0, p in 0.0f64..1.0) {
            prop_assume!(fnr0 + fpr0 < 0.95);
            let b = base(fnr0, fpr0);
            let t = MechanismParams::AntiDiagonal { lambda: lam, p }.apply(&b);
            let target = (t.fnr(), t.fpr);
            if let Ok(ad) = anti_diagonal_params(&b, target) {
                let r = ad.apply(&b);
                prop_assert!((r.fnr() - target.0).abs() <= 1e-12 && (r.fpr - target.1).abs() <= 1e-12);
                if let Ok(lf) = label_flipping_params(&b, target) {
                    let r2 = lf.apply(&b);
                    prop_assert!((r2.tpr - r.tpr).abs() <= 1e-12 && (r2.fpr - r.fpr).abs() <= 1e-12);
                }
            }
        }

        #[test]
        fn predictions_are_deterministic(seed in any::<u64>(), idx in any::<u64>(), score in 0.0f64..1.0) {
            let h = three_support();
            let cfg = ConstructConfig { snap_xi: 0.01, ..Default::default() };
            let g = min_intervention(&h, "g", RatePoint::new(0.55, 0.3), &cfg).unwrap();
            let r = Recipe { mechanism: cfg.mechanism, seed: 0, config_hash: String::new(), groups: vec![g] };
            let s = ScoredSample { score, group: 0, label: true };
            prop_assert_eq!(predict(&r, &s, seed, idx).unwrap(), predict(&r, &s, seed, idx).unwrap());
        }
    }
}
