//! Region search: the inner LP over hull-mixture weights, the outer grid
//! over linear-fractional centroids, and the tolerance-expansion guard.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::constraints::{ConstraintError, ConstraintSpec, LossSpec};
use crate::linprog::{self, Bound, LpError, LpProblem, LpStatus};
use crate::roc::{GroupHull, RatePoint};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RegionError {
    #[error("inconsistent inputs: {0}")]
    Mismatch(String),
    #[error("centroid {q} for constraint {constraint} is outside [{lo}, {hi}]")]
    CentroidOutside { constraint: usize, q: f64, lo: f64, hi: f64 },
    #[error("no centroid grid point admits a feasible solution")]
    Infeasible,
    #[error(transparent)]
    Lp(#[from] LpError),
    #[error(transparent)]
    Constraint(#[from] ConstraintError),
}

/// Grid sizes for the centroid search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    /// Points when exactly one LF constraint is active.
    pub single_points: usize,
    /// Points per axis when two or more LF constraints are active.
    pub multi_points: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            single_points: 1000,
            multi_points: 100,
        }
    }
}

/// Admissible centroid interval of an LF constraint.
pub fn centroid_interval(delta: f64) -> (f64, f64) {
    (delta / 2.0, 1.0 - delta / 2.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CentroidGrid {
    axes: Vec<Vec<f64>>,
}

impl CentroidGrid {
    /// One uniform axis per LF constraint in `specs`, in declaration order.
    pub fn for_specs(specs: &[ConstraintSpec], cfg: &GridConfig) -> Result<Self, RegionError> {
        let lf: Vec<&ConstraintSpec> = specs.iter().filter(|s| !s.is_linear()).collect();
        let points = if lf.len() > 1 { cfg.multi_points } else { cfg.single_points };
        if !lf.is_empty() && points == 0 {
            return Err(RegionError::Mismatch("centroid grid needs at least one point".into()));
        }
        let axes = lf
            .iter()
            .map(|s| {
                let (lo, hi) = centroid_interval(s.delta);
                if hi <= lo || points == 1 {
                    vec![if points == 1 { 0.5 } else { lo }]
                } else {
                    let step = (hi - lo) / (points - 1) as f64;
                    (0..points)
                        .map(|i| if i + 1 == points { hi } else { lo + step * i as f64 })
                        .collect()
                }
            })
            .collect();
        Ok(Self { axes })
    }

    pub fn from_axes(axes: Vec<Vec<f64>>) -> Self {
        Self { axes }
    }

    pub fn axes(&self) -> &[Vec<f64>] {
        &self.axes
    }

    /// Number of grid points; a grid with no axes has a single empty point.
    pub fn len(&self) -> usize {
        self.axes.iter().map(Vec::len).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Point `index` in lexicographic order, first axis slowest.
    pub fn point(&self, index: usize) -> Vec<f64> {
        let mut rem = index;
        let mut out = vec![0.0; self.axes.len()];
        for (k, axis) in self.axes.iter().enumerate().rev() {
            out[k] = axis[rem % axis.len()];
            rem /= axis.len();
        }
        out
    }
}

/// Column layout of an inner LP.
#[derive(Debug, Clone, PartialEq)]
pub struct InnerLp {
    pub problem: LpProblem,
    /// First weight column of each group.
    pub offsets: Vec<usize>,
    /// First free centroid column (one per linear constraint).
    pub linear_start: usize,
}

fn dot(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn check_inputs(hulls: &[GroupHull], specs: &[ConstraintSpec], loss: &LossSpec) -> Result<(), RegionError> {
    let g = hulls.len();
    if g == 0 {
        return Err(RegionError::Mismatch("no groups".into()));
    }
    if loss.gamma.len() != g {
        return Err(RegionError::Mismatch(format!("loss covers {} groups, hulls {}", loss.gamma.len(), g)));
    }
    if let Some(s) = specs.iter().find(|s| s.u.len() != g || s.v.len() != g) {
        return Err(RegionError::Mismatch(format!("{} constraint covers {} groups, hulls {}", s.metric, s.u.len(), g)));
    }
    if let Some(h) = hulls.iter().find(|h| h.supports().is_empty()) {
        return Err(RegionError::Mismatch(format!("group {} has an empty hull", h.group())));
    }
    Ok(())
}

/// Inner LP for fixed LF centroids `q_lf` (one per LF constraint, declaration order).
pub fn build_inner_lp(
    hulls: &[GroupHull],
    specs: &[ConstraintSpec],
    loss: &LossSpec,
    q_lf: &[f64],
) -> Result<InnerLp, RegionError> {
    check_inputs(hulls, specs, loss)?;
    let lf_count = specs.iter().filter(|s| !s.is_linear()).count();
    if q_lf.len() != lf_count {
        return Err(RegionError::Mismatch(format!("{} centroids for {} LF constraints", q_lf.len(), lf_count)));
    }

    let mut offsets = Vec::with_capacity(hulls.len());
    let mut n = 0;
    for h in hulls {
        offsets.push(n);
        n += h.supports().len();
    }
    let linear_start = n;
    let linear_count = specs.len() - lf_count;
    n += linear_count;

    let lifted: Vec<Vec<[f64; 3]>> = hulls
        .iter()
        .map(|h| h.supports().iter().map(|s| s.rate().lifted()).collect())
        .collect();
    // row over the weights of group `a` with coefficient f(r_j)
    let group_row = |a: usize, f: &dyn Fn(&[f64; 3]) -> f64| {
        let mut row = vec![0.0; n];
        for (j, r) in lifted[a].iter().enumerate() {
            row[offsets[a] + j] = f(r);
        }
        row
    };

    let mut p = LpProblem::new(n);
    for (a, rs) in lifted.iter().enumerate() {
        for (j, r) in rs.iter().enumerate() {
            p.c[offsets[a] + j] = dot(&loss.gamma[a], r);
        }
        p.add_eq(group_row(a, &|_| 1.0), 1.0);
    }
    for b in &mut p.bounds[linear_start..] {
        *b = Bound::FREE;
    }

    let (mut lin_i, mut lf_i) = (0, 0);
    for (k, spec) in specs.iter().enumerate() {
        let half = spec.delta / 2.0;
        if spec.is_linear() {
            let col = linear_start + lin_i;
            lin_i += 1;
            for a in 0..hulls.len() {
                let u = spec.u[a];
                let mut row = group_row(a, &|r| dot(&u, r));
                row[col] = -1.0;
                p.add_le(row.clone(), half);
                p.add_ge(row, -half);
            }
        } else {
            let q = q_lf[lf_i];
            lf_i += 1;
            let (lo, hi) = centroid_interval(spec.delta);
            if !(q >= lo - 1e-12 && q <= hi + 1e-12) {
                return Err(RegionError::CentroidOutside { constraint: k, q, lo, hi });
            }
            for a in 0..hulls.len() {
                let (u, v) = (spec.u[a], spec.v[a]);
                p.add_le(group_row(a, &|r| dot(&u, r) - (q + half) * dot(&v, r)), 0.0);
                p.add_le(group_row(a, &|r| (q - half) * dot(&v, r) - dot(&u, r)), 0.0);
                p.add_ge(group_row(a, &|r| dot(&v, r)), spec.epsilon);
            }
        }
    }
    if let Some(eps) = specs.iter().filter(|s| !s.is_linear()).map(|s| s.epsilon).reduce(f64::max) {
        for a in 0..hulls.len() {
            p.add_ge(group_row(a, &|r| r[1]), eps);
        }
    }
    Ok(InnerLp {
        problem: p,
        offsets,
        linear_start,
    })
}

/// Optimal target rates found by region search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetRates {
    pub rates: Vec<RatePoint>,
    /// Mixture weights over each group's hull supports.
    pub weights: Vec<Vec<f64>>,
    pub lf_centroids: Vec<f64>,
    pub linear_centroids: Vec<f64>,
    /// Inner LP objective (expected loss).
    pub objective: f64,
    pub grid_index: usize,
}

impl TargetRates {
    fn from_solution(inner: &InnerLp, hulls: &[GroupHull], x: &[f64], q: Vec<f64>, objective: f64, grid_index: usize) -> Self {
        let mut weights = Vec::with_capacity(hulls.len());
        let mut rates = Vec::with_capacity(hulls.len());
        for (a, h) in hulls.iter().enumerate() {
            let k = h.supports().len();
            let mut w: Vec<f64> = x[inner.offsets[a]..inner.offsets[a] + k].iter().map(|v| v.max(0.0)).collect();
            let total: f64 = w.iter().sum();
            w.iter_mut().for_each(|v| *v /= total);
            let (mut tpr, mut fpr) = (0.0, 0.0);
            for (wj, s) in w.iter().zip(h.supports()) {
                tpr += wj * s.tpr;
                fpr += wj * s.fpr;
            }
            rates.push(RatePoint::new(tpr.clamp(0.0, 1.0), fpr.clamp(0.0, 1.0)));
            weights.push(w);
        }
        Self {
            rates,
            weights,
            lf_centroids: q,
            linear_centroids: x[inner.linear_start..].to_vec(),
            objective,
            grid_index,
        }
    }

    /// Targets at one hull vertex per group.
    pub fn at_vertices(hulls: &[GroupHull], loss: &LossSpec, vertices: &[usize]) -> Self {
        let weights: Vec<Vec<f64>> = hulls
            .iter()
            .zip(vertices)
            .map(|(h, &j)| {
                let mut w = vec![0.0; h.supports().len()];
                w[j] = 1.0;
                w
            })
            .collect();
        let rates: Vec<RatePoint> = hulls.iter().zip(vertices).map(|(h, &j)| h.supports()[j].rate()).collect();
        Self {
            objective: loss.loss(&rates),
            rates,
            weights,
            lf_centroids: Vec::new(),
            linear_centroids: Vec::new(),
            grid_index: 0,
        }
    }
}

/// Outcome of the LP at one grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPointRecord {
    pub index: usize,
    pub q: Vec<f64>,
    pub feasible: bool,
    /// Objective; NaN when infeasible.
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchOutcome {
    pub best: Option<TargetRates>,
    pub records: Vec<GridPointRecord>,
}

impl SearchOutcome {
    pub fn infeasible_points(&self) -> usize {
        self.records.iter().filter(|r| !r.feasible).count()
    }
}

/// A centroid and its inner solution: the LP, its primal point and objective.
type CentroidSolve = (Vec<f64>, Option<(InnerLp, Vec<f64>, f64)>);

/// Region search with per-grid-point diagnostics.
pub fn region_search_detailed(
    hulls: &[GroupHull],
    specs: &[ConstraintSpec],
    loss: &LossSpec,
    grid: &CentroidGrid,
) -> Result<SearchOutcome, RegionError> {
    check_inputs(hulls, specs, loss)?;
    let lf_count = specs.iter().filter(|s| !s.is_linear()).count();
    if grid.axes().len() != lf_count {
        return Err(RegionError::Mismatch(format!(
            "grid has {} axes for {} LF constraints",
            grid.axes().len(),
            lf_count
        )));
    }
    let solved: Vec<Result<CentroidSolve, RegionError>> = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let q = grid.point(i);
            let inner = build_inner_lp(hulls, specs, loss, &q)?;
            let sol = linprog::solve(&inner.problem)?;
            match sol.status {
                LpStatus::Optimal => Ok((q, Some((inner, sol.x, sol.objective)))),
                LpStatus::Infeasible => Ok((q, None)),
                LpStatus::Unbounded => Err(RegionError::Mismatch("inner LP is unbounded".into())),
            }
        })
        .collect();

    let mut records = Vec::with_capacity(solved.len());
    let mut best: Option<(usize, f64)> = None;
    let mut solutions = Vec::with_capacity(solved.len());
    for (index, r) in solved.into_iter().enumerate() {
        let (q, sol) = r?;
        let objective = sol.as_ref().map_or(f64::NAN, |s| s.2);
        if sol.is_some() && best.is_none_or(|(_, b)| objective < b) {
            best = Some((index, objective));
        }
        records.push(GridPointRecord {
            index,
            q: q.clone(),
            feasible: sol.is_some(),
            objective,
        });
        solutions.push((q, sol));
    }
    let best = best.map(|(index, _)| {
        let (q, sol) = solutions.swap_remove(index);
        let (inner, x, objective) = sol.expect("best grid point is feasible");
        TargetRates::from_solution(&inner, hulls, &x, q, objective, index)
    });
    Ok(SearchOutcome { best, records })
}

pub fn region_search(
    hulls: &[GroupHull],
    specs: &[ConstraintSpec],
    loss: &LossSpec,
    grid: &CentroidGrid,
) -> Result<TargetRates, RegionError> {
    region_search_detailed(hulls, specs, loss, grid)?
        .best
        .ok_or(RegionError::Infeasible)
}

/// Writes `index,q0..,feasible,objective` rows.
pub fn write_grid_csv<W: std::io::Write>(records: &[GridPointRecord], writer: W) -> Result<(), csv::Error> {
    let mut wtr = csv::Writer::from_writer(writer);
    let axes = records.first().map_or(0, |r| r.q.len());
    let mut header = vec!["index".to_string()];
    header.extend((0..axes).map(|k| format!("q{k}")));
    header.extend(["feasible".to_string(), "objective".to_string()]);
    wtr.write_record(&header)?;
    for r in records {
        let mut row = vec![r.index.to_string()];
        row.extend(r.q.iter().map(f64::to_string));
        row.push(r.feasible.to_string());
        row.push(if r.feasible { r.objective.to_string() } else { String::new() });
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GuardConfig {
    /// Bisection width at termination.
    pub tau_alpha: f64,
    /// Upper bracket when a baseline disparity is undefined.
    pub alpha_cap: f64,
    /// Doublings of the upper bracket before falling back to the baseline vertices.
    pub max_doublings: usize,
}

impl Default for GuardConfig {
    fn default() -> Self {
        Self {
            tau_alpha: 0.01,
            alpha_cap: 100.0,
            max_doublings: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuardResult {
    /// Minimal feasible tolerance expansion.
    pub alpha: f64,
    pub target: TargetRates,
    pub triggered: bool,
    /// Most accurate hull vertex per group.
    pub baseline: Vec<usize>,
    /// Baseline disparity per constraint; `None` when a denominator was below margin.
    pub baseline_gaps: Vec<Option<f64>>,
    /// Initial upper bracket of the bisection.
    pub alpha_upper: f64,
    /// True when no grid point was feasible even after widening, so the baseline vertices are returned.
    pub fallback: bool,
    /// Region searches run.
    pub searches: usize,
}

/// Per-group lowest-loss hull vertex; ties go to the first support.
pub fn baseline_vertices(hulls: &[GroupHull], loss: &LossSpec) -> Vec<usize> {
    hulls
        .iter()
        .enumerate()
        .map(|(a, h)| {
            let mut best = (0, f64::INFINITY);
            for (j, s) in h.supports().iter().enumerate() {
                let v = loss.group_term(a, s.rate());
                if v < best.1 {
                    best = (j, v);
                }
            }
            best.0
        })
        .collect()
}

fn baseline_gap(spec: &ConstraintSpec, rates: &[RatePoint]) -> Option<f64> {
    let mut values = Vec::with_capacity(rates.len());
    let mut undefined = false;
    for (a, r) in rates.iter().enumerate() {
        match spec.evaluate(a, *r) {
            Ok(v) => values.push(v),
            Err(_) => undefined = true,
        }
    }
    let gap = crate::constraints::max_gap(&values);
    (!undefined).then_some(gap)
}

pub fn scaled_specs(specs: &[ConstraintSpec], alpha: f64) -> Vec<ConstraintSpec> {
    specs.iter().map(|s| s.scaled(alpha)).collect()
}

/// Region search at tolerances `alpha * delta`, with the grid rebuilt on the scaled intervals.
pub fn search_at(
    hulls: &[GroupHull],
    specs: &[ConstraintSpec],
    loss: &LossSpec,
    grid: &GridConfig,
    alpha: f64,
) -> Result<Option<TargetRates>, RegionError> {
    let scaled = scaled_specs(specs, alpha);
    let g = CentroidGrid::for_specs(&scaled, grid)?;
    Ok(region_search_detailed(hulls, &scaled, loss, &g)?.best)
}

/// Smallest expansion of every tolerance that makes region search feasible, by bisection.
pub fn feasibility_guard(
    hulls: &[GroupHull],
    specs: &[ConstraintSpec],
    loss: &LossSpec,
    grid: &GridConfig,
    cfg: &GuardConfig,
) -> Result<GuardResult, RegionError> {
    if !(cfg.tau_alpha > 0.0) {
        return Err(RegionError::Mismatch(format!("tau_alpha must be positive, got {}", cfg.tau_alpha)));
    }
    check_inputs(hulls, specs, loss)?;
    let baseline = baseline_vertices(hulls, loss);
    let base_rates: Vec<RatePoint> = hulls.iter().zip(&baseline).map(|(h, &j)| h.supports()[j].rate()).collect();
    let baseline_gaps: Vec<Option<f64>> = specs.iter().map(|s| baseline_gap(s, &base_rates)).collect();
    let mut alpha_hi = 1.0f64;
    for (s, gap) in specs.iter().zip(&baseline_gaps) {
        alpha_hi = match gap {
            None => alpha_hi.max(cfg.alpha_cap),
            Some(g) if *g <= s.delta => alpha_hi,
            Some(g) if s.delta > 0.0 => alpha_hi.max(g / s.delta),
            Some(_) => alpha_hi.max(cfg.alpha_cap),
        };
    }
    let alpha_upper = alpha_hi;

    let mut searches = 1;
    if let Some(target) = search_at(hulls, specs, loss, grid, 1.0)? {
        return Ok(GuardResult {
            alpha: 1.0,
            target,
            triggered: false,
            baseline,
            baseline_gaps,
            alpha_upper,
            fallback: false,
            searches,
        });
    }

    let saturated = |alpha: f64| specs.iter().all(|s| s.delta == 0.0 || alpha * s.delta >= 1.0);
    let mut cached = None;
    for _ in 0..=cfg.max_doublings {
        searches += 1;
        if let Some(t) = search_at(hulls, specs, loss, grid, alpha_hi)? {
            cached = Some(t);
            break;
        }
        if saturated(alpha_hi) {
            break;
        }
        alpha_hi *= 2.0;
    }
    let Some(mut cached) = cached else {
        log::warn!("no feasible expansion found up to alpha {alpha_hi}; using baseline vertices");
        return Ok(GuardResult {
            alpha: alpha_hi,
            target: TargetRates::at_vertices(hulls, loss, &baseline),
            triggered: true,
            baseline,
            baseline_gaps,
            alpha_upper,
            fallback: true,
            searches,
        });
    };

    let mut alpha_lo = 1.0;
    while alpha_hi - alpha_lo > cfg.tau_alpha {
        let mid = 0.5 * (alpha_lo + alpha_hi);
        searches += 1;
        match search_at(hulls, specs, loss, grid, mid)? {
            Some(t) => {
                alpha_hi = mid;
                cached = t;
            }
            None => alpha_lo = mid,
        }
    }
    log::info!("tolerances expanded by alpha {alpha_hi:.4} after {searches} searches");
    Ok(GuardResult {
        alpha: alpha_hi,
        target: cached,
        triggered: true,
        baseline,
        baseline_gaps,
        alpha_upper,
        fallback: false,
        searches,
    })
}
