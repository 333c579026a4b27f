//! Dense two-phase simplex with Bland's rule for small linear programs.
//!
//! Problems take the form
//!
//! ```text
//! minimize    c^T x
//! subject to  A_ub x <= b_ub
//!             A_eq x  = b_eq
//!             lo <= x <= hi
//! ```
//!
//! where either bound may be infinite.

use std::fmt;

use thiserror::Error;

pub const FEAS_TOL: f64 = 1e-8;
pub const COST_TOL: f64 = 1e-9;
const PIVOT_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LpError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("non-finite coefficient in {0}")]
    NonFinite(&'static str),
    #[error("variable {var}: lower bound {lo} exceeds upper bound {hi}")]
    BadBound { var: usize, lo: f64, hi: f64 },
    #[error("simplex exceeded {0} iterations")]
    IterationLimit(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bound {
    pub lo: f64,
    pub hi: f64,
}

impl Bound {
    pub const NON_NEGATIVE: Bound = Bound { lo: 0.0, hi: f64::INFINITY };
    pub const FREE: Bound = Bound {
        lo: f64::NEG_INFINITY,
        hi: f64::INFINITY,
    };

    pub fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }
}

impl Default for Bound {
    fn default() -> Self {
        Self::NON_NEGATIVE
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpProblem {
    pub c: Vec<f64>,
    pub a_ub: Vec<Vec<f64>>,
    pub b_ub: Vec<f64>,
    pub a_eq: Vec<Vec<f64>>,
    pub b_eq: Vec<f64>,
    pub bounds: Vec<Bound>,
}

impl LpProblem {
    /// Problem over `n` non-negative variables with a zero objective.
    pub fn new(n: usize) -> Self {
        Self {
            c: vec![0.0; n],
            a_ub: Vec::new(),
            b_ub: Vec::new(),
            a_eq: Vec::new(),
            b_eq: Vec::new(),
            bounds: vec![Bound::NON_NEGATIVE; n],
        }
    }

    pub fn var_count(&self) -> usize {
        self.c.len()
    }

    pub fn add_le(&mut self, row: Vec<f64>, rhs: f64) {
        self.a_ub.push(row);
        self.b_ub.push(rhs);
    }

    pub fn add_ge(&mut self, row: Vec<f64>, rhs: f64) {
        self.a_ub.push(row.into_iter().map(|x| -x).collect());
        self.b_ub.push(-rhs);
    }

    pub fn add_eq(&mut self, row: Vec<f64>, rhs: f64) {
        self.a_eq.push(row);
        self.b_eq.push(rhs);
    }

    pub fn validate(&self) -> Result<(), LpError> {
        let n = self.c.len();
        if self.bounds.len() != n {
            return Err(LpError::Dimension(format!("{} bounds for {} variables", self.bounds.len(), n)));
        }
        if self.a_ub.len() != self.b_ub.len() || self.a_eq.len() != self.b_eq.len() {
            return Err(LpError::Dimension("row count differs from right-hand side length".into()));
        }
        if let Some(r) = self.a_ub.iter().chain(&self.a_eq).find(|r| r.len() != n) {
            return Err(LpError::Dimension(format!("row of length {} for {} variables", r.len(), n)));
        }
        if self.c.iter().any(|x| !x.is_finite()) {
            return Err(LpError::NonFinite("objective"));
        }
        if self.a_ub.iter().chain(&self.a_eq).flatten().any(|x| !x.is_finite())
            || self.b_ub.iter().chain(&self.b_eq).any(|x| !x.is_finite())
        {
            return Err(LpError::NonFinite("constraints"));
        }
        for (var, b) in self.bounds.iter().enumerate() {
            if b.lo.is_nan() || b.hi.is_nan() || b.lo == f64::INFINITY || b.hi == f64::NEG_INFINITY || b.lo > b.hi {
                return Err(LpError::BadBound { var, lo: b.lo, hi: b.hi });
            }
        }
        Ok(())
    }

    /// Largest constraint or bound violation of `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let dot = |r: &[f64]| r.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        let ub = self.a_ub.iter().zip(&self.b_ub).map(|(r, b)| (dot(r) - b).max(0.0));
        let eq = self.a_eq.iter().zip(&self.b_eq).map(|(r, b)| (dot(r) - b).abs());
        let bd = self.bounds.iter().zip(x).map(|(b, v)| (b.lo - v).max(v - b.hi).max(0.0));
        ub.chain(eq).chain(bd).fold(0.0, f64::max)
    }

    pub fn objective_at(&self, x: &[f64]) -> f64 {
        self.c.iter().zip(x).map(|(a, b)| a * b).sum()
    }
}

impl fmt::Display for LpProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let row = |r: &[f64]| r.iter().map(|v| format!("{v:>12.6e}")).collect::<Vec<_>>().join(" ");
        writeln!(f, "vars {} ub {} eq {}", self.c.len(), self.a_ub.len(), self.a_eq.len())?;
        writeln!(f, "min  {}", row(&self.c))?;
        for (r, b) in self.a_ub.iter().zip(&self.b_ub) {
            writeln!(f, "ub   {} <= {b:.6e}", row(r))?;
        }
        for (r, b) in self.a_eq.iter().zip(&self.b_eq) {
            writeln!(f, "eq   {} == {b:.6e}", row(r))?;
        }
        for (j, b) in self.bounds.iter().enumerate() {
            writeln!(f, "bnd  x{j} in [{}, {}]", b.lo, b.hi)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub status: LpStatus,
    /// Primal point; empty unless optimal.
    pub x: Vec<f64>,
    /// Objective value; NaN unless optimal.
    pub objective: f64,
}

impl LpSolution {
    fn status_only(status: LpStatus) -> Self {
        Self {
            status,
            x: Vec::new(),
            objective: f64::NAN,
        }
    }

    pub fn is_optimal(&self) -> bool {
        self.status == LpStatus::Optimal
    }
}

/// How an original variable maps onto non-negative columns.
#[derive(Debug, Clone, Copy)]
enum VarMap {
    Shift { lo: f64, col: usize },
    Reflect { hi: f64, col: usize },
    Split { pos: usize, neg: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Sense {
    Le,
    Ge,
    Eq,
}

struct Tableau {
    /// `rows x (cols + 1)`, last column is the right-hand side.
    t: Vec<Vec<f64>>,
    basis: Vec<usize>,
    cols: usize,
}

enum Phase {
    Optimal,
    Unbounded,
}

impl Tableau {
    fn rhs(&self, i: usize) -> f64 {
        self.t[i][self.cols]
    }

    fn pivot(&mut self, r: usize, c: usize) {
        let p = self.t[r][c];
        for v in self.t[r].iter_mut() {
            *v /= p;
        }
        self.t[r][c] = 1.0;
        let pivot_row = self.t[r].clone();
        for (i, row) in self.t.iter_mut().enumerate() {
            if i == r {
                continue;
            }
            let f = row[c];
            if f == 0.0 {
                continue;
            }
            for (v, pv) in row.iter_mut().zip(&pivot_row) {
                *v -= f * pv;
            }
            row[c] = 0.0;
        }
        self.basis[r] = c;
    }

    /// Reduced costs for `cost` under the current basis.
    fn reduced_costs(&self, cost: &[f64]) -> Vec<f64> {
        let mut d = cost.to_vec();
        for (i, &b) in self.basis.iter().enumerate() {
            let cb = cost[b];
            if cb == 0.0 {
                continue;
            }
            for (dj, a) in d.iter_mut().zip(&self.t[i][..self.cols]) {
                *dj -= cb * a;
            }
        }
        d
    }

    fn run(&mut self, cost: &[f64], allowed: &[bool], iters: &mut usize, cap: usize) -> Result<Phase, LpError> {
        loop {
            let d = self.reduced_costs(cost);
            let entering = (0..self.cols).find(|&j| allowed[j] && d[j] < -COST_TOL);
            let Some(c) = entering else {
                return Ok(Phase::Optimal);
            };
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..self.t.len() {
                let a = self.t[i][c];
                if a <= PIVOT_TOL {
                    continue;
                }
                let ratio = self.rhs(i).max(0.0) / a;
                leave = match leave {
                    None => Some((i, ratio)),
                    Some((k, best)) => {
                        if ratio < best || (ratio == best && self.basis[i] < self.basis[k]) {
                            Some((i, ratio))
                        } else {
                            Some((k, best))
                        }
                    }
                };
            }
            let Some((r, _)) = leave else {
                return Ok(Phase::Unbounded);
            };
            self.pivot(r, c);
            *iters += 1;
            if *iters > cap {
                return Err(LpError::IterationLimit(cap));
            }
        }
    }
}

/// Solve `p`. Infeasible and unbounded problems are statuses; malformed input is an error.
pub fn solve(p: &LpProblem) -> Result<LpSolution, LpError> {
    p.validate()?;
    let n = p.var_count();

    let mut maps = Vec::with_capacity(n);
    let mut ny = 0;
    let mut bound_rows: Vec<(usize, f64)> = Vec::new();
    for b in &p.bounds {
        let m = if b.lo.is_finite() {
            if b.hi.is_finite() {
                bound_rows.push((ny, b.hi - b.lo));
            }
            VarMap::Shift { lo: b.lo, col: ny }
        } else if b.hi.is_finite() {
            VarMap::Reflect { hi: b.hi, col: ny }
        } else {
            ny += 1;
            VarMap::Split { pos: ny - 1, neg: ny }
        };
        ny += 1;
        maps.push(m);
    }

    let substitute = |row: &[f64], rhs: f64| -> (Vec<f64>, f64) {
        let mut out = vec![0.0; ny];
        let mut rhs = rhs;
        for (a, m) in row.iter().zip(&maps) {
            match *m {
                VarMap::Shift { lo, col } => {
                    out[col] += a;
                    rhs -= a * lo;
                }
                VarMap::Reflect { hi, col } => {
                    out[col] -= a;
                    rhs -= a * hi;
                }
                VarMap::Split { pos, neg } => {
                    out[pos] += a;
                    out[neg] -= a;
                }
            }
        }
        (out, rhs)
    };

    let mut rows: Vec<(Vec<f64>, Sense, f64)> = Vec::new();
    for (r, b) in p.a_ub.iter().zip(&p.b_ub) {
        let (row, rhs) = substitute(r, *b);
        rows.push((row, Sense::Le, rhs));
    }
    for (r, b) in p.a_eq.iter().zip(&p.b_eq) {
        let (row, rhs) = substitute(r, *b);
        rows.push((row, Sense::Eq, rhs));
    }
    for (col, width) in bound_rows {
        let mut row = vec![0.0; ny];
        row[col] = 1.0;
        rows.push((row, Sense::Le, width));
    }
    for (row, sense, rhs) in rows.iter_mut() {
        if *rhs < 0.0 {
            row.iter_mut().for_each(|v| *v = -*v);
            *rhs = -*rhs;
            *sense = match *sense {
                Sense::Le => Sense::Ge,
                Sense::Ge => Sense::Le,
                Sense::Eq => Sense::Eq,
            };
        }
    }

    let m = rows.len();
    let n_slack = rows.iter().filter(|r| r.1 != Sense::Eq).count();
    let n_art = rows.iter().filter(|r| r.1 != Sense::Le).count();
    let cols = ny + n_slack + n_art;
    let art_start = ny + n_slack;

    let mut t = vec![vec![0.0; cols + 1]; m];
    let mut basis = vec![0; m];
    let (mut s, mut a) = (ny, art_start);
    for (i, (row, sense, rhs)) in rows.iter().enumerate() {
        t[i][..ny].copy_from_slice(row);
        t[i][cols] = *rhs;
        match sense {
            Sense::Le => {
                t[i][s] = 1.0;
                basis[i] = s;
                s += 1;
            }
            Sense::Ge => {
                t[i][s] = -1.0;
                s += 1;
                t[i][a] = 1.0;
                basis[i] = a;
                a += 1;
            }
            Sense::Eq => {
                t[i][a] = 1.0;
                basis[i] = a;
                a += 1;
            }
        }
    }
    let mut tab = Tableau { t, basis, cols };
    let cap = 50_000 + 200 * (m + cols);
    let mut iters = 0;

    if n_art > 0 {
        let mut cost1 = vec![0.0; cols];
        cost1[art_start..].iter_mut().for_each(|c| *c = 1.0);
        let allowed = vec![true; cols];
        tab.run(&cost1, &allowed, &mut iters, cap)?;
        let infeas: f64 = (0..m)
            .filter(|&i| tab.basis[i] >= art_start)
            .map(|i| tab.rhs(i))
            .sum();
        if infeas > FEAS_TOL {
            return Ok(LpSolution::status_only(LpStatus::Infeasible));
        }
        // drive remaining artificials out of the basis; drop redundant rows
        let mut i = 0;
        while i < tab.t.len() {
            if tab.basis[i] >= art_start {
                let col = (0..art_start).find(|&j| tab.t[i][j].abs() > PIVOT_TOL);
                match col {
                    Some(j) => tab.pivot(i, j),
                    None => {
                        tab.t.remove(i);
                        tab.basis.remove(i);
                        continue;
                    }
                }
            }
            i += 1;
        }
    }

    let mut cost2 = vec![0.0; cols];
    for (cj, m) in p.c.iter().zip(&maps) {
        match *m {
            VarMap::Shift { col, .. } => cost2[col] = *cj,
            VarMap::Reflect { col, .. } => cost2[col] = -cj,
            VarMap::Split { pos, neg } => {
                cost2[pos] = *cj;
                cost2[neg] = -cj;
            }
        }
    }
    let allowed: Vec<bool> = (0..cols).map(|j| j < art_start).collect();
    if let Phase::Unbounded = tab.run(&cost2, &allowed, &mut iters, cap)? {
        return Ok(LpSolution::status_only(LpStatus::Unbounded));
    }

    let mut y = vec![0.0; cols];
    for (i, &b) in tab.basis.iter().enumerate() {
        y[b] = tab.rhs(i).max(0.0);
    }
    let x: Vec<f64> = maps
        .iter()
        .map(|m| match *m {
            VarMap::Shift { lo, col } => lo + y[col],
            VarMap::Reflect { hi, col } => hi - y[col],
            VarMap::Split { pos, neg } => y[pos] - y[neg],
        })
        .collect();
    let objective = p.objective_at(&x);
    Ok(LpSolution {
        status: LpStatus::Optimal,
        x,
        objective,
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Vertex-enumeration oracle for bounded problems: every n-subset of
    /// constraint hyperplanes is solved by Gaussian elimination and the best
    /// feasible intersection wins. Returns `None` when no vertex is feasible.
    pub(crate) fn vertex_oracle(p: &LpProblem) -> Option<f64> {
        let n = p.var_count();
        let mut planes: Vec<(Vec<f64>, f64)> = Vec::new();
        for (r, b) in p.a_ub.iter().zip(&p.b_ub) {
            planes.push((r.clone(), *b));
        }
        for (r, b) in p.a_eq.iter().zip(&p.b_eq) {
            planes.push((r.clone(), *b));
        }
        for (j, b) in p.bounds.iter().enumerate() {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            if b.lo.is_finite() {
                planes.push((e.clone(), b.lo));
            }
            if b.hi.is_finite() {
                planes.push((e, b.hi));
            }
        }
        let mut best: Option<f64> = None;
        let mut idx: Vec<usize> = (0..n).collect();
        if planes.len() < n {
            return None;
        }
        loop {
            if let Some(x) = gauss(&idx.iter().map(|&i| planes[i].clone()).collect::<Vec<_>>()) {
                if p.max_violation(&x) <= 1e-9 {
                    let v = p.objective_at(&x);
                    best = Some(best.map_or(v, |b: f64| b.min(v)));
                }
            }
            // next combination
            let mut k = n;
            loop {
                if k == 0 {
                    return best;
                }
                k -= 1;
                if idx[k] < planes.len() - n + k {
                    idx[k] += 1;
                    for l in k + 1..n {
                        idx[l] = idx[l - 1] + 1;
                    }
                    break;
                }
            }
        }
    }

    #[allow(clippy::needless_range_loop)]
    fn gauss(planes: &[(Vec<f64>, f64)]) -> Option<Vec<f64>> {
        let n = planes.len();
        let mut a: Vec<Vec<f64>> = planes
            .iter()
            .map(|(r, b)| {
                let mut row = r.clone();
                row.push(*b);
                row
            })
            .collect();
        for col in 0..n {
            let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
            if a[piv][col].abs() < 1e-10 {
                return None;
            }
            a.swap(col, piv);
            for i in 0..n {
                if i != col {
                    let f = a[i][col] / a[col][col];
                    for k in col..=n {
                        a[i][k] -= f * a[col][k];
                    }
                }
            }
        }
        Some((0..n).map(|i| a[i][n] / a[i][i]).collect())
    }

    /// Random bounded LP with `n` boxed variables; some instances are infeasible.
    pub(crate) fn random_lp(rng: &mut ChaCha8Rng, n: usize) -> LpProblem {
        let mut p = LpProblem::new(n);
        p.c = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        p.bounds = (0..n)
            .map(|_| {
                let lo = rng.random_range(-2.0..0.5);
                Bound::new(lo, lo + rng.random_range(0.2..3.0))
            })
            .collect();
        for _ in 0..rng.random_range(1..=5) {
            let row: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            p.add_le(row, rng.random_range(-1.0..1.5));
        }
        if rng.random_bool(0.3) {
            let row: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            p.add_eq(row, rng.random_range(-0.5..0.5));
        }
        p
    }

    #[test]
    fn bound_active_optimum() {
        let mut p = LpProblem::new(1);
        p.c = vec![1.0];
        let s = solve(&p).unwrap();
        assert_eq!(s.status, LpStatus::Optimal);
        assert_eq!(s.x, vec![0.0]);
        assert_eq!(s.objective, 0.0);
    }

    #[test]
    fn simplex_edge() {
        let mut p = LpProblem::new(2);
        p.c = vec![-1.0, -1.0];
        p.add_le(vec![1.0, 1.0], 1.0);
        let s = solve(&p).unwrap();
        assert_eq!(s.status, LpStatus::Optimal);
        assert!((s.objective + 1.0).abs() < 1e-12);
        assert!((s.x[0] + s.x[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn empty_polytope() {
        let mut p = LpProblem::new(1);
        p.bounds = vec![Bound::FREE];
        p.add_ge(vec![1.0], 1.0);
        p.add_le(vec![1.0], 0.0);
        assert_eq!(solve(&p).unwrap().status, LpStatus::Infeasible);
    }

    #[test]
    fn unbounded_and_free_variables() {
        let mut p = LpProblem::new(1);
        p.c = vec![-1.0];
        assert_eq!(solve(&p).unwrap().status, LpStatus::Unbounded);

        let mut q = LpProblem::new(2);
        q.bounds = vec![Bound::FREE, Bound::new(f64::NEG_INFINITY, 3.0)];
        q.c = vec![1.0, -1.0];
        q.add_ge(vec![1.0, 0.0], -2.5);
        let s = solve(&q).unwrap();
        assert_eq!(s.status, LpStatus::Optimal);
        assert!((s.x[0] + 2.5).abs() < 1e-12 && (s.x[1] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn redundant_equalities() {
        let mut p = LpProblem::new(2);
        p.c = vec![1.0, 2.0];
        p.add_eq(vec![1.0, 1.0], 1.0);
        p.add_eq(vec![2.0, 2.0], 2.0);
        let s = solve(&p).unwrap();
        assert!((s.objective - 1.0).abs() < 1e-12);
    }

    #[test]
    fn dimension_errors() {
        let mut p = LpProblem::new(2);
        p.add_le(vec![1.0], 1.0);
        assert!(matches!(solve(&p), Err(LpError::Dimension(_))));
        let mut q = LpProblem::new(1);
        q.bounds = vec![Bound::new(1.0, 0.0)];
        assert!(matches!(solve(&q), Err(LpError::BadBound { .. })));
    }

    #[test]
    fn dump_lists_every_row() {
        let mut p = LpProblem::new(2);
        p.add_le(vec![1.0, 1.0], 1.0);
        p.add_eq(vec![1.0, -1.0], 0.0);
        let text = p.to_string();
        assert_eq!(text.lines().filter(|l| l.starts_with("ub")).count(), 1);
        assert_eq!(text.lines().filter(|l| l.starts_with("eq")).count(), 1);
        assert_eq!(text.lines().filter(|l| l.starts_with("bnd")).count(), 2);
    }

    #[test]
    fn four_variable_lps_match_vertex_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let p = random_lp(&mut rng, 4);
            let s = solve(&p).unwrap();
            match vertex_oracle(&p) {
                Some(v) => {
                    assert_eq!(s.status, LpStatus::Optimal);
                    assert!((s.objective - v).abs() <= 1e-7, "{} vs {}", s.objective, v);
                    assert!(p.max_violation(&s.x) <= FEAS_TOL);
                }
                None => assert_eq!(s.status, LpStatus::Infeasible),
            }
        }
    }

    proptest! {
        #[test]
        fn deterministic_and_scale_invariant(seed in any::<u64>(), n in 1usize..=5, scale in 0.1f64..10.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = random_lp(&mut rng, n);
            let a = solve(&p).unwrap();
            let b = solve(&p).unwrap();
            prop_assert_eq!(a.status, b.status);
            prop_assert_eq!(&a.x, &b.x);
            let mut q = p.clone();
            q.c.iter_mut().for_each(|c| *c *= scale);
            let s = solve(&q).unwrap();
            prop_assert_eq!(s.status, a.status);
            if a.is_optimal() {
                prop_assert!((s.objective - scale * a.objective).abs() <= 1e-7 * scale.max(1.0));
                prop_assert!(p.max_violation(&a.x) <= FEAS_TOL);
            }
        }
    }
}
