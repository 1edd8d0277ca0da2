//! Lifting of quadratic programs into the space of symmetric matrices.
//!
//! Two layouts are used. In the moment layout the lifted matrix is
//! `[1; x][1; x]^T` of order `n + 1` with `X_00 = 1` fixed by a pair of
//! rows. Instances with no linear terms and no bounds use the homogeneous
//! layout `X = x x^T` of order `n`. LP variables are the packed upper
//! triangle of the lifted matrix in both cases.

use crate::cutgen::Cut;
use crate::lpiface::{LpBackend, LpProblem, LpRow, LpStatus};
use crate::symmat::{packed_entry, packed_index, packed_len, spectral_decompose, SymMatrix};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

/// `sum q_k x_i x_j + sum l_k x_i + c`. Off-diagonal terms are not
/// symmetrised: `(0, 1, 2.0)` means `2 x_0 x_1`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Quadratic {
    #[serde(default)]
    pub q: Vec<(usize, usize, f64)>,
    #[serde(default)]
    pub l: Vec<(usize, f64)>,
    #[serde(default)]
    pub c: f64,
}

impl Quadratic {
    pub fn eval(&self, x: &[f64]) -> f64 {
        let quad: f64 = self.q.iter().map(|&(i, j, v)| v * x[i] * x[j]).sum();
        let lin: f64 = self.l.iter().map(|&(i, v)| v * x[i]).sum();
        quad + lin + self.c
    }

    /// Coefficient matrix over `[1; x]` with `p(x) = <A, [1;x][1;x]^T>`.
    pub fn to_matrix(&self, n: usize) -> SymMatrix {
        let mut a = SymMatrix::zeros(n + 1);
        let mut add = |i: usize, j: usize, v: f64| a.set(i, j, a.get(i, j) + v);
        for &(i, j, v) in &self.q {
            if i == j {
                add(i + 1, i + 1, v);
            } else {
                add(i + 1, j + 1, v / 2.0);
            }
        }
        for &(i, v) in &self.l {
            add(0, i + 1, v / 2.0);
        }
        add(0, 0, self.c);
        a
    }

    fn max_index(&self) -> Option<usize> {
        self.q
            .iter()
            .flat_map(|&(i, j, _)| [i, j])
            .chain(self.l.iter().map(|&(i, _)| i))
            .max()
    }

    fn is_finite(&self) -> bool {
        self.c.is_finite() && self.q.iter().all(|t| t.2.is_finite()) && self.l.iter().all(|t| t.1.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sense {
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = ">=")]
    Ge,
    #[serde(rename = "==")]
    Eq,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    #[serde(flatten)]
    pub expr: Quadratic,
    pub sense: Sense,
    pub rhs: f64,
}

impl Constraint {
    pub fn satisfied(&self, x: &[f64], tol: f64) -> bool {
        let v = self.expr.eval(x) - self.rhs;
        match self.sense {
            Sense::Le => v <= tol,
            Sense::Ge => v >= -tol,
            Sense::Eq => v.abs() <= tol,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QcqpInstance {
    #[serde(default)]
    pub name: String,
    pub n: usize,
    /// Per-variable `[lower, upper]`; `None` is unbounded. An empty list
    /// leaves every variable free.
    #[serde(default)]
    pub bounds: Vec<(Option<f64>, Option<f64>)>,
    pub objective: Quadratic,
    #[serde(default)]
    pub constraints: Vec<Constraint>,
}

impl QcqpInstance {
    pub fn new(n: usize, objective: Quadratic) -> Self {
        Self {
            name: String::new(),
            n,
            bounds: Vec::new(),
            objective,
            constraints: Vec::new(),
        }
    }

    pub fn bound(&self, i: usize) -> (f64, f64) {
        match self.bounds.get(i) {
            Some(&(l, u)) => (l.unwrap_or(f64::NEG_INFINITY), u.unwrap_or(f64::INFINITY)),
            None => (f64::NEG_INFINITY, f64::INFINITY),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.bounds.is_empty() && self.bounds.len() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                got: self.bounds.len(),
            });
        }
        let exprs = std::iter::once(&self.objective).chain(self.constraints.iter().map(|c| &c.expr));
        for e in exprs {
            if let Some(m) = e.max_index() {
                if m >= self.n {
                    return Err(Error::InvalidArgument(format!(
                        "variable index {m} out of range (n = {})",
                        self.n
                    )));
                }
            }
            if !e.is_finite() {
                return Err(Error::NonFinite);
            }
        }
        for (i, &(l, u)) in self.bounds.iter().enumerate() {
            if l.is_some_and(|v| v.is_nan()) || u.is_some_and(|v| v.is_nan()) {
                return Err(Error::NonFinite);
            }
            if let (Some(l), Some(u)) = (l, u) {
                if l > u {
                    return Err(Error::InvalidArgument(format!("x{i} has lower bound {l} > upper {u}")));
                }
            }
        }
        if self.constraints.iter().any(|c| !c.rhs.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(())
    }

    pub fn is_feasible(&self, x: &[f64], tol: f64) -> bool {
        (0..self.n).all(|i| {
            let (l, u) = self.bound(i);
            x[i] >= l - tol && x[i] <= u + tol
        }) && self.constraints.iter().all(|c| c.satisfied(x, tol))
    }

    fn has_linear_terms(&self) -> bool {
        std::iter::once(&self.objective)
            .chain(self.constraints.iter().map(|c| &c.expr))
            .any(|e| e.l.iter().any(|t| t.1 != 0.0))
    }

    fn has_bounds(&self) -> bool {
        self.bounds.iter().any(|(l, u)| l.is_some() || u.is_some())
    }

    /// Pairs `(i, j)`, `i <= j`, with a nonzero product term somewhere.
    fn products(&self) -> Vec<(usize, usize)> {
        let mut seen = vec![false; packed_len(self.n)];
        let exprs = std::iter::once(&self.objective).chain(self.constraints.iter().map(|c| &c.expr));
        for e in exprs {
            for &(i, j, v) in &e.q {
                if v != 0.0 {
                    seen[packed_index(self.n, i.min(j), i.max(j))] = true;
                }
            }
        }
        seen.iter()
            .enumerate()
            .filter(|(_, s)| **s)
            .map(|(k, _)| packed_entry(self.n, k))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum LiftMode {
    /// `X = x x^T`.
    Homogeneous,
    /// `X = [1; x][1; x]^T`.
    Moment,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct LiftOptions {
    /// Omit the diagonal secant `X_ii <= (l+u) x_i - l u`, keeping only the
    /// interval cap `X_ii <= max(l^2, u^2)`.
    pub weak_rlt: bool,
    /// `None` picks homogeneous exactly when there are no linear terms and
    /// no bounds.
    pub mode: Option<LiftMode>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowKind {
    /// One half of the `X_00 = 1` pair.
    Unit,
    Constraint(usize),
    Bound(usize),
    McCormick(usize, usize),
    /// Interval cap on a lifted product.
    ProductCap(usize, usize),
    /// Row added by bound tightening on a homogeneous diagonal.
    Tightened(usize),
}

#[derive(Debug, Clone)]
pub struct LiftedModel {
    pub instance: QcqpInstance,
    pub options: LiftOptions,
    pub mode: LiftMode,
    /// Order of the lifted matrix.
    pub dim: usize,
    pub bounds: Vec<(f64, f64)>,
    pub objective: Vec<(usize, f64)>,
    pub objective_constant: f64,
    pub rows: Vec<LpRow>,
    pub row_kinds: Vec<RowKind>,
    pub cut_pool: Vec<Cut>,
}

impl LiftedModel {
    pub fn num_vars(&self) -> usize {
        packed_len(self.dim)
    }

    fn offset(&self) -> usize {
        match self.mode {
            LiftMode::Homogeneous => 0,
            LiftMode::Moment => 1,
        }
    }

    /// LP variable for the lifted entry `(a, b)` of the matrix.
    pub fn var(&self, a: usize, b: usize) -> usize {
        packed_index(self.dim, a.min(b), a.max(b))
    }

    /// Lifted matrix entry stored in LP variable `k`.
    pub fn monomial(&self, k: usize) -> (usize, usize) {
        packed_entry(self.dim, k)
    }

    /// LP variable for `x_i x_j`.
    pub fn product_var(&self, i: usize, j: usize) -> usize {
        let o = self.offset();
        self.var(i + o, j + o)
    }

    /// LP variable for `x_i`; `None` in the homogeneous layout.
    pub fn linear_var(&self, i: usize) -> Option<usize> {
        match self.mode {
            LiftMode::Homogeneous => None,
            LiftMode::Moment => Some(self.var(0, i + 1)),
        }
    }

    pub fn lift_point(&self, x: &[f64]) -> Vec<f64> {
        match self.mode {
            LiftMode::Homogeneous => SymMatrix::outer(x).into_packed(),
            LiftMode::Moment => {
                let mut v = Vec::with_capacity(x.len() + 1);
                v.push(1.0);
                v.extend_from_slice(x);
                SymMatrix::outer(&v).into_packed()
            }
        }
    }

    /// Model rows followed by the cut pool.
    pub fn lp_problem(&self) -> LpProblem {
        let mut p = LpProblem::new(self.num_vars());
        p.objective = self.objective.clone();
        p.rows = self.rows.clone();
        for cut in &self.cut_pool {
            let (coeffs, rhs) = cut.as_leq();
            p.rows.push(LpRow::new(coeffs, rhs));
        }
        p
    }

    /// Objective of the original problem at a lifted point.
    pub fn bound_value(&self, lp_value: f64) -> f64 {
        lp_value + self.objective_constant
    }

    pub fn matrix(&self, point: &[f64]) -> Result<SymMatrix> {
        SymMatrix::from_packed(self.dim, point.to_vec())
    }
}

fn push(rows: &mut Vec<LpRow>, kinds: &mut Vec<RowKind>, coeffs: Vec<(usize, f64)>, rhs: f64, kind: RowKind) {
    let mut merged: Vec<(usize, f64)> = Vec::with_capacity(coeffs.len());
    for (j, v) in coeffs {
        match merged.iter_mut().find(|e| e.0 == j) {
            Some(e) => e.1 += v,
            None => merged.push((j, v)),
        }
    }
    merged.retain(|e| e.1 != 0.0);
    merged.sort_by_key(|e| e.0);
    rows.push(LpRow::new(merged, rhs));
    kinds.push(kind);
}

fn interval_product(a: (f64, f64), b: (f64, f64), same: bool) -> (f64, f64) {
    if same {
        let (l, u) = a;
        let hi = (l * l).max(u * u);
        let lo = if l <= 0.0 && u >= 0.0 { 0.0 } else { (l * l).min(u * u) };
        return (lo, hi);
    }
    let p = [a.0 * b.0, a.0 * b.1, a.1 * b.0, a.1 * b.1];
    (
        p.iter().copied().fold(f64::INFINITY, f64::min),
        p.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    )
}

/// Builds the relaxation; McCormick rows need finite bounds on every
/// variable that appears in a product.
pub fn lift(instance: &QcqpInstance, options: LiftOptions) -> Result<LiftedModel> {
    let model = lift_partial(instance, options)?;
    if model.mode == LiftMode::Moment {
        for (i, j) in instance.products() {
            for k in [i, j] {
                let (l, u) = model.bounds[k];
                if !l.is_finite() || !u.is_finite() {
                    return Err(Error::MissingBound { index: k });
                }
            }
        }
    }
    Ok(model)
}

/// As [`lift`], but skips McCormick rows that would need a missing bound.
pub fn lift_partial(instance: &QcqpInstance, options: LiftOptions) -> Result<LiftedModel> {
    instance.validate()?;
    let n = instance.n;
    let mode = options.mode.unwrap_or(if instance.has_linear_terms() || instance.has_bounds() {
        LiftMode::Moment
    } else {
        LiftMode::Homogeneous
    });
    if mode == LiftMode::Homogeneous && (instance.has_linear_terms() || instance.has_bounds()) {
        return Err(Error::InvalidArgument(
            "homogeneous lifting cannot represent linear terms or bounds".into(),
        ));
    }
    let dim = match mode {
        LiftMode::Homogeneous => n,
        LiftMode::Moment => n + 1,
    };
    let bounds: Vec<(f64, f64)> = (0..n).map(|i| instance.bound(i)).collect();
    let mut model = LiftedModel {
        instance: instance.clone(),
        options,
        mode,
        dim,
        bounds,
        objective: Vec::new(),
        objective_constant: instance.objective.c,
        rows: Vec::new(),
        row_kinds: Vec::new(),
        cut_pool: Vec::new(),
    };
    let linear_row = |m: &LiftedModel, e: &Quadratic| -> Vec<(usize, f64)> {
        let mut coeffs: Vec<(usize, f64)> = e.q.iter().map(|&(i, j, v)| (m.product_var(i, j), v)).collect();
        for &(i, v) in &e.l {
            coeffs.push((m.linear_var(i).expect("moment layout"), v));
        }
        coeffs
    };
    let mut rows = Vec::new();
    let mut kinds = Vec::new();
    let mut obj = Vec::new();
    push(&mut obj, &mut Vec::new(), linear_row(&model, &instance.objective), 0.0, RowKind::Unit);
    model.objective = obj.pop().map(|r| r.coeffs).unwrap_or_default();

    if mode == LiftMode::Moment {
        let one = model.var(0, 0);
        push(&mut rows, &mut kinds, vec![(one, 1.0)], 1.0, RowKind::Unit);
        push(&mut rows, &mut kinds, vec![(one, -1.0)], -1.0, RowKind::Unit);
    }
    for (k, con) in instance.constraints.iter().enumerate() {
        let coeffs = linear_row(&model, &con.expr);
        let rhs = con.rhs - con.expr.c;
        let neg: Vec<(usize, f64)> = coeffs.iter().map(|&(j, v)| (j, -v)).collect();
        match con.sense {
            Sense::Le => push(&mut rows, &mut kinds, coeffs, rhs, RowKind::Constraint(k)),
            Sense::Ge => push(&mut rows, &mut kinds, neg, -rhs, RowKind::Constraint(k)),
            Sense::Eq => {
                push(&mut rows, &mut kinds, coeffs, rhs, RowKind::Constraint(k));
                push(&mut rows, &mut kinds, neg, -rhs, RowKind::Constraint(k));
            }
        }
    }
    if mode == LiftMode::Moment {
        for i in 0..n {
            let (l, u) = model.bounds[i];
            let xi = model.var(0, i + 1);
            if l.is_finite() {
                push(&mut rows, &mut kinds, vec![(xi, -1.0)], -l, RowKind::Bound(i));
            }
            if u.is_finite() {
                push(&mut rows, &mut kinds, vec![(xi, 1.0)], u, RowKind::Bound(i));
            }
        }
        for i in 0..n {
            for j in i..n {
                let (li, ui) = model.bounds[i];
                let (lj, uj) = model.bounds[j];
                if ![li, ui, lj, uj].iter().all(|v| v.is_finite()) {
                    continue;
                }
                let (xi, xj, xij) = (model.var(0, i + 1), model.var(0, j + 1), model.var(i + 1, j + 1));
                let kind = RowKind::McCormick(i, j);
                push(&mut rows, &mut kinds, vec![(xi, lj), (xj, li), (xij, -1.0)], li * lj, kind);
                push(&mut rows, &mut kinds, vec![(xi, uj), (xj, ui), (xij, -1.0)], ui * uj, kind);
                if i != j {
                    push(&mut rows, &mut kinds, vec![(xij, 1.0), (xi, -uj), (xj, -li)], -li * uj, kind);
                    push(&mut rows, &mut kinds, vec![(xij, 1.0), (xi, -lj), (xj, -ui)], -ui * lj, kind);
                } else if !options.weak_rlt {
                    push(&mut rows, &mut kinds, vec![(xij, 1.0), (xi, -(li + ui))], -li * ui, kind);
                } else {
                    let (_, hi) = interval_product((li, ui), (li, ui), true);
                    push(&mut rows, &mut kinds, vec![(xij, 1.0)], hi, RowKind::ProductCap(i, i));
                }
            }
        }
    }
    model.rows = rows;
    model.row_kinds = kinds;
    Ok(model)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Extracted {
    pub x: Vec<f64>,
    pub matrix: SymMatrix,
    /// `||X - v v^T||_F` with `v = [1; x]` (moment) or `v = x` (homogeneous).
    pub rank1_residual: f64,
}

pub fn extract_solution(model: &LiftedModel, point: &[f64]) -> Result<Extracted> {
    if point.len() != model.num_vars() {
        return Err(Error::DimensionMismatch {
            expected: model.num_vars(),
            got: point.len(),
        });
    }
    let matrix = model.matrix(point)?;
    let x: Vec<f64> = match model.mode {
        LiftMode::Moment => (0..model.instance.n).map(|i| matrix.get(0, i + 1)).collect(),
        LiftMode::Homogeneous => {
            // leading eigenpair; the sign of x is not identifiable
            let eig = spectral_decompose(&matrix)?;
            let lam = eig.eigenvalues.first().copied().unwrap_or(0.0).max(0.0);
            eig.eigenvectors
                .first()
                .map(|v| v.iter().map(|c| c * lam.sqrt()).collect())
                .unwrap_or_default()
        }
    };
    let residual = matrix
        .sub(&SymMatrix::from_packed(model.dim, model.lift_point(&x))?)
        .frobenius_norm();
    Ok(Extracted {
        x,
        matrix,
        rank1_residual: residual,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tightening {
    /// LP variables whose range was optimised: `x_i` (moment) or `X_ii`
    /// (homogeneous).
    pub targets: Vec<usize>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Directions in which the LP was unbounded or failed; the old bound
    /// was kept.
    pub unbounded: usize,
}

/// Minimises and maximises each target variable over the current model.
pub fn compute_tightening(model: &LiftedModel, lp: &mut dyn LpBackend) -> Result<Tightening> {
    let n = model.instance.n;
    let targets: Vec<usize> = (0..n)
        .map(|i| model.linear_var(i).unwrap_or_else(|| model.product_var(i, i)))
        .collect();
    let mut lower = Vec::with_capacity(n);
    let mut upper = Vec::with_capacity(n);
    let mut unbounded = 0;
    let base = model.lp_problem();
    for (i, &t) in targets.iter().enumerate() {
        let (l0, u0) = match model.mode {
            LiftMode::Moment => model.bounds[i],
            LiftMode::Homogeneous => (0.0, f64::INFINITY),
        };
        let mut range = [l0, u0];
        for (side, sign) in [(0usize, 1.0), (1, -1.0)] {
            let mut p = base.clone();
            p.objective = vec![(t, sign)];
            let r = lp.solve(&p)?;
            match r.status {
                LpStatus::Optimal => {
                    let v = r.point[t];
                    if side == 0 {
                        range[0] = range[0].max(v);
                    } else {
                        range[1] = range[1].min(v);
                    }
                }
                LpStatus::Infeasible => {
                    return Err(Error::Lp("relaxation infeasible during bound tightening".into()))
                }
                _ => unbounded += 1,
            }
        }
        if range[0] > range[1] {
            // round-off on a fixed variable
            let mid = 0.5 * (range[0] + range[1]);
            range = [mid, mid];
        }
        lower.push(range[0]);
        upper.push(range[1]);
    }
    Ok(Tightening {
        targets,
        lower,
        upper,
        unbounded,
    })
}

/// Applies tightened ranges: new variable bounds and rebuilt McCormick rows
/// (moment), or explicit rows on the diagonal (homogeneous).
pub fn apply_tightening(model: &LiftedModel, t: &Tightening) -> Result<LiftedModel> {
    match model.mode {
        LiftMode::Moment => {
            let mut inst = model.instance.clone();
            inst.bounds = t
                .lower
                .iter()
                .zip(&t.upper)
                .map(|(&l, &u)| (l.is_finite().then_some(l), u.is_finite().then_some(u)))
                .collect();
            let mut m = lift(&inst, model.options)?;
            m.cut_pool = model.cut_pool.clone();
            Ok(m)
        }
        LiftMode::Homogeneous => {
            let mut m = model.clone();
            for (i, (&var, (&l, &u))) in t.targets.iter().zip(t.lower.iter().zip(&t.upper)).enumerate() {
                if l.is_finite() && l > 0.0 {
                    push(&mut m.rows, &mut m.row_kinds, vec![(var, -1.0)], -l, RowKind::Tightened(i));
                }
                if u.is_finite() {
                    push(&mut m.rows, &mut m.row_kinds, vec![(var, 1.0)], u, RowKind::Tightened(i));
                }
            }
            Ok(m)
        }
    }
}

/// LP-based bound tightening followed by a rebuild of the affected rows.
pub fn tighten_bounds(model: &LiftedModel, lp: &mut dyn LpBackend) -> Result<(LiftedModel, Tightening)> {
    let t = compute_tightening(model, lp)?;
    Ok((apply_tightening(model, &t)?, t))
}
