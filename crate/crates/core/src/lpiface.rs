//! LP contract used by the cutting-plane loop, plus a dense dual simplex.
//!
//! Problems are `min c.x  s.t.  A x <= b` over free variables. A basis is a
//! set of `n` rows of `A`; the simplex keeps the explicit inverse of the
//! basis matrix so the cone rays `-A_B^{-1}` are available directly.

use crate::dense::{dot, Square};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LpRow {
    pub coeffs: Vec<(usize, f64)>,
    pub rhs: f64,
}

impl LpRow {
    pub fn new(coeffs: Vec<(usize, f64)>, rhs: f64) -> Self {
        Self { coeffs, rhs }
    }

    pub fn from_dense(coeffs: &[f64], rhs: f64) -> Self {
        let coeffs = coeffs
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(j, v)| (j, *v))
            .collect();
        Self { coeffs, rhs }
    }

    pub fn activity(&self, x: &[f64]) -> f64 {
        self.coeffs.iter().map(|&(j, v)| v * x[j]).sum()
    }

    pub fn dense(&self, n: usize) -> Vec<f64> {
        let mut v = vec![0.0; n];
        for &(j, c) in &self.coeffs {
            v[j] += c;
        }
        v
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LpProblem {
    pub num_cols: usize,
    pub objective: Vec<(usize, f64)>,
    pub rows: Vec<LpRow>,
}

impl LpProblem {
    pub fn new(num_cols: usize) -> Self {
        Self {
            num_cols,
            ..Self::default()
        }
    }

    pub fn add_row(&mut self, coeffs: Vec<(usize, f64)>, rhs: f64) -> usize {
        self.rows.push(LpRow::new(coeffs, rhs));
        self.rows.len() - 1
    }

    pub fn dense_objective(&self) -> Vec<f64> {
        let mut c = vec![0.0; self.num_cols];
        for &(j, v) in &self.objective {
            c[j] += v;
        }
        c
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective.iter().map(|&(j, v)| v * x[j]).sum()
    }

    /// Largest `a_i.x - b_i` over all rows (`-inf` with no rows).
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        self.rows
            .iter()
            .map(|r| r.activity(x) - r.rhs)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn validate(&self) -> Result<()> {
        let check = |coeffs: &[(usize, f64)]| -> Result<()> {
            for &(j, v) in coeffs {
                if j >= self.num_cols {
                    return Err(Error::InvalidArgument(format!(
                        "column {j} out of range ({} columns)",
                        self.num_cols
                    )));
                }
                if !v.is_finite() {
                    return Err(Error::NonFinite);
                }
            }
            Ok(())
        };
        check(&self.objective)?;
        for r in &self.rows {
            check(&r.coeffs)?;
            if !r.rhs.is_finite() {
                return Err(Error::NonFinite);
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    NumericalFailure,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpResult {
    pub status: LpStatus,
    pub point: Vec<f64>,
    pub value: f64,
    /// Row indices of the optimal basis; fewer than `num_cols` only when the
    /// optimal face contains a line.
    pub basis: Vec<usize>,
    /// `||A_B||_1 ||A_B^{-1}||_1` on the row-scaled basis.
    pub condition: f64,
    pub iterations: usize,
    pub message: Option<String>,
}

impl LpResult {
    fn failed(status: LpStatus, iterations: usize, message: impl Into<String>) -> Self {
        Self {
            status,
            point: Vec::new(),
            value: f64::NAN,
            basis: Vec::new(),
            condition: f64::INFINITY,
            iterations,
            message: Some(message.into()),
        }
    }

    pub fn is_optimal(&self) -> bool {
        self.status == LpStatus::Optimal
    }
}

pub trait LpBackend: Send {
    fn solve(&mut self, problem: &LpProblem) -> Result<LpResult>;

    /// Appends rows to the last solved problem and re-optimises.
    fn add_rows_and_resolve(&mut self, rows: &[LpRow]) -> Result<LpResult>;

    /// The problem as currently held, including appended rows.
    fn problem(&self) -> Option<&LpProblem>;
}

#[derive(Debug, Clone, Copy)]
pub struct SimplexSettings {
    /// Rows violated by more than `primal_tol * (1 + |b|)` (after scaling
    /// rows to unit infinity norm) are infeasible.
    pub primal_tol: f64,
    pub pivot_tol: f64,
    pub refactor_every: usize,
    /// Non-improving pivots before switching to Bland's rule.
    pub stall_limit: usize,
    pub max_iterations: Option<usize>,
    pub entering: EnteringRule,
    /// At a degenerate optimum, trade basis rows for tight single-variable
    /// rows (then lower indices) while keeping the point and optimality.
    pub prefer_bound_rows: bool,
}

/// Choice of the violated row that enters the basis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EnteringRule {
    /// Largest violation of the row-scaled system, lowest index on ties.
    #[default]
    MostViolated,
    /// Lowest-index violated row.
    LowestIndex,
    /// Bland's rule throughout: lowest-index row enters, lowest-index basic
    /// row leaves among ratio ties.
    Bland,
}

impl Default for SimplexSettings {
    fn default() -> Self {
        Self {
            primal_tol: 1e-9,
            pivot_tol: 1e-9,
            refactor_every: 64,
            stall_limit: 50,
            max_iterations: None,
            entering: EnteringRule::default(),
            prefer_bound_rows: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum BasisRow {
    Real(usize),
    /// `sign * x_j <= big`.
    Box(usize, f64),
}

impl BasisRow {
    /// Ordering key for Bland's rule; box rows sort last.
    fn key(self, m: usize) -> usize {
        match self {
            BasisRow::Real(i) => i,
            BasisRow::Box(j, _) => m + j,
        }
    }
}

#[derive(Debug, Clone)]
struct State {
    problem: LpProblem,
    c: Vec<f64>,
    rows: Vec<Vec<f64>>,
    rhs: Vec<f64>,
    big: f64,
    basis: Vec<BasisRow>,
    binv: Square,
    y: Vec<f64>,
    x: Vec<f64>,
    in_basis: Vec<bool>,
    since_refactor: usize,
    iterations: usize,
}

/// Dense dual simplex over row bases with deterministic pivoting: most
/// violated row enters (lowest index on ties), falling back to Bland's rule
/// after a stall.
#[derive(Debug, Clone, Default)]
pub struct DenseDualSimplex {
    pub settings: SimplexSettings,
    state: Option<State>,
    last_ok: bool,
}

enum Phase {
    Done,
    Infeasible,
    Failed(String),
}

impl DenseDualSimplex {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_settings(settings: SimplexSettings) -> Self {
        Self {
            settings,
            ..Self::default()
        }
    }

    fn scaled_row(row: &LpRow, n: usize) -> (Vec<f64>, f64) {
        let mut a = row.dense(n);
        let s = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if s > 0.0 {
            for v in &mut a {
                *v /= s;
            }
            (a, row.rhs / s)
        } else {
            (a, row.rhs)
        }
    }

    fn init(problem: &LpProblem) -> State {
        let n = problem.num_cols;
        let c = problem.dense_objective();
        let (rows, rhs): (Vec<_>, Vec<_>) = problem.rows.iter().map(|r| Self::scaled_row(r, n)).unzip();
        let bmax = problem.rows.iter().fold(0.0f64, |m, r| m.max(r.rhs.abs()));
        let big = (100.0 * bmax).max(1e6);
        let mut binv = Square::zeros(n);
        let mut basis = Vec::with_capacity(n);
        let mut y = Vec::with_capacity(n);
        for j in 0..n {
            let s = if c[j] < 0.0 { 1.0 } else { -1.0 };
            basis.push(BasisRow::Box(j, s));
            binv.data[j * n + j] = s;
            y.push(c[j].abs());
        }
        let m = rows.len();
        State {
            problem: problem.clone(),
            c,
            rows,
            rhs,
            big,
            basis,
            binv,
            y,
            x: vec![0.0; n],
            in_basis: vec![false; m],
            since_refactor: 0,
            iterations: 0,
        }
    }

    fn run(&mut self) -> LpResult {
        let settings = self.settings;
        let st = self.state.as_mut().expect("state initialised");
        let n = st.problem.num_cols;
        let limit = settings
            .max_iterations
            .unwrap_or_else(|| 10_000.max(50 * (st.rows.len() + n)));
        let result = loop {
            match dual_phase(st, &settings, limit) {
                Phase::Done => {}
                Phase::Infeasible => break LpResult::failed(LpStatus::Infeasible, st.iterations, "dual ray found"),
                Phase::Failed(msg) => break LpResult::failed(LpStatus::NumericalFailure, st.iterations, msg),
            }
            match drop_box_rows(st, &settings) {
                Ok(true) => continue,
                Ok(false) => {}
                Err(r) => break r,
            }
            break finish(st, &settings);
        };
        self.last_ok = result.is_optimal();
        result
    }
}

fn basis_row(st: &State, b: BasisRow) -> (Vec<f64>, f64) {
    match b {
        BasisRow::Real(i) => (st.rows[i].clone(), st.rhs[i]),
        BasisRow::Box(j, s) => {
            let mut a = vec![0.0; st.x.len()];
            a[j] = s;
            (a, st.big)
        }
    }
}

fn basis_rhs(st: &State) -> Vec<f64> {
    st.basis
        .iter()
        .map(|b| match *b {
            BasisRow::Real(i) => st.rhs[i],
            BasisRow::Box(..) => st.big,
        })
        .collect()
}

fn basis_matrix(st: &State) -> Square {
    let rows: Vec<Vec<f64>> = st.basis.iter().map(|&b| basis_row(st, b).0).collect();
    Square::from_rows(&rows)
}

fn refactor(st: &mut State) -> bool {
    match basis_matrix(st).inverse() {
        Some(inv) => {
            st.binv = inv;
            st.since_refactor = 0;
            // y = -B^{-T} c
            st.y = transpose_mul(&st.binv, &st.c).into_iter().map(|v| (-v).max(0.0)).collect();
            true
        }
        None => false,
    }
}

/// `B^{-T} a`.
fn transpose_mul(binv: &Square, a: &[f64]) -> Vec<f64> {
    let n = binv.n;
    let mut w = vec![0.0; n];
    for (i, &ai) in a.iter().enumerate() {
        if ai != 0.0 {
            for (wj, bij) in w.iter_mut().zip(binv.row(i)) {
                *wj += ai * bij;
            }
        }
    }
    w
}

fn update_x(st: &mut State) {
    let b = basis_rhs(st);
    st.x = st.binv.mul_vec(&b);
}

/// Replaces basis position `k` by real row `r`, given `w = B^{-T} a_r`.
fn pivot(st: &mut State, k: usize, r: usize, w: &[f64]) {
    let n = st.binv.n;
    let wk = w[k];
    let u: Vec<f64> = st.binv.column(k);
    for i in 0..n {
        let f = u[i] / wk;
        if f == 0.0 {
            continue;
        }
        let row = &mut st.binv.data[i * n..(i + 1) * n];
        for (j, rij) in row.iter_mut().enumerate() {
            let e = if j == k { 1.0 } else { 0.0 };
            *rij -= f * (w[j] - e);
        }
    }
    if let BasisRow::Real(old) = st.basis[k] {
        st.in_basis[old] = false;
    }
    st.basis[k] = BasisRow::Real(r);
    st.in_basis[r] = true;
    st.since_refactor += 1;
    st.iterations += 1;
}

fn most_violated(st: &State, tol: f64, bland: bool) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, (a, b)) in st.rows.iter().zip(&st.rhs).enumerate() {
        if st.in_basis[i] {
            continue;
        }
        let v = dot(a, &st.x) - b;
        if v > tol * (1.0 + b.abs()) {
            if bland {
                return Some(i);
            }
            if best.map_or(true, |(_, bv)| v > bv) {
                best = Some((i, v));
            }
        }
    }
    best.map(|(i, _)| i)
}

fn dual_phase(st: &mut State, settings: &SimplexSettings, limit: usize) -> Phase {
    let m = st.rows.len();
    let mut bland = settings.entering == EnteringRule::Bland;
    let mut best_value = f64::NEG_INFINITY;
    let mut stalled = 0usize;
    loop {
        if st.iterations >= limit {
            return Phase::Failed(format!("iteration limit {limit} reached"));
        }
        if st.since_refactor >= settings.refactor_every && !refactor(st) {
            return Phase::Failed("basis became singular".into());
        }
        update_x(st);
        let value = dot(&st.c, &st.x);
        if value > best_value + 1e-12 * (1.0 + value.abs()) {
            best_value = value;
            stalled = 0;
        } else {
            stalled += 1;
            if stalled >= settings.stall_limit {
                bland = true;
            }
        }
        let lowest = bland || settings.entering == EnteringRule::LowestIndex;
        let Some(r) = most_violated(st, settings.primal_tol, lowest) else {
            return Phase::Done;
        };
        let w = transpose_mul(&st.binv, &st.rows[r]);
        let wmax = w.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let ptol = settings.pivot_tol * wmax.max(1.0);
        let mut choice: Option<(usize, f64)> = None;
        for k in 0..w.len() {
            if w[k] <= ptol {
                continue;
            }
            let ratio = st.y[k].max(0.0) / w[k];
            choice = match choice {
                None => Some((k, ratio)),
                Some((bk, br)) => {
                    let tie = (ratio - br).abs() <= 1e-12 * (1.0 + br.abs());
                    let better = if tie {
                        if bland {
                            st.basis[k].key(m) < st.basis[bk].key(m)
                        } else {
                            w[k] > w[bk]
                        }
                    } else {
                        ratio < br
                    };
                    if better {
                        Some((k, ratio))
                    } else {
                        Some((bk, br))
                    }
                }
            };
        }
        let Some((k, t)) = choice else {
            return Phase::Infeasible;
        };
        for (yj, wj) in st.y.iter_mut().zip(&w) {
            *yj = (*yj - t * wj).max(0.0);
        }
        st.y[k] = t;
        pivot(st, k, r, &w);
    }
}

/// Pivots box rows out of the basis. Returns `Ok(true)` when the point
/// moved and primal feasibility should be rechecked.
fn drop_box_rows(st: &mut State, settings: &SimplexSettings) -> Result<bool, LpResult> {
    let cscale = st.c.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let mut moved = false;
    for k in 0..st.basis.len() {
        if !matches!(st.basis[k], BasisRow::Box(..)) {
            continue;
        }
        let u = st.binv.column(k);
        if st.y[k] > 1e-9 * cscale {
            // The box row carries a positive multiplier: moving outward along
            // `u` keeps decreasing the objective.
            let blocked = st.rows.iter().any(|a| dot(a, &u) > settings.pivot_tol);
            return Err(if blocked {
                LpResult::failed(
                    LpStatus::NumericalFailure,
                    st.iterations,
                    "optimum lies outside the artificial box",
                )
            } else {
                LpResult::failed(LpStatus::Unbounded, st.iterations, "recession direction found")
            });
        }
        st.y[k] = 0.0;
        // Zero multiplier: slide along +-u (objective constant) to the first
        // real row that becomes tight.
        let mut best: Option<(usize, f64, f64)> = None;
        for (i, (a, b)) in st.rows.iter().zip(&st.rhs).enumerate() {
            if st.in_basis[i] {
                continue;
            }
            let g = dot(a, &u);
            if g.abs() <= settings.pivot_tol {
                continue;
            }
            let slack = (b - dot(a, &st.x)).max(0.0);
            let t = slack / g.abs();
            if best.map_or(true, |(_, bt, bg)| t < bt - 1e-12 || (t <= bt + 1e-12 && g.abs() > bg.abs())) {
                best = Some((i, t, g));
            }
        }
        let Some((r, _, _)) = best else {
            continue;
        };
        let w = transpose_mul(&st.binv, &st.rows[r]);
        pivot(st, k, r, &w);
        update_x(st);
        moved = true;
    }
    Ok(moved && most_violated(st, settings.primal_tol, false).is_some())
}

/// Lower is preferred: single-variable rows, then other rows, then box rows;
/// ties by index.
fn preference(st: &State, b: BasisRow) -> (u8, usize) {
    match b {
        BasisRow::Real(i) => {
            let nnz = st.rows[i].iter().filter(|v| **v != 0.0).count();
            (if nnz == 1 { 0 } else { 1 }, i)
        }
        BasisRow::Box(j, _) => (2, j),
    }
}

/// Degenerate pivots among tight rows. A row enters only if the row it
/// replaces is less preferred, so the sorted preference vector decreases
/// strictly and the loop terminates. The point never moves because the
/// entering row is tight; dual feasibility is kept by the ratio test, or
/// trivially when the leaving multiplier is zero.
fn prefer_bound_rows(st: &mut State, settings: &SimplexSettings) {
    let n = st.x.len();
    let cscale = st.c.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let mut tight: Vec<usize> = (0..st.rows.len())
        .filter(|&i| (dot(&st.rows[i], &st.x) - st.rhs[i]).abs() <= settings.primal_tol * (1.0 + st.rhs[i].abs()))
        .collect();
    if tight.len() <= n {
        return;
    }
    tight.sort_by_key(|&i| preference(st, BasisRow::Real(i)));
    loop {
        let mut changed = false;
        for &r in &tight {
            if st.in_basis[r] {
                continue;
            }
            let pr = preference(st, BasisRow::Real(r));
            let w = transpose_mul(&st.binv, &st.rows[r]);
            let wmax = w.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            let ok = |k: usize| w[k].abs() >= 1e-7 * wmax.max(1.0);
            let tmin = (0..n)
                .filter(|&k| w[k] > settings.pivot_tol && ok(k))
                .map(|k| st.y[k].max(0.0) / w[k])
                .fold(f64::INFINITY, f64::min);
            let allowed = |k: usize| {
                ok(k)
                    && ((st.y[k] <= 1e-12 * cscale)
                        || (w[k] > settings.pivot_tol && st.y[k] / w[k] <= tmin + 1e-12 * (1.0 + tmin)))
            };
            let Some(k) = (0..n)
                .filter(|&k| allowed(k))
                .max_by_key(|&k| preference(st, st.basis[k]))
            else {
                continue;
            };
            if preference(st, st.basis[k]) <= pr {
                continue;
            }
            let t = if st.y[k] <= 1e-12 * cscale { 0.0 } else { st.y[k] / w[k] };
            for (yj, wj) in st.y.iter_mut().zip(&w) {
                *yj = (*yj - t * wj).max(0.0);
            }
            st.y[k] = t;
            pivot(st, k, r, &w);
            changed = true;
        }
        if !changed {
            break;
        }
    }
}

fn finish(st: &mut State, settings: &SimplexSettings) -> LpResult {
    if settings.prefer_bound_rows {
        prefer_bound_rows(st, settings);
    }
    if !refactor(st) {
        return LpResult::failed(LpStatus::NumericalFailure, st.iterations, "final basis singular");
    }
    update_x(st);
    let condition = basis_matrix(st).norm1() * st.binv.norm1();
    let viol = st
        .rows
        .iter()
        .zip(&st.rhs)
        .map(|(a, b)| (dot(a, &st.x) - b) / (1.0 + b.abs()))
        .fold(0.0f64, f64::max);
    if viol > 1e3 * settings.primal_tol.max(1e-10) {
        return LpResult::failed(
            LpStatus::NumericalFailure,
            st.iterations,
            format!("final point violates a row by {viol:e}"),
        );
    }
    let basis = st
        .basis
        .iter()
        .filter_map(|b| match b {
            BasisRow::Real(i) => Some(*i),
            BasisRow::Box(..) => None,
        })
        .collect();
    LpResult {
        status: LpStatus::Optimal,
        value: st.problem.objective_value(&st.x),
        point: st.x.clone(),
        basis,
        condition,
        iterations: st.iterations,
        message: None,
    }
}

impl LpBackend for DenseDualSimplex {
    fn solve(&mut self, problem: &LpProblem) -> Result<LpResult> {
        problem.validate()?;
        self.state = Some(Self::init(problem));
        Ok(self.run())
    }

    fn add_rows_and_resolve(&mut self, rows: &[LpRow]) -> Result<LpResult> {
        let Some(st) = self.state.as_mut() else {
            return Err(Error::Lp("no problem has been solved yet".into()));
        };
        let n = st.problem.num_cols;
        let mut extended = st.problem.clone();
        extended.rows.extend_from_slice(rows);
        extended.validate()?;
        if !self.last_ok {
            return self.solve(&extended);
        }
        for r in rows {
            let (a, b) = Self::scaled_row(r, n);
            st.rows.push(a);
            st.rhs.push(b);
            st.in_basis.push(false);
        }
        st.problem = extended;
        Ok(self.run())
    }

    fn problem(&self) -> Option<&LpProblem> {
        self.state.as_ref().map(|s| &s.problem)
    }
}
