//! Simplicial cones, step lengths and the closed-form intersection cut.
//!
//! Cuts are stored as `direction * (coeffs . x - rhs) <= 0`. Cuts built by
//! [`emit_cut`] always have `direction = +1`.

use crate::dense::{quadratic_roots, Square};
use crate::opf::{Halfspace, OpfSet, ShiftedCone};
use crate::symmat::{min_eig_2x2, packed_len, SymMatrix};
use crate::{Error, Result};
use serde::Serialize;

/// Bases whose condition estimate exceeds this are rejected.
pub const MAX_CONDITION: f64 = 1e12;

#[derive(Debug, Clone)]
pub struct SimplicialCone {
    pub apex: Vec<f64>,
    pub basis_rows: Vec<Vec<f64>>,
    pub rhs: Vec<f64>,
    /// `rays[j]` is column `j` of `-A_B^{-1}`, so `A_B r_j = -e_j`.
    pub rays: Vec<Vec<f64>>,
    pub condition: f64,
}

impl SimplicialCone {
    pub fn dim(&self) -> usize {
        self.apex.len()
    }

    /// `apex + sum_j mu_j r_j`.
    pub fn point(&self, mu: &[f64]) -> Vec<f64> {
        let mut p = self.apex.clone();
        for (m, r) in mu.iter().zip(&self.rays) {
            if *m != 0.0 {
                for (pi, ri) in p.iter_mut().zip(r) {
                    *pi += m * ri;
                }
            }
        }
        p
    }
}

pub fn build_cone(basis_rows: Vec<Vec<f64>>, rhs: Vec<f64>, apex: Vec<f64>) -> Result<SimplicialCone> {
    let n = apex.len();
    if basis_rows.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: basis_rows.len(),
        });
    }
    if rhs.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: rhs.len(),
        });
    }
    if let Some(r) = basis_rows.iter().find(|r| r.len() != n) {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: r.len(),
        });
    }
    if !apex.iter().chain(&rhs).chain(basis_rows.iter().flatten()).all(|v| v.is_finite()) {
        return Err(Error::NonFinite);
    }
    let a = Square::from_rows(&basis_rows);
    let inv = a.inverse().ok_or(Error::DegenerateBasis {
        condition: f64::INFINITY,
    })?;
    let condition = a.norm1() * inv.norm1();
    if !(condition <= MAX_CONDITION) {
        return Err(Error::DegenerateBasis { condition });
    }
    let bmax = rhs.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let resid = a
        .mul_vec(&apex)
        .iter()
        .zip(&rhs)
        .fold(0.0f64, |m, (l, r)| m.max((l - r).abs()));
    if resid > 1e-7 * bmax {
        return Err(Error::InvalidArgument(format!(
            "apex is not on the basis rows (residual {resid:e})"
        )));
    }
    let rays = (0..n)
        .map(|j| inv.column(j).into_iter().map(|v| -v).collect())
        .collect();
    Ok(SimplicialCone {
        apex,
        basis_rows,
        rhs,
        rays,
        condition,
    })
}

fn interior_check(set: &OpfSet, apex: &SymMatrix) -> Result<()> {
    let margin = set.margin(apex);
    if margin > 0.0 {
        Ok(())
    } else {
        Err(Error::ApexNotInterior { margin })
    }
}

fn smallest_positive(roots: &[f64], accept: impl Fn(f64) -> bool) -> Option<f64> {
    roots
        .iter()
        .copied()
        .filter(|&t| t > 0.0 && t.is_finite() && accept(t))
        .fold(None, |best: Option<f64>, t| Some(best.map_or(t, |b| b.min(t))))
}

fn largest(roots: &[f64], accept: impl Fn(f64) -> bool) -> Option<f64> {
    roots
        .iter()
        .copied()
        .filter(|&t| t.is_finite() && accept(t))
        .fold(None, |best: Option<f64>, t| Some(best.map_or(t, |b| b.max(t))))
}

/// Coefficients `(a', b', c')` of the quadratic whose positive root is the
/// step from `apex` along `ray` to the shifted cone boundary.
pub fn shifted_cone_step_coeffs(cone: &ShiftedCone, apex: &SymMatrix, ray: &SymMatrix) -> (f64, f64, f64) {
    let xc = &cone.axis;
    let m = cone.axis_norm();
    let q2 = cone.radius * cone.radius;
    let den = m * m - q2;
    let nx = xc.inner_unchecked(apex);
    let nd = xc.inner_unchecked(ray);
    let z3 = apex.scaled(m).axpy(-nx / m, xc);
    let z4 = ray.scaled(m).axpy(-nd / m, xc);
    let a = q2 * nd * nd / den - z4.inner_unchecked(&z4);
    let b = 2.0 * q2 * nx * nd / den - 2.0 * z3.inner_unchecked(&z4);
    let c = q2 * nx * nx / den - z3.inner_unchecked(&z3);
    (a, b, c)
}

/// Coefficients `(a, b, c)` in `y` of the condition that
/// `lambda_m ray_m - y ray_k` lies on the boundary of the shifted cone.
pub fn shifted_cone_strengthen_coeffs(
    cone: &ShiftedCone,
    ray_k: &SymMatrix,
    ray_m: &SymMatrix,
    lambda_m: f64,
) -> (f64, f64, f64) {
    let xc = &cone.axis;
    let m = cone.axis_norm();
    let q2 = cone.radius * cone.radius;
    let den = m * m - q2;
    let w0 = ray_m.scaled(lambda_m);
    let nw = xc.inner_unchecked(&w0);
    let nk = xc.inner_unchecked(ray_k);
    let z1 = w0.scaled(m).axpy(-nw / m, xc);
    let z2 = xc.scaled(nk / m).axpy(-m, ray_k);
    let a = q2 * nk * nk / den - z2.inner_unchecked(&z2);
    let b = -2.0 * q2 * nw * nk / den - 2.0 * z1.inner_unchecked(&z2);
    let c = q2 * nw * nw / den - z1.inner_unchecked(&z1);
    (a, b, c)
}

fn psd_2x2(d: [f64; 3]) -> bool {
    let scale = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    min_eig_2x2(d[0], d[1], d[2]) >= -1e-12 * scale
}

/// Distance along `ray` from `apex` to the boundary of `set`; `+inf` when
/// the ray never leaves the set.
pub fn step_length(set: &OpfSet, apex: &SymMatrix, ray: &SymMatrix) -> Result<f64> {
    if apex.dim() != ray.dim() {
        return Err(Error::DimensionMismatch {
            expected: apex.dim(),
            got: ray.dim(),
        });
    }
    interior_check(set, apex)?;
    let fail = |what: &str| Error::NumericalFailure(format!("{what}: no admissible root"));
    match set {
        OpfSet::OracleBall { center, radius } => {
            let dd = ray.inner_unchecked(ray);
            if dd == 0.0 {
                return Ok(f64::INFINITY);
            }
            let off = apex.sub(center);
            let roots = quadratic_roots(
                dd,
                2.0 * ray.inner_unchecked(&off),
                off.inner_unchecked(&off) - radius * radius,
            );
            smallest_positive(&roots, |_| true).ok_or_else(|| fail("ball"))
        }
        OpfSet::NsdHalfspace(Halfspace { normal, offset }) => {
            let rate = normal.inner_unchecked(ray);
            if rate >= 0.0 {
                return Ok(f64::INFINITY);
            }
            Ok((normal.inner_unchecked(apex) - offset) / -rate)
        }
        OpfSet::TwoByTwoCone { i, j } => {
            let d = ray.principal_2x2(*i, *j);
            if psd_2x2(d) {
                return Ok(f64::INFINITY);
            }
            let [x11, x12, x22] = apex.principal_2x2(*i, *j);
            let [d11, d12, d22] = d;
            let roots = quadratic_roots(
                d12 * d12 - d11 * d22,
                2.0 * d12 * x12 - d11 * x22 - d22 * x11,
                x12 * x12 - x11 * x22,
            );
            let tr = |t: f64| x11 + x22 + t * (d11 + d22) >= 0.0;
            smallest_positive(&roots, tr).ok_or_else(|| fail("2x2 cone"))
        }
        OpfSet::ShiftedCone(cone) => {
            if cone.contains_direction(ray) {
                return Ok(f64::INFINITY);
            }
            let (a, b, c) = shifted_cone_step_coeffs(cone, apex, ray);
            let xc = &cone.axis;
            let scale = xc.inner_unchecked(apex).abs() + xc.inner_unchecked(ray).abs();
            let upper = |t: f64| xc.inner_unchecked(&apex.axpy(t, ray)) >= -1e-12 * scale;
            smallest_positive(&quadratic_roots(a, b, c), upper).ok_or_else(|| fail("shifted cone"))
        }
    }
}

/// Largest `y` with `lambda_m ray_m - y ray_k` in the recession cone of
/// `set`. `None` when no such root exists or the set has no unbounded
/// directions; the caller then keeps the infinite step.
pub fn strengthen_step(
    set: &OpfSet,
    ray_k: &SymMatrix,
    ray_m: &SymMatrix,
    lambda_m: f64,
) -> Result<Option<f64>> {
    if ray_k.dim() != ray_m.dim() {
        return Err(Error::DimensionMismatch {
            expected: ray_m.dim(),
            got: ray_k.dim(),
        });
    }
    if !lambda_m.is_finite() {
        return Err(Error::InvalidArgument("reference step must be finite".into()));
    }
    Ok(match set {
        OpfSet::OracleBall { .. } => None,
        OpfSet::NsdHalfspace(h) => {
            let rk = h.normal.inner_unchecked(ray_k);
            let rm = lambda_m * h.normal.inner_unchecked(ray_m);
            if rk > 1e-14 * (rk.abs() + rm.abs()) {
                Some(rm / rk)
            } else {
                None
            }
        }
        OpfSet::TwoByTwoCone { i, j } => {
            let [m11, m12, m22] = ray_m.principal_2x2(*i, *j).map(|v| v * lambda_m);
            let [k11, k12, k22] = ray_k.principal_2x2(*i, *j);
            let roots = quadratic_roots(
                k11 * k22 - k12 * k12,
                -(m11 * k22 + m22 * k11) + 2.0 * m12 * k12,
                m11 * m22 - m12 * m12,
            );
            let scale = m11.abs() + m22.abs() + k11.abs() + k22.abs();
            largest(&roots, |y| m11 + m22 - y * (k11 + k22) >= -1e-12 * scale)
        }
        OpfSet::ShiftedCone(cone) => {
            let (a, b, c) = shifted_cone_strengthen_coeffs(cone, ray_k, ray_m, lambda_m);
            let xc = &cone.axis;
            let nw = lambda_m * xc.inner_unchecked(ray_m);
            let nk = xc.inner_unchecked(ray_k);
            let scale = nw.abs() + nk.abs();
            largest(&quadratic_roots(a, b, c), |y| nw - y * nk >= -1e-12 * scale)
        }
    })
}

#[derive(Debug, Clone, Copy)]
pub struct CutOptions {
    /// Relative backstep applied to every finite step.
    pub backstep: f64,
    pub strengthen: bool,
    /// Cuts with `max|pi| / min|pi|` above this are rejected.
    pub max_dynamic_range: f64,
}

impl Default for CutOptions {
    fn default() -> Self {
        Self {
            backstep: 1e-9,
            strengthen: true,
            max_dynamic_range: 1e10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepLengths {
    /// Positive reals, `+inf`, or negative values on strengthened entries.
    pub values: Vec<f64>,
    pub strengthened: Vec<bool>,
    /// Infinite rays for which no strengthening root existed.
    pub strengthen_failures: usize,
}

impl StepLengths {
    pub fn unstrengthened(values: Vec<f64>) -> Self {
        let n = values.len();
        Self {
            values,
            strengthened: vec![false; n],
            strengthen_failures: 0,
        }
    }
}

fn matrix_dim(len: usize) -> Result<usize> {
    let mut n = 0;
    while packed_len(n) < len {
        n += 1;
    }
    if packed_len(n) == len {
        Ok(n)
    } else {
        Err(Error::InvalidArgument(format!(
            "vector length {len} is not a packed triangle"
        )))
    }
}

/// Step lengths for every ray of `cone`, whose points are packed matrices.
pub fn compute_steps(set: &OpfSet, cone: &SimplicialCone, opts: &CutOptions) -> Result<StepLengths> {
    let dim = matrix_dim(cone.dim())?;
    let apex = SymMatrix::from_packed(dim, cone.apex.clone())?;
    let rays: Vec<SymMatrix> = cone
        .rays
        .iter()
        .map(|r| SymMatrix::from_packed(dim, r.clone()))
        .collect::<Result<_>>()?;
    let mut values = rays
        .iter()
        .map(|r| step_length(set, &apex, r).map(|l| l * (1.0 - opts.backstep)))
        .collect::<Result<Vec<f64>>>()?;
    let mut steps = StepLengths::unstrengthened(values.clone());
    if !opts.strengthen {
        return Ok(steps);
    }
    // Rotating ray k towards one finite ray only keeps the cut valid on that
    // 2-face; validity on the whole cone needs every finite ray as reference.
    let finite: Vec<usize> = (0..values.len()).filter(|&j| values[j].is_finite()).collect();
    if finite.is_empty() {
        return Ok(steps);
    }
    for k in 0..values.len() {
        if values[k].is_finite() {
            continue;
        }
        let mut best = f64::INFINITY;
        for &j in &finite {
            match strengthen_step(set, &rays[k], &rays[j], values[j])? {
                Some(y) => best = best.min(y),
                None => {
                    best = f64::NAN;
                    break;
                }
            }
        }
        let floor = finite.iter().fold(1.0f64, |m, &j| m.max(values[j]));
        if best < -1e-9 * floor {
            values[k] = best * (1.0 + opts.backstep);
            steps.strengthened[k] = true;
        } else {
            steps.strengthen_failures += 1;
        }
    }
    steps.values = values;
    Ok(steps)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum CutFamily {
    OracleBall,
    StrengthenedOracle,
    TwoByTwo,
    OuterApproximation,
    DistanceOracle,
}

impl CutFamily {
    pub const ALL: [CutFamily; 5] = [
        CutFamily::OracleBall,
        CutFamily::StrengthenedOracle,
        CutFamily::TwoByTwo,
        CutFamily::OuterApproximation,
        CutFamily::DistanceOracle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CutFamily::OracleBall => "oracle",
            CutFamily::StrengthenedOracle => "strengthened",
            CutFamily::TwoByTwo => "2x2",
            CutFamily::OuterApproximation => "oa",
            CutFamily::DistanceOracle => "distance-oracle",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cut {
    pub coeffs: Vec<(usize, f64)>,
    pub rhs: f64,
    pub direction: f64,
    pub family: CutFamily,
    pub violation: f64,
    pub iteration: usize,
}

impl Cut {
    /// `direction * (coeffs . x - rhs)`; positive means violated.
    pub fn evaluate(&self, x: &[f64]) -> f64 {
        let lhs: f64 = self.coeffs.iter().map(|&(j, v)| v * x[j]).sum();
        self.direction * (lhs - self.rhs)
    }

    pub fn l1_norm(&self) -> f64 {
        self.coeffs.iter().map(|(_, v)| v.abs()).sum()
    }

    /// Normalised violation `evaluate(x) / ||pi||_1`.
    pub fn violation_at(&self, x: &[f64]) -> f64 {
        let n = self.l1_norm();
        if n == 0.0 {
            0.0
        } else {
            self.evaluate(x) / n
        }
    }

    /// The cut as `a . x <= b`.
    pub fn as_leq(&self) -> (Vec<(usize, f64)>, f64) {
        let s = self.direction;
        (self.coeffs.iter().map(|&(j, v)| (j, s * v)).collect(), s * self.rhs)
    }

    pub fn dense_coeffs(&self, n: usize) -> Vec<f64> {
        let mut v = vec![0.0; n];
        for &(j, c) in &self.coeffs {
            v[j] = c;
        }
        v
    }

    pub fn dynamic_range(&self) -> f64 {
        let (lo, hi) = self
            .coeffs
            .iter()
            .map(|(_, v)| v.abs())
            .filter(|v| *v > 0.0)
            .fold((f64::INFINITY, 0.0f64), |(lo, hi), v| (lo.min(v), hi.max(v)));
        if hi == 0.0 {
            1.0
        } else {
            hi / lo
        }
    }
}

/// Assembles `pi = sum_i a_i / lambda_i`, `pi0 = sum_i b_i / lambda_i - 1`.
pub fn emit_cut(cone: &SimplicialCone, steps: &StepLengths, family: CutFamily, opts: &CutOptions) -> Result<Cut> {
    let n = cone.dim();
    if steps.values.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: steps.values.len(),
        });
    }
    if steps.values.iter().all(|v| v.is_infinite()) {
        return Err(Error::InvalidArgument("no cut: every step is infinite".into()));
    }
    let mut pi = vec![0.0; n];
    let mut pi0 = -1.0;
    for ((row, b), &lam) in cone.basis_rows.iter().zip(&cone.rhs).zip(&steps.values) {
        if lam.is_infinite() {
            continue;
        }
        if lam == 0.0 || lam.is_nan() {
            return Err(Error::NumericalFailure(format!("invalid step {lam}")));
        }
        let w = 1.0 / lam;
        for (p, a) in pi.iter_mut().zip(row) {
            *p += w * a;
        }
        pi0 += w * b;
    }
    let big = pi.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let coeffs: Vec<(usize, f64)> = pi
        .into_iter()
        .enumerate()
        .filter(|(_, v)| v.abs() > 1e-13 * big)
        .collect();
    let mut cut = Cut {
        coeffs,
        rhs: pi0,
        direction: 1.0,
        family,
        violation: 0.0,
        iteration: 0,
    };
    let at_apex = cut.evaluate(&cone.apex);
    if !(at_apex.abs() > 0.0) {
        return Err(Error::NumericalFailure("cut does not separate the apex".into()));
    }
    cut.direction = at_apex.signum();
    cut.violation = cut.violation_at(&cone.apex);
    if cut.dynamic_range() > opts.max_dynamic_range {
        return Err(Error::NumericalFailure(format!(
            "cut dynamic range {:e} too large",
            cut.dynamic_range()
        )));
    }
    Ok(cut)
}

/// Steps plus assembly for one OPF set.
pub fn intersection_cut(set: &OpfSet, cone: &SimplicialCone, family: CutFamily, opts: &CutOptions) -> Result<Cut> {
    let steps = compute_steps(set, cone, opts)?;
    emit_cut(cone, &steps, family, opts)
}
