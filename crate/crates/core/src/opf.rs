//! Outer-product-free sets built around a point to be separated.
//!
//! Every set here has no matrix of the form `s s^T` in its interior, so any
//! point strictly inside it can be cut off by an intersection cut.

use crate::error::{Error, Result};
use crate::symmat::{
    default_tol, min_eig_2x2, spectral_decompose, SpectralDecomposition, SymMatrix,
};

/// Nearest PSD matrix of rank at most `rank`, in Frobenius norm.
#[derive(Debug, Clone)]
pub struct DaxProjection {
    pub nearest: SymMatrix,
    pub distance: f64,
    pub rank: usize,
}

/// Keeps the `min(k, rank)` leading eigenpairs with nonnegative eigenvalue.
pub fn dax_project(x: &SymMatrix, rank: usize) -> Result<DaxProjection> {
    let n = x.dim();
    if rank == 0 || rank >= n.max(1) {
        return Err(Error::InvalidArgument(format!(
            "rank {rank} outside 1..={}",
            n.saturating_sub(1)
        )));
    }
    let eig = spectral_decompose(x)?;
    Ok(dax_from_eig(x, &eig, rank))
}

fn dax_from_eig(x: &SymMatrix, eig: &SpectralDecomposition, rank: usize) -> DaxProjection {
    let nearest = eig.partial_sum(|k, lam| k < rank && lam >= 0.0);
    let distance = x.sub(&nearest).frobenius_norm();
    DaxProjection {
        nearest,
        distance,
        rank,
    }
}

/// `{X : <normal, X> >= offset}`; the cut it yields is `<normal, X> <= offset`.
#[derive(Debug, Clone)]
pub struct Halfspace {
    pub normal: SymMatrix,
    pub offset: f64,
}

impl Halfspace {
    /// Signed value of the defining inequality, positive inside.
    pub fn slack(&self, x: &SymMatrix) -> f64 {
        self.normal.inner_unchecked(x) - self.offset
    }
}

/// Conic hull of the ball `B(axis, radius)`; the apex sits at the origin.
#[derive(Debug, Clone)]
pub struct ShiftedCone {
    pub axis: SymMatrix,
    pub radius: f64,
    axis_norm: f64,
}

impl ShiftedCone {
    pub fn new(axis: SymMatrix, radius: f64) -> Result<Self> {
        let axis_norm = axis.frobenius_norm();
        if !(radius > 0.0) || axis_norm <= radius {
            return Err(Error::InvalidArgument(format!(
                "cone needs ||X_C|| > q > 0 (got {axis_norm}, {radius})"
            )));
        }
        Ok(Self {
            axis,
            radius,
            axis_norm,
        })
    }

    pub fn axis_norm(&self) -> f64 {
        self.axis_norm
    }

    /// Growth of the cone radius per unit of axial distance.
    pub fn slope(&self) -> f64 {
        self.radius / (self.axis_norm * self.axis_norm - self.radius * self.radius).sqrt()
    }

    /// Scalar projection onto the axis.
    pub fn axial(&self, x: &SymMatrix) -> f64 {
        self.axis.inner_unchecked(x) / self.axis_norm
    }

    /// Frobenius distance from `x` to the axis line.
    pub fn distance_to_axis(&self, x: &SymMatrix) -> f64 {
        let t = self.axis.inner_unchecked(x) / (self.axis_norm * self.axis_norm);
        x.axpy(-t, &self.axis).frobenius_norm()
    }

    /// Cone radius minus distance to the axis; positive strictly inside.
    pub fn margin(&self, x: &SymMatrix) -> f64 {
        self.slope() * self.axial(x) - self.distance_to_axis(x)
    }

    /// Whether direction `d` lies in the closed cone (its recession cone).
    pub fn contains_direction(&self, d: &SymMatrix) -> bool {
        let axial = self.axial(d);
        axial >= 0.0 && self.distance_to_axis(d) <= self.slope() * axial
    }
}

#[derive(Debug, Clone)]
pub enum OpfSet {
    OracleBall { center: SymMatrix, radius: f64 },
    ShiftedCone(ShiftedCone),
    NsdHalfspace(Halfspace),
    /// Matrices whose principal submatrix on `{i, j}` is PSD.
    TwoByTwoCone { i: usize, j: usize },
}

impl OpfSet {
    /// Positive iff `x` is strictly inside; magnitude is distance-like.
    pub fn margin(&self, x: &SymMatrix) -> f64 {
        match self {
            OpfSet::OracleBall { center, radius } => radius - x.sub(center).frobenius_norm(),
            OpfSet::ShiftedCone(cone) => cone.margin(x),
            OpfSet::NsdHalfspace(h) => {
                let n = h.normal.frobenius_norm();
                if n > 0.0 {
                    h.slack(x) / n
                } else {
                    h.slack(x)
                }
            }
            OpfSet::TwoByTwoCone { i, j } => {
                let [a, b, c] = x.principal_2x2(*i, *j);
                min_eig_2x2(a, b, c)
            }
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            OpfSet::OracleBall { .. } => "oracle-ball",
            OpfSet::ShiftedCone(_) => "shifted-cone",
            OpfSet::NsdHalfspace(_) => "nsd-halfspace",
            OpfSet::TwoByTwoCone { .. } => "2x2-cone",
        }
    }
}

fn nonseparable(eig: &SpectralDecomposition, x: &SymMatrix) -> bool {
    let tol = default_tol(x);
    let lam1 = eig.eigenvalues.first().copied().unwrap_or(0.0);
    let rest: f64 = eig
        .eigenvalues
        .iter()
        .skip(if lam1 > 0.0 { 1 } else { 0 })
        .map(|l| l * l)
        .sum();
    rest.sqrt() <= tol
}

/// Ball around `x` whose radius is the distance to the nearest outer product.
pub fn oracle_ball(x: &SymMatrix) -> Result<OpfSet> {
    let eig = spectral_decompose(x)?;
    if x.dim() < 2 || nonseparable(&eig, x) {
        return Err(Error::CannotSeparate);
    }
    let proj = dax_from_eig(x, &eig, 1);
    Ok(OpfSet::OracleBall {
        center: x.clone(),
        radius: proj.distance,
    })
}

/// Conic extension of the maximally shifted oracle ball.
///
/// Yields a halfspace when `x` is NSD or its second eigenvalue is
/// nonpositive, and the cone over the shifted ball otherwise.
pub fn shifted_set(x: &SymMatrix) -> Result<OpfSet> {
    let eig = spectral_decompose(x)?;
    if x.dim() < 2 || nonseparable(&eig, x) {
        return Err(Error::CannotSeparate);
    }
    let tol = default_tol(x);
    let lam1 = eig.eigenvalues[0];
    let lam2 = eig.eigenvalues[1];
    if lam1 <= tol {
        let norm = x.frobenius_norm();
        return Ok(OpfSet::NsdHalfspace(Halfspace {
            normal: x.scaled(1.0 / norm),
            offset: 0.0,
        }));
    }
    let top = SymMatrix::outer(&eig.eigenvectors[0]).scaled(lam1);
    let rest = x.sub(&top);
    if lam2 <= tol {
        let offset = rest.inner_unchecked(&top);
        return Ok(OpfSet::NsdHalfspace(Halfspace {
            normal: rest,
            offset,
        }));
    }
    let ratio = lam1 / lam2;
    let axis = top.axpy(ratio, &rest);
    let radius = ratio * rest.frobenius_norm();
    Ok(OpfSet::ShiftedCone(ShiftedCone::new(axis, radius)?))
}

/// Index pairs whose 2x2 principal submatrix is positive definite beyond
/// `1e-9 * max(1, ||x||_F)`, deepest (largest minimum eigenvalue) first.
pub fn select_2x2_cones(x: &SymMatrix) -> Vec<(usize, usize)> {
    let tol = default_tol(x);
    let n = x.dim();
    let mut pairs = Vec::new();
    for i in 0..n {
        if x.get(i, i) <= tol {
            continue;
        }
        for j in (i + 1)..n {
            let [a, b, c] = x.principal_2x2(i, j);
            let depth = min_eig_2x2(a, b, c);
            if depth > tol {
                pairs.push((depth, i, j));
            }
        }
    }
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then((a.1, a.2).cmp(&(b.1, b.2))));
    pairs.into_iter().map(|(_, i, j)| (i, j)).collect()
}

/// Eigenvectors with eigenvalue below `-1e-9 * max(1, ||x||_F)`; each `d`
/// gives the valid inequality `d^T X d >= 0`.
pub fn oa_directions(x: &SymMatrix) -> Result<Vec<Vec<f64>>> {
    let tol = default_tol(x);
    let eig = spectral_decompose(x)?;
    Ok(eig
        .eigenvalues
        .iter()
        .zip(eig.eigenvectors)
        .filter(|(&l, _)| l < -tol)
        .map(|(_, d)| d)
        .collect())
}

/// Radius of the conic hull of a ball (radius `r`, centre at distance `m`
/// from the apex) at axial distance `d`.
pub fn cone_radius_at(m: f64, r: f64, d: f64) -> Result<f64> {
    if !(r > 0.0) || m <= r {
        return Err(Error::InvalidArgument(format!(
            "cone undefined for m = {m}, r = {r}"
        )));
    }
    Ok(r * d / (m * m - r * r).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::symmat::is_outer_product;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_sym(rng: &mut ChaCha8Rng, n: usize) -> SymMatrix {
        let mut m = SymMatrix::zeros(n);
        for i in 0..n {
            for j in i..n {
                m.set(i, j, rng.gen_range(-2.0..2.0));
            }
        }
        m
    }

    fn close(a: &SymMatrix, b: &SymMatrix, tol: f64) -> bool {
        a.sub(b).frobenius_norm() <= tol
    }

    #[test]
    fn dax_examples() {
        let nsd = SymMatrix::diag(&[-1.0, -2.0]);
        let p = dax_project(&nsd, 1).unwrap();
        assert_eq!(p.nearest, SymMatrix::zeros(2));
        assert!((p.distance - 5f64.sqrt()).abs() < 1e-14);

        let p = dax_project(&SymMatrix::identity(2), 1).unwrap();
        assert!((p.distance - 1.0).abs() < 1e-14);

        assert!(dax_project(&SymMatrix::identity(2), 2).is_err());
        assert!(dax_project(&SymMatrix::identity(2), 0).is_err());
    }

    #[test]
    fn dax_beats_random_rank_one_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..5 {
            let x = random_sym(&mut rng, 3);
            let p = dax_project(&x, 1).unwrap();
            let mut best = x.frobenius_norm();
            for _ in 0..10_000 {
                let s: Vec<f64> = (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect();
                best = best.min(x.sub(&SymMatrix::outer(&s)).frobenius_norm());
            }
            assert!(p.distance <= best + 1e-6, "{} > {}", p.distance, best);
        }
    }

    #[test]
    fn oracle_ball_examples() {
        let radius = |x: SymMatrix| match oracle_ball(&x).unwrap() {
            OpfSet::OracleBall { radius, .. } => radius,
            other => panic!("unexpected {other:?}"),
        };
        assert!((radius(SymMatrix::identity(2)) - 1.0).abs() < 1e-14);
        assert!((radius(SymMatrix::diag(&[-1.0, -2.0])) - 5f64.sqrt()).abs() < 1e-14);
        assert!((radius(SymMatrix::diag(&[3.0, 1.0])) - 1.0).abs() < 1e-14);
        assert!(matches!(
            oracle_ball(&SymMatrix::diag(&[2.0, 0.0])),
            Err(Error::CannotSeparate)
        ));
    }

    #[test]
    fn shifted_set_identity_has_no_shift() {
        match shifted_set(&SymMatrix::identity(2)).unwrap() {
            OpfSet::ShiftedCone(c) => {
                assert!(close(&c.axis, &SymMatrix::identity(2), 1e-14));
                assert!((c.radius - 1.0).abs() < 1e-14);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn shifted_set_halfspace_branches() {
        match shifted_set(&SymMatrix::diag(&[-1.0, -1.0])).unwrap() {
            OpfSet::NsdHalfspace(h) => {
                let s = 0.5f64.sqrt();
                assert!(close(&h.normal, &SymMatrix::diag(&[-s, -s]), 1e-14));
                assert_eq!(h.offset, 0.0);
            }
            other => panic!("unexpected {other:?}"),
        }
        match shifted_set(&SymMatrix::diag(&[2.0, -1.0])).unwrap() {
            OpfSet::NsdHalfspace(h) => {
                assert!(close(&h.normal, &SymMatrix::diag(&[0.0, -1.0]), 1e-14));
                assert!(h.offset.abs() < 1e-14);
                // tangent at diag(2, 0)
                assert!(h.slack(&SymMatrix::diag(&[2.0, 0.0])).abs() < 1e-14);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            shifted_set(&SymMatrix::outer(&[1.0, 2.0])),
            Err(Error::CannotSeparate)
        ));
    }

    #[test]
    fn select_2x2_examples() {
        assert_eq!(select_2x2_cones(&SymMatrix::identity(2)), vec![(0, 1)]);
        assert!(select_2x2_cones(&SymMatrix::diag(&[1.0, -1.0])).is_empty());
        assert_eq!(
            select_2x2_cones(&SymMatrix::identity(3)),
            vec![(0, 1), (0, 2), (1, 2)]
        );
        let x = SymMatrix::from_rows(&[[3.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 2.0]]).unwrap();
        assert_eq!(select_2x2_cones(&x), vec![(0, 2), (0, 1), (1, 2)]);
    }

    #[test]
    fn oa_direction_examples() {
        assert!(oa_directions(&SymMatrix::identity(2)).unwrap().is_empty());
        let d = oa_directions(&SymMatrix::diag(&[1.0, -1.0])).unwrap();
        assert_eq!(d.len(), 1);
        assert!((d[0][0]).abs() < 1e-14 && (d[0][1] - 1.0).abs() < 1e-14);

        let d = oa_directions(&SymMatrix::from_rows(&[[0.0, 1.0], [1.0, 0.0]]).unwrap()).unwrap();
        assert_eq!(d.len(), 1);
        let s = 0.5f64.sqrt();
        assert!((d[0][0] - s).abs() < 1e-12 && (d[0][1] + s).abs() < 1e-12);
        // cut X11 - 2 X12 + X22 >= 0 up to the factor 1/2
        let coeffs = SymMatrix::outer(&d[0]).inner_coeffs();
        assert!((coeffs[0] - 0.5).abs() < 1e-12);
        assert!((coeffs[1] + 1.0).abs() < 1e-12);
        assert!((coeffs[2] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn cone_radius_examples() {
        let d1 = SymMatrix::from_rows(&[[0.5, -0.5], [-0.5, 0.0]]).unwrap();
        let axis = SymMatrix::identity(2);
        let m = axis.frobenius_norm();
        let axial = d1.frobenius_inner(&axis).unwrap() / m;
        let r1 = cone_radius_at(m, 1.0, axial).unwrap();
        assert!((r1 - 0.5 / 2f64.sqrt()).abs() < 1e-14);
        assert!((r1 - 0.354).abs() < 1e-3);
        assert_eq!(cone_radius_at(2.0, 1.0, 0.0).unwrap(), 0.0);
        assert!((cone_radius_at(2.0, 1.0, 3f64.sqrt()).unwrap() - 1.0).abs() < 1e-15);
        assert!(cone_radius_at(1.0, 1.0, 1.0).is_err());
    }

    /// Every produced set holds the point strictly inside and excludes
    /// sampled outer products from its interior.
    #[test]
    fn sets_contain_point_and_exclude_outer_products() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..60 {
            let n = 2 + trial % 4;
            let x = random_sym(&mut rng, n);
            if is_outer_product(&x, 1e-9).unwrap() {
                continue;
            }
            let mut sets = vec![oracle_ball(&x).unwrap(), shifted_set(&x).unwrap()];
            sets.extend(
                select_2x2_cones(&x)
                    .into_iter()
                    .map(|(i, j)| OpfSet::TwoByTwoCone { i, j }),
            );
            for set in &sets {
                assert!(set.margin(&x) > 0.0, "{} does not contain x", set.name());
            }
            for _ in 0..1000 {
                let s: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
                let ss = SymMatrix::outer(&s);
                for set in &sets {
                    assert!(set.margin(&ss) <= 1e-7, "{} contains s s^T", set.name());
                }
            }
        }
    }

    #[test]
    fn shifted_axis_projects_to_top_eigenpair() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut checked = 0;
        while checked < 40 {
            let x = random_sym(&mut rng, 2 + checked % 4);
            let eig = spectral_decompose(&x).unwrap();
            if eig.eigenvalues[1] <= 1e-6 {
                continue;
            }
            let OpfSet::ShiftedCone(cone) = shifted_set(&x).unwrap() else {
                panic!("expected cone");
            };
            let top = SymMatrix::outer(&eig.eigenvectors[0]).scaled(eig.eigenvalues[0]);
            // X_C has a repeated top eigenvalue, so the projection is one of
            // several minimisers; lambda_1 d_1 d_1^T must attain the same distance.
            let proj = dax_project(&cone.axis, 1).unwrap();
            let tol = 1e-7 * cone.radius.max(1.0);
            assert!((cone.axis.sub(&top).frobenius_norm() - proj.distance).abs() < tol);
            assert!((proj.distance - cone.radius).abs() < tol);
            checked += 1;
        }
    }
}
