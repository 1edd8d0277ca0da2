//! Ball cuts from a distance oracle.
//!
//! An oracle returns `d` with no point of `S` strictly inside the ball of
//! radius `d` around the query point. Any underestimate of the true distance
//! keeps the ball `S`-free, so approximate oracles yield valid, weaker cuts.

use crate::cutgen::{emit_cut, Cut, CutFamily, CutOptions, SimplicialCone, StepLengths};
use crate::opf::oracle_ball;
use crate::symmat::{packed_len, SymMatrix};
use crate::{Error, Result};

/// Implementations must be pure so cut generation can run in parallel.
pub trait DistanceOracle: Send + Sync {
    fn name(&self) -> String;

    /// Lower bound on the distance from `x` to `S`; zero when `x` is in `S`.
    fn distance(&self, x: &[f64]) -> Result<f64>;

    /// Length of a ray in the norm the ball is measured in.
    fn ray_norm(&self, ray: &[f64]) -> f64 {
        ray.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// `S = {x : at most k of the active coordinates are nonzero}`; inactive
/// coordinates are unconstrained, so the ball is a cylinder along them.
#[derive(Debug, Clone, PartialEq)]
pub struct CardinalityOracle {
    pub k: usize,
    pub active_indices: Vec<usize>,
}

impl CardinalityOracle {
    pub fn new(k: usize, active_indices: Vec<usize>) -> Result<Self> {
        if k > active_indices.len() {
            return Err(Error::InvalidArgument(format!(
                "cardinality {k} exceeds the {} active coordinates",
                active_indices.len()
            )));
        }
        Ok(Self { k, active_indices })
    }
}

/// Norm of the active entries outside the `k` largest in magnitude; ties
/// keep the lower index.
pub fn cardinality_distance(x: &[f64], k: usize, active_indices: &[usize]) -> f64 {
    let mut vals: Vec<(usize, f64)> = active_indices.iter().map(|&i| (i, x[i].abs())).collect();
    vals.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    vals.iter().skip(k).map(|(_, v)| v * v).sum::<f64>().sqrt()
}

impl DistanceOracle for CardinalityOracle {
    fn name(&self) -> String {
        format!("cardinality:{}", self.k)
    }

    fn distance(&self, x: &[f64]) -> Result<f64> {
        if let Some(&bad) = self.active_indices.iter().find(|&&i| i >= x.len()) {
            return Err(Error::DimensionMismatch {
                expected: bad + 1,
                got: x.len(),
            });
        }
        Ok(cardinality_distance(x, self.k, &self.active_indices))
    }

    fn ray_norm(&self, ray: &[f64]) -> f64 {
        self.active_indices.iter().map(|&i| ray[i] * ray[i]).sum::<f64>().sqrt()
    }
}

/// Distance from a packed symmetric matrix to the outer products `s s^T`,
/// measured in the Frobenius norm.
#[derive(Debug, Clone, PartialEq)]
pub struct OuterProductOracle {
    pub dim: usize,
}

impl OuterProductOracle {
    fn matrix(&self, v: &[f64]) -> Result<SymMatrix> {
        SymMatrix::from_packed(self.dim, v.to_vec())
    }
}

impl DistanceOracle for OuterProductOracle {
    fn name(&self) -> String {
        "outer-product".into()
    }

    fn distance(&self, x: &[f64]) -> Result<f64> {
        match oracle_ball(&self.matrix(x)?) {
            Ok(crate::opf::OpfSet::OracleBall { radius, .. }) => Ok(radius),
            Ok(_) => unreachable!("oracle_ball returns a ball"),
            Err(Error::CannotSeparate) => Ok(0.0),
            Err(e) => Err(e),
        }
    }

    fn ray_norm(&self, ray: &[f64]) -> f64 {
        self.matrix(ray).map(|m| m.frobenius_norm()).unwrap_or(f64::NAN)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StepRule {
    /// `lambda_j = d / |r_j|`: the ray meets the sphere.
    #[default]
    Exact,
    /// `lambda_j = d * min(1, 1 / |r_j|)`: unit steps on short rays.
    Uniform,
}

/// Intersection cut from the ball of radius `oracle(apex)` around the apex.
pub fn oracle_ball_cut(
    oracle: &dyn DistanceOracle,
    cone: &SimplicialCone,
    rule: StepRule,
    opts: &CutOptions,
) -> Result<Cut> {
    let d = oracle.distance(&cone.apex)?;
    if !d.is_finite() || d < 0.0 {
        return Err(Error::NumericalFailure(format!("oracle returned {d}")));
    }
    if d == 0.0 {
        return Err(Error::PointFeasible);
    }
    let values = cone
        .rays
        .iter()
        .map(|r| {
            let rho = oracle.ray_norm(r);
            if rho.is_nan() {
                return Err(Error::NonFinite);
            }
            if rho == 0.0 {
                // the ray stays inside the cylinder
                return Ok(f64::INFINITY);
            }
            let lam = match rule {
                StepRule::Exact => d / rho,
                StepRule::Uniform => d * (1.0 / rho).min(1.0),
            };
            Ok(lam * (1.0 - opts.backstep))
        })
        .collect::<Result<Vec<f64>>>()?;
    emit_cut(cone, &StepLengths::unstrengthened(values), CutFamily::DistanceOracle, opts)
}

/// Parses `cardinality:K`, `cardinality:K:I-J` (inclusive range of active
/// coordinates), `cardinality:K:i,j,...` or `outer-product`.
pub fn parse_oracle(spec: &str, num_vars: usize) -> Result<Box<dyn DistanceOracle>> {
    let bad = |m: &str| Error::InvalidArgument(format!("oracle `{spec}`: {m}"));
    let mut parts = spec.split(':');
    match parts.next().unwrap_or("") {
        "outer-product" => {
            let dim = (0..=num_vars)
                .find(|&n| packed_len(n) == num_vars)
                .ok_or_else(|| bad("variable count is not a packed triangle"))?;
            Ok(Box::new(OuterProductOracle { dim }))
        }
        "cardinality" => {
            let k: usize = parts
                .next()
                .ok_or_else(|| bad("missing k"))?
                .parse()
                .map_err(|_| bad("k is not an integer"))?;
            let active: Vec<usize> = match parts.next() {
                None => (0..num_vars).collect(),
                Some(r) if r.contains('-') => {
                    let (a, b) = r.split_once('-').unwrap();
                    let a: usize = a.parse().map_err(|_| bad("bad range"))?;
                    let b: usize = b.parse().map_err(|_| bad("bad range"))?;
                    (a..=b).collect()
                }
                Some(list) => list
                    .split(',')
                    .map(|s| s.trim().parse().map_err(|_| bad("bad index list")))
                    .collect::<Result<_>>()?,
            };
            if parts.next().is_some() {
                return Err(bad("trailing fields"));
            }
            if active.iter().any(|&i| i >= num_vars) {
                return Err(bad("active index out of range"));
            }
            Ok(Box::new(CardinalityOracle::new(k, active)?))
        }
        _ => Err(bad("unknown oracle")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cutgen::build_cone;
    use proptest::prelude::*;

    fn cardinality_cone() -> SimplicialCone {
        let a = [[1.0, 2.0, 3.0], [2.0, -1.0, 1.0], [3.0, 0.0, -1.0]];
        let mut rows = Vec::new();
        for (i, r) in a.iter().enumerate() {
            let mut row = vec![0.0; 6];
            row[..3].copy_from_slice(r);
            row[3 + i] = -1.0;
            rows.push(row);
        }
        for i in 0..3 {
            let mut r = vec![0.0; 6];
            r[3 + i] = -1.0;
            rows.push(r);
        }
        let apex = vec![2.0, -1.0, 3.0, 0.0, 0.0, 0.0];
        let rhs = rows.iter().map(|r| r.iter().zip(&apex).map(|(a, b)| a * b).sum()).collect();
        build_cone(rows, rhs, apex).unwrap()
    }

    #[test]
    fn distance_examples() {
        assert_eq!(cardinality_distance(&[2.0, -1.0, 3.0], 2, &[0, 1, 2]), 1.0);
        assert_eq!(cardinality_distance(&[2.0, -1.0, 3.0], 3, &[0, 1, 2]), 0.0);
        assert_eq!(cardinality_distance(&[3.0, 4.0, 0.0, 5.0], 1, &[0, 1, 2, 3]), 5.0);
        // inactive coordinates are ignored
        assert_eq!(cardinality_distance(&[1.0, 7.0, 2.0], 1, &[0, 2]), 1.0);
    }

    #[test]
    fn worked_cardinality_cut() {
        let oracle = CardinalityOracle::new(2, vec![0, 1, 2]).unwrap();
        let cone = cardinality_cone();
        assert_eq!(oracle.distance(&cone.apex).unwrap(), 1.0);
        let opts = CutOptions {
            backstep: 0.0,
            ..Default::default()
        };
        let cut = oracle_ball_cut(&oracle, &cone, StepRule::Uniform, &opts).unwrap();
        let pi = cut.dense_coeffs(6);
        for (p, w) in pi.iter().zip([6.0, 1.0, 3.0, -2.0, -2.0, -2.0]) {
            assert!((p - w).abs() < 1e-12, "{pi:?}");
        }
        assert!((cut.rhs - 19.0).abs() < 1e-12);
        // violation 1 / ||pi||_1
        assert!((cut.violation - 1.0 / 16.0).abs() < 1e-12);

        // exact steps reach further along the short rays: a deeper cut
        let exact = oracle_ball_cut(&oracle, &cone, StepRule::Exact, &opts).unwrap();
        assert!(exact.violation > cut.violation);
    }

    #[test]
    fn feasible_apex_rejected() {
        let oracle = CardinalityOracle::new(3, vec![0, 1, 2]).unwrap();
        assert!(matches!(
            oracle_ball_cut(&oracle, &cardinality_cone(), StepRule::Exact, &CutOptions::default()),
            Err(Error::PointFeasible)
        ));
    }

    #[test]
    fn orthonormal_rays_give_steps_equal_to_distance() {
        let rows = vec![vec![-1.0, 0.0], vec![0.0, -1.0]];
        let apex = vec![1.0, 1.0];
        let cone = build_cone(rows, vec![-1.0, -1.0], apex).unwrap();
        let oracle = CardinalityOracle::new(1, vec![0, 1]).unwrap();
        let opts = CutOptions {
            backstep: 0.0,
            ..Default::default()
        };
        let cut = oracle_ball_cut(&oracle, &cone, StepRule::Exact, &opts).unwrap();
        // steps 1 on both rays e_1, e_2: x + y >= 3
        let (c, b) = cut.as_leq();
        assert_eq!(c, vec![(0, -1.0), (1, -1.0)]);
        assert_eq!(b, -3.0);
    }

    #[test]
    fn outer_product_oracle_matches_ball_steps() {
        // worked polynomial example, packed (X11, X12, X22); apex is the identity
        let rows = vec![vec![-1.0, 1.0, -1.0], vec![-1.0, -1.0, -1.0], vec![-1.0, -1.0, 1.0]];
        let apex = vec![1.0, 0.0, 1.0];
        let rhs = vec![-2.0, -2.0, 0.0];
        let cone = build_cone(rows, rhs, apex).unwrap();
        let oracle = OuterProductOracle { dim: 2 };
        assert!((oracle.distance(&cone.apex).unwrap() - 1.0).abs() < 1e-12);
        let d = 1.0;
        let steps: Vec<f64> = cone.rays.iter().map(|r| d / oracle.ray_norm(r)).collect();
        let s = 2.0 / 3f64.sqrt();
        let mut got = steps.clone();
        got.sort_by(f64::total_cmp);
        for (g, w) in got.iter().zip([s, s, 2f64.sqrt()]) {
            assert!((g - w).abs() < 1e-12, "{steps:?}");
        }
    }

    #[test]
    fn registry() {
        assert_eq!(parse_oracle("outer-product", 6).unwrap().name(), "outer-product");
        assert!(parse_oracle("outer-product", 5).is_err());
        let o = parse_oracle("cardinality:2:0-2", 6).unwrap();
        assert_eq!(o.distance(&[2.0, -1.0, 3.0, 9.0, 9.0, 9.0]).unwrap(), 1.0);
        let o = parse_oracle("cardinality:1:0,2", 3).unwrap();
        assert_eq!(o.distance(&[1.0, 7.0, 2.0]).unwrap(), 1.0);
        assert!(parse_oracle("cardinality:9:0-2", 6).is_err());
        assert!(parse_oracle("cardinality:x", 6).is_err());
        assert!(parse_oracle("nope", 6).is_err());
    }

    fn brute_force(x: &[f64], k: usize) -> f64 {
        let n = x.len();
        let mut best = f64::INFINITY;
        for mask in 0u32..(1 << n) {
            if mask.count_ones() as usize != k {
                continue;
            }
            let d: f64 = (0..n).filter(|i| mask & (1 << i) == 0).map(|i| x[i] * x[i]).sum();
            best = best.min(d.sqrt());
        }
        best
    }

    proptest! {
        #[test]
        fn cardinality_matches_exhaustive(x in prop::collection::vec(-5.0f64..5.0, 1..=12), k in 0usize..12) {
            let k = k.min(x.len());
            let active: Vec<usize> = (0..x.len()).collect();
            let d = cardinality_distance(&x, k, &active);
            prop_assert!((d - brute_force(&x, k)).abs() <= 1e-12);
        }
    }
}
