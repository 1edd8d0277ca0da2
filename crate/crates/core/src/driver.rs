//! The cutting-plane loop: solve, separate the LP vertex, add cuts, repeat.

use crate::cutgen::{build_cone, intersection_cut, Cut, CutFamily, CutOptions, SimplicialCone, MAX_CONDITION};
use crate::lift::LiftedModel;
use crate::lpiface::{LpBackend, LpProblem, LpResult, LpRow};
use crate::opf::{oa_directions, oracle_ball, select_2x2_cones, shifted_set, OpfSet};
use crate::oracle::{oracle_ball_cut, DistanceOracle, StepRule};
use crate::symmat::{default_tol, is_outer_product, SymMatrix};
use crate::{Error, Result};
use log::{debug, info};
use rayon::prelude::*;
use serde::Serialize;
use std::collections::BTreeMap;
use std::fmt;
use std::time::Instant;

/// Cut families selectable for lifted models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Family {
    /// Oracle ball.
    Ob,
    /// Strengthened oracle (shifted cone or NSD halfspace).
    So,
    /// Eigenvector outer approximation `d^T X d >= 0`.
    Oa,
    /// 2x2 principal PSD cones.
    TwoByTwo,
}

impl Family {
    pub const ALL: [Family; 4] = [Family::Ob, Family::So, Family::Oa, Family::TwoByTwo];

    pub fn name(self) -> &'static str {
        match self {
            Family::Ob => "ob",
            Family::So => "so",
            Family::Oa => "oa",
            Family::TwoByTwo => "2x2",
        }
    }

    pub fn cut_family(self) -> CutFamily {
        match self {
            Family::Ob => CutFamily::OracleBall,
            Family::So => CutFamily::StrengthenedOracle,
            Family::Oa => CutFamily::OuterApproximation,
            Family::TwoByTwo => CutFamily::TwoByTwo,
        }
    }

    /// Comma-separated list such as `2x2,oa`; duplicates collapse.
    pub fn parse_list(s: &str) -> Result<Vec<Family>> {
        let mut out = Vec::new();
        for tok in s.split(',').map(str::trim).filter(|t| !t.is_empty()) {
            let f = Family::ALL
                .into_iter()
                .find(|f| f.name().eq_ignore_ascii_case(tok))
                .ok_or_else(|| Error::InvalidArgument(format!("unknown cut family `{tok}`")))?;
            if !out.contains(&f) {
                out.push(f);
            }
        }
        if out.is_empty() {
            return Err(Error::InvalidArgument("no cut family given".into()));
        }
        out.sort();
        Ok(out)
    }
}

#[derive(Debug, Clone)]
pub struct DriverConfig {
    pub time_limit_s: f64,
    pub stall_iters: usize,
    pub min_violation: f64,
    pub max_cuts_per_iter: usize,
    pub parallel_cos_threshold: f64,
    pub families: Vec<Family>,
    pub cut_options: CutOptions,
    pub max_iterations: Option<usize>,
}

impl DriverConfig {
    pub fn new(families: Vec<Family>) -> Result<Self> {
        let c = Self {
            time_limit_s: 600.0,
            stall_iters: 10,
            min_violation: 1e-8,
            max_cuts_per_iter: 5,
            parallel_cos_threshold: 0.999,
            families,
            cut_options: CutOptions::default(),
            max_iterations: None,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.into()));
        if self.families.is_empty() {
            return bad("at least one cut family is required");
        }
        if !(self.time_limit_s > 0.0) {
            return bad("time limit must be positive");
        }
        if self.stall_iters == 0 || self.max_cuts_per_iter == 0 {
            return bad("stall_iters and max_cuts_per_iter must be positive");
        }
        if !(self.min_violation >= 0.0) {
            return bad("min_violation must be nonnegative");
        }
        if !(self.parallel_cos_threshold > 0.0 && self.parallel_cos_threshold <= 1.0) {
            return bad("parallel_cos_threshold must lie in (0, 1]");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Termination {
    Exact,
    TimeLimit,
    Stalled,
    Tolerance,
    Instability,
    IterationLimit,
}

impl fmt::Display for Termination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Termination::Exact => "EXACT",
            Termination::TimeLimit => "TIME_LIMIT",
            Termination::Stalled => "STALLED",
            Termination::Tolerance => "TOLERANCE",
            Termination::Instability => "INSTABILITY",
            Termination::IterationLimit => "ITERATION_LIMIT",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Gaps {
    pub initial_gap: f64,
    pub end_gap: f64,
    pub gap_closed: f64,
}

/// Gap metrics with `eps = 1`; `gap_closed` is 1 when `opt == rlt`.
pub fn gaps(rlt: f64, glb: f64, opt: f64) -> Gaps {
    let denom = opt.abs() + 1.0;
    Gaps {
        initial_gap: (opt - rlt) / denom,
        end_gap: (opt - glb) / denom,
        gap_closed: if opt == rlt { 1.0 } else { (glb - rlt) / (opt - rlt) },
    }
}

/// `(pi . x - pi_0) / ||pi||_1`, oriented so that positive means violated.
pub fn violation(cut: &Cut, point: &[f64]) -> Result<f64> {
    let n = cut.l1_norm();
    if !(n > 0.0) {
        return Err(Error::InvalidArgument("cut has no nonzero coefficient".into()));
    }
    Ok(cut.evaluate(point) / n)
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub instance: String,
    pub initial_bound: f64,
    pub final_bound: f64,
    pub opt: Option<f64>,
    pub gaps: Option<Gaps>,
    pub cuts_per_family: BTreeMap<CutFamily, usize>,
    pub iterations: usize,
    pub wall_time_s: f64,
    pub lp_time_fraction: f64,
    pub termination: Termination,
    /// Bound after every LP solve, starting with the initial relaxation.
    pub bound_history: Vec<f64>,
    #[serde(skip)]
    pub final_point: Vec<f64>,
}

impl RunReport {
    pub fn with_opt(mut self, opt: Option<f64>) -> Self {
        self.opt = opt;
        self.gaps = opt.map(|o| gaps(self.initial_bound, self.final_bound, o));
        self
    }

    pub fn total_cuts(&self) -> usize {
        self.cuts_per_family.values().sum()
    }
}

/// Candidate cuts for one LP vertex.
pub trait Separator: Sync {
    /// The vertex already lies in the nonconvex set.
    fn is_exact(&self, point: &[f64]) -> Result<bool>;

    /// Every candidate the enabled families produce; failures of a single
    /// candidate are skipped.
    fn candidates(&self, cone: &SimplicialCone) -> Vec<Cut>;
}

/// Outer-product-free families on a lifted matrix of order `dim`.
pub struct OpfSeparator {
    pub dim: usize,
    pub families: Vec<Family>,
    pub options: CutOptions,
}

fn oa_cut(direction: &[f64], apex: &[f64]) -> Option<Cut> {
    // -<d d^T, X> <= 0
    let c = SymMatrix::outer(direction).inner_coeffs();
    let big = c.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let coeffs: Vec<(usize, f64)> = c
        .into_iter()
        .enumerate()
        .filter(|(_, v)| v.abs() > 1e-13 * big)
        .map(|(j, v)| (j, -v))
        .collect();
    let mut cut = Cut {
        coeffs,
        rhs: 0.0,
        direction: 1.0,
        family: CutFamily::OuterApproximation,
        violation: 0.0,
        iteration: 0,
    };
    cut.violation = cut.violation_at(apex);
    (cut.violation > 0.0).then_some(cut)
}

impl OpfSeparator {
    fn family_candidates(&self, family: Family, x: &SymMatrix, cone: &SimplicialCone) -> Vec<Cut> {
        let from_set = |set: Result<OpfSet>, fam: CutFamily| -> Vec<Cut> {
            match set.and_then(|s| intersection_cut(&s, cone, fam, &self.options)) {
                Ok(c) => vec![c],
                Err(e) => {
                    debug!("{} candidate skipped: {e}", fam.name());
                    Vec::new()
                }
            }
        };
        match family {
            Family::Ob => from_set(oracle_ball(x), CutFamily::OracleBall),
            Family::So => from_set(shifted_set(x), CutFamily::StrengthenedOracle),
            Family::Oa => oa_directions(x)
                .unwrap_or_default()
                .iter()
                .filter_map(|d| oa_cut(d, &cone.apex))
                .collect(),
            Family::TwoByTwo => select_2x2_cones(x)
                .into_par_iter()
                .flat_map_iter(|(i, j)| from_set(Ok(OpfSet::TwoByTwoCone { i, j }), CutFamily::TwoByTwo))
                .collect(),
        }
    }
}

impl Separator for OpfSeparator {
    fn is_exact(&self, point: &[f64]) -> Result<bool> {
        let x = SymMatrix::from_packed(self.dim, point.to_vec())?;
        is_outer_product(&x, default_tol(&x))
    }

    fn candidates(&self, cone: &SimplicialCone) -> Vec<Cut> {
        let Ok(x) = SymMatrix::from_packed(self.dim, cone.apex.clone()) else {
            return Vec::new();
        };
        self.families
            .iter()
            .flat_map(|&f| self.family_candidates(f, &x, cone))
            .collect()
    }
}

/// Ball cuts from a distance oracle on the LP variables.
pub struct OracleSeparator<'a> {
    pub oracle: &'a dyn DistanceOracle,
    pub rule: StepRule,
    pub options: CutOptions,
    /// Distances at or below this count as membership.
    pub exact_tol: f64,
}

impl Separator for OracleSeparator<'_> {
    fn is_exact(&self, point: &[f64]) -> Result<bool> {
        Ok(self.oracle.distance(point)? <= self.exact_tol)
    }

    fn candidates(&self, cone: &SimplicialCone) -> Vec<Cut> {
        match oracle_ball_cut(self.oracle, cone, self.rule, &self.options) {
            Ok(c) => vec![c],
            Err(e) => {
                debug!("oracle candidate skipped: {e}");
                Vec::new()
            }
        }
    }
}

fn unit_direction(cut: &Cut, n: usize) -> Vec<f64> {
    let (c, _) = cut.as_leq();
    let mut v = vec![0.0; n];
    for (j, a) in c {
        v[j] = a;
    }
    let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|a| *a /= norm);
    }
    v
}

/// Ranks candidates by violation and keeps at most `max_cuts_per_iter`,
/// skipping any whose coefficient cosine with a pool cut or an already
/// accepted cut exceeds the threshold.
pub fn select_cuts(mut candidates: Vec<Cut>, pool: &[Cut], num_vars: usize, config: &DriverConfig) -> Vec<Cut> {
    candidates.retain(|c| c.violation > config.min_violation && c.coeffs.iter().all(|t| t.1.is_finite()));
    // stable: equal violations keep generation order
    candidates.sort_by(|a, b| b.violation.total_cmp(&a.violation));
    let mut kept_dirs: Vec<Vec<f64>> = pool.iter().map(|c| unit_direction(c, num_vars)).collect();
    let mut out = Vec::new();
    for cut in candidates {
        if out.len() >= config.max_cuts_per_iter {
            break;
        }
        let d = unit_direction(&cut, num_vars);
        let parallel = kept_dirs
            .iter()
            .any(|k| k.iter().zip(&d).map(|(a, b)| a * b).sum::<f64>() > config.parallel_cos_threshold);
        if parallel {
            continue;
        }
        kept_dirs.push(d);
        out.push(cut);
    }
    out
}

fn cone_at(problem: &LpProblem, r: &LpResult) -> Result<SimplicialCone> {
    let n = problem.num_cols;
    if r.basis.len() != n {
        return Err(Error::NumericalFailure(format!(
            "basis has {} rows for {n} columns",
            r.basis.len()
        )));
    }
    let rows: Vec<Vec<f64>> = r.basis.iter().map(|&k| problem.rows[k].dense(n)).collect();
    let rhs = r.basis.iter().map(|&k| problem.rows[k].rhs).collect();
    build_cone(rows, rhs, r.point.clone())
}

/// Result of [`run_loop`]: the report and the cuts that were added.
pub struct LoopOutcome {
    pub report: RunReport,
    pub pool: Vec<Cut>,
}

/// Generic loop over an LP and a separator. `pool` cuts are already part
/// of `problem`; `constant` is added to every LP value.
pub fn run_loop(
    problem: &LpProblem,
    constant: f64,
    separator: &dyn Separator,
    lp: &mut dyn LpBackend,
    config: &DriverConfig,
    mut pool: Vec<Cut>,
) -> Result<LoopOutcome> {
    config.validate()?;
    let start = Instant::now();
    let mut lp_time = 0.0;
    let timed = |lp_time: &mut f64, f: &mut dyn FnMut() -> Result<LpResult>| -> Result<LpResult> {
        let t = Instant::now();
        let r = f();
        *lp_time += t.elapsed().as_secs_f64();
        r
    };
    let mut r = timed(&mut lp_time, &mut || lp.solve(problem))?;
    if !r.is_optimal() {
        return Err(Error::Lp(format!(
            "initial relaxation not solved: {:?} {}",
            r.status,
            r.message.clone().unwrap_or_default()
        )));
    }
    let initial = r.value + constant;
    let mut history = vec![initial];
    let mut best = initial;
    let mut stall = 0;
    let mut iterations = 0;
    let mut counts: BTreeMap<CutFamily, usize> = BTreeMap::new();
    let n = problem.num_cols;

    let termination = loop {
        if separator.is_exact(&r.point)? {
            break Termination::Exact;
        }
        if start.elapsed().as_secs_f64() >= config.time_limit_s {
            break Termination::TimeLimit;
        }
        if config.max_iterations.is_some_and(|m| iterations >= m) {
            break Termination::IterationLimit;
        }
        if r.condition > MAX_CONDITION {
            break Termination::Instability;
        }
        let current = lp.problem().ok_or_else(|| Error::Lp("backend lost its problem".into()))?;
        let cone = match cone_at(current, &r) {
            Ok(c) => c,
            Err(e) => {
                info!("cannot form the simplicial cone: {e}");
                break Termination::Instability;
            }
        };
        let mut cuts = select_cuts(separator.candidates(&cone), &pool, n, config);
        if cuts.is_empty() {
            break Termination::Tolerance;
        }
        iterations += 1;
        let rows: Vec<LpRow> = cuts
            .iter_mut()
            .map(|c| {
                c.iteration = iterations;
                *counts.entry(c.family).or_default() += 1;
                let (a, b) = c.as_leq();
                LpRow::new(a, b)
            })
            .collect();
        pool.extend(cuts);
        r = timed(&mut lp_time, &mut || lp.add_rows_and_resolve(&rows))?;
        if !r.is_optimal() {
            info!("re-solve failed: {:?}", r.status);
            break Termination::Instability;
        }
        let bound = r.value + constant;
        history.push(bound);
        debug!("iteration {iterations}: bound {bound}");
        if bound > best + 1e-9 * best.abs().max(1.0) {
            best = bound;
            stall = 0;
        } else {
            stall += 1;
            if stall >= config.stall_iters {
                break Termination::Stalled;
            }
        }
    };
    let wall = start.elapsed().as_secs_f64();
    let final_bound = *history.last().expect("history starts non-empty");
    Ok(LoopOutcome {
        report: RunReport {
            instance: String::new(),
            initial_bound: initial,
            final_bound,
            opt: None,
            gaps: None,
            cuts_per_family: counts,
            iterations,
            wall_time_s: wall,
            lp_time_fraction: if wall > 0.0 { (lp_time / wall).min(1.0) } else { 0.0 },
            termination,
            bound_history: history,
            final_point: if r.is_optimal() { r.point } else { Vec::new() },
        },
        pool,
    })
}

/// Runs the OPF families on a lifted model; added cuts join its pool.
pub fn run(model: &mut LiftedModel, lp: &mut dyn LpBackend, config: &DriverConfig) -> Result<RunReport> {
    let separator = OpfSeparator {
        dim: model.dim,
        families: config.families.clone(),
        options: config.cut_options,
    };
    let problem = model.lp_problem();
    let out = run_loop(
        &problem,
        model.objective_constant,
        &separator,
        lp,
        config,
        model.cut_pool.clone(),
    )?;
    model.cut_pool = out.pool;
    let mut report = out.report;
    report.instance = model.instance.name.clone();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lift::{lift, LiftOptions};
    use crate::lpiface::DenseDualSimplex;

    fn worked_model() -> LiftedModel {
        let json = r#"{"n":2,"objective":{"q":[[0,0,1],[1,1,1]]},
            "constraints":[
              {"q":[[0,0,-1],[1,1,-1],[0,1,1]],"sense":"<=","rhs":-2},
              {"q":[[0,0,-1],[1,1,-1],[0,1,-1]],"sense":"<=","rhs":-2},
              {"q":[[0,0,-1],[1,1,1],[0,1,-1]],"sense":"<=","rhs":0}]}"#;
        lift(&serde_json::from_str(json).unwrap(), LiftOptions::default()).unwrap()
    }

    #[test]
    fn gap_examples() {
        let g = gaps(-18.9, -17.89, -17.0);
        assert!((g.gap_closed - 0.531_578_947).abs() < 1e-6);
        assert!((g.initial_gap - 1.9 / 18.0).abs() < 1e-12);
        assert_eq!(gaps(-3.0, -3.0, -1.0).gap_closed, 0.0);
        let g = gaps(-3.0, -1.0, -1.0);
        assert_eq!((g.gap_closed, g.end_gap), (1.0, 0.0));
        assert_eq!(gaps(2.0, 2.0, 2.0).gap_closed, 1.0);
    }

    #[test]
    fn violation_examples() {
        // x >= 1 as -x <= -1
        let cut = Cut {
            coeffs: vec![(0, -1.0)],
            rhs: -1.0,
            direction: 1.0,
            family: CutFamily::OuterApproximation,
            violation: 0.0,
            iteration: 0,
        };
        assert_eq!(violation(&cut, &[0.0]).unwrap(), 1.0);
        assert!(violation(&cut, &[2.0]).unwrap() <= 0.0);
        let card = Cut {
            coeffs: vec![(0, 6.0), (1, 1.0), (2, 3.0), (3, -2.0), (4, -2.0), (5, -2.0)],
            rhs: 19.0,
            ..cut.clone()
        };
        // 1 / ||pi||_1 with ||pi||_1 = 16
        assert!((violation(&card, &[2.0, -1.0, 3.0, 0.0, 0.0, 0.0]).unwrap() - 1.0 / 16.0).abs() < 1e-15);
        let empty = Cut { coeffs: vec![], ..cut };
        assert!(violation(&empty, &[0.0]).is_err());
    }

    #[test]
    fn family_parsing() {
        assert_eq!(Family::parse_list("2x2,oa").unwrap(), vec![Family::Oa, Family::TwoByTwo]);
        assert_eq!(Family::parse_list("OB, so ,ob").unwrap(), vec![Family::Ob, Family::So]);
        assert!(Family::parse_list("").is_err());
        assert!(Family::parse_list("xx").is_err());
        assert!(DriverConfig::new(vec![]).is_err());
    }

    #[test]
    fn worked_two_by_two_run_is_exact() {
        let mut model = worked_model();
        let config = DriverConfig::new(vec![Family::TwoByTwo]).unwrap();
        let report = run(&mut model, &mut DenseDualSimplex::new(), &config).unwrap();
        assert_eq!(report.termination, Termination::Exact);
        assert_eq!(report.iterations, 1);
        assert_eq!(report.total_cuts(), 1);
        assert!((report.initial_bound - 2.0).abs() < 1e-9);
        assert!((report.final_bound - 2.0).abs() < 1e-7);
        let p = &report.final_point;
        assert!((p[0] - 2.0).abs() < 1e-7 && p[1].abs() < 1e-7 && p[2].abs() < 1e-7, "{p:?}");
    }

    #[test]
    fn outer_approximation_cannot_separate_pd_apex() {
        let mut model = worked_model();
        let config = DriverConfig::new(vec![Family::Oa]).unwrap();
        let report = run(&mut model, &mut DenseDualSimplex::new(), &config).unwrap();
        assert_eq!(report.termination, Termination::Tolerance);
        assert_eq!(report.total_cuts(), 0);
        assert_eq!(report.final_bound, report.initial_bound);
    }

    #[test]
    fn select_filters_duplicates_and_caps() {
        let config = DriverConfig::new(vec![Family::Oa]).unwrap();
        let mk = |c: Vec<(usize, f64)>, v: f64| Cut {
            coeffs: c,
            rhs: 0.0,
            direction: 1.0,
            family: CutFamily::OuterApproximation,
            violation: v,
            iteration: 0,
        };
        let a = mk(vec![(0, 1.0)], 0.5);
        let b = mk(vec![(0, 2.0)], 0.4);
        let c = mk(vec![(1, 1.0)], 1e-9);
        let d = mk(vec![(1, 1.0), (0, 1.0)], 0.3);
        let out = select_cuts(vec![b.clone(), a.clone(), c, d.clone()], &[], 2, &config);
        assert_eq!(out, vec![a.clone(), d.clone()]);
        let out = select_cuts(vec![b, d.clone()], &[a], 2, &config);
        assert_eq!(out, vec![d]);
        let many: Vec<Cut> = (0..10)
            .map(|k| mk(vec![(0, 1.0), (1, k as f64)], 1.0 - k as f64 * 0.01))
            .collect();
        assert_eq!(select_cuts(many, &[], 2, &config).len(), 5);
    }
}
