#![allow(dead_code)]

use opfcut::cutgen::Cut;
use opfcut::driver::{run, run_loop, DriverConfig, Family, OracleSeparator, RunReport};
use opfcut::io::{parse_card, parse_qcqp_json, CardinalityLad};
use opfcut::lift::{lift, LiftOptions, LiftedModel, QcqpInstance, Quadratic};
use opfcut::lpiface::DenseDualSimplex;
use opfcut::oracle::{CardinalityOracle, StepRule};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::PathBuf;

pub fn data_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data").join(name)
}

pub fn read_data(name: &str) -> String {
    std::fs::read_to_string(data_path(name)).unwrap()
}

pub fn qcqp(name: &str) -> QcqpInstance {
    parse_qcqp_json(&read_data(name)).unwrap()
}

pub fn card() -> CardinalityLad {
    parse_card(&read_data("cardinality_lad.card")).unwrap()
}

/// Seeded BoxQP with density 60%, entries in [-50, 50].
pub fn random_boxqp(seed: u64, n: usize) -> QcqpInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut q = Vec::new();
    for i in 0..n {
        for j in i..n {
            if rng.gen_bool(0.6) {
                q.push((i, j, rng.gen_range(-50i32..=50) as f64 / 2.0));
            }
        }
    }
    let l = (0..n).map(|i| (i, rng.gen_range(-50i32..=50) as f64)).collect();
    let mut inst = QcqpInstance::new(n, Quadratic { q, l, c: 0.0 });
    inst.name = format!("rand-boxqp-{seed}");
    inst.bounds = vec![(Some(0.0), Some(1.0)); n];
    inst
}

/// Feasible points drawn by rejection from a sampling box; `extra` points
/// (known optima) are appended when feasible to `tol`.
pub fn sample_feasible(inst: &QcqpInstance, count: usize, seed: u64, extra: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let boxes: Vec<(f64, f64)> = (0..inst.n)
        .map(|i| {
            let (l, u) = inst.bound(i);
            (if l.is_finite() { l } else { -4.0 }, if u.is_finite() { u } else { 4.0 })
        })
        .collect();
    let mut out: Vec<Vec<f64>> = extra.iter().filter(|x| inst.is_feasible(x, 1e-6)).cloned().collect();
    let mut tries = 0;
    while out.len() < count + extra.len() {
        tries += 1;
        assert!(tries < 10_000_000, "sampler cannot find feasible points");
        let x: Vec<f64> = boxes.iter().map(|&(l, u)| rng.gen_range(l..=u)).collect();
        if inst.is_feasible(&x, 0.0) {
            out.push(x);
        }
        // vertices of the box are feasible often enough to deserve a share
        if out.len() < count && rng.gen_bool(0.05) {
            let v: Vec<f64> = boxes.iter().map(|&(l, u)| if rng.gen_bool(0.5) { l } else { u }).collect();
            if inst.is_feasible(&v, 0.0) {
                out.push(v);
            }
        }
    }
    out
}

/// Points `(x, t)` with at most `k` nonzeros in `x` and `t >= |A x - b|`.
pub fn sample_card(c: &CardinalityLad, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nf = c.num_features();
    (0..count)
        .map(|_| {
            let mut x = vec![0.0; nf];
            let nz = rng.gen_range(0..=c.k);
            for _ in 0..nz {
                let i = rng.gen_range(0..nf);
                x[i] = rng.gen_range(-6.0..6.0);
            }
            let mut p = x.clone();
            for (row, bi) in c.a.iter().zip(&c.b) {
                let r: f64 = row.iter().zip(&x).map(|(u, v)| u * v).sum::<f64>() - bi;
                let slack = if rng.gen_bool(0.5) { 0.0 } else { rng.gen_range(0.0..2.0) };
                p.push(r.abs() + slack);
            }
            p
        })
        .collect()
}

pub struct CorpusRun {
    pub label: String,
    pub report: RunReport,
    pub pool: Vec<Cut>,
    /// Lifted feasible points the pool must not cut off.
    pub samples: Vec<Vec<f64>>,
}

fn config(families: Vec<Family>, limit: f64) -> DriverConfig {
    let mut c = DriverConfig::new(families).unwrap();
    c.time_limit_s = limit;
    c
}

fn lifted_run(label: &str, inst: &QcqpInstance, weak: bool, families: &[Family], extra: &[Vec<f64>]) -> CorpusRun {
    let mut model: LiftedModel = lift(
        inst,
        LiftOptions {
            weak_rlt: weak,
            mode: None,
        },
    )
    .unwrap();
    let report = run(&mut model, &mut DenseDualSimplex::new(), &config(families.to_vec(), 30.0)).unwrap();
    let samples = sample_feasible(inst, 1000, 17, extra)
        .iter()
        .map(|x| model.lift_point(x))
        .collect();
    let fams: Vec<&str> = families.iter().map(|f| f.name()).collect();
    CorpusRun {
        label: format!("{label}[{}{}]", fams.join("+"), if weak { ",weak" } else { "" }),
        report,
        pool: model.cut_pool,
        samples,
    }
}

fn card_run(rule: StepRule) -> CorpusRun {
    let c = card();
    let oracle = CardinalityOracle::new(c.k, (0..c.num_features()).collect()).unwrap();
    let cfg = config(vec![Family::Ob], 30.0);
    let sep = OracleSeparator {
        oracle: &oracle,
        rule,
        options: cfg.cut_options,
        exact_tol: 1e-9,
    };
    let out = run_loop(&c.to_lp(), 0.0, &sep, &mut DenseDualSimplex::new(), &cfg, Vec::new()).unwrap();
    CorpusRun {
        label: format!("cardinality_lad[{rule:?}]"),
        report: out.report,
        pool: out.pool,
        samples: sample_card(&c, 1000, 5),
    }
}

/// Every corpus instance under the family mixes the acceptance suite covers.
pub fn corpus_runs() -> Vec<CorpusRun> {
    use Family::*;
    let mixes: [&[Family]; 5] = [&[TwoByTwo], &[Oa, TwoByTwo], &[Ob], &[So], &[So, Oa, TwoByTwo]];
    let phi_opt = vec![vec![2f64.sqrt(), 0.0], vec![-(2f64.sqrt()), 0.0]];
    let ex211_opt = vec![vec![1.0, 1.0, 0.0, 1.0, 0.0]];
    let ex312_opt = vec![vec![78.0, 33.0, 29.995256025682, 45.0, 36.775812905788]];
    let mut runs = Vec::new();
    for mix in mixes {
        runs.push(lifted_run("worked_2x2", &qcqp("worked_2x2.json"), false, mix, &phi_opt));
        runs.push(lifted_run("ex2_1_1", &qcqp("ex2_1_1.json"), false, mix, &ex211_opt));
        runs.push(lifted_run("ex3_1_2", &qcqp("ex3_1_2.json"), false, mix, &ex312_opt));
    }
    for seed in 1..=3 {
        let inst = random_boxqp(seed, 6);
        for (mix, weak) in [(&[Oa, TwoByTwo][..], true), (&[Oa, TwoByTwo][..], false), (&[So][..], false), (&[Ob][..], true)] {
            runs.push(lifted_run(&inst.name.clone(), &inst, weak, mix, &[]));
        }
    }
    runs.push(card_run(StepRule::Exact));
    runs.push(card_run(StepRule::Uniform));
    runs
}
