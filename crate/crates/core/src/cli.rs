//! Batch front end: one CSV row per instance.

use crate::driver::{gaps, run, run_loop, DriverConfig, Family, OracleSeparator, RunReport};
use crate::io::{parse_boxqp, parse_card, parse_qcqp_json};
use crate::lift::{lift, lift_partial, tighten_bounds, LiftOptions, LiftedModel};
use crate::lpiface::DenseDualSimplex;
use crate::oracle::{CardinalityOracle, StepRule};
use crate::cutgen::CutFamily;
use crate::{Error, Result};
use clap::{Parser, ValueEnum};
use rayon::prelude::*;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Boxqp,
    Qcqp,
    Card,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Switch {
    On,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OracleStep {
    Exact,
    Uniform,
}

#[derive(Debug, Clone, Parser)]
#[command(name = "opfcut", version, about = "Cutting planes from outer-product-free sets for nonconvex QCQPs")]
pub struct Args {
    /// Instance file; repeat for a batch.
    #[arg(long = "instance", required = true)]
    pub instances: Vec<PathBuf>,
    /// Input format; inferred from the extension when omitted
    /// (.json = qcqp, .card = card, anything else = boxqp).
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    /// Comma-separated cut families: ob, so, oa, 2x2. Ignored for card.
    #[arg(long, default_value = "2x2,oa")]
    pub cuts: String,
    #[arg(long, default_value_t = 600.0)]
    pub time_limit: f64,
    #[arg(long, default_value_t = 5)]
    pub max_cuts_per_iter: usize,
    #[arg(long, default_value_t = 1e-8)]
    pub min_violation: f64,
    #[arg(long, default_value_t = 10)]
    pub stall_iters: usize,
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long, value_enum, default_value = "off")]
    pub bound_tighten: Switch,
    #[arg(long, value_enum, default_value = "off")]
    pub weak_rlt: Switch,
    /// Step rule for the cardinality oracle.
    #[arg(long, value_enum, default_value = "exact")]
    pub oracle_step: OracleStep,
    /// Reference optimum for the gap columns; give one per instance.
    #[arg(long = "opt-value", allow_negative_numbers = true)]
    pub opt_values: Vec<f64>,
    /// CSV destination; standard output when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Instances solved in parallel.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

pub const CSV_HEADER: [&str; 17] = [
    "instance",
    "OPT",
    "RLT",
    "FinalLB",
    "InitialGap",
    "EndGap",
    "GapClosed",
    "Cuts_OB",
    "Cuts_SO",
    "Cuts_OA",
    "Cuts_2x2",
    "Cuts_Oracle",
    "Iters",
    "Time",
    "LPTime%",
    "Termination",
    "Status",
];

/// Failures are split into input problems (exit 2) and solve problems (exit 1).
#[derive(Debug)]
pub enum CliError {
    Input(Error),
    Solve(Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::Solve(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Input(e) => write!(f, "input error: {e}"),
            CliError::Solve(e) => write!(f, "solve error: {e}"),
        }
    }
}

fn infer_format(path: &Path) -> Format {
    match path.extension().and_then(|e| e.to_str()) {
        Some("json") => Format::Qcqp,
        Some("card") => Format::Card,
        _ => Format::Boxqp,
    }
}

fn stem(path: &Path) -> String {
    path.file_stem().and_then(|s| s.to_str()).unwrap_or("instance").to_string()
}

fn config_from(args: &Args) -> Result<DriverConfig> {
    let mut c = DriverConfig::new(Family::parse_list(&args.cuts)?)?;
    c.time_limit_s = args.time_limit;
    c.max_cuts_per_iter = args.max_cuts_per_iter;
    c.min_violation = args.min_violation;
    c.stall_iters = args.stall_iters;
    c.max_iterations = args.max_iters;
    c.validate()?;
    Ok(c)
}

/// Builds the relaxation of a QCQP, optionally after LP bound tightening.
pub fn build_model(inst: &crate::lift::QcqpInstance, weak_rlt: bool, tighten: bool) -> Result<LiftedModel> {
    let opts = LiftOptions { weak_rlt, mode: None };
    if tighten {
        let partial = lift_partial(inst, opts)?;
        Ok(tighten_bounds(&partial, &mut DenseDualSimplex::new())?.0)
    } else {
        lift(inst, opts)
    }
}

/// Parses and solves one instance.
pub fn solve_instance(path: &Path, args: &Args, opt: Option<f64>) -> std::result::Result<RunReport, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Input(e.into()))?;
    let config = config_from(args).map_err(CliError::Input)?;
    let name = stem(path);
    let report = match args.format.unwrap_or_else(|| infer_format(path)) {
        Format::Card => {
            let card = parse_card(&text).map_err(CliError::Input)?;
            let oracle = CardinalityOracle::new(card.k, (0..card.num_features()).collect()).map_err(CliError::Input)?;
            let sep = OracleSeparator {
                oracle: &oracle,
                rule: match args.oracle_step {
                    OracleStep::Exact => StepRule::Exact,
                    OracleStep::Uniform => StepRule::Uniform,
                },
                options: config.cut_options,
                exact_tol: 1e-9,
            };
            let problem = card.to_lp();
            run_loop(&problem, 0.0, &sep, &mut DenseDualSimplex::new(), &config, Vec::new())
                .map_err(CliError::Solve)?
                .report
        }
        fmt => {
            let mut inst = if fmt == Format::Boxqp {
                parse_boxqp(&text)
            } else {
                parse_qcqp_json(&text)
            }
            .map_err(CliError::Input)?;
            if inst.name.is_empty() {
                inst.name = name.clone();
            }
            let mut model = build_model(&inst, args.weak_rlt == Switch::On, args.bound_tighten == Switch::On)
                .map_err(|e| match e {
                    Error::MissingBound { .. } | Error::InvalidArgument(_) => CliError::Input(e),
                    e => CliError::Solve(e),
                })?;
            run(&mut model, &mut DenseDualSimplex::new(), &config).map_err(CliError::Solve)?
        }
    };
    let mut report = report.with_opt(opt);
    report.instance = name;
    Ok(report)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

/// One CSV record; gap columns come from [`gaps`] on the rounded-free values.
pub fn csv_record(r: &RunReport) -> Vec<String> {
    let g = r.opt.map(|o| gaps(r.initial_bound, r.final_bound, o));
    let count = |f: CutFamily| r.cuts_per_family.get(&f).copied().unwrap_or(0).to_string();
    vec![
        r.instance.clone(),
        fmt_opt(r.opt),
        format!("{:.6}", r.initial_bound),
        format!("{:.6}", r.final_bound),
        fmt_opt(g.map(|g| g.initial_gap * 100.0)),
        fmt_opt(g.map(|g| g.end_gap * 100.0)),
        fmt_opt(g.map(|g| g.gap_closed * 100.0)),
        count(CutFamily::OracleBall),
        count(CutFamily::StrengthenedOracle),
        count(CutFamily::OuterApproximation),
        count(CutFamily::TwoByTwo),
        count(CutFamily::DistanceOracle),
        r.iterations.to_string(),
        format!("{:.3}", r.wall_time_s),
        format!("{:.1}", r.lp_time_fraction * 100.0),
        r.termination.to_string(),
        "ok".into(),
    ]
}

fn failure_record(name: &str, opt: Option<f64>, e: &CliError) -> Vec<String> {
    let mut rec = vec![String::new(); CSV_HEADER.len()];
    rec[0] = name.to_string();
    rec[1] = fmt_opt(opt);
    rec[CSV_HEADER.len() - 2] = "FAILED".into();
    rec[CSV_HEADER.len() - 1] = e.to_string().replace(['\n', '\r'], " ");
    rec
}

/// Runs the batch and returns the process exit code.
pub fn execute(args: &Args) -> i32 {
    if !args.opt_values.is_empty() && args.opt_values.len() != args.instances.len() {
        eprintln!(
            "error: {} --opt-value given for {} instances",
            args.opt_values.len(),
            args.instances.len()
        );
        return 2;
    }
    if let Err(e) = config_from(args) {
        eprintln!("error: {e}");
        return 2;
    }
    let opt = |k: usize| args.opt_values.get(k).copied();
    let solve_all = || -> Vec<std::result::Result<RunReport, CliError>> {
        args.instances
            .par_iter()
            .enumerate()
            .map(|(k, p)| solve_instance(p, args, opt(k)))
            .collect()
    };
    let results = match rayon::ThreadPoolBuilder::new().num_threads(args.jobs.max(1)).build() {
        Ok(pool) => pool.install(solve_all),
        Err(e) => {
            eprintln!("error: {e}");
            return 1;
        }
    };

    let sink: Box<dyn std::io::Write> = match &args.out {
        Some(p) => match std::fs::File::create(p) {
            Ok(f) => Box::new(f),
            Err(e) => {
                eprintln!("error: cannot create {}: {e}", p.display());
                return 2;
            }
        },
        None => Box::new(std::io::stdout()),
    };
    let mut w = csv::Writer::from_writer(sink);
    let mut code = 0;
    let mut write = |rec: Vec<String>| {
        if let Err(e) = w.write_record(&rec).and_then(|_| w.flush().map_err(Into::into)) {
            eprintln!("error: writing CSV: {e}");
        }
    };
    write(CSV_HEADER.iter().map(|s| s.to_string()).collect());
    for (k, (path, res)) in args.instances.iter().zip(results).enumerate() {
        match res {
            Ok(r) => write(csv_record(&r)),
            Err(e) => {
                eprintln!("{}: {e}", path.display());
                code = code.max(e.exit_code());
                write(failure_record(&stem(path), opt(k), &e));
            }
        }
    }
    code
}

#[cfg(test)]
mod tests {
    use super::*;

    fn data(name: &str) -> PathBuf {
        Path::new(env!("CARGO_MANIFEST_DIR")).join("data").join(name)
    }

    fn args(extra: &[&str]) -> Args {
        let mut v = vec!["opfcut"];
        v.extend_from_slice(extra);
        Args::try_parse_from(v).unwrap()
    }

    #[test]
    fn worked_instance_row() {
        let p = data("worked_2x2.json");
        let a = args(&["--instance", p.to_str().unwrap(), "--cuts", "2x2", "--opt-value", "2"]);
        let r = solve_instance(&p, &a, Some(2.0)).unwrap();
        let rec = csv_record(&r);
        assert_eq!(rec[0], "worked_2x2");
        assert_eq!(rec[3], "2.000000");
        assert_eq!(rec[6], "100.000000");
        assert_eq!(rec[10], "1");
        assert_eq!(rec[15], "EXACT");
    }

    #[test]
    fn oa_on_pd_apex_stops_at_tolerance() {
        let p = data("worked_2x2.json");
        let a = args(&["--instance", p.to_str().unwrap(), "--cuts", "oa"]);
        let r = solve_instance(&p, &a, None).unwrap();
        assert_eq!(r.total_cuts(), 0);
        assert_eq!(r.termination.to_string(), "TOLERANCE");
    }

    #[test]
    fn gap_columns_recompute() {
        let p = data("ex2_1_1.json");
        let a = args(&["--instance", p.to_str().unwrap(), "--cuts", "2x2,oa", "--max-iters", "3"]);
        let r = solve_instance(&p, &a, Some(-17.0)).unwrap();
        let rec = csv_record(&r);
        let rlt: f64 = rec[2].parse().unwrap();
        assert!((rlt + 18.9).abs() < 1e-6);
        let g = gaps(r.initial_bound, r.final_bound, -17.0);
        assert_eq!(rec[6], format!("{:.6}", g.gap_closed * 100.0));
        assert_eq!(rec[4], format!("{:.6}", g.initial_gap * 100.0));
    }

    #[test]
    fn exit_codes() {
        let missing = args(&["--instance", "/nonexistent/file.json"]);
        assert_eq!(execute(&Args { out: Some(std::env::temp_dir().join("opfcut-missing.csv")), ..missing }), 2);
        assert!(Args::try_parse_from(["opfcut"]).is_err());
        let p = data("worked_2x2.json");
        let bad = args(&["--instance", p.to_str().unwrap(), "--cuts", "zz"]);
        assert_eq!(execute(&bad), 2);
    }
}
