//! Instance file formats.
//!
//! * BoxQP: whitespace-separated numbers. The first value is `n`, then the
//!   `n` entries of `c`, then the `n x n` entries of `Q` row by row. The
//!   problem is `min c^T x + 1/2 x^T Q x` over `[0, 1]^n`; an asymmetric `Q`
//!   is symmetrised. Line breaks are not significant.
//! * QCQP JSON: the serde form of [`QcqpInstance`]; see the README schema.
//! * Cardinality LAD: first line `m N k`, then `m` lines holding a row of
//!   `A` followed by the matching entry of `b`. The problem is
//!   `min ||A x - b||_1` subject to at most `k` nonzeros in `x`.

use crate::lift::{QcqpInstance, Quadratic};
use crate::lpiface::LpProblem;
use crate::{Error, Result};
use std::fmt::Write as _;

struct Tokens<'a> {
    iter: Box<dyn Iterator<Item = (usize, &'a str)> + 'a>,
    last_line: usize,
}

impl<'a> Tokens<'a> {
    fn new(text: &'a str) -> Self {
        let iter = text
            .lines()
            .enumerate()
            .flat_map(|(k, l)| l.split_whitespace().map(move |t| (k + 1, t)));
        Self {
            iter: Box::new(iter),
            last_line: 1,
        }
    }

    fn next_str(&mut self, what: &str) -> Result<(usize, &'a str)> {
        match self.iter.next() {
            Some((line, t)) => {
                self.last_line = line;
                Ok((line, t))
            }
            None => Err(Error::Parse {
                line: self.last_line,
                msg: format!("unexpected end of input, expected {what}"),
            }),
        }
    }

    fn number(&mut self, what: &str) -> Result<f64> {
        let (line, t) = self.next_str(what)?;
        let v: f64 = t.parse().map_err(|_| Error::Parse {
            line,
            msg: format!("expected {what}, found `{t}`"),
        })?;
        if !v.is_finite() {
            return Err(Error::Parse {
                line,
                msg: format!("{what} is not finite"),
            });
        }
        Ok(v)
    }

    fn count(&mut self, what: &str) -> Result<usize> {
        let (line, t) = self.next_str(what)?;
        t.parse().map_err(|_| Error::Parse {
            line,
            msg: format!("expected {what} as a nonnegative integer, found `{t}`"),
        })
    }

    fn finish(mut self) -> Result<()> {
        match self.iter.next() {
            None => Ok(()),
            Some((line, t)) => Err(Error::Parse {
                line,
                msg: format!("trailing token `{t}`"),
            }),
        }
    }
}

pub fn parse_boxqp(text: &str) -> Result<QcqpInstance> {
    let mut tok = Tokens::new(text);
    let n = tok.count("dimension n")?;
    if n == 0 {
        return Err(Error::Parse {
            line: tok.last_line,
            msg: "dimension must be positive".into(),
        });
    }
    let c: Vec<f64> = (0..n).map(|i| tok.number(&format!("c[{i}]"))).collect::<Result<_>>()?;
    let mut q = vec![vec![0.0; n]; n];
    for (i, row) in q.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = tok.number(&format!("Q[{i}][{j}]"))?;
        }
    }
    tok.finish()?;
    let mut terms = Vec::new();
    for i in 0..n {
        if q[i][i] != 0.0 {
            terms.push((i, i, 0.5 * q[i][i]));
        }
        for j in (i + 1)..n {
            let v = 0.5 * (q[i][j] + q[j][i]);
            if v != 0.0 {
                terms.push((i, j, v));
            }
        }
    }
    let objective = Quadratic {
        q: terms,
        l: c.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(i, &v)| (i, v)).collect(),
        c: 0.0,
    };
    let mut inst = QcqpInstance::new(n, objective);
    inst.bounds = vec![(Some(0.0), Some(1.0)); n];
    Ok(inst)
}

/// Inverse of [`parse_boxqp`] for unit-box instances without constraints.
pub fn write_boxqp(inst: &QcqpInstance) -> Result<String> {
    let n = inst.n;
    let unit = (0..n).all(|i| inst.bound(i) == (0.0, 1.0));
    if !unit || !inst.constraints.is_empty() || inst.objective.c != 0.0 {
        return Err(Error::InvalidArgument(
            "BoxQP needs [0,1] bounds, no constraints and no constant".into(),
        ));
    }
    let mut c = vec![0.0; n];
    for &(i, v) in &inst.objective.l {
        c[i] += v;
    }
    let mut q = vec![vec![0.0; n]; n];
    for &(i, j, v) in &inst.objective.q {
        if i == j {
            q[i][i] += 2.0 * v;
        } else {
            q[i][j] += v;
            q[j][i] += v;
        }
    }
    let mut out = String::new();
    let join = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ");
    writeln!(out, "{n}").unwrap();
    writeln!(out, "{}", join(&c)).unwrap();
    for row in &q {
        writeln!(out, "{}", join(row)).unwrap();
    }
    Ok(out)
}

pub fn parse_qcqp_json(text: &str) -> Result<QcqpInstance> {
    let inst: QcqpInstance = serde_json::from_str(text)?;
    inst.validate()?;
    Ok(inst)
}

pub fn write_qcqp_json(inst: &QcqpInstance) -> Result<String> {
    Ok(serde_json::to_string_pretty(inst)?)
}

/// `min ||A x - b||_1` with at most `k` nonzeros in `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct CardinalityLad {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    pub k: usize,
}

impl CardinalityLad {
    pub fn num_features(&self) -> usize {
        self.a.first().map_or(0, Vec::len)
    }

    /// Variables `(x, t)` with `t_i >= |a_i x - b_i|`. Rows alternate
    /// `a_i x - b_i <= t_i` and `b_i - a_i x <= t_i`, then `t >= 0`.
    pub fn to_lp(&self) -> LpProblem {
        let nf = self.num_features();
        let m = self.a.len();
        let mut p = LpProblem::new(nf + m);
        p.objective = (0..m).map(|i| (nf + i, 1.0)).collect();
        for (i, (row, &bi)) in self.a.iter().zip(&self.b).enumerate() {
            for s in [1.0, -1.0] {
                let mut c: Vec<(usize, f64)> = row
                    .iter()
                    .enumerate()
                    .filter(|(_, v)| **v != 0.0)
                    .map(|(j, &v)| (j, s * v))
                    .collect();
                c.push((nf + i, -1.0));
                p.add_row(c, s * bi);
            }
        }
        for i in 0..m {
            p.add_row(vec![(nf + i, -1.0)], 0.0);
        }
        p
    }

    /// Objective `||A x - b||_1` of a feature vector.
    pub fn residual(&self, x: &[f64]) -> f64 {
        self.a
            .iter()
            .zip(&self.b)
            .map(|(r, bi)| (r.iter().zip(x).map(|(u, v)| u * v).sum::<f64>() - bi).abs())
            .sum()
    }
}

pub fn parse_card(text: &str) -> Result<CardinalityLad> {
    let mut tok = Tokens::new(text);
    let m = tok.count("row count m")?;
    let nf = tok.count("feature count N")?;
    let k = tok.count("cardinality k")?;
    if k > nf {
        return Err(Error::Parse {
            line: tok.last_line,
            msg: format!("k = {k} exceeds N = {nf}"),
        });
    }
    let mut a = Vec::with_capacity(m);
    let mut b = Vec::with_capacity(m);
    for i in 0..m {
        let row: Vec<f64> = (0..nf).map(|j| tok.number(&format!("A[{i}][{j}]"))).collect::<Result<_>>()?;
        a.push(row);
        b.push(tok.number(&format!("b[{i}]"))?);
    }
    tok.finish()?;
    Ok(CardinalityLad { a, b, k })
}

pub fn write_card(c: &CardinalityLad) -> String {
    let mut out = format!("{} {} {}\n", c.a.len(), c.num_features(), c.k);
    for (row, bi) in c.a.iter().zip(&c.b) {
        let mut fields: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        fields.push(bi.to_string());
        out.push_str(&fields.join(" "));
        out.push('\n');
    }
    out
}
