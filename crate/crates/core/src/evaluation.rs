//! Metrics and the learned log-partition diagnostic.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::energy::EnergyModel;
use crate::inference::{predict, ModeSolverConfig};
use crate::losses::unary_log_partition;
use crate::nets::Net;
use crate::spaces::{is_rank_vector, matrix_to_ranks, SpaceKind};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub name: String,
    pub value: f64,
    pub per_example: Option<Vec<f64>>,
}

impl MetricReport {
    fn mean_of(name: &str, per_example: Vec<f64>) -> Self {
        let value = if per_example.is_empty() {
            0.0
        } else {
            per_example.iter().sum::<f64>() / per_example.len() as f64
        };
        MetricReport {
            name: name.to_string(),
            value,
            per_example: Some(per_example),
        }
    }
}

/// Example-based f1: `2|y ∧ ŷ| / (|y| + |ŷ|)`, 1 when both are empty.
pub fn f1_example(y_true: &[f64], y_pred: &[f64]) -> Result<f64> {
    if y_true.len() != y_pred.len() {
        return Err(Error::ShapeMismatch(format!("f1 on {} vs {} labels", y_true.len(), y_pred.len())));
    }
    let on = |v: f64| v >= 0.5;
    let both = y_true.iter().zip(y_pred).filter(|(&a, &b)| on(a) && on(b)).count();
    let total = y_true.iter().filter(|&&a| on(a)).count() + y_pred.iter().filter(|&&b| on(b)).count();
    Ok(if total == 0 { 1.0 } else { 2.0 * both as f64 / total as f64 })
}

/// Micro-averaged f1 over a whole dataset.
pub fn micro_f1(y_true: &[Vec<f64>], y_pred: &[Vec<f64>]) -> Result<f64> {
    let (mut tp, mut fp, mut fne) = (0usize, 0usize, 0usize);
    for (t, p) in y_true.iter().zip(y_pred) {
        if t.len() != p.len() {
            return Err(Error::ShapeMismatch("micro f1 label count".into()));
        }
        for (&a, &b) in t.iter().zip(p) {
            match (a >= 0.5, b >= 0.5) {
                (true, true) => tp += 1,
                (false, true) => fp += 1,
                (true, false) => fne += 1,
                _ => {}
            }
        }
    }
    let denom = 2 * tp + fp + fne;
    Ok(if denom == 0 { 1.0 } else { 2.0 * tp as f64 / denom as f64 })
}

/// Kendall rank correlation between two rank vectors.
pub fn kendall_tau(a: &[f64], b: &[f64]) -> Result<f64> {
    let k = a.len();
    for (v, which) in [(a, "first ranking"), (b, "second ranking")] {
        if v.len() != k || !is_rank_vector(v) {
            return Err(Error::NotAPermutation {
                context: which.into(),
                k,
            });
        }
    }
    if k < 2 {
        return Ok(1.0);
    }
    let mut score = 0i64;
    for i in 0..k {
        for j in i + 1..k {
            let s = (a[i] - a[j]).signum() * (b[i] - b[j]).signum();
            score += s as i64;
        }
    }
    Ok(score as f64 / (k * (k - 1) / 2) as f64)
}

fn as_ranks(y: &[f64], kind: SpaceKind, k: usize) -> Result<Vec<f64>> {
    match kind {
        SpaceKind::PermutationMatrices => matrix_to_ranks(y, k),
        _ => Ok(y.to_vec()),
    }
}

/// The task metric on `data`: example f1 for label sets, Kendall tau for
/// rankings (either encoding).
pub fn evaluate(model: &EnergyModel, data: &Dataset, cfg: &ModeSolverConfig) -> Result<MetricReport> {
    let mut per = Vec::with_capacity(data.len());
    for (x, y) in data.xs.iter().zip(&data.ys) {
        let pred = predict(model, x, cfg)?;
        per.push(score_prediction(data.space.kind, data.space.k, &y.0, &pred.0)?);
    }
    Ok(MetricReport::mean_of(metric_name(data.space.kind), per))
}

pub fn metric_name(kind: SpaceKind) -> &'static str {
    match kind {
        SpaceKind::BinaryVectors => "f1",
        _ => "kendall_tau",
    }
}

pub fn score_prediction(kind: SpaceKind, k: usize, y_true: &[f64], y_pred: &[f64]) -> Result<f64> {
    match kind {
        SpaceKind::BinaryVectors => f1_example(y_true, y_pred),
        _ => kendall_tau(&as_ranks(y_true, kind, k)?, &as_ranks(y_pred, kind, k)?),
    }
}

/// Pearson correlation; `None` when either side has zero variance.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len();
    if n < 2 || b.len() != n {
        return None;
    }
    let ma = a.iter().sum::<f64>() / n as f64;
    let mb = b.iter().sum::<f64>() / n as f64;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return None;
    }
    Some(sab / (saa.sqrt() * sbb.sqrt()))
}

/// Learned `τ(x)` against the exact unary log-partition on the same inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct TauDiagnostic {
    /// `None` when either series is constant.
    pub pearson: Option<f64>,
    /// `(learned τ, exact log-partition)` per input.
    pub pairs: Vec<(f64, f64)>,
}

pub fn tau_vs_oracle(tau: &Net, g: &EnergyModel, xs: &[Vec<f64>]) -> Result<TauDiagnostic> {
    if !g.is_unary() {
        return Err(Error::NotUnary);
    }
    if tau.spec.kind == crate::nets::NetKind::PerExampleTable {
        return Err(Error::WrongKind {
            expected: "feature-based log-partition network",
            got: "per_example_table".into(),
        });
    }
    let mut pairs = Vec::with_capacity(xs.len());
    for x in xs {
        let learned = tau.forward(crate::nets::NetInput::Features(x))?.0[0];
        let (theta, _) = g.logits(x)?;
        pairs.push((learned, unary_log_partition(&theta)));
    }
    let (a, b): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
    Ok(TauDiagnostic {
        pearson: pearson(&a, &b),
        pairs,
    })
}

/// Two-column CSV `learned_tau,exact_lse`.
pub fn write_pairs_csv<W: Write>(mut w: W, pairs: &[(f64, f64)]) -> Result<()> {
    writeln!(w, "learned_tau,exact_lse")?;
    for (a, b) in pairs {
        writeln!(w, "{a},{b}")?;
    }
    Ok(())
}
