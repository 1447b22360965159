//! Rank and linear correlation, and the in/out weighted final score.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::codec::Dimension;
use crate::error::{Error, Result};
use crate::synth::Split;

/// Weight of the in-distribution average in the final score.
pub const IN_WEIGHT: f64 = 0.7;
/// Weight of the out-of-distribution average in the final score.
pub const OUT_WEIGHT: f64 = 0.3;

const CLAMP_SLACK: f64 = 1e-12;

fn check_pair(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::shape(format!("length mismatch: {} vs {}", x.len(), y.len())));
    }
    if x.len() < 2 {
        return Err(Error::shape(format!("need at least 2 points, got {}", x.len())));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::domain("non-finite value in correlation input"));
    }
    Ok(())
}

/// Sample Pearson correlation.
pub fn plcc(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y)?;
    // tested on the raw values: the mean of a constant vector can be off by
    // an ulp, which would leave a tiny nonzero variance
    let constant = |v: &[f64]| v.iter().all(|a| *a == v[0]);
    if constant(x) || constant(y) {
        return Err(Error::Degenerate("zero variance".into()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Degenerate("zero variance".into()));
    }
    let r = sxy / (sxx.sqrt() * syy.sqrt());
    debug_assert!(r.abs() <= 1.0 + CLAMP_SLACK, "correlation {r} overshoots");
    Ok(r.clamp(-1.0, 1.0))
}

/// Fractional (average) ranks starting at 1.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && x[order[j]] == x[order[i]] {
            j += 1;
        }
        // positions i..j share the mean of ranks i+1..=j
        let rank = (i + j + 1) as f64 / 2.0;
        for &idx in &order[i..j] {
            ranks[idx] = rank;
        }
        i = j;
    }
    ranks
}

/// Spearman correlation: Pearson correlation of average ranks.
pub fn srcc(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y)?;
    plcc(&average_ranks(x), &average_ranks(y))
}

pub fn mae(pred: &[f64], truth: &[f64]) -> Result<f64> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(Error::shape(format!(
            "length mismatch: {} vs {}",
            pred.len(),
            truth.len()
        )));
    }
    Ok(pred.iter().zip(truth).map(|(p, t)| (p - t).abs()).sum::<f64>() / pred.len() as f64)
}

/// SRCC and PLCC of one dimension on one split. `None` marks a degenerate
/// (constant) prediction or label vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub srcc: Option<f64>,
    pub plcc: Option<f64>,
}

impl Correlation {
    pub fn new(srcc: f64, plcc: f64) -> Self {
        Correlation {
            srcc: Some(srcc),
            plcc: Some(plcc),
        }
    }

    /// Computes both coefficients; degenerate inputs yield undefined cells.
    pub fn compute(pred: &[f64], truth: &[f64]) -> Result<Self> {
        let lift = |r: Result<f64>| match r {
            Ok(v) => Ok(Some(v)),
            Err(Error::Degenerate(_)) => Ok(None),
            Err(e) => Err(e),
        };
        Ok(Correlation {
            srcc: lift(srcc(pred, truth))?,
            plcc: lift(plcc(pred, truth))?,
        })
    }

    pub fn is_defined(&self) -> bool {
        self.srcc.is_some() && self.plcc.is_some()
    }

    /// `(srcc + plcc) / 2`.
    pub fn average(&self) -> Option<f64> {
        Some((self.srcc? + self.plcc?) / 2.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitCorrelations {
    #[serde(rename = "in")]
    pub in_dist: Correlation,
    #[serde(rename = "out")]
    pub out_dist: Correlation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub dimensions: BTreeMap<Dimension, SplitCorrelations>,
    pub s_in: Option<f64>,
    pub s_out: Option<f64>,
    #[serde(rename = "final")]
    pub final_score: Option<f64>,
}

fn split_average(cells: &BTreeMap<(Dimension, Split), Correlation>, split: Split) -> Option<f64> {
    let mut sum = 0.0;
    for d in Dimension::ALL {
        sum += cells[&(d, split)].average()?;
    }
    Some(sum / 3.0)
}

/// Assembles the report from the six (dimension, split) cells:
/// `s_split = mean_d (srcc + plcc) / 2` and `final = 0.7 s_in + 0.3 s_out`.
pub fn final_score(cells: &BTreeMap<(Dimension, Split), Correlation>) -> Result<CorrelationReport> {
    for d in Dimension::ALL {
        for s in [Split::In, Split::Out] {
            if !cells.contains_key(&(d, s)) {
                return Err(Error::shape(format!("missing correlations for {d} on the {s} split")));
            }
        }
    }
    let s_in = split_average(cells, Split::In);
    let s_out = split_average(cells, Split::Out);
    let final_score = match (s_in, s_out) {
        (Some(a), Some(b)) => Some(IN_WEIGHT * a + OUT_WEIGHT * b),
        _ => None,
    };
    let dimensions = Dimension::ALL
        .into_iter()
        .map(|d| {
            (
                d,
                SplitCorrelations {
                    in_dist: cells[&(d, Split::In)],
                    out_dist: cells[&(d, Split::Out)],
                },
            )
        })
        .collect();
    Ok(CorrelationReport {
        dimensions,
        s_in,
        s_out,
        final_score,
    })
}

impl CorrelationReport {
    pub fn has_undefined(&self) -> bool {
        self.final_score.is_none()
    }

    /// Fixed-column text rendering; undefined cells print as `undef`.
    pub fn to_table(&self) -> String {
        let cell = |v: Option<f64>| v.map_or_else(|| format!("{:>8}", "undef"), |x| format!("{x:>8.4}"));
        let mut out = String::new();
        let _ = writeln!(out, "{:<14}{:<6}{:>8}{:>8}", "dimension", "split", "srcc", "plcc");
        for (d, s) in &self.dimensions {
            for (label, c) in [("in", s.in_dist), ("out", s.out_dist)] {
                let _ = writeln!(out, "{:<14}{:<6}{}{}", d.label(), label, cell(c.srcc), cell(c.plcc));
            }
        }
        let _ = writeln!(out, "{:<20}{}", "s_in", cell(self.s_in));
        let _ = writeln!(out, "{:<20}{}", "s_out", cell(self.s_out));
        let _ = writeln!(out, "{:<20}{}", "final", cell(self.final_score));
        out
    }
}
