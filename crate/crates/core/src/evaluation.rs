//! Precision, recall and F1 under the pointwise and point-adjust protocols.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::LabelSeries;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Protocol {
    Pointwise,
    PointAdjust,
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Protocol::Pointwise => "pointwise",
            Protocol::PointAdjust => "point-adjust",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub protocol: Protocol,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
}

impl EvalReport {
    pub fn from_counts(protocol: Protocol, tp: usize, fp: usize, fn_: usize, tn: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Self {
            protocol,
            precision,
            recall,
            f1,
            tp,
            fp,
            fn_,
            tn,
        }
    }

    /// One table row: `protocol  P  R  F1`.
    pub fn row(&self) -> String {
        format!(
            "{:<13} P={:.4} R={:.4} F1={:.4}  (tp={} fp={} fn={} tn={})",
            self.protocol.to_string(),
            self.precision,
            self.recall,
            self.f1,
            self.tp,
            self.fp,
            self.fn_,
            self.tn
        )
    }
}

/// Marks every true segment that contains at least one prediction as fully
/// predicted.
pub fn point_adjust(pred: &[bool], truth: &[bool]) -> Vec<bool> {
    let mut out = pred.to_vec();
    let mut i = 0;
    while i < truth.len() {
        if !truth[i] {
            i += 1;
            continue;
        }
        let start = i;
        while i < truth.len() && truth[i] {
            i += 1;
        }
        if pred[start..i].iter().any(|&p| p) {
            out[start..i].iter_mut().for_each(|p| *p = true);
        }
    }
    out
}

pub fn evaluate_slices(pred: &[bool], truth: &[bool], protocol: Protocol) -> Result<EvalReport> {
    if pred.len() != truth.len() {
        return Err(Error::Alignment(format!(
            "{} predictions for {} truth labels",
            pred.len(),
            truth.len()
        )));
    }
    let adjusted;
    let pred = match protocol {
        Protocol::Pointwise => pred,
        Protocol::PointAdjust => {
            adjusted = point_adjust(pred, truth);
            &adjusted
        }
    };
    let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
    for (&p, &t) in pred.iter().zip(truth) {
        match (p, t) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => tn += 1,
        }
    }
    Ok(EvalReport::from_counts(protocol, tp, fp, fn_, tn))
}

pub fn evaluate(pred: &LabelSeries, truth: &LabelSeries, protocol: Protocol) -> Result<EvalReport> {
    evaluate_slices(pred.values(), truth.values(), protocol)
}
