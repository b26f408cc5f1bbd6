//! Micro-averaged F1 over non-NA classes, with NA as the negative class.

use serde::{Deserialize, Serialize};

use crate::dataset::NA;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct F1Score {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

pub fn micro_f1(pred: &[usize], gold: &[usize]) -> F1Score {
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (&p, &g) in pred.iter().zip(gold) {
        if p == g {
            tp += usize::from(g != NA);
            continue;
        }
        fp += usize::from(p != NA);
        fn_ += usize::from(g != NA);
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    F1Score {
        tp,
        fp,
        fn_,
        precision,
        recall,
        f1,
    }
}
