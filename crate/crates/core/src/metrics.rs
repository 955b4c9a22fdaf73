//! Segmentation metrics: confusion accumulation, OA / mAcc / mIoU, and the
//! text report.

use std::fmt::Write as _;

use crate::error::{Error, Result};

/// Confusion-matrix accumulator; rows are ground truth, columns predictions.
/// Accumulators merge by addition, so evaluation shards combine in any order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalAccumulator {
    num_classes: usize,
    confusion: Vec<u64>,
}

impl EvalAccumulator {
    pub fn new(num_classes: usize) -> Self {
        Self {
            num_classes,
            confusion: vec![0; num_classes * num_classes],
        }
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn record(&mut self, truth: u32, pred: u32) {
        debug_assert!((truth as usize) < self.num_classes);
        debug_assert!((pred as usize) < self.num_classes);
        self.confusion[truth as usize * self.num_classes + pred as usize] += 1;
    }

    pub fn at(&self, truth: usize, pred: usize) -> u64 {
        self.confusion[truth * self.num_classes + pred]
    }

    /// Overwrites an entry; handy for building fixtures.
    pub fn set(&mut self, truth: usize, pred: usize, count: u64) {
        self.confusion[truth * self.num_classes + pred] = count;
    }

    pub fn total(&self) -> u64 {
        self.confusion.iter().sum()
    }

    pub fn merge(&mut self, other: &EvalAccumulator) {
        assert_eq!(self.num_classes, other.num_classes);
        for (a, b) in self.confusion.iter_mut().zip(&other.confusion) {
            *a += b;
        }
    }
}

/// Per-class slice of the metrics. Classes absent from the ground truth are
/// marked and excluded from the aggregate means.
#[derive(Debug, Clone)]
pub struct ClassMetrics {
    pub class: usize,
    pub support: u64,
    pub accuracy: f64,
    pub iou: f64,
}

#[derive(Debug, Clone)]
pub struct Metrics {
    pub oa: f64,
    pub macc: f64,
    pub miou: f64,
    pub per_class: Vec<ClassMetrics>,
}

/// OA, class-mean accuracy, and class-mean IoU from a confusion matrix.
/// Classes with no ground-truth points are excluded from the means.
pub fn metrics(acc: &EvalAccumulator) -> Result<Metrics> {
    let total = acc.total();
    if total == 0 {
        return Err(Error::Validation("metrics on an empty accumulator".into()));
    }
    let c = acc.num_classes();
    let mut trace = 0u64;
    let mut per_class = Vec::with_capacity(c);
    let mut acc_sum = 0.0;
    let mut iou_sum = 0.0;
    let mut present = 0usize;

    for t in 0..c {
        let diag = acc.at(t, t);
        trace += diag;
        let row: u64 = (0..c).map(|p| acc.at(t, p)).sum();
        let col: u64 = (0..c).map(|p| acc.at(p, t)).sum();
        let (accuracy, iou) = if row > 0 {
            let union = row + col - diag;
            (
                diag as f64 / row as f64,
                if union > 0 { diag as f64 / union as f64 } else { 0.0 },
            )
        } else {
            (f64::NAN, f64::NAN)
        };
        if row > 0 {
            present += 1;
            acc_sum += accuracy;
            iou_sum += iou;
        }
        per_class.push(ClassMetrics {
            class: t,
            support: row,
            accuracy,
            iou,
        });
    }
    if present == 0 {
        return Err(Error::Validation("no class has ground-truth points".into()));
    }
    Ok(Metrics {
        oa: trace as f64 / total as f64,
        macc: acc_sum / present as f64,
        miou: iou_sum / present as f64,
        per_class,
    })
}

/// Structured text report: per-class table plus the three aggregates, four
/// decimal places.
pub fn format_report(m: &Metrics, class_names: Option<&[String]>) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "class      support   accuracy        iou");
    for cm in &m.per_class {
        let name = class_names
            .and_then(|n| n.get(cm.class).cloned())
            .unwrap_or_else(|| format!("class_{}", cm.class));
        if cm.support == 0 {
            let _ = writeln!(out, "{name:<12} {:>7}          -          -", 0);
        } else {
            let _ = writeln!(
                out,
                "{name:<12} {:>7}     {:.4}     {:.4}",
                cm.support, cm.accuracy, cm.iou
            );
        }
    }
    let _ = writeln!(out, "OA   {:.4}", m.oa);
    let _ = writeln!(out, "mAcc {:.4}", m.macc);
    let _ = writeln!(out, "mIoU {:.4}", m.miou);
    out
}
