//! Ablation harness: trains and evaluates every variant along one axis with
//! a shared seed and data order, and emits a side-by-side table.

use std::fmt::Write as _;

use crate::config::{Split, TrainConfig};
use crate::edge::EdgeFunctionVariant;
use crate::error::{Error, Result};
use crate::eval::evaluate;
use crate::graph::GraphMode;
use crate::point::MessagePassing;
use crate::train::train;

/// Which architectural choice to sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AblationAxis {
    EdgeFunction,
    MessagePassing,
    GraphMode,
}

impl std::str::FromStr for AblationAxis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "edge_function" => Ok(AblationAxis::EdgeFunction),
            "message_passing" => Ok(AblationAxis::MessagePassing),
            "graph_mode" => Ok(AblationAxis::GraphMode),
            other => Err(Error::Validation(format!(
                "unknown ablation axis {other:?}; use edge_function, message_passing or graph_mode"
            ))),
        }
    }
}

impl AblationAxis {
    pub fn name(self) -> &'static str {
        match self {
            AblationAxis::EdgeFunction => "edge_function",
            AblationAxis::MessagePassing => "message_passing",
            AblationAxis::GraphMode => "graph_mode",
        }
    }
}

#[derive(Debug, Clone)]
pub struct AblationRow {
    pub variant: String,
    pub oa: f64,
    pub macc: f64,
    pub miou: f64,
    pub edge_accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct AblationReport {
    pub axis: AblationAxis,
    pub rows: Vec<AblationRow>,
    pub table: String,
}

fn variants(base: &TrainConfig, axis: AblationAxis) -> Vec<(String, TrainConfig)> {
    match axis {
        AblationAxis::EdgeFunction => EdgeFunctionVariant::ALL
            .iter()
            .map(|&v| {
                let mut c = base.clone();
                c.network.edge_function = v;
                (v.name().to_string(), c)
            })
            .collect(),
        AblationAxis::MessagePassing => MessagePassing::ALL
            .iter()
            .map(|&v| {
                let mut c = base.clone();
                c.network.message_passing = v;
                (v.name().to_string(), c)
            })
            .collect(),
        AblationAxis::GraphMode => [GraphMode::Hierarchical, GraphMode::Independent]
            .iter()
            .map(|&v| {
                let mut c = base.clone();
                c.network.graph_mode = v;
                let name = match v {
                    GraphMode::Hierarchical => "hierarchical",
                    GraphMode::Independent => "independent",
                };
                (name.to_string(), c)
            })
            .collect(),
    }
}

/// Runs train + evaluate per variant. All variants share the base config's
/// seed, so block draws and data order are identical across rows.
pub fn ablate(base: &TrainConfig, axis: AblationAxis) -> Result<AblationReport> {
    base.validate()?;
    let mut rows = Vec::new();
    for (name, mut config) in variants(base, axis) {
        config.run.out_dir = base.run.out_dir.join(format!("ablate_{}_{}", axis.name(), name));
        let (params, _record) = train(&config)?;
        let outcome = evaluate(&config, &params, Split::Eval)?;
        rows.push(AblationRow {
            variant: name,
            oa: outcome.metrics.oa,
            macc: outcome.metrics.macc,
            miou: outcome.metrics.miou,
            edge_accuracy: outcome.edge_accuracy,
        });
    }

    let mut table = String::new();
    let _ = writeln!(table, "axis: {}", axis.name());
    let _ = writeln!(
        table,
        "{:<24} {:>8} {:>8} {:>8} {:>9}",
        "variant", "mIoU", "mAcc", "OA", "edge_acc"
    );
    for row in &rows {
        let _ = writeln!(
            table,
            "{:<24} {:>8.4} {:>8.4} {:>8.4} {:>9.4}",
            row.variant, row.miou, row.macc, row.oa, row.edge_accuracy
        );
    }
    Ok(AblationReport { axis, rows, table })
}
