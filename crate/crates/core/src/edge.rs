//! Edge branch: edge-function variants, the edge encoder, edge-feature
//! upsampling across graph layers, and the per-edge consistency head.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Point3;
use crate::graph::{EdgeInterpMap, GraphLayer};
use crate::tensor::{mlp_apply, BoundParams, MlpSpec, Tape, Tensor, ValueId, WeightedGroups};

/// Per-edge features of one layer, recorded on a tape.
#[derive(Debug, Clone, Copy)]
pub struct EdgeFeatures {
    pub layer_index: usize,
    /// `|E_L| × K_L` tensor.
    pub values: ValueId,
}

/// How endpoint features combine into the per-edge input row. Fixed for a
/// whole training run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeFunctionVariant {
    Concatenation,
    Subtraction,
    Summation,
    HadamardProduct,
    ConcatSub,
}

impl EdgeFunctionVariant {
    /// All variants, in the ablation's reporting order.
    pub const ALL: [EdgeFunctionVariant; 5] = [
        EdgeFunctionVariant::Subtraction,
        EdgeFunctionVariant::Summation,
        EdgeFunctionVariant::HadamardProduct,
        EdgeFunctionVariant::ConcatSub,
        EdgeFunctionVariant::Concatenation,
    ];

    /// Width of the edge-function output for point feature width `c`.
    pub fn output_width(self, c: usize) -> usize {
        match self {
            EdgeFunctionVariant::Concatenation | EdgeFunctionVariant::ConcatSub => 3 + 2 * c,
            _ => 3 + c,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            EdgeFunctionVariant::Concatenation => "concatenation",
            EdgeFunctionVariant::Subtraction => "subtraction",
            EdgeFunctionVariant::Summation => "summation",
            EdgeFunctionVariant::HadamardProduct => "hadamard_product",
            EdgeFunctionVariant::ConcatSub => "concat_sub",
        }
    }
}

/// Builds the per-edge input rows for every edge of the layer: displacement
/// `(p_dst − p_src)` first, then the variant's combination of the endpoint
/// features.
pub fn edge_function(
    tape: &mut Tape,
    point_feats: ValueId,
    positions: &[Point3],
    graph: &GraphLayer,
    variant: EdgeFunctionVariant,
) -> Result<ValueId> {
    if tape.value(point_feats).rows() != graph.num_points() {
        return Err(Error::Validation(format!(
            "edge_function got {} feature rows for {} points",
            tape.value(point_feats).rows(),
            graph.num_points()
        )));
    }
    let src: Vec<usize> = graph.edges.iter().map(|&(s, _)| s).collect();
    let dst: Vec<usize> = graph.edges.iter().map(|&(_, d)| d).collect();

    let mut disp = Vec::with_capacity(graph.num_edges() * 3);
    for &(s, d) in &graph.edges {
        for a in 0..3 {
            disp.push(positions[d][a] - positions[s][a]);
        }
    }
    let disp = tape.constant(Tensor::matrix(graph.num_edges(), 3, disp)?);

    let f_src = tape.gather_rows(point_feats, src)?;
    let f_dst = tape.gather_rows(point_feats, dst)?;

    match variant {
        EdgeFunctionVariant::Concatenation => tape.concat_cols(&[disp, f_dst, f_src]),
        EdgeFunctionVariant::Subtraction => {
            let diff = tape.sub(f_dst, f_src)?;
            tape.concat_cols(&[disp, diff])
        }
        EdgeFunctionVariant::Summation => {
            let sum = tape.add(f_dst, f_src)?;
            tape.concat_cols(&[disp, sum])
        }
        EdgeFunctionVariant::HadamardProduct => {
            let prod = tape.mul(f_dst, f_src)?;
            tape.concat_cols(&[disp, prod])
        }
        EdgeFunctionVariant::ConcatSub => {
            let diff = tape.sub(f_dst, f_src)?;
            tape.concat_cols(&[disp, f_dst, diff])
        }
    }
}

/// One edge-encoder block:
/// `H = f_ext1([f_ext2(f_edge(F_src, F_dst)), H_upsampled])`.
/// The coarsest layer passes `None` for `upsampled` (zero-width input).
#[allow(clippy::too_many_arguments)]
pub fn edge_encoder(
    tape: &mut Tape,
    bound: &BoundParams<'_, f64>,
    prefix: &str,
    ext2: &MlpSpec,
    ext1: &MlpSpec,
    variant: EdgeFunctionVariant,
    point_feats: ValueId,
    upsampled: Option<ValueId>,
    positions: &[Point3],
    graph: &GraphLayer,
) -> Result<EdgeFeatures> {
    if let Some(up) = upsampled {
        if tape.value(up).rows() != graph.num_edges() {
            return Err(Error::Validation(format!(
                "edge_encoder got {} upsampled rows for {} edges",
                tape.value(up).rows(),
                graph.num_edges()
            )));
        }
    }
    let fe = edge_function(tape, point_feats, positions, graph, variant)?;
    let ext2_ids = bound.mlp_ids(&format!("{prefix}.ext2"), ext2)?;
    let inner = mlp_apply(tape, ext2, &ext2_ids, fe)?;
    let combined = match upsampled {
        Some(up) => tape.concat_cols(&[inner, up])?,
        None => inner,
    };
    let ext1_ids = bound.mlp_ids(&format!("{prefix}.ext1"), ext1)?;
    let values = mlp_apply(tape, ext1, &ext1_ids, combined)?;
    Ok(EdgeFeatures {
        layer_index: graph.layer_index,
        values,
    })
}

/// Propagates previous-layer edge features onto this layer's edges through
/// the interpolation map. Linear in the feature values; the weights are
/// constants of the graph.
pub fn edge_upsample(
    tape: &mut Tape,
    prev_values: ValueId,
    interp: &EdgeInterpMap,
) -> Result<ValueId> {
    let map = WeightedGroups {
        offsets: interp.offsets.clone(),
        indices: interp.prev_edges.clone(),
        weights: interp.weights.clone(),
    };
    tape.group_weighted_sum(prev_values, map)
}

/// Per-edge semantic-consistency probability: MLP to a scalar logit, then
/// sigmoid.
pub fn edge_head(
    tape: &mut Tape,
    bound: &BoundParams<'_, f64>,
    spec: &MlpSpec,
    final_edges: &EdgeFeatures,
) -> Result<ValueId> {
    if spec.output_width() != 1 {
        return Err(Error::Validation(format!(
            "edge head must end in one logit, spec ends in {}",
            spec.output_width()
        )));
    }
    let ids = bound.mlp_ids("head.edge", spec)?;
    let logit = mlp_apply(tape, spec, &ids, final_edges.values)?;
    Ok(tape.sigmoid(logit))
}
