//! Point branch: encoder-decoder backbone, the point module fusing edge
//! context, the adaptive-aggregation ablation, heads, edge-weighted score
//! refinement, and the full forward pass.

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::edge::{edge_encoder, edge_head, edge_upsample, EdgeFeatures, EdgeFunctionVariant};
use crate::error::{Error, Result};
use crate::geom::{farthest_point_sample, knn, NeighborTable, Point3, PointCloud};
use crate::graph::{build_hierarchy, GraphLayer, GraphMode, HierGraph, INTERP_EPS, INTERP_T};
use crate::tensor::{
    init_mlp_params, mlp_apply, Activation, BoundParams, Groups, MlpSpec, ModelParams, Tape,
    Tensor, ValueId, WeightedGroups,
};

/// Per-point features of one layer, recorded on a tape.
#[derive(Debug, Clone, Copy)]
pub struct PointFeatures {
    pub layer_index: usize,
    /// `N_L × C_L` tensor.
    pub values: ValueId,
}

/// How edge features feed back into point features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessagePassing {
    /// Max over a point's outgoing edge features, concatenated to its own.
    MaxPoolConcat,
    /// Edge-derived scalar weights, softmax-normalized per point, combine
    /// neighbor features.
    AdaAggreSoftmax,
    /// Same without the softmax.
    AdaAggreNoSoftmax,
}

impl MessagePassing {
    /// All modes, in the ablation's reporting order.
    pub const ALL: [MessagePassing; 3] = [
        MessagePassing::AdaAggreSoftmax,
        MessagePassing::AdaAggreNoSoftmax,
        MessagePassing::MaxPoolConcat,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MessagePassing::MaxPoolConcat => "max_pool_concat",
            MessagePassing::AdaAggreSoftmax => "ada_aggre_softmax",
            MessagePassing::AdaAggreNoSoftmax => "ada_aggre_no_softmax",
        }
    }
}

/// Everything that fixes the network architecture for a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    /// Points per layer, coarsest first; the last entry is the block size.
    pub layer_counts: Vec<usize>,
    /// Graph k per layer.
    pub k_list: Vec<usize>,
    /// Neighbors for point and edge feature interpolation.
    pub k_interp: usize,
    /// Point feature channels per layer.
    pub point_channels: Vec<usize>,
    /// Edge feature channels per layer.
    pub edge_channels: Vec<usize>,
    /// Hidden width of the edge feature extractors per layer; empty means
    /// "same as edge_channels".
    #[serde(default)]
    pub ext_hidden: Vec<usize>,
    pub head_hidden: usize,
    pub edge_head_hidden: usize,
    /// Input feature width: 6 or 9 depending on the dataset schema.
    pub input_dim: usize,
    pub num_classes: usize,
    pub message_passing: MessagePassing,
    pub graph_mode: GraphMode,
    pub edge_function: EdgeFunctionVariant,
}

impl NetworkConfig {
    pub fn num_layers(&self) -> usize {
        self.layer_counts.len()
    }

    /// Point count of the finest layer, i.e. the training block size.
    pub fn block_points(&self) -> usize {
        *self.layer_counts.last().unwrap_or(&0)
    }

    pub fn ext_hidden_at(&self, layer: usize) -> usize {
        if self.ext_hidden.is_empty() {
            self.edge_channels[layer]
        } else {
            self.ext_hidden[layer]
        }
    }

    pub fn validate(&self) -> Result<()> {
        let l = self.num_layers();
        if l < 2 {
            return Err(Error::Config("need at least two layers".into()));
        }
        if self.layer_counts.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!(
                "layer counts must strictly increase, got {:?}",
                self.layer_counts
            )));
        }
        for (name, v) in [
            ("k_list", &self.k_list),
            ("point_channels", &self.point_channels),
            ("edge_channels", &self.edge_channels),
        ] {
            if v.len() != l {
                return Err(Error::Config(format!(
                    "{name} has {} entries for {l} layers",
                    v.len()
                )));
            }
        }
        if !self.ext_hidden.is_empty() && self.ext_hidden.len() != l {
            return Err(Error::Config(format!(
                "ext_hidden has {} entries for {l} layers",
                self.ext_hidden.len()
            )));
        }
        for (i, (&k, &n)) in self.k_list.iter().zip(&self.layer_counts).enumerate() {
            if k == 0 || k > n {
                return Err(Error::Config(format!(
                    "k_list[{i}] = {k} invalid for layer of {n} points"
                )));
            }
        }
        if self.k_interp == 0 || self.k_interp > self.layer_counts[0] {
            return Err(Error::Config(format!(
                "k_interp = {} invalid for a coarsest layer of {} points",
                self.k_interp, self.layer_counts[0]
            )));
        }
        if self.input_dim != 6 && self.input_dim != 9 {
            return Err(Error::Config(format!(
                "input_dim must be 6 or 9, got {}",
                self.input_dim
            )));
        }
        if self.num_classes < 2 {
            return Err(Error::Config("need at least two classes".into()));
        }
        Ok(())
    }

    /// Every MLP of the model, as `(name prefix, spec)`, in the fixed order
    /// that defines parameter layout.
    pub fn architecture(&self) -> Result<Vec<(String, MlpSpec)>> {
        self.validate()?;
        let l = self.num_layers();
        let c = &self.point_channels;
        let k = &self.edge_channels;
        let hierarchical = self.graph_mode == GraphMode::Hierarchical;
        let mut out = Vec::new();

        // encoder stages, finest to coarsest: stage producing layer i groups
        // points of layer i+1
        for i in (0..l - 1).rev() {
            let feat_w = if i + 1 == l - 1 { self.input_dim } else { c[i + 1] };
            out.push((
                format!("enc{i}"),
                MlpSpec::new(vec![3 + feat_w, c[i], c[i]], Activation::Relu, true)?,
            ));
        }
        // decoder feature propagation onto layers 1..
        for i in 1..l {
            let skip_w = if i == l - 1 { self.input_dim } else { c[i] };
            out.push((
                format!("fp{i}"),
                MlpSpec::new(vec![c[i - 1] + skip_w, c[i], c[i]], Activation::Relu, true)?,
            ));
        }
        // edge encoder blocks, one per layer
        for i in 0..l {
            let h = self.ext_hidden_at(i);
            let fe_w = self.edge_function.output_width(c[i]);
            out.push((
                format!("edge{i}.ext2"),
                MlpSpec::new(vec![fe_w, h, k[i]], Activation::Relu, true)?,
            ));
            let up_w = if hierarchical && i > 0 { k[i - 1] } else { 0 };
            out.push((
                format!("edge{i}.ext1"),
                MlpSpec::new(vec![k[i] + up_w, h, k[i]], Activation::Relu, true)?,
            ));
        }
        // per-layer fusion of point features with edge context
        for i in 0..l {
            let in_w = match self.message_passing {
                MessagePassing::MaxPoolConcat => c[i] + k[i],
                _ => c[i],
            };
            out.push((
                format!("fuse{i}"),
                MlpSpec::new(vec![in_w, c[i]], Activation::Relu, true)?,
            ));
            if self.message_passing != MessagePassing::MaxPoolConcat {
                out.push((
                    format!("ada{i}"),
                    MlpSpec::new(vec![k[i], 1], Activation::None, true)?,
                ));
            }
        }
        out.push((
            "head.point".into(),
            MlpSpec::new(
                vec![c[l - 1], self.head_hidden, self.num_classes],
                Activation::None,
                true,
            )?,
        ));
        out.push((
            "head.edge".into(),
            MlpSpec::new(
                vec![k[l - 1], self.edge_head_hidden, 1],
                Activation::None,
                true,
            )?,
        ));
        Ok(out)
    }
}

/// Fresh, seeded parameters for every MLP in the architecture.
pub fn init_params(config: &NetworkConfig, seed: u64) -> Result<ModelParams> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ModelParams::new();
    for (prefix, spec) in config.architecture()? {
        let tensors = init_mlp_params(&spec, &mut rng);
        for ((suffix, _), t) in spec.param_shapes().iter().zip(tensors) {
            params.insert(format!("{prefix}.{suffix}"), t)?;
        }
    }
    Ok(params)
}

fn out_edge_groups(graph: &GraphLayer) -> Result<Groups> {
    if graph.out_edges.iter().any(|&(s, e)| s >= e) {
        return Err(Error::Internal(format!(
            "layer {}: a point has no outgoing edges",
            graph.layer_index
        )));
    }
    Ok(Groups::new(graph.out_edges.clone()))
}

/// One set-abstraction stage with explicit centers: group each center's
/// k nearest input points, run the MLP on `[relative position, features]`
/// rows, and max-pool each group.
pub fn set_abstraction_at(
    tape: &mut Tape,
    positions: &[Point3],
    feats: ValueId,
    centers: &[usize],
    k: usize,
    spec: &MlpSpec,
    params: &[ValueId],
) -> Result<ValueId> {
    let center_positions: Vec<Point3> = centers.iter().map(|&i| positions[i]).collect();
    let table = knn(&center_positions, positions, k)?;

    let mut rel = Vec::with_capacity(centers.len() * k * 3);
    for (ci, center) in center_positions.iter().enumerate() {
        let (idx, _) = table.row(ci);
        for &n in idx {
            for a in 0..3 {
                rel.push(positions[n][a] - center[a]);
            }
        }
    }
    let rel = tape.constant(Tensor::matrix(centers.len() * k, 3, rel)?);
    let gathered = tape.gather_rows(feats, table.indices.clone())?;
    let x = tape.concat_cols(&[rel, gathered])?;
    let h = mlp_apply(tape, spec, params, x)?;
    let groups = Groups::new((0..centers.len()).map(|i| (i * k, (i + 1) * k)).collect());
    tape.scatter_max_groups(h, groups)
}

/// Standalone set abstraction: FPS to `m` centers (seeded at index 0), then
/// [`set_abstraction_at`]. Returns the picked indices and the new features.
pub fn set_abstraction(
    tape: &mut Tape,
    positions: &[Point3],
    feats: ValueId,
    m: usize,
    k: usize,
    spec: &MlpSpec,
    params: &[ValueId],
) -> Result<(Vec<usize>, ValueId)> {
    let centers = farthest_point_sample(positions, m, 0)?;
    let values = set_abstraction_at(tape, positions, feats, &centers, k, spec, params)?;
    Ok((centers, values))
}

/// Inverse-squared-distance interpolation of coarse features onto fine
/// points, concatenated with skip features, then an MLP.
#[allow(clippy::too_many_arguments)]
pub fn feature_propagate(
    tape: &mut Tape,
    coarse_positions: &[Point3],
    coarse_feats: ValueId,
    fine_positions: &[Point3],
    skip_feats: ValueId,
    k_interp: usize,
    cross: Option<&NeighborTable>,
    spec: &MlpSpec,
    params: &[ValueId],
) -> Result<ValueId> {
    let owned;
    let table = match cross {
        Some(t) => t,
        None => {
            owned = knn(fine_positions, coarse_positions, k_interp)?;
            &owned
        }
    };
    let mut offsets = Vec::with_capacity(fine_positions.len() + 1);
    let mut indices = Vec::with_capacity(fine_positions.len() * k_interp);
    let mut weights = Vec::with_capacity(fine_positions.len() * k_interp);
    offsets.push(0);
    for q in 0..fine_positions.len() {
        let (idx, dist) = table.row(q);
        let raw: Vec<f64> = dist.iter().map(|d| 1.0 / (d.powi(INTERP_T) + INTERP_EPS)).collect();
        let sum: f64 = raw.iter().sum();
        for (&i, w) in idx.iter().zip(raw) {
            indices.push(i);
            weights.push(w / sum);
        }
        offsets.push(indices.len());
    }
    let interp = tape.group_weighted_sum(
        coarse_feats,
        WeightedGroups {
            offsets,
            indices,
            weights,
        },
    )?;
    let x = tape.concat_cols(&[interp, skip_feats])?;
    mlp_apply(tape, spec, params, x)
}

/// Max-pools each point's outgoing edge features and concatenates the pooled
/// vector to the point's own feature (width `C_L + K_L`).
pub fn point_module(
    tape: &mut Tape,
    point_feats: ValueId,
    edge_feats: &EdgeFeatures,
    graph: &GraphLayer,
) -> Result<ValueId> {
    let groups = out_edge_groups(graph)?;
    let pooled = tape.scatter_max_groups(edge_feats.values, groups)?;
    tape.concat_cols(&[point_feats, pooled])
}

/// Adaptive aggregation: an MLP turns each edge feature into a scalar weight
/// (optionally softmax-normalized per point); the new point feature is the
/// weighted sum of its out-neighbors' features.
#[allow(clippy::too_many_arguments)]
pub fn ada_aggregate(
    tape: &mut Tape,
    point_feats: ValueId,
    edge_feats: &EdgeFeatures,
    graph: &GraphLayer,
    use_softmax: bool,
    spec: &MlpSpec,
    params: &[ValueId],
) -> Result<ValueId> {
    let groups = out_edge_groups(graph)?;
    let mut w = mlp_apply(tape, spec, params, edge_feats.values)?;
    if use_softmax {
        w = tape.group_softmax(w, groups.clone())?;
    }
    let dst: Vec<usize> = graph.edges.iter().map(|&(_, d)| d).collect();
    let f_dst = tape.gather_rows(point_feats, dst)?;
    let contrib = tape.row_scale(f_dst, w)?;
    tape.group_sum_rows(contrib, groups)
}

/// Class logits from the finest point features.
pub fn point_head(
    tape: &mut Tape,
    bound: &BoundParams<'_, f64>,
    spec: &MlpSpec,
    feats: ValueId,
) -> Result<ValueId> {
    let ids = bound.mlp_ids("head.point", spec)?;
    mlp_apply(tape, spec, &ids, feats)
}

/// Aggregates each point's out-neighbors' scores with the edge predictions
/// as weights, normalized by the weight sum:
/// `refined_i = Σ pred_e · scores_dst(e) / Σ pred_e`.
pub fn refine_with_edges(
    tape: &mut Tape,
    scores: ValueId,
    edge_preds: ValueId,
    graph: &GraphLayer,
) -> Result<ValueId> {
    if tape.value(edge_preds).rows() != graph.num_edges() {
        return Err(Error::Validation(format!(
            "refine_with_edges got {} predictions for {} edges",
            tape.value(edge_preds).rows(),
            graph.num_edges()
        )));
    }
    let groups = out_edge_groups(graph)?;
    let dst: Vec<usize> = graph.edges.iter().map(|&(_, d)| d).collect();
    let gathered = tape.gather_rows(scores, dst)?;
    let weighted = tape.row_scale(gathered, edge_preds)?;
    let numer = tape.group_sum_rows(weighted, groups.clone())?;
    let denom = tape.group_sum_rows(edge_preds, groups)?;
    tape.row_div(numer, denom)
}

/// Everything the full pass produces. Point rows follow the finest layer's
/// order; `graph.finest().point_indices` maps them back to block rows.
pub struct ForwardOutput {
    /// `N × num_classes` logits from the point head.
    pub scores: ValueId,
    /// Edge-refined logits, same shape.
    pub refined: ValueId,
    /// `|E| × 1` edge consistency probabilities at the finest layer.
    pub edge_preds: ValueId,
    pub graph: HierGraph,
}

/// Runs the whole network on one block: encoder set abstractions down to the
/// coarsest layer, hierarchy construction, then per decoder layer feature
/// propagation, the edge module, and message passing, finishing with both
/// heads and edge-weighted refinement.
pub fn forward(
    tape: &mut Tape,
    config: &NetworkConfig,
    bound: &BoundParams<'_, f64>,
    block: &PointCloud,
) -> Result<ForwardOutput> {
    config.validate()?;
    if block.len() != config.block_points() {
        return Err(Error::Validation(format!(
            "block has {} points, config expects {}",
            block.len(),
            config.block_points()
        )));
    }
    if block.feature_dim != config.input_dim {
        return Err(Error::Validation(format!(
            "block features are {}-D, config expects {}-D",
            block.feature_dim, config.input_dim
        )));
    }
    let arch: HashMap<String, MlpSpec> = config.architecture()?.into_iter().collect();
    let apply = |tape: &mut Tape, name: &str, x: ValueId| -> Result<ValueId> {
        let spec = arch
            .get(name)
            .ok_or_else(|| Error::Internal(format!("missing architecture entry {name}")))?;
        let ids = bound.mlp_ids(name, spec)?;
        mlp_apply(tape, spec, &ids, x)
    };

    let n_layers = config.num_layers();
    let order = farthest_point_sample(&block.positions, block.len(), 0)?;
    let positions: Vec<Vec<Point3>> = config
        .layer_counts
        .iter()
        .map(|&m| order[..m].iter().map(|&i| block.positions[i]).collect())
        .collect();
    let indices: Vec<Vec<usize>> = config.layer_counts.iter().map(|&m| order[..m].to_vec()).collect();

    // input features reordered to the FPS order of the finest layer
    let mut input = Vec::with_capacity(block.len() * block.feature_dim);
    for &i in &order {
        input.extend_from_slice(block.feature_row(i));
    }
    let input = tape.constant(Tensor::matrix(block.len(), block.feature_dim, input)?);

    // encoder: layer l features are grouped from layer l+1
    let mut enc_feats: Vec<ValueId> = vec![input; n_layers];
    for l in (0..n_layers - 1).rev() {
        let spec = &arch[&format!("enc{l}")];
        let ids = bound.mlp_ids(&format!("enc{l}"), spec)?;
        let centers: Vec<usize> = (0..config.layer_counts[l]).collect();
        enc_feats[l] = set_abstraction_at(
            tape,
            &positions[l + 1],
            enc_feats[l + 1],
            &centers,
            config.k_list[l],
            spec,
            &ids,
        )?;
    }

    let hier = build_hierarchy(
        &positions,
        &indices,
        &config.k_list,
        config.k_interp,
        config.graph_mode,
    )?;

    // decoder with the edge branch alongside
    let mut point_feats = enc_feats[0];
    let mut edge_feats: Option<EdgeFeatures> = None;
    for l in 0..n_layers {
        if l > 0 {
            let spec = &arch[&format!("fp{l}")];
            let ids = bound.mlp_ids(&format!("fp{l}"), spec)?;
            point_feats = feature_propagate(
                tape,
                &positions[l - 1],
                point_feats,
                &positions[l],
                enc_feats[l],
                config.k_interp,
                Some(&hier.knn_cross[l - 1]),
                spec,
                &ids,
            )?;
        }
        let upsampled = match (&edge_feats, config.graph_mode) {
            (Some(prev), GraphMode::Hierarchical) if l > 0 => {
                Some(edge_upsample(tape, prev.values, &hier.interp_maps[l - 1])?)
            }
            _ => None,
        };
        let ef = edge_encoder(
            tape,
            bound,
            &format!("edge{l}"),
            &arch[&format!("edge{l}.ext2")],
            &arch[&format!("edge{l}.ext1")],
            config.edge_function,
            point_feats,
            upsampled,
            &positions[l],
            &hier.layers[l],
        )?;
        let combined = match config.message_passing {
            MessagePassing::MaxPoolConcat => {
                point_module(tape, point_feats, &ef, &hier.layers[l])?
            }
            MessagePassing::AdaAggreSoftmax | MessagePassing::AdaAggreNoSoftmax => {
                let spec = &arch[&format!("ada{l}")];
                let ids = bound.mlp_ids(&format!("ada{l}"), spec)?;
                ada_aggregate(
                    tape,
                    point_feats,
                    &ef,
                    &hier.layers[l],
                    config.message_passing == MessagePassing::AdaAggreSoftmax,
                    spec,
                    &ids,
                )?
            }
        };
        point_feats = apply(tape, &format!("fuse{l}"), combined)?;
        edge_feats = Some(ef);
    }

    let final_edges = edge_feats.expect("at least one layer");
    let scores = point_head(tape, bound, &arch["head.point"], point_feats)?;
    let edge_preds = edge_head(tape, bound, &arch["head.edge"], &final_edges)?;
    let refined = refine_with_edges(tape, scores, edge_preds, hier.finest())?;

    Ok(ForwardOutput {
        scores,
        refined,
        edge_preds,
        graph: hier,
    })
}

#[cfg(test)]
mod tests;
