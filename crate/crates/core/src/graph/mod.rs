//! Hierarchical directed graph construction: initialization at the coarsest
//! layer, per-layer candidate edges, pruning against the previous layer's
//! edge set, and edge-interpolation maps for upsampling.

mod dump;

pub use dump::write_graph_dump;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{dist2, knn, NeighborTable, Point3};

/// Exponent and stabilizer of the inverse-distance edge-interpolation weights.
pub const INTERP_T: i32 = 2;
pub const INTERP_EPS: f64 = 1e-8;

/// Whether layer graphs are linked through pruning and edge upsampling or
/// built independently per layer (ablation mode).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphMode {
    Hierarchical,
    Independent,
}

/// One resolution level of the hierarchy. Edges are directed `(src, dst)`
/// pairs over layer-local indices, grouped by `src` and sorted by `dst`
/// within each group; every point keeps at least its self-edge.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphLayer {
    pub layer_index: usize,
    /// Maps layer-local point indices into the full-resolution cloud.
    pub point_indices: Vec<usize>,
    pub edges: Vec<(usize, usize)>,
    /// Per-point contiguous `[start, end)` ranges into `edges`.
    pub out_edges: Vec<(usize, usize)>,
}

impl GraphLayer {
    pub fn num_points(&self) -> usize {
        self.point_indices.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    /// Outgoing edges of point `p`.
    pub fn out_slice(&self, p: usize) -> &[(usize, usize)] {
        let (s, e) = self.out_edges[p];
        &self.edges[s..e]
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.num_points();
        if self.out_edges.len() != n {
            return Err(Error::Internal(format!(
                "layer {}: {} out-edge ranges for {} points",
                self.layer_index,
                self.out_edges.len(),
                n
            )));
        }
        let mut cursor = 0;
        for (p, &(s, e)) in self.out_edges.iter().enumerate() {
            if s != cursor || e <= s {
                return Err(Error::Internal(format!(
                    "layer {}: point {p} has range [{s}, {e}), expected start {cursor} and non-empty",
                    self.layer_index
                )));
            }
            cursor = e;
            let mut has_self = false;
            let mut prev_dst = None;
            for &(src, dst) in &self.edges[s..e] {
                if src != p || dst >= n {
                    return Err(Error::Internal(format!(
                        "layer {}: edge ({src}, {dst}) misplaced in point {p}'s group",
                        self.layer_index
                    )));
                }
                if let Some(pd) = prev_dst {
                    if dst <= pd {
                        return Err(Error::Internal(format!(
                            "layer {}: point {p}'s edges not strictly sorted by dst",
                            self.layer_index
                        )));
                    }
                }
                prev_dst = Some(dst);
                has_self |= dst == p;
            }
            if !has_self {
                return Err(Error::Internal(format!(
                    "layer {}: point {p} lost its self-edge",
                    self.layer_index
                )));
            }
        }
        if cursor != self.edges.len() {
            return Err(Error::Internal(format!(
                "layer {}: out-edge ranges cover {cursor} of {} edges",
                self.layer_index,
                self.edges.len()
            )));
        }
        Ok(())
    }
}

/// For each layer-`L` edge, the surviving layer-`(L-1)` edges it interpolates
/// from, with normalized weights. Flattened: `offsets` has one entry per edge
/// plus the terminal.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeInterpMap {
    pub offsets: Vec<usize>,
    pub prev_edges: Vec<usize>,
    pub weights: Vec<f64>,
}

impl EdgeInterpMap {
    pub fn num_edges(&self) -> usize {
        self.offsets.len().saturating_sub(1)
    }

    pub fn entries(&self, edge: usize) -> (&[usize], &[f64]) {
        let (s, e) = (self.offsets[edge], self.offsets[edge + 1]);
        (&self.prev_edges[s..e], &self.weights[s..e])
    }

    pub fn validate(&self, num_edges: usize, prev_edge_count: usize) -> Result<()> {
        if self.num_edges() != num_edges {
            return Err(Error::Internal(format!(
                "interp map covers {} edges, layer has {num_edges}",
                self.num_edges()
            )));
        }
        for e in 0..num_edges {
            let (prev, w) = self.entries(e);
            if prev.is_empty() {
                return Err(Error::Internal(format!("edge {e} has an empty match list")));
            }
            if prev.windows(2).any(|p| p[0] >= p[1]) {
                return Err(Error::Internal(format!(
                    "edge {e}: matched prev edges not strictly ascending"
                )));
            }
            if prev.iter().any(|&p| p >= prev_edge_count) {
                return Err(Error::Internal(format!(
                    "edge {e}: matched prev edge out of range"
                )));
            }
            let sum: f64 = w.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::Internal(format!(
                    "edge {e}: weights sum to {sum}, expected 1"
                )));
            }
        }
        Ok(())
    }
}

/// The full hierarchy, coarsest (layer 0) first.
#[derive(Debug, Clone)]
pub struct HierGraph {
    pub layers: Vec<GraphLayer>,
    /// One map per layer `>= 1`; empty in [`GraphMode::Independent`].
    pub interp_maps: Vec<EdgeInterpMap>,
    /// Per layer `>= 1`: the k-nearest previous-layer points of each point,
    /// reused for point-feature interpolation.
    pub knn_cross: Vec<NeighborTable>,
}

impl HierGraph {
    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn finest(&self) -> &GraphLayer {
        self.layers.last().expect("hierarchy has at least one layer")
    }

    pub fn validate(&self) -> Result<()> {
        for layer in &self.layers {
            layer.validate()?;
        }
        for pair in self.layers.windows(2) {
            let (coarse, fine) = (&pair[0], &pair[1]);
            if coarse.num_points() >= fine.num_points() {
                return Err(Error::Internal(format!(
                    "layer sizes not strictly increasing: {} then {}",
                    coarse.num_points(),
                    fine.num_points()
                )));
            }
            if fine.point_indices[..coarse.num_points()] != coarse.point_indices[..] {
                return Err(Error::Internal(
                    "coarser point set is not a prefix of the finer one".into(),
                ));
            }
        }
        if !self.interp_maps.is_empty() {
            if self.interp_maps.len() != self.layers.len() - 1 {
                return Err(Error::Internal(format!(
                    "{} interp maps for {} layers",
                    self.interp_maps.len(),
                    self.layers.len()
                )));
            }
            for (l, map) in self.interp_maps.iter().enumerate() {
                map.validate(self.layers[l + 1].num_edges(), self.layers[l].num_edges())?;
            }
        }
        Ok(())
    }
}

/// Candidate neighbor lists: each point's `k` nearest (including itself),
/// with the self index guaranteed present. If exact duplicates crowd the
/// point out of its own k-NN row, the farthest candidate is replaced so the
/// out-degree bound holds.
fn candidate_lists(points: &[Point3], k: usize) -> Result<Vec<Vec<usize>>> {
    let table = knn(points, points, k)?;
    let mut out = Vec::with_capacity(points.len());
    for i in 0..points.len() {
        let (idx, _) = table.row(i);
        let mut row: Vec<usize> = idx.to_vec();
        if !row.contains(&i) {
            *row.last_mut().unwrap() = i;
        }
        row.sort_unstable();
        out.push(row);
    }
    Ok(out)
}

/// Initializes the coarsest graph: each point connects to its `k0` nearest
/// points, itself included.
pub fn init_graph(points0: &[Point3], k0: usize) -> Result<GraphLayer> {
    plain_knn_layer(points0, k0, 0, (0..points0.len()).collect())
}

/// A plain k-NN-with-self layer; also the per-layer graph of the
/// independent-graph ablation.
pub fn plain_knn_layer(
    points: &[Point3],
    k: usize,
    layer_index: usize,
    point_indices: Vec<usize>,
) -> Result<GraphLayer> {
    let lists = candidate_lists(points, k)?;
    let mut edges = Vec::with_capacity(points.len() * k);
    let mut out_edges = Vec::with_capacity(points.len());
    for (i, row) in lists.iter().enumerate() {
        let start = edges.len();
        for &j in row {
            edges.push((i, j));
        }
        out_edges.push((start, edges.len()));
    }
    Ok(GraphLayer {
        layer_index,
        point_indices,
        edges,
        out_edges,
    })
}

/// The set of possible neighboring edges of `(src, dst)` in the previous
/// layer: the Cartesian product of the two endpoints' cross-layer neighbor
/// lists (`k_interp²` ordered pairs).
pub fn neighbor_edge_set(
    knn_cross: &NeighborTable,
    src: usize,
    dst: usize,
) -> Vec<(usize, usize)> {
    let (src_n, _) = knn_cross.row(src);
    let (dst_n, _) = knn_cross.row(dst);
    let mut out = Vec::with_capacity(src_n.len() * dst_n.len());
    for &a in src_n {
        for &b in dst_n {
            out.push((a, b));
        }
    }
    out
}

/// Inverse-distance-product interpolation weights for a non-empty list of
/// matched previous-layer edges, given the endpoint distances
/// `(‖p_i − p_i'‖, ‖p_j − p_j'‖)` per match. Normalized to sum 1.
pub fn edge_upsample_weights(matched_distances: &[(f64, f64)]) -> Result<Vec<f64>> {
    if matched_distances.is_empty() {
        return Err(Error::Internal(
            "edge_upsample_weights on an empty match list".into(),
        ));
    }
    let mut weights: Vec<f64> = matched_distances
        .iter()
        .map(|&(di, dj)| 1.0 / ((di.powi(INTERP_T) + INTERP_EPS) * (dj.powi(INTERP_T) + INTERP_EPS)))
        .collect();
    let sum: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= sum;
    }
    Ok(weights)
}

/// Builds layer `L` from candidate k-NN edges pruned against the previous
/// layer: a candidate survives iff its neighboring-edge set intersects
/// `E_{L-1}`. Self-edges always survive. Returns the layer and its
/// edge-interpolation map over the surviving intersections.
pub fn build_layer_graph(
    points: &[Point3],
    point_indices: Vec<usize>,
    layer_index: usize,
    k: usize,
    prev: &GraphLayer,
    prev_points: &[Point3],
    knn_cross: &NeighborTable,
) -> Result<(GraphLayer, EdgeInterpMap)> {
    if knn_cross.query_count != points.len() {
        return Err(Error::Internal(format!(
            "cross k-NN covers {} points, layer has {}",
            knn_cross.query_count,
            points.len()
        )));
    }
    let lists = candidate_lists(points, k)?;
    let prev_index: HashMap<(usize, usize), usize> = prev
        .edges
        .iter()
        .enumerate()
        .map(|(e, &(a, b))| ((a, b), e))
        .collect();

    let mut edges = Vec::new();
    let mut out_edges = Vec::with_capacity(points.len());
    let mut offsets = vec![0usize];
    let mut prev_edges = Vec::new();
    let mut weights = Vec::new();

    for (i, row) in lists.iter().enumerate() {
        let start = edges.len();
        let (src_n, src_d) = knn_cross.row(i);
        for &j in row {
            let (dst_n, dst_d) = knn_cross.row(j);
            let mut matched: Vec<usize> = Vec::new();
            for &a in src_n {
                for &b in dst_n {
                    if let Some(&e) = prev_index.get(&(a, b)) {
                        matched.push(e);
                    }
                }
            }
            if matched.is_empty() && i != j {
                continue; // no support in the coarser layer: discard
            }

            let dists: Vec<(f64, f64)> = if matched.is_empty() {
                // force-kept self-edge with no intersection (exact-duplicate
                // pathology): fall back to the nearest previous point's
                // self-edge
                let fallback = src_n
                    .iter()
                    .find_map(|&a| prev_index.get(&(a, a)).copied())
                    .ok_or_else(|| {
                        Error::Internal("previous layer lacks self-edges for fallback".into())
                    })?;
                matched.push(fallback);
                let (a, _) = prev.edges[fallback];
                let d = dist2(&points[i], &prev_points[a]).sqrt();
                vec![(d, d)]
            } else {
                matched.sort_unstable();
                // every matched endpoint came from the cross rows, so its
                // distance is already in the k-NN table
                matched
                    .iter()
                    .map(|&e| {
                        let (a, b) = prev.edges[e];
                        let di = src_d[src_n.iter().position(|&n| n == a).unwrap()];
                        let dj = dst_d[dst_n.iter().position(|&n| n == b).unwrap()];
                        (di, dj)
                    })
                    .collect()
            };

            edges.push((i, j));
            prev_edges.extend_from_slice(&matched);
            weights.extend(edge_upsample_weights(&dists)?);
            offsets.push(prev_edges.len());
        }
        out_edges.push((start, edges.len()));
    }

    let layer = GraphLayer {
        layer_index,
        point_indices,
        edges,
        out_edges,
    };
    let interp = EdgeInterpMap {
        offsets,
        prev_edges,
        weights,
    };
    Ok((layer, interp))
}

/// Builds the whole hierarchy over per-layer positions (coarse to fine).
/// `point_indices` maps each layer's points into the full-resolution cloud;
/// coarser index lists must be prefixes of finer ones.
pub fn build_hierarchy(
    positions: &[Vec<Point3>],
    point_indices: &[Vec<usize>],
    k_list: &[usize],
    k_interp: usize,
    mode: GraphMode,
) -> Result<HierGraph> {
    if positions.is_empty() {
        return Err(Error::Validation("build_hierarchy got no layers".into()));
    }
    if positions.len() != k_list.len() || positions.len() != point_indices.len() {
        return Err(Error::Validation(format!(
            "build_hierarchy got {} layers, {} k values, {} index lists",
            positions.len(),
            k_list.len(),
            point_indices.len()
        )));
    }
    if k_interp == 0 {
        return Err(Error::Validation("k_interp must be positive".into()));
    }

    let mut layers = Vec::with_capacity(positions.len());
    let mut interp_maps = Vec::new();
    let mut knn_cross = Vec::new();

    layers.push(init_graph(&positions[0], k_list[0])?);
    layers[0].point_indices = point_indices[0].clone();

    for l in 1..positions.len() {
        let cross = knn(&positions[l], &positions[l - 1], k_interp)?;
        match mode {
            GraphMode::Hierarchical => {
                let (layer, interp) = build_layer_graph(
                    &positions[l],
                    point_indices[l].clone(),
                    l,
                    k_list[l],
                    &layers[l - 1],
                    &positions[l - 1],
                    &cross,
                )?;
                layers.push(layer);
                interp_maps.push(interp);
            }
            GraphMode::Independent => {
                layers.push(plain_knn_layer(
                    &positions[l],
                    k_list[l],
                    l,
                    point_indices[l].clone(),
                )?);
            }
        }
        knn_cross.push(cross);
    }

    let hier = HierGraph {
        layers,
        interp_maps,
        knn_cross,
    };
    hier.validate()?;
    Ok(hier)
}
