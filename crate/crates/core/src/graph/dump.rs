//! ASCII graph dump for debugging and cross-implementation diffing.

use std::io::Write;

use crate::error::Result;

use super::HierGraph;

/// Writes one `L src dst` line per edge, then one
/// `L edge_idx prev_edge_idx weight` line per interpolation entry, weights
/// with 9 decimal places.
pub fn write_graph_dump(graph: &HierGraph, w: &mut impl Write) -> Result<()> {
    for layer in &graph.layers {
        for &(src, dst) in &layer.edges {
            writeln!(w, "{} {} {}", layer.layer_index, src, dst)?;
        }
    }
    for (l, map) in graph.interp_maps.iter().enumerate() {
        let layer = l + 1;
        for e in 0..map.num_edges() {
            let (prev, weights) = map.entries(e);
            for (&p, &wt) in prev.iter().zip(weights) {
                writeln!(w, "{layer} {e} {p} {wt:.9}")?;
            }
        }
    }
    Ok(())
}
