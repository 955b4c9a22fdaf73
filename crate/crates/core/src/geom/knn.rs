//! Exact k-nearest-neighbor queries.

use crate::error::{Error, Result};

use super::{dist2, Point3};

/// Result of a k-NN query: per query row, the `k` nearest reference indices
/// sorted ascending by distance, ties broken by ascending reference index.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborTable {
    pub query_count: usize,
    pub k: usize,
    /// Row-major `query_count × k`.
    pub indices: Vec<usize>,
    /// Euclidean distances, same layout.
    pub distances: Vec<f64>,
}

impl NeighborTable {
    pub fn row(&self, q: usize) -> (&[usize], &[f64]) {
        let s = q * self.k;
        (&self.indices[s..s + self.k], &self.distances[s..s + self.k])
    }
}

/// Exact Euclidean k-NN of each query point among the reference set.
/// A query point coinciding with a reference point matches it at distance 0.
pub fn knn(query: &[Point3], reference: &[Point3], k: usize) -> Result<NeighborTable> {
    if k == 0 || k > reference.len() {
        return Err(Error::Validation(format!(
            "knn k = {k} invalid for {} reference points",
            reference.len()
        )));
    }
    let mut indices = Vec::with_capacity(query.len() * k);
    let mut distances = Vec::with_capacity(query.len() * k);
    let mut scratch: Vec<(f64, usize)> = Vec::with_capacity(reference.len());
    for q in query {
        scratch.clear();
        scratch.extend(reference.iter().enumerate().map(|(i, r)| (dist2(q, r), i)));
        // partial selection keeps this O(R + k log k) per query
        if k < scratch.len() {
            scratch.select_nth_unstable_by(k - 1, |a, b| {
                a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1))
            });
            scratch.truncate(k);
        }
        scratch.sort_unstable_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        for &(d2, i) in scratch.iter().take(k) {
            indices.push(i);
            distances.push(d2.sqrt());
        }
    }
    Ok(NeighborTable {
        query_count: query.len(),
        k,
        indices,
        distances,
    })
}
