//! Greedy farthest point sampling.

use crate::error::{Error, Result};

use super::{dist2, Point3};

/// Greedy max-min subset selection: the first pick is `start_index`; each
/// following pick maximizes the minimum distance to the already-picked set,
/// ties broken by lowest index. Deterministic.
pub fn farthest_point_sample(points: &[Point3], m: usize, start_index: usize) -> Result<Vec<usize>> {
    let n = points.len();
    if m == 0 || m > n {
        return Err(Error::Validation(format!(
            "farthest_point_sample m = {m} invalid for {n} points"
        )));
    }
    if start_index >= n {
        return Err(Error::Validation(format!(
            "farthest_point_sample start index {start_index} out of range for {n} points"
        )));
    }

    let mut picked = Vec::with_capacity(m);
    picked.push(start_index);
    let mut min_d2: Vec<f64> = points.iter().map(|p| dist2(p, &points[start_index])).collect();

    for _ in 1..m {
        let mut best = 0;
        let mut best_d2 = f64::NEG_INFINITY;
        for (i, &d) in min_d2.iter().enumerate() {
            if d > best_d2 {
                best_d2 = d;
                best = i;
            }
        }
        picked.push(best);
        for (i, d) in min_d2.iter_mut().enumerate() {
            let nd = dist2(&points[i], &points[best]);
            if nd < *d {
                *d = nd;
            }
        }
    }
    Ok(picked)
}
