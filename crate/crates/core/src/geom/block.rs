//! Fixed-size training blocks cut from a cloud.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

use super::{FeatureSchema, PointCloud};

/// Cuts a block of exactly `n_points` points around a randomly chosen point:
/// the xy square of side `block_size` expanded by `padding` on each side.
/// Draws without replacement when the block holds enough points, with
/// replacement otherwise. For the 9-D schema the normalized-room-position
/// channels are recomputed against the source cloud's bounds.
pub fn sample_block(
    cloud: &PointCloud,
    block_size: f64,
    padding: f64,
    n_points: usize,
    rng_seed: u64,
) -> Result<PointCloud> {
    if cloud.is_empty() {
        return Err(Error::Validation("sample_block on an empty cloud".into()));
    }
    if n_points == 0 {
        return Err(Error::Validation("sample_block needs n_points >= 1".into()));
    }
    if block_size <= 0.0 || padding < 0.0 {
        return Err(Error::Validation(format!(
            "sample_block got block_size {block_size}, padding {padding}"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let half = block_size / 2.0 + padding;

    // Centers are drawn from point locations, so a drawn block always holds
    // at least its center; the retry bound guards other center policies.
    let mut inside: Vec<usize> = Vec::new();
    for _attempt in 0..100 {
        let center = cloud.positions[rng.gen_range(0..cloud.len())];
        inside = (0..cloud.len())
            .filter(|&i| {
                let p = cloud.positions[i];
                (p[0] - center[0]).abs() <= half && (p[1] - center[1]).abs() <= half
            })
            .collect();
        if !inside.is_empty() {
            break;
        }
    }
    if inside.is_empty() {
        return Err(Error::Internal(
            "sample_block found no non-empty block in 100 attempts".into(),
        ));
    }

    let chosen: Vec<usize> = if inside.len() >= n_points {
        // partial Fisher-Yates: first n_points of a seeded shuffle
        let mut pool = inside;
        for i in 0..n_points {
            let j = rng.gen_range(i..pool.len());
            pool.swap(i, j);
        }
        pool.truncate(n_points);
        pool
    } else {
        (0..n_points).map(|_| inside[rng.gen_range(0..inside.len())]).collect()
    };

    let dim = cloud.feature_dim;
    let mut block = PointCloud {
        positions: chosen.iter().map(|&i| cloud.positions[i]).collect(),
        features: {
            let mut f = Vec::with_capacity(chosen.len() * dim);
            for &i in &chosen {
                f.extend_from_slice(cloud.feature_row(i));
            }
            f
        },
        feature_dim: dim,
        labels: cloud
            .labels
            .as_ref()
            .map(|ls| chosen.iter().map(|&i| ls[i]).collect()),
        num_classes: cloud.num_classes,
    };
    if dim == FeatureSchema::S3dis9.dim() {
        let (lo, hi) = cloud.bounds();
        block.refresh_room_position(lo, hi);
    }
    Ok(block)
}
