//! Evaluation: tiles blocks across every point of a split, votes with summed
//! softmax scores, and reports segmentation metrics plus edge-prediction
//! accuracy.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{derive_seed, load_split, Split, TrainConfig};
use crate::error::{Error, Result};
use crate::geom::PointCloud;
use crate::loss::{edge_labels, edge_loss_mask};
use crate::metrics::{format_report, metrics, EvalAccumulator, Metrics};
use crate::point::{forward, init_params};
use crate::tensor::{ModelParams, Tape};

/// Point metrics, edge-prediction accuracy at threshold 0.5, and the
/// formatted report.
#[derive(Debug, Clone)]
pub struct EvalOutcome {
    pub metrics: Metrics,
    pub edge_accuracy: f64,
    pub edges_scored: usize,
    pub report: String,
}

/// Errors unless the checkpoint's parameters exactly match what the config's
/// architecture expects, listing every mismatched name and shape.
pub fn check_checkpoint_compat(config: &TrainConfig, loaded: &ModelParams) -> Result<()> {
    let expected = init_params(&config.network, 0)?;
    let mismatches = expected.shape_mismatches(loaded);
    if mismatches.is_empty() {
        Ok(())
    } else {
        Err(Error::Checkpoint(format!(
            "checkpoint incompatible with config: {}",
            mismatches.join("; ")
        )))
    }
}

/// Evaluates a split: xy tiles with stride = block size cover every point;
/// tiles with more points than a block are split into chunks padded from the
/// tile's padded surroundings. Points covered several times take the class
/// with the highest summed softmax score.
pub fn evaluate(config: &TrainConfig, params: &ModelParams, split: Split) -> Result<EvalOutcome> {
    config.validate()?;
    let clouds = load_split(config, split)?;
    let num_classes = clouds
        .first()
        .map(|c| c.num_classes)
        .ok_or_else(|| Error::Config("evaluation split is empty".into()))?;

    let mut acc = EvalAccumulator::new(num_classes as usize);
    let mut edge_correct = 0usize;
    let mut edges_scored = 0usize;

    for (cloud_idx, cloud) in clouds.iter().enumerate() {
        let labels = cloud
            .labels
            .as_ref()
            .ok_or_else(|| Error::Validation("evaluation clouds must carry labels".into()))?;
        let mut votes = vec![0.0f64; cloud.len() * num_classes as usize];
        let mut covered = vec![false; cloud.len()];

        for rows in tile_chunks(config, cloud, cloud_idx) {
            let block = gather_rows_to_block(cloud, &rows);
            let mut tape = Tape::new();
            let bound = params.bind(&mut tape);
            let out = forward(&mut tape, &config.network, &bound, &block)?;
            let probs = tape.softmax_rows(out.refined)?;
            let finest = out.graph.finest();

            for (local, &block_row) in finest.point_indices.iter().enumerate() {
                let cloud_row = rows[block_row];
                covered[cloud_row] = true;
                let row = tape.value(probs).row(local);
                for (c, &p) in row.iter().enumerate() {
                    votes[cloud_row * num_classes as usize + c] += p;
                }
            }

            // edge accuracy over this chunk's graph
            let block_labels: Vec<u32> = rows.iter().map(|&r| labels[r]).collect();
            let e_labels = edge_labels(finest, &block_labels)?;
            let mask = edge_loss_mask(finest, config.loss.include_self_edges);
            let preds = tape.value(out.edge_preds);
            for (e, (&l, &m)) in e_labels.iter().zip(&mask).enumerate() {
                if m == 0.0 {
                    continue;
                }
                let hit = (preds.data()[e] > 0.5) == (l == 1.0);
                edge_correct += hit as usize;
                edges_scored += 1;
            }
        }

        if let Some(missing) = covered.iter().position(|&c| !c) {
            return Err(Error::Internal(format!(
                "evaluation left point {missing} of cloud {cloud_idx} uncovered"
            )));
        }
        for i in 0..cloud.len() {
            let row = &votes[i * num_classes as usize..(i + 1) * num_classes as usize];
            let pred = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .map(|(c, _)| c as u32)
                .unwrap();
            acc.record(labels[i], pred);
        }
    }

    let metrics = metrics(&acc)?;
    let report = format_report(&metrics, None);
    let edge_accuracy = if edges_scored > 0 {
        edge_correct as f64 / edges_scored as f64
    } else {
        0.0
    };
    Ok(EvalOutcome {
        metrics,
        edge_accuracy,
        edges_scored,
        report,
    })
}

/// Splits a cloud into forward-sized chunks: every point belongs to exactly
/// one xy tile (stride = block size); each tile's points are dealt into
/// chunks of the block size, topped up from the tile's padded neighborhood
/// (or repeats) with a per-tile seeded draw.
fn tile_chunks(config: &TrainConfig, cloud: &PointCloud, cloud_idx: usize) -> Vec<Vec<usize>> {
    let n_points = config.block.points;
    let size = config.block.size;
    let padding = config.block.padding;
    let (lo, hi) = cloud.bounds();

    let tiles_x = (((hi[0] - lo[0]) / size).floor() as usize) + 1;
    let tiles_y = (((hi[1] - lo[1]) / size).floor() as usize) + 1;

    let mut chunks = Vec::new();
    for tx in 0..tiles_x {
        for ty in 0..tiles_y {
            let x0 = lo[0] + tx as f64 * size;
            let y0 = lo[1] + ty as f64 * size;
            let owners: Vec<usize> = (0..cloud.len())
                .filter(|&i| {
                    let p = cloud.positions[i];
                    let in_x = p[0] >= x0 && (p[0] < x0 + size || tx + 1 == tiles_x);
                    let in_y = p[1] >= y0 && (p[1] < y0 + size || ty + 1 == tiles_y);
                    in_x && in_y
                })
                .collect();
            if owners.is_empty() {
                continue;
            }
            let context: Vec<usize> = (0..cloud.len())
                .filter(|&i| {
                    let p = cloud.positions[i];
                    p[0] >= x0 - padding
                        && p[0] <= x0 + size + padding
                        && p[1] >= y0 - padding
                        && p[1] <= y0 + size + padding
                })
                .collect();

            let seed = derive_seed(config.run.seed, cloud_idx, tx, ty);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut pool = owners;
            for i in 0..pool.len().saturating_sub(1) {
                let j = rng.gen_range(i..pool.len());
                pool.swap(i, j);
            }
            for chunk in pool.chunks(n_points) {
                let mut rows = chunk.to_vec();
                while rows.len() < n_points {
                    rows.push(context[rng.gen_range(0..context.len())]);
                }
                chunks.push(rows);
            }
        }
    }
    chunks
}

fn gather_rows_to_block(cloud: &PointCloud, rows: &[usize]) -> PointCloud {
    let dim = cloud.feature_dim;
    PointCloud {
        positions: rows.iter().map(|&i| cloud.positions[i]).collect(),
        features: {
            let mut f = Vec::with_capacity(rows.len() * dim);
            for &i in rows {
                f.extend_from_slice(cloud.feature_row(i));
            }
            f
        },
        feature_dim: dim,
        labels: cloud
            .labels
            .as_ref()
            .map(|ls| rows.iter().map(|&i| ls[i]).collect()),
        num_classes: cloud.num_classes,
    }
}
