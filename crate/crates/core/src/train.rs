//! The training loop: block batching, the combined objective, the SGD
//! schedule, checkpointing, and full-loss gradient checking.

use std::path::PathBuf;
use std::time::Instant;

use crate::config::{derive_seed, load_split, Split, TrainConfig};
use crate::error::{Error, Result};
use crate::geom::{sample_block, PointCloud};
use crate::loss::{edge_labels, edge_loss, edge_loss_mask, point_loss, resolve_alpha, total_loss, LossWeights};
use crate::point::{forward, init_params, ForwardOutput, NetworkConfig};
use crate::tensor::{
    gradient_check, save_checkpoint, sgd_step, BoundParams, GradCheckReport, ModelParams,
    SgdState, Tape, Tensor,
};

/// Scalar losses of one block, plus the tape handles backward needs.
pub struct BlockObjective {
    pub point: f64,
    pub edge: f64,
    pub total: f64,
    pub total_id: crate::tensor::ValueId,
    pub output: ForwardOutput,
}

/// Forward plus the combined loss on one labeled block.
pub fn block_objective(
    tape: &mut Tape,
    network: &NetworkConfig,
    weights: &LossWeights,
    bound: &BoundParams<'_, f64>,
    block: &PointCloud,
) -> Result<BlockObjective> {
    let labels = block
        .labels
        .as_ref()
        .ok_or_else(|| Error::Validation("training block has no labels".into()))?;
    let output = forward(tape, network, bound, block)?;
    let finest = output.graph.finest();

    let point_labels: Vec<u32> = finest.point_indices.iter().map(|&i| labels[i]).collect();
    let lp = point_loss(tape, output.refined, &point_labels)?;

    let e_labels = edge_labels(finest, labels)?;
    let mask = edge_loss_mask(finest, weights.include_self_edges);
    let alpha = resolve_alpha(weights.alpha, &e_labels, &mask);
    let le = edge_loss(tape, output.edge_preds, &e_labels, alpha, Some(&mask))?;

    let total = total_loss(tape, lp, le, weights)?;
    Ok(BlockObjective {
        point: tape.value(lp).item(),
        edge: tape.value(le).item(),
        total: tape.value(total).item(),
        total_id: total,
        output,
    })
}

/// Per-epoch loss means and the learning rate in effect.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub point_loss: f64,
    pub edge_loss: f64,
    pub total_loss: f64,
}

/// Everything a run produced, for reporting.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub epochs: Vec<EpochRecord>,
    pub wall_clock_secs: f64,
    pub config_snapshot: String,
    pub checkpoints: Vec<PathBuf>,
    /// Filled by callers that evaluate after training.
    pub final_metrics: Option<String>,
}

/// Trains from scratch per the config. Deterministic for a fixed seed:
/// blocks are drawn with per-(epoch, step, block) derived seeds, batch
/// gradients are summed in block order, and the learning rate follows
/// `base_lr · decay^floor(epoch/decay_every)`.
pub fn train(config: &TrainConfig) -> Result<(ModelParams, RunRecord)> {
    config.validate()?;
    let start = Instant::now();
    let clouds = load_split(config, Split::Train)?;
    if clouds.is_empty() {
        return Err(Error::Config("training data source is empty".into()));
    }
    for cloud in &clouds {
        if cloud.labels.is_none() {
            return Err(Error::Validation("training clouds must carry labels".into()));
        }
    }

    let mut params = init_params(&config.network, config.run.seed)?;
    let mut sgd = SgdState::new(&params);
    std::fs::create_dir_all(&config.run.out_dir)?;

    let mut epochs = Vec::with_capacity(config.optim.epochs);
    let mut checkpoints = Vec::new();
    let batch = config.optim.batch_size;
    let spe = config.optim.steps_per_epoch;

    for epoch in 0..config.optim.epochs {
        let lr = config.optim.lr_at(epoch);
        let mut epoch_point = 0.0;
        let mut epoch_edge = 0.0;
        let mut epoch_total = 0.0;

        for step in 0..spe {
            let mut grad_sum: Option<Vec<Tensor>> = None;
            for b in 0..batch {
                let cloud_idx = (epoch * spe * batch + step * batch + b) % clouds.len();
                let seed = derive_seed(config.run.seed, epoch, step, b);
                let block = sample_block(
                    &clouds[cloud_idx],
                    config.block.size,
                    config.block.padding,
                    config.block.points,
                    seed,
                )?;

                let mut tape = Tape::new();
                let bound = params.bind(&mut tape);
                let obj = block_objective(&mut tape, &config.network, &config.loss, &bound, &block)?;
                if !obj.total.is_finite() {
                    return Err(Error::Diverged {
                        epoch,
                        step,
                        msg: format!(
                            "total loss {} (point {}, edge {})",
                            obj.total, obj.point, obj.edge
                        ),
                    });
                }
                epoch_point += obj.point;
                epoch_edge += obj.edge;
                epoch_total += obj.total;

                let grads = tape.backward(obj.total_id)?;
                let block_grads = bound.collect_grads(&grads);
                match &mut grad_sum {
                    None => grad_sum = Some(block_grads),
                    Some(acc) => {
                        for (a, g) in acc.iter_mut().zip(&block_grads) {
                            for (av, gv) in a.data_mut().iter_mut().zip(g.data()) {
                                *av += gv;
                            }
                        }
                    }
                }
            }

            let mut grads = grad_sum.expect("batch_size >= 1");
            let inv = 1.0 / batch as f64;
            for g in &mut grads {
                for v in g.data_mut() {
                    *v *= inv;
                }
            }
            sgd_step(
                &mut params,
                &grads,
                &mut sgd,
                lr,
                config.optim.momentum,
                config.optim.weight_decay,
            )?;
        }

        let denom = (spe * batch) as f64;
        epochs.push(EpochRecord {
            epoch,
            lr,
            point_loss: epoch_point / denom,
            edge_loss: epoch_edge / denom,
            total_loss: epoch_total / denom,
        });

        if config.run.checkpoint_every > 0 && (epoch + 1) % config.run.checkpoint_every == 0 {
            let path = config.run.out_dir.join(format!("epoch_{:04}.ckpt", epoch + 1));
            save_checkpoint(&params, &path)?;
            checkpoints.push(path);
        }
    }

    let final_path = config.run.out_dir.join("final.ckpt");
    save_checkpoint(&params, &final_path)?;
    checkpoints.push(final_path);

    let record = RunRecord {
        epochs,
        wall_clock_secs: start.elapsed().as_secs_f64(),
        config_snapshot: config.to_toml_string()?,
        checkpoints,
        final_metrics: None,
    };
    Ok((params, record))
}

/// Checks the analytic gradient of the full combined loss on one seeded
/// block against central finite differences, over every parameter.
pub fn gradcheck(config: &TrainConfig, eps: f64) -> Result<GradCheckReport> {
    config.validate()?;
    let clouds = load_split(config, Split::Train)?;
    let block = sample_block(
        &clouds[0],
        config.block.size,
        config.block.padding,
        config.block.points,
        derive_seed(config.run.seed, 0, 0, 0),
    )?;

    let params = init_params(&config.network, config.run.seed)?;
    let analytic = {
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let obj = block_objective(&mut tape, &config.network, &config.loss, &bound, &block)?;
        let grads = tape.backward(obj.total_id)?;
        bound.collect_grads(&grads)
    };
    let loss_fn = |p: &ModelParams| -> Result<f64> {
        let mut tape = Tape::new();
        let bound = p.bind(&mut tape);
        let obj = block_objective(&mut tape, &config.network, &config.loss, &bound, &block)?;
        Ok(obj.total)
    };
    gradient_check(loss_fn, &params, &analytic, eps)
}
