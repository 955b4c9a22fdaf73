use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geom::{synth_scene, FeatureSchema, Primitive, PrimitiveKind, SceneSpec};
use crate::graph::init_graph;

use super::*;

fn toy_config() -> NetworkConfig {
    NetworkConfig {
        layer_counts: vec![4, 8, 16],
        k_list: vec![2, 3, 4],
        k_interp: 2,
        point_channels: vec![8, 8, 8],
        edge_channels: vec![8, 8, 8],
        ext_hidden: vec![],
        head_hidden: 8,
        edge_head_hidden: 8,
        input_dim: 6,
        num_classes: 3,
        message_passing: MessagePassing::MaxPoolConcat,
        graph_mode: GraphMode::Hierarchical,
        edge_function: EdgeFunctionVariant::Concatenation,
    }
}

fn toy_block(points_per_class: usize, separation: f64, seed: u64) -> PointCloud {
    let spec = SceneSpec {
        name: String::new(),
        schema: FeatureSchema::Scannet6,
        num_classes: Some(3),
        seed: 0,
        primitives: vec![
            Primitive {
                kind: PrimitiveKind::Box,
                min: [0.0, 0.0, 0.0],
                size: [0.4, 0.4, 0.4],
                class: 0,
                points: points_per_class,
                color: [220, 40, 40],
                color_noise: 0.0,
            },
            Primitive {
                kind: PrimitiveKind::Box,
                min: [separation, 0.0, 0.0],
                size: [0.4, 0.4, 0.4],
                class: 1,
                points: points_per_class,
                color: [40, 40, 220],
                color_noise: 0.0,
            },
        ],
    };
    synth_scene(&spec, seed).unwrap()
}

fn random_feats(tape: &mut Tape, rng: &mut impl Rng, rows: usize, cols: usize) -> ValueId {
    let data: Vec<f64> = (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
    tape.constant(Tensor::matrix(rows, cols, data).unwrap())
}

fn mlp_params_for(
    params: &mut ModelParams,
    prefix: &str,
    spec: &MlpSpec,
    rng: &mut impl Rng,
) {
    for ((suffix, _), t) in spec
        .param_shapes()
        .iter()
        .zip(init_mlp_params::<f64>(spec, rng))
    {
        params.insert(format!("{prefix}.{suffix}"), t).unwrap();
    }
}

#[test]
fn set_abstraction_singleton_groups_have_no_pooling_effect() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let positions: Vec<Point3> = (0..6)
        .map(|_| [rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>()])
        .collect();
    let spec = MlpSpec::new(vec![3 + 2, 5, 5], Activation::Relu, true).unwrap();
    let mut params = ModelParams::new();
    mlp_params_for(&mut params, "sa", &spec, &mut rng);

    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let ids = bound.mlp_ids("sa", &spec).unwrap();
    let feats_data: Vec<f64> = (0..12).map(|i| i as f64 * 0.3 - 1.0).collect();
    let feats = tape.constant(Tensor::matrix(6, 2, feats_data.clone()).unwrap());
    let (centers, out) = set_abstraction(&mut tape, &positions, feats, 6, 1, &spec, &ids).unwrap();
    assert_eq!(tape.value(out).shape(), &[6, 5]);

    // oracle: MLP of [zero offset, own feature] per picked center
    let mut expected_in = Vec::new();
    for &c in &centers {
        expected_in.extend_from_slice(&[0.0, 0.0, 0.0]);
        expected_in.extend_from_slice(&feats_data[c * 2..(c + 1) * 2]);
    }
    let exp_x = tape.constant(Tensor::matrix(6, 5usize.min(5), expected_in).unwrap());
    let expected = mlp_apply(&mut tape, &spec, &ids, exp_x).unwrap();
    assert_eq!(tape.value(out).data(), tape.value(expected).data());
}

#[test]
fn set_abstraction_output_rows_equal_m() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let positions: Vec<Point3> = (0..20)
        .map(|_| [rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>()])
        .collect();
    let spec = MlpSpec::new(vec![3 + 4, 6, 6], Activation::Relu, true).unwrap();
    let mut params = ModelParams::new();
    mlp_params_for(&mut params, "sa", &spec, &mut rng);
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let ids = bound.mlp_ids("sa", &spec).unwrap();
    let feats = random_feats(&mut tape, &mut rng, 20, 4);
    let (_, out) = set_abstraction(&mut tape, &positions, feats, 7, 3, &spec, &ids).unwrap();
    assert_eq!(tape.value(out).shape(), &[7, 6]);
}

#[test]
fn set_abstraction_rejects_m_above_count() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let positions: Vec<Point3> = vec![[0.0; 3]; 4];
    let spec = MlpSpec::new(vec![5, 4], Activation::Relu, true).unwrap();
    let mut params = ModelParams::new();
    mlp_params_for(&mut params, "sa", &spec, &mut rng);
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let ids = bound.mlp_ids("sa", &spec).unwrap();
    let feats = random_feats(&mut tape, &mut rng, 4, 2);
    assert!(set_abstraction(&mut tape, &positions, feats, 5, 1, &spec, &ids).is_err());
}

fn identity_spec_and_params(width: usize, prefix: &str, params: &mut ModelParams) -> MlpSpec {
    let spec = MlpSpec::new(vec![width, width], Activation::None, false).unwrap();
    let mut eye = vec![0.0; width * width];
    for i in 0..width {
        eye[i * width + i] = 1.0;
    }
    params
        .insert(format!("{prefix}.w0"), Tensor::matrix(width, width, eye).unwrap())
        .unwrap();
    spec
}

#[test]
fn feature_propagate_matches_coincident_coarse_point() {
    let coarse = vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]];
    let fine = vec![[1.0, 0.0, 0.0], [0.4, 0.4, 0.0]];
    let mut params = ModelParams::new();
    let spec = identity_spec_and_params(2, "fp", &mut params);
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let ids = bound.mlp_ids("fp", &spec).unwrap();
    let coarse_feats = tape.constant(
        Tensor::matrix(3, 2, vec![10.0, -3.0, 7.5, 2.5, -4.0, 8.0]).unwrap(),
    );
    let skip = tape.constant(Tensor::zeros(vec![2, 0]));
    let out = feature_propagate(
        &mut tape, &coarse, coarse_feats, &fine, skip, 2, None, &spec, &ids,
    )
    .unwrap();
    let row = tape.value(out).row(0);
    assert!((row[0] - 7.5).abs() / 7.5 < 1e-6, "got {}", row[0]);
    assert!((row[1] - 2.5).abs() / 2.5 < 1e-6, "got {}", row[1]);
}

#[test]
fn feature_propagate_uniform_coarse_is_constant() {
    let coarse = vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]];
    let fine = vec![[0.3, 0.3, 0.1], [0.9, 0.2, 0.0], [0.5, 0.5, 0.5]];
    let mut params = ModelParams::new();
    let spec = identity_spec_and_params(1, "fp", &mut params);
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let ids = bound.mlp_ids("fp", &spec).unwrap();
    let coarse_feats = tape.constant(Tensor::matrix(3, 1, vec![4.25; 3]).unwrap());
    let skip = tape.constant(Tensor::zeros(vec![3, 0]));
    let out = feature_propagate(
        &mut tape, &coarse, coarse_feats, &fine, skip, 3, None, &spec, &ids,
    )
    .unwrap();
    for &v in tape.value(out).data() {
        assert!((v - 4.25).abs() < 1e-12);
    }
}

#[test]
fn feature_propagate_matches_hand_computed_weights() {
    let coarse = vec![[0.0, 0.0, 0.0], [2.0, 0.0, 0.0], [0.0, 3.0, 0.0]];
    let fine = vec![[1.0, 0.0, 0.0]];
    let mut params = ModelParams::new();
    let spec = identity_spec_and_params(1, "fp", &mut params);
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let ids = bound.mlp_ids("fp", &spec).unwrap();
    let coarse_feats = tape.constant(Tensor::matrix(3, 1, vec![1.0, 2.0, 3.0]).unwrap());
    let skip = tape.constant(Tensor::zeros(vec![1, 0]));
    let out = feature_propagate(
        &mut tape, &coarse, coarse_feats, &fine, skip, 3, None, &spec, &ids,
    )
    .unwrap();

    let eps = crate::graph::INTERP_EPS;
    let w: Vec<f64> = [1.0, 1.0, 10.0].iter().map(|d2| 1.0 / (d2 + eps)).collect();
    let sum: f64 = w.iter().sum();
    let expected = (w[0] * 1.0 + w[1] * 2.0 + w[2] * 3.0) / sum;
    assert!((tape.value(out).data()[0] - expected).abs() < 1e-12);
}

#[test]
fn point_module_single_out_edge_pools_that_feature() {
    let layer = init_graph(&[[0.0, 0.0, 0.0]], 1).unwrap();
    let mut tape = Tape::new();
    let pf = tape.constant(Tensor::matrix(1, 2, vec![5.0, -1.0]).unwrap());
    let ev = tape.constant(Tensor::matrix(1, 3, vec![0.5, 0.25, -2.0]).unwrap());
    let ef = EdgeFeatures { layer_index: 0, values: ev };
    let out = point_module(&mut tape, pf, &ef, &layer).unwrap();
    assert_eq!(tape.value(out).data(), &[5.0, -1.0, 0.5, 0.25, -2.0]);
}

#[test]
fn point_module_width_is_c_plus_k() {
    let pts: Vec<Point3> = (0..4).map(|i| [i as f64, 0.0, 0.0]).collect();
    let layer = init_graph(&pts, 2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut tape = Tape::new();
    let pf = random_feats(&mut tape, &mut rng, 4, 8);
    let ev = random_feats(&mut tape, &mut rng, layer.num_edges(), 8);
    let ef = EdgeFeatures { layer_index: 0, values: ev };
    let out = point_module(&mut tape, pf, &ef, &layer).unwrap();
    assert_eq!(tape.value(out).cols(), 16);
}

#[test]
fn point_module_max_matches_bruteforce_over_out_edges() {
    let pts: Vec<Point3> = (0..5).map(|i| [i as f64 * 0.3, (i % 2) as f64, 0.0]).collect();
    let layer = init_graph(&pts, 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut tape = Tape::new();
    let pf = random_feats(&mut tape, &mut rng, 5, 2);
    let ev = random_feats(&mut tape, &mut rng, layer.num_edges(), 3);
    let ef = EdgeFeatures { layer_index: 0, values: ev };
    let out = point_module(&mut tape, pf, &ef, &layer).unwrap();
    for p in 0..5 {
        let (s, e) = layer.out_edges[p];
        for c in 0..3 {
            let want = (s..e)
                .map(|ei| tape.value(ev).row(ei)[c])
                .fold(f64::NEG_INFINITY, f64::max);
            let got = tape.value(out).row(p)[2 + c];
            assert_eq!(got, want);
        }
    }
}

#[test]
fn ada_aggregate_softmax_single_edge_copies_neighbor() {
    let layer = init_graph(&[[0.0, 0.0, 0.0]], 1).unwrap();
    let spec = MlpSpec::new(vec![3, 1], Activation::None, true).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut params = ModelParams::new();
    mlp_params_for(&mut params, "ada", &spec, &mut rng);
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let ids = bound.mlp_ids("ada", &spec).unwrap();
    let pf = tape.constant(Tensor::matrix(1, 2, vec![3.0, 4.0]).unwrap());
    let ev = random_feats(&mut tape, &mut rng, 1, 3);
    let ef = EdgeFeatures { layer_index: 0, values: ev };
    let out = ada_aggregate(&mut tape, pf, &ef, &layer, true, &spec, &ids).unwrap();
    assert_eq!(tape.value(out).data(), &[3.0, 4.0]);
}

#[test]
fn ada_aggregate_zero_mlp_without_softmax_is_zero() {
    let pts: Vec<Point3> = (0..4).map(|i| [i as f64, 0.0, 0.0]).collect();
    let layer = init_graph(&pts, 2).unwrap();
    let spec = MlpSpec::new(vec![3, 1], Activation::None, true).unwrap();
    let mut params = ModelParams::new();
    params.insert("ada.w0", Tensor::zeros(vec![3, 1])).unwrap();
    params.insert("ada.b0", Tensor::zeros(vec![1])).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let ids = bound.mlp_ids("ada", &spec).unwrap();
    let pf = random_feats(&mut tape, &mut rng, 4, 2);
    let ev = random_feats(&mut tape, &mut rng, layer.num_edges(), 3);
    let ef = EdgeFeatures { layer_index: 0, values: ev };
    let out = ada_aggregate(&mut tape, pf, &ef, &layer, false, &spec, &ids).unwrap();
    assert!(tape.value(out).data().iter().all(|&v| v == 0.0));
}

#[test]
fn zero_final_layer_head_gives_uniform_distribution() {
    let spec = MlpSpec::new(vec![4, 6, 3], Activation::None, true).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut params = ModelParams::new();
    let mut tensors = init_mlp_params::<f64>(&spec, &mut rng);
    tensors[2] = Tensor::zeros(vec![6, 3]); // final weight
    tensors[3] = Tensor::zeros(vec![3]); // final bias
    for ((suffix, _), t) in spec.param_shapes().iter().zip(tensors) {
        params.insert(format!("head.point.{suffix}"), t).unwrap();
    }
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let feats = random_feats(&mut tape, &mut rng, 5, 4);
    let logits = point_head(&mut tape, &bound, &spec, feats).unwrap();
    assert_eq!(tape.value(logits).shape(), &[5, 3]);
    let probs = tape.softmax_rows(logits).unwrap();
    for &v in tape.value(probs).data() {
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }
}

#[test]
fn refine_equal_predictions_is_unweighted_mean() {
    let pts: Vec<Point3> = (0..3).map(|i| [i as f64, 0.0, 0.0]).collect();
    let layer = init_graph(&pts, 2).unwrap();
    let mut tape = Tape::new();
    let scores = tape.constant(
        Tensor::matrix(3, 2, vec![1.0, 0.0, 0.0, 1.0, 2.0, 2.0]).unwrap(),
    );
    let preds = tape.constant(Tensor::matrix(layer.num_edges(), 1, vec![0.7; layer.num_edges()]).unwrap());
    let out = refine_with_edges(&mut tape, scores, preds, &layer).unwrap();
    for p in 0..3 {
        let out_edges = layer.out_slice(p);
        for c in 0..2 {
            let mean: f64 = out_edges
                .iter()
                .map(|&(_, d)| tape.value(scores).row(d)[c])
                .sum::<f64>()
                / out_edges.len() as f64;
            assert!((tape.value(out).row(p)[c] - mean).abs() < 1e-12);
        }
    }
}

#[test]
fn refine_self_only_weight_preserves_scores() {
    let pts: Vec<Point3> = (0..3).map(|i| [i as f64, 0.0, 0.0]).collect();
    let layer = init_graph(&pts, 2).unwrap();
    let mut tape = Tape::new();
    let scores = tape.constant(
        Tensor::matrix(3, 2, vec![1.0, -1.0, 0.5, 0.25, -3.0, 2.0]).unwrap(),
    );
    let preds: Vec<f64> = layer
        .edges
        .iter()
        .map(|&(s, d)| if s == d { 1.0 } else { 0.0 })
        .collect();
    let preds = tape.constant(Tensor::matrix(layer.num_edges(), 1, preds).unwrap());
    let out = refine_with_edges(&mut tape, scores, preds, &layer).unwrap();
    assert_eq!(tape.value(out).data(), tape.value(scores).data());
}

#[test]
fn refine_matches_hand_computed_weighted_mean() {
    // 3 collinear points; point 1's out-edges are (1,0), (1,1), (1,2)
    let pts: Vec<Point3> = (0..3).map(|i| [i as f64 * 0.1, 0.0, 0.0]).collect();
    let layer = init_graph(&pts, 3).unwrap();
    let mut tape = Tape::new();
    let scores = tape.constant(
        Tensor::matrix(3, 1, vec![10.0, 20.0, 40.0]).unwrap(),
    );
    let pred_of = |s: usize, d: usize| -> f64 {
        match (s, d) {
            (1, 0) => 1.0,
            (1, 1) => 0.5,
            (1, 2) => 0.25,
            _ => 0.5,
        }
    };
    let preds: Vec<f64> = layer.edges.iter().map(|&(s, d)| pred_of(s, d)).collect();
    let preds = tape.constant(Tensor::matrix(layer.num_edges(), 1, preds).unwrap());
    let out = refine_with_edges(&mut tape, scores, preds, &layer).unwrap();
    let expected = (1.0 * 10.0 + 0.5 * 20.0 + 0.25 * 40.0) / (1.0 + 0.5 + 0.25);
    assert!((tape.value(out).row(1)[0] - expected).abs() < 1e-12);
}

#[test]
fn refine_preserves_the_probability_simplex() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let pts: Vec<Point3> = (0..6)
        .map(|_| [rng.gen::<f64>(), rng.gen::<f64>(), 0.0])
        .collect();
    let layer = init_graph(&pts, 3).unwrap();
    let mut tape = Tape::new();
    let mut rows = Vec::new();
    for _ in 0..6 {
        let mut r: Vec<f64> = (0..4).map(|_| rng.gen_range(0.01..1.0)).collect();
        let s: f64 = r.iter().sum();
        r.iter_mut().for_each(|v| *v /= s);
        rows.extend(r);
    }
    let scores = tape.constant(Tensor::matrix(6, 4, rows).unwrap());
    let preds: Vec<f64> = (0..layer.num_edges()).map(|_| rng.gen_range(0.05..0.95)).collect();
    let preds = tape.constant(Tensor::matrix(layer.num_edges(), 1, preds).unwrap());
    let out = refine_with_edges(&mut tape, scores, preds, &layer).unwrap();
    for p in 0..6 {
        let row = tape.value(out).row(p);
        assert!(row.iter().all(|&v| v >= 0.0));
        let sum: f64 = row.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12, "row {p} sums to {sum}");
    }
}

#[test]
fn refine_keeps_argmax_within_same_class_neighborhoods() {
    // both points of each pair predict the same class
    let pts = vec![[0.0, 0.0, 0.0], [0.1, 0.0, 0.0], [5.0, 0.0, 0.0], [5.1, 0.0, 0.0]];
    let layer = init_graph(&pts, 2).unwrap();
    let mut tape = Tape::new();
    let scores = tape.constant(Tensor::matrix(
        4,
        2,
        vec![0.9, 0.1, 0.7, 0.3, 0.2, 0.8, 0.4, 0.6],
    ).unwrap());
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let preds: Vec<f64> = (0..layer.num_edges()).map(|_| rng.gen_range(0.1..1.0)).collect();
    let preds = tape.constant(Tensor::matrix(layer.num_edges(), 1, preds).unwrap());
    let out = refine_with_edges(&mut tape, scores, preds, &layer).unwrap();
    let argmax = |row: &[f64]| {
        row.iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0
    };
    for p in 0..4 {
        assert_eq!(
            argmax(tape.value(out).row(p)),
            argmax(tape.value(scores).row(p))
        );
    }
}

#[test]
fn architecture_has_one_edge_block_per_layer() {
    let config = toy_config();
    let arch = config.architecture().unwrap();
    let edge_blocks = arch.iter().filter(|(n, _)| n.ends_with(".ext1")).count();
    assert_eq!(edge_blocks, config.num_layers());
}

#[test]
fn forward_toy_config_shapes_line_up() {
    let config = toy_config();
    let params = init_params(&config, 42).unwrap();
    let block = toy_block(8, 1.0, 3);
    assert_eq!(block.len(), 16);

    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let out = forward(&mut tape, &config, &bound, &block).unwrap();

    assert_eq!(tape.value(out.scores).shape(), &[16, 3]);
    assert_eq!(tape.value(out.refined).shape(), &[16, 3]);
    assert_eq!(out.graph.num_layers(), 3);
    for (l, layer) in out.graph.layers.iter().enumerate() {
        assert_eq!(layer.num_points(), config.layer_counts[l]);
    }
    let finest_edges = out.graph.finest().num_edges();
    assert_eq!(tape.value(out.edge_preds).shape(), &[finest_edges, 1]);
    assert!(tape
        .value(out.edge_preds)
        .data()
        .iter()
        .all(|&p| p > 0.0 && p < 1.0));
}

#[test]
fn forward_rejects_wrong_block_size() {
    let config = toy_config();
    let params = init_params(&config, 42).unwrap();
    let block = toy_block(4, 1.0, 3); // 8 points, config needs 16
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    assert!(matches!(
        forward(&mut tape, &config, &bound, &block),
        Err(Error::Validation(_))
    ));
}

#[test]
fn forward_is_deterministic() {
    let config = toy_config();
    let params = init_params(&config, 42).unwrap();
    let block = toy_block(8, 1.0, 3);
    let run = || {
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let out = forward(&mut tape, &config, &bound, &block).unwrap();
        tape.value(out.refined).data().to_vec()
    };
    assert_eq!(run(), run());
}

#[test]
fn maxpool_forward_is_local_across_distant_clusters() {
    // clusters far apart: scores in one cluster must not move when a point
    // in the other cluster changes color
    let config = toy_config();
    let params = init_params(&config, 11).unwrap();
    let block = toy_block(8, 100.0, 5);

    let run = |b: &PointCloud| {
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let out = forward(&mut tape, &config, &bound, b).unwrap();
        let order = out.graph.finest().point_indices.clone();
        (tape.value(out.scores).data().to_vec(), order)
    };

    let (base_scores, order) = run(&block);

    let mut perturbed = block.clone();
    // block row of some cluster-1 point (x >= 50)
    let victim = (0..perturbed.len())
        .find(|&i| perturbed.positions[i][0] >= 50.0)
        .unwrap();
    let dim = perturbed.feature_dim;
    perturbed.features[victim * dim + 3] = 0.0;
    perturbed.features[victim * dim + 4] = 1.0;
    let (new_scores, order2) = run(&perturbed);
    assert_eq!(order, order2, "FPS order must not depend on features");

    for (local, &global) in order.iter().enumerate() {
        if block.positions[global][0] < 50.0 {
            let a = &base_scores[local * 3..(local + 1) * 3];
            let b = &new_scores[local * 3..(local + 1) * 3];
            assert_eq!(a, b, "cluster-0 point {global} moved");
        }
    }
}

#[test]
fn forward_runs_in_all_message_passing_and_graph_modes() {
    let block = toy_block(8, 1.0, 3);
    for mp in MessagePassing::ALL {
        for gm in [GraphMode::Hierarchical, GraphMode::Independent] {
            let mut config = toy_config();
            config.message_passing = mp;
            config.graph_mode = gm;
            let params = init_params(&config, 42).unwrap();
            let mut tape = Tape::new();
            let bound = params.bind(&mut tape);
            let out = forward(&mut tape, &config, &bound, &block);
            assert!(out.is_ok(), "forward failed for {mp:?} / {gm:?}: {:?}", out.err());
        }
    }
}
