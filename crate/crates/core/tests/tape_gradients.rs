//! Finite-difference checks for every tape primitive on randomized shapes,
//! plus the named edge cases for gradient routing.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pointedge_core::tensor::{
    gradient_check, Groups, ModelParams, Tape, Tensor, ValueId, WeightedGroups,
};
use pointedge_core::Result;

const EPS: f64 = 1e-5;
const TOL: f64 = 1e-6;

fn random_tensor(rng: &mut impl Rng, shape: Vec<usize>, lo: f64, hi: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.gen_range(lo..hi)).collect();
    Tensor::new(shape, data).unwrap()
}

/// Runs `build` under both analytic backward and central differences; the
/// scalar comes from dotting the primitive output with a fixed random tensor
/// so every output coordinate carries gradient.
fn check<F>(name: &str, params: ModelParams, build: F)
where
    F: Fn(&mut Tape, &[ValueId]) -> Result<ValueId>,
{
    let reduce = |p: &ModelParams| -> Result<(f64, Vec<Tensor>)> {
        let mut tape = Tape::new();
        let bound = p.bind(&mut tape);
        let out = build(&mut tape, bound.ids())?;
        // deterministic probe tensor: pseudo-random but fixed
        let probe: Vec<f64> = (0..tape.value(out).len())
            .map(|i| (((i * 2654435761) % 1000) as f64 / 500.0) - 1.0 + 0.01)
            .collect();
        let probe = tape.constant(Tensor::new(tape.value(out).shape().to_vec(), probe).unwrap());
        let prod = tape.mul(out, probe)?;
        let loss = tape.sum_all(prod);
        let value = tape.value(loss).item();
        let grads = tape.backward(loss)?;
        Ok((value, bound.collect_grads(&grads)))
    };

    let analytic = reduce(&params).unwrap().1;
    let loss_only = |p: &ModelParams| reduce(p).map(|(v, _)| v);
    let report = gradient_check(loss_only, &params, &analytic, EPS).unwrap();
    assert!(
        report.max_rel_err < TOL,
        "{name}: max rel err {} at {}[{}] (analytic {}, numeric {})",
        report.max_rel_err,
        report.worst_param,
        report.worst_coord,
        report.analytic,
        report.numeric
    );
}

fn one_param(rng: &mut impl Rng, shape: Vec<usize>, lo: f64, hi: f64) -> ModelParams {
    let mut p = ModelParams::new();
    p.insert("x", random_tensor(rng, shape, lo, hi)).unwrap();
    p
}

#[test]
fn matmul_backward_matches_fd() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..3 {
        let (m, k, n) = (
            rng.gen_range(1..5usize),
            rng.gen_range(1..5usize),
            rng.gen_range(1..5usize),
        );
        let mut p = ModelParams::new();
        p.insert("a", random_tensor(&mut rng, vec![m, k], -1.0, 1.0)).unwrap();
        p.insert("b", random_tensor(&mut rng, vec![k, n], -1.0, 1.0)).unwrap();
        check("matmul", p, |tape, ids| tape.matmul(ids[0], ids[1]));
    }
}

#[test]
fn bias_add_backward_matches_fd() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut p = ModelParams::new();
    p.insert("x", random_tensor(&mut rng, vec![4, 3], -1.0, 1.0)).unwrap();
    p.insert("b", random_tensor(&mut rng, vec![3], -1.0, 1.0)).unwrap();
    check("bias_add", p, |tape, ids| tape.bias_add(ids[0], ids[1]));
}

#[test]
fn relu_backward_matches_fd() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    // keep inputs away from the kink at 0
    let mut t = random_tensor(&mut rng, vec![5, 4], -1.0, 1.0);
    for v in t.data_mut() {
        if v.abs() < 1e-3 {
            *v += 0.1;
        }
    }
    let mut p = ModelParams::new();
    p.insert("x", t).unwrap();
    check("relu", p, |tape, ids| Ok(tape.relu(ids[0])));
}

#[test]
fn sigmoid_backward_matches_fd() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let p = one_param(&mut rng, vec![3, 3], -2.0, 2.0);
    check("sigmoid", p, |tape, ids| Ok(tape.sigmoid(ids[0])));
}

#[test]
fn softmax_rows_backward_matches_fd() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let p = one_param(&mut rng, vec![4, 5], -2.0, 2.0);
    check("softmax_rows", p, |tape, ids| tape.softmax_rows(ids[0]));
}

#[test]
fn log_softmax_rows_backward_matches_fd() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let p = one_param(&mut rng, vec![4, 5], -2.0, 2.0);
    check("log_softmax_rows", p, |tape, ids| tape.log_softmax_rows(ids[0]));
}

#[test]
fn log_backward_matches_fd() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let p = one_param(&mut rng, vec![3, 4], 0.1, 2.0);
    check("log", p, |tape, ids| Ok(tape.log(ids[0])));
}

#[test]
fn clamp_backward_matches_fd() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    // keep coordinates off the clamp boundaries by more than eps
    let mut t = random_tensor(&mut rng, vec![4, 4], -1.0, 1.0);
    for v in t.data_mut() {
        if (v.abs() - 0.5).abs() < 1e-3 {
            *v *= 0.9;
        }
    }
    let mut p = ModelParams::new();
    p.insert("x", t).unwrap();
    check("clamp", p, |tape, ids| Ok(tape.clamp(ids[0], -0.5, 0.5)));
}

#[test]
fn elementwise_backward_matches_fd() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for op in ["add", "sub", "mul"] {
        let mut p = ModelParams::new();
        p.insert("a", random_tensor(&mut rng, vec![3, 4], -1.0, 1.0)).unwrap();
        p.insert("b", random_tensor(&mut rng, vec![3, 4], -1.0, 1.0)).unwrap();
        check(op, p, move |tape, ids| match op {
            "add" => tape.add(ids[0], ids[1]),
            "sub" => tape.sub(ids[0], ids[1]),
            _ => tape.mul(ids[0], ids[1]),
        });
    }
}

#[test]
fn scale_backward_matches_fd() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let p = one_param(&mut rng, vec![2, 6], -1.0, 1.0);
    check("scale", p, |tape, ids| Ok(tape.scale(ids[0], -0.37)));
}

#[test]
fn concat_cols_backward_matches_fd() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut p = ModelParams::new();
    p.insert("a", random_tensor(&mut rng, vec![3, 2], -1.0, 1.0)).unwrap();
    p.insert("b", random_tensor(&mut rng, vec![3, 4], -1.0, 1.0)).unwrap();
    p.insert("c", random_tensor(&mut rng, vec![3, 1], -1.0, 1.0)).unwrap();
    check("concat_cols", p, |tape, ids| tape.concat_cols(ids));
}

#[test]
fn gather_rows_backward_matches_fd() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let p = one_param(&mut rng, vec![5, 3], -1.0, 1.0);
    // repeated rows accumulate gradient
    check("gather_rows", p, |tape, ids| {
        tape.gather_rows(ids[0], vec![0, 2, 2, 4, 1, 2])
    });
}

#[test]
fn scatter_max_groups_backward_matches_fd() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    // random values: max ties have probability zero
    let p = one_param(&mut rng, vec![7, 3], -1.0, 1.0);
    let groups = Groups::new(vec![(0, 3), (3, 4), (4, 7)]);
    check("scatter_max_groups", p, move |tape, ids| {
        tape.scatter_max_groups(ids[0], groups.clone())
    });
}

#[test]
fn group_sum_rows_backward_matches_fd() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let p = one_param(&mut rng, vec![6, 2], -1.0, 1.0);
    let groups = Groups::new(vec![(0, 2), (2, 3), (3, 6)]);
    check("group_sum_rows", p, move |tape, ids| {
        tape.group_sum_rows(ids[0], groups.clone())
    });
}

#[test]
fn group_softmax_backward_matches_fd() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let p = one_param(&mut rng, vec![6, 1], -2.0, 2.0);
    let groups = Groups::new(vec![(0, 4), (4, 6)]);
    check("group_softmax", p, move |tape, ids| {
        tape.group_softmax(ids[0], groups.clone())
    });
}

#[test]
fn group_weighted_sum_backward_matches_fd() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let p = one_param(&mut rng, vec![5, 3], -1.0, 1.0);
    let map = WeightedGroups {
        offsets: vec![0, 2, 3, 6],
        indices: vec![0, 4, 2, 1, 1, 3],
        weights: vec![0.25, 0.75, 1.0, 0.2, 0.3, 0.5],
    };
    check("group_weighted_sum", p, move |tape, ids| {
        tape.group_weighted_sum(ids[0], map.clone())
    });
}

#[test]
fn row_scale_backward_matches_fd() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut p = ModelParams::new();
    p.insert("x", random_tensor(&mut rng, vec![4, 3], -1.0, 1.0)).unwrap();
    p.insert("s", random_tensor(&mut rng, vec![4, 1], -1.0, 1.0)).unwrap();
    check("row_scale", p, |tape, ids| tape.row_scale(ids[0], ids[1]));
}

#[test]
fn row_div_backward_matches_fd() {
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    let mut p = ModelParams::new();
    p.insert("x", random_tensor(&mut rng, vec![4, 3], -1.0, 1.0)).unwrap();
    p.insert("d", random_tensor(&mut rng, vec![4, 1], 0.5, 2.0)).unwrap();
    check("row_div", p, |tape, ids| tape.row_div(ids[0], ids[1]));
}

#[test]
fn reductions_backward_match_fd() {
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    let p = one_param(&mut rng, vec![3, 5], -1.0, 1.0);
    check("sum_all", p, |tape, ids| Ok(tape.sum_all(ids[0])));
    let p = one_param(&mut rng, vec![3, 5], -1.0, 1.0);
    check("mean_all", p, |tape, ids| Ok(tape.mean_all(ids[0])));
}

// ---- named edge cases -------------------------------------------------------

#[test]
fn relu_backward_is_a_sign_mask() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::matrix(1, 2, vec![-1.0, 2.0]).unwrap().with_grad());
    let y = tape.relu(x);
    let loss = tape.sum_all(y); // upstream [1, 1]
    let grads = tape.backward(loss).unwrap();
    assert_eq!(grads.get(x).unwrap().data(), &[0.0, 1.0]);
}

#[test]
fn softmax_of_zeros_is_uniform() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::matrix(1, 3, vec![0.0; 3]).unwrap());
    let y = tape.softmax_rows(x).unwrap();
    for &v in tape.value(y).data() {
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }
}

#[test]
fn softmax_rows_sum_to_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(random_tensor(&mut rng, vec![20, 7], -30.0, 30.0));
    let y = tape.softmax_rows(x).unwrap();
    for r in 0..20 {
        let sum: f64 = tape.value(y).row(r).iter().sum();
        assert!((sum - 1.0).abs() < 1e-12, "row {r} sums to {sum}");
    }
}

#[test]
fn scatter_max_routes_gradient_to_argmax_only() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::matrix(2, 1, vec![3.0, 7.0]).unwrap().with_grad());
    let y = tape.scatter_max_groups(x, Groups::new(vec![(0, 2)])).unwrap();
    assert_eq!(tape.value(y).data(), &[7.0]);
    let loss = tape.sum_all(y);
    let grads = tape.backward(loss).unwrap();
    assert_eq!(grads.get(x).unwrap().data(), &[0.0, 1.0]);
}

#[test]
fn scatter_max_tie_goes_to_lowest_row() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::matrix(3, 1, vec![5.0, 5.0, 1.0]).unwrap().with_grad());
    let y = tape.scatter_max_groups(x, Groups::new(vec![(0, 3)])).unwrap();
    let loss = tape.sum_all(y);
    let grads = tape.backward(loss).unwrap();
    assert_eq!(grads.get(x).unwrap().data(), &[1.0, 0.0, 0.0]);
}

#[test]
fn shape_mismatch_names_the_primitive() {
    let mut tape = Tape::<f64>::new();
    let a = tape.constant(Tensor::zeros(vec![2, 3]));
    let b = tape.constant(Tensor::zeros(vec![2, 2]));
    let err = tape.matmul(a, b).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("matmul") && msg.contains("[2, 3]"), "got: {msg}");
}

#[test]
fn tape_replay_is_bitwise_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let x = random_tensor(&mut rng, vec![6, 4], -1.0, 1.0);
    let w = random_tensor(&mut rng, vec![4, 3], -1.0, 1.0);

    let run = |x: &Tensor, w: &Tensor| -> (Vec<f64>, Vec<f64>) {
        let mut tape = Tape::new();
        let xi = tape.leaf(x.clone().with_grad());
        let wi = tape.leaf(w.clone().with_grad());
        let h = tape.matmul(xi, wi).unwrap();
        let h = tape.sigmoid(h);
        let sm = tape.softmax_rows(h).unwrap();
        let loss = tape.mean_all(sm);
        let grads = tape.backward(loss).unwrap();
        (
            tape.value(sm).data().to_vec(),
            grads.get(wi).unwrap().data().to_vec(),
        )
    };
    let (f1, g1) = run(&x, &w);
    let (f2, g2) = run(&x, &w);
    assert_eq!(f1, f2);
    assert_eq!(g1, g2);
}
