use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, || rng.gen_range(-1.0..1.0))
}

#[test]
fn evaluate_square() {
    let mut g = Graph::new();
    let x = g.input(Tensor::scalar(3.0));
    let y = g.mul(x, x).unwrap();
    assert_eq!(g.value(y).item().unwrap(), 9.0);
}

#[test]
fn evaluate_sigmoid_at_zero() {
    let mut g = Graph::new();
    let x = g.input(Tensor::scalar(0.0));
    let y = g.sigmoid(x).unwrap();
    assert_eq!(g.value(y).item().unwrap(), 0.5);
}

#[test]
fn evaluate_matmul_of_ones() {
    let mut g = Graph::new();
    let a = g.input(Tensor::ones(&[2, 3]));
    let b = g.input(Tensor::ones(&[3, 2]));
    let c = g.matmul(a, b).unwrap();
    assert_eq!(g.value(c), &Tensor::filled(&[2, 2], 3.0));
}

#[test]
fn matmul_shape_mismatch_errors() {
    let mut g = Graph::new();
    let a = g.input(Tensor::ones(&[2, 3]));
    let b = g.input(Tensor::ones(&[2, 2]));
    assert!(matches!(g.matmul(a, b), Err(NumError::Shape { .. })));
}

#[test]
fn non_finite_surfaces_as_error() {
    let mut g = Graph::new();
    let x = g.input(Tensor::scalar(1e200));
    assert!(matches!(g.mul(x, x), Err(NumError::NonFinite { .. })));
}

#[test]
fn evaluate_is_repeatable() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut g = Graph::new();
    let x = g.param(rand_tensor(&mut rng, &[3, 4]));
    let w = g.param(rand_tensor(&mut rng, &[4, 2]));
    let h = g.matmul(x, w).unwrap();
    let s = g.softmax(h).unwrap();
    let l = g.sum(s).unwrap();
    let first = g.value(l).clone();
    let xv = g.value(x).clone();
    g.evaluate(&[(x, xv.clone())]).unwrap();
    assert_eq!(g.value(l).data()[0].to_bits(), first.data()[0].to_bits());
    g.evaluate(&[(x, xv)]).unwrap();
    assert_eq!(g.value(l), &first);
}

#[test]
fn backward_power_rule() {
    let mut g = Graph::new();
    let x = g.param(Tensor::scalar(3.0));
    let y = g.square(x).unwrap();
    let grads = g.backward(y).unwrap();
    assert_eq!(grads.get(x).unwrap().item().unwrap(), 6.0);
}

#[test]
fn backward_sigmoid_at_zero() {
    let mut g = Graph::new();
    let x = g.param(Tensor::scalar(0.0));
    let y = g.sigmoid(x).unwrap();
    let grads = g.backward(y).unwrap();
    assert_eq!(grads.get(x).unwrap().item().unwrap(), 0.25);
}

#[test]
fn backward_rejects_non_scalar() {
    let mut g = Graph::new();
    let x = g.param(Tensor::zeros(&[2]));
    let y = g.relu(x).unwrap();
    assert!(matches!(g.backward(y), Err(NumError::NotScalar(_))));
}

#[test]
fn untouched_params_get_zero_adjoint() {
    let mut g = Graph::new();
    let x = g.param(Tensor::scalar(2.0));
    let unused = g.param(Tensor::zeros(&[2, 3]));
    let y = g.square(x).unwrap();
    let grads = g.backward(y).unwrap();
    assert_eq!(grads.get(unused).unwrap(), &Tensor::zeros(&[2, 3]));
}

#[test]
fn random_five_node_graph_matches_finite_differences() {
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut g = Graph::new();
        let x = g.param(rand_tensor(&mut rng, &[3, 4]));
        let w = g.param(rand_tensor(&mut rng, &[4, 2]));
        let h = g.matmul(x, w).unwrap();
        let s = g.sigmoid(h).unwrap();
        let q = g.square(s).unwrap();
        let l = g.mean(q).unwrap();
        assert!(check_all_params(&mut g, l, 1e-5).unwrap() < 1e-4);
    }
}

#[test]
fn linear_graph_is_exact() {
    let mut g = Graph::new();
    let x = g.param(Tensor::scalar(0.7));
    let y = g.scale(x, 3.0).unwrap();
    assert!(finite_difference_check(&mut g, y, x, 1e-5).unwrap() < 1e-10);
}

#[test]
fn relu_away_from_kink() {
    let mut g = Graph::new();
    let x = g.param(Tensor::scalar(1.0));
    let y = g.relu(x).unwrap();
    assert!(finite_difference_check(&mut g, y, x, 1e-5).unwrap() < 1e-6);
}

#[test]
fn relu_subgradient_at_zero_is_zero() {
    let mut g = Graph::new();
    let x = g.param(Tensor::scalar(0.0));
    let y = g.relu(x).unwrap();
    assert_eq!(g.backward(y).unwrap().get(x).unwrap().item().unwrap(), 0.0);
}

#[test]
fn finite_difference_check_restores_graph() {
    let mut g = Graph::new();
    let x = g.param(Tensor::from_vec(vec![0.3, -0.2]));
    let y = g.square(x).unwrap();
    let l = g.sum(y).unwrap();
    let before = g.value(l).clone();
    finite_difference_check(&mut g, l, x, 1e-5).unwrap();
    assert_eq!(g.value(l), &before);
    assert!(finite_difference_check(&mut g, l, x, 0.0).is_err());
}

#[test]
fn gather_adjoint_conserves_mass() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut g = Graph::new();
    let table = g.param(rand_tensor(&mut rng, &[5, 3]));
    let rows = g.gather(table, vec![0, 3, 3, 1, 0, 0]).unwrap();
    let weights = rand_tensor(&mut rng, &[6, 3]);
    let downstream_mass = weights.sum();
    let y = g.mask_mul(rows, weights).unwrap();
    let l = g.sum(y).unwrap();
    let grads = g.backward(l).unwrap();
    let adj = grads.get(table).unwrap();
    assert!((adj.sum() - downstream_mass).abs() < 1e-12);
    // row 2 and 4 are never read
    assert!(adj.row(2).iter().all(|&v| v == 0.0));
    assert!(adj.row(4).iter().all(|&v| v == 0.0));
}

#[test]
fn gather_rejects_out_of_range() {
    let mut g = Graph::new();
    let table = g.param(Tensor::zeros(&[2, 2]));
    assert!(g.gather(table, vec![2]).is_err());
}

#[test]
fn dropout_eval_mode_is_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut g = Graph::new();
    let x = g.input(Tensor::ones(&[4, 4]));
    let y = g.dropout(x, 0.5, false, &mut rng).unwrap();
    assert_eq!(x, y);
}

#[test]
fn dropout_keeps_expectation() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut g = Graph::new();
    let x = g.input(Tensor::ones(&[100, 100]));
    let y = g.dropout(x, 0.5, true, &mut rng).unwrap();
    let v = g.value(y);
    assert!(v.data().iter().all(|&a| a == 0.0 || a == 2.0));
    let mean = v.sum() / v.len() as f64;
    assert!((mean - 1.0).abs() < 0.05);
}

#[test]
fn every_primitive_matches_finite_differences() {
    for seed in 0..100 {
        for (name, err) in primitive_errors(seed).unwrap() {
            assert!(err < 1e-4, "{name} seed {seed}: {err}");
        }
    }
}
