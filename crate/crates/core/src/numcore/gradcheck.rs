use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Graph, NodeId, NumError, Tensor};

/// Compares the analytic adjoint of `param` against central differences.
///
/// Returns the maximum over entries of `|analytic - numeric| / max(1, |analytic|)`.
/// The graph is restored to its original parameter value before returning.
pub fn finite_difference_check(
    graph: &mut Graph,
    loss: NodeId,
    param: NodeId,
    eps: f64,
) -> Result<f64, NumError> {
    if eps <= 0.0 {
        return Err(NumError::InvalidArgument("finite-difference step must be positive".into()));
    }
    let grads = graph.backward(loss)?;
    let analytic = grads
        .get(param)
        .ok_or(NumError::NotParam(param.index()))?
        .clone();
    let original = graph.value(param).clone();
    let mut worst = 0.0f64;
    for i in 0..original.len() {
        let mut probe = |delta: f64| -> Result<f64, NumError> {
            let mut t = original.clone();
            t.data_mut()[i] += delta;
            graph.evaluate(&[(param, t)])?;
            let v = graph.value(loss).item()?;
            if !v.is_finite() {
                return Err(NumError::NonFinite { op: "finite_difference" });
            }
            Ok(v)
        };
        let plus = probe(eps)?;
        let minus = probe(-eps)?;
        let numeric = (plus - minus) / (2.0 * eps);
        let a = analytic.data()[i];
        worst = worst.max((a - numeric).abs() / a.abs().max(1.0));
    }
    graph.evaluate(&[(param, original)])?;
    Ok(worst)
}

/// Runs [`finite_difference_check`] over every parameter and returns the worst error.
pub fn check_all_params(graph: &mut Graph, loss: NodeId, eps: f64) -> Result<f64, NumError> {
    let params = graph.params().to_vec();
    let mut worst = 0.0f64;
    for p in params {
        worst = worst.max(finite_difference_check(graph, loss, p, eps)?);
    }
    Ok(worst)
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, || rng.gen_range(-1.0..1.0))
}

fn rand_away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, || {
        let v: f64 = rng.gen_range(0.05..1.0);
        if rng.gen_bool(0.5) {
            v
        } else {
            -v
        }
    })
}

/// Builds one graph per primitive on random inputs and returns `(name, max error)`.
pub fn primitive_errors(seed: u64) -> Result<Vec<(&'static str, f64)>, NumError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let eps = 1e-5;

    macro_rules! check {
        ($name:expr, |$g:ident, $rng:ident| $body:block) => {{
            let mut $g = Graph::new();
            let $rng = &mut rng;
            let y: NodeId = $body;
            // weight the output so every entry's adjoint differs
            let shape = $g.value(y).shape().to_vec();
            let w = rand_tensor($rng, &shape);
            let yw = $g.mask_mul(y, w)?;
            let l = $g.sum(yw)?;
            out.push(($name, check_all_params(&mut $g, l, eps)?));
        }};
    }

    check!("matmul", |g, r| {
        let a = g.param(rand_tensor(r, &[3, 4]));
        let b = g.param(rand_tensor(r, &[4, 2]));
        g.matmul(a, b)?
    });
    check!("matmul_batched", |g, r| {
        let a = g.param(rand_tensor(r, &[2, 3, 4]));
        let b = g.param(rand_tensor(r, &[2, 4, 3]));
        g.matmul(a, b)?
    });
    check!("matmul_large", |g, r| {
        let a = g.param(rand_tensor(r, &[4, 3, 16]));
        let b = g.param(rand_tensor(r, &[16, 12]));
        g.matmul(a, b)?
    });
    check!("add", |g, r| {
        let a = g.param(rand_tensor(r, &[3, 2]));
        let b = g.param(rand_tensor(r, &[3, 2]));
        g.add(a, b)?
    });
    check!("sub", |g, r| {
        let a = g.param(rand_tensor(r, &[3, 2]));
        let b = g.param(rand_tensor(r, &[3, 2]));
        g.sub(a, b)?
    });
    check!("mul", |g, r| {
        let a = g.param(rand_tensor(r, &[3, 2]));
        let b = g.param(rand_tensor(r, &[3, 2]));
        g.mul(a, b)?
    });
    check!("add_broadcast", |g, r| {
        let a = g.param(rand_tensor(r, &[2, 3, 2]));
        let b = g.param(rand_tensor(r, &[3, 2]));
        g.add_broadcast(a, b)?
    });
    check!("mul_broadcast", |g, r| {
        let a = g.param(rand_tensor(r, &[2, 3, 2]));
        let b = g.param(rand_tensor(r, &[2]));
        g.mul_broadcast(a, b)?
    });
    check!("scale", |g, r| {
        let a = g.param(rand_tensor(r, &[4]));
        g.scale(a, -1.7)?
    });
    check!("relu", |g, r| {
        let a = g.param(rand_away_from_zero(r, &[3, 3]));
        g.relu(a)?
    });
    check!("sigmoid", |g, r| {
        let a = g.param(rand_tensor(r, &[3, 3]));
        g.sigmoid(a)?
    });
    check!("softmax", |g, r| {
        let a = g.param(rand_tensor(r, &[2, 3, 4]));
        g.softmax(a)?
    });
    check!("sum", |g, r| {
        let a = g.param(rand_tensor(r, &[3, 3]));
        g.sum(a)?
    });
    check!("mean", |g, r| {
        let a = g.param(rand_tensor(r, &[3, 3]));
        g.mean(a)?
    });
    check!("sum_axis", |g, r| {
        let a = g.param(rand_tensor(r, &[2, 3, 4]));
        g.sum_axis(a, 1)?
    });
    check!("square", |g, r| {
        let a = g.param(rand_tensor(r, &[5]));
        g.square(a)?
    });
    check!("sqrt", |g, r| {
        let a = g.param(Tensor::from_fn(&[5], || r.gen_range(0.2..2.0)));
        g.sqrt(a)?
    });
    check!("concat", |g, r| {
        let a = g.param(rand_tensor(r, &[2, 3]));
        let b = g.param(rand_tensor(r, &[2, 1]));
        g.concat(&[a, b])?
    });
    check!("mask_mul", |g, r| {
        let a = g.param(rand_tensor(r, &[3, 3]));
        let m = Tensor::from_fn(&[3, 3], || if r.gen_bool(0.5) { 1.0 } else { 0.0 });
        g.mask_mul(a, m)?
    });
    check!("gather", |g, r| {
        let a = g.param(rand_tensor(r, &[4, 3]));
        g.gather(a, vec![1, 3, 1, 0])?
    });
    check!("dropout", |g, r| {
        let a = g.param(rand_tensor(r, &[4, 3]));
        g.dropout(a, 0.5, true, r)?
    });
    check!("reshape", |g, r| {
        let a = g.param(rand_tensor(r, &[2, 6]));
        g.reshape(a, &[3, 4])?
    });
    check!("transpose", |g, r| {
        let a = g.param(rand_tensor(r, &[2, 3, 4]));
        g.transpose(a)?
    });
    check!("segment_sum", |g, r| {
        let a = g.param(rand_tensor(r, &[5, 2]));
        g.segment_sum(a, vec![2, 0, 3])?
    });
    check!("l2_normalize_rows", |g, r| {
        let a = g.param(rand_away_from_zero(r, &[3, 4]));
        g.l2_normalize_rows(a)?
    });
    check!("layer_norm", |g, r| {
        let a = g.param(rand_tensor(r, &[3, 4]));
        g.layer_norm(a, 1e-5)?
    });
    check!("bce_with_logits", |g, r| {
        let a = g.param(Tensor::from_fn(&[6], || r.gen_range(-4.0..4.0)));
        let labels = (0..6).map(|i| (i % 2) as f64).collect();
        g.bce_with_logits(a, labels)?
    });
    Ok(out)
}
