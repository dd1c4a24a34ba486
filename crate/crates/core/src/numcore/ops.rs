//! Forward and adjoint rules for every graph primitive.

use super::{NumError, Tensor};

#[derive(Clone, Debug)]
pub(crate) enum Op {
    Input,
    Param,
    MatMul,
    Add,
    Sub,
    Mul,
    AddBroadcast,
    MulBroadcast,
    Scale(f64),
    Relu,
    Sigmoid,
    Softmax,
    SumAll,
    MeanAll,
    SumAxis(usize),
    Square,
    Sqrt,
    Concat,
    MaskMul(Tensor),
    Dropout(Tensor),
    Gather(Vec<usize>),
    Reshape(Vec<usize>),
    TransposeLast2,
    SegmentSum(Vec<usize>),
    L2NormalizeRows,
    LayerNorm(f64),
    BceWithLogits(Vec<f64>),
}

/// Rows with a norm at or below this are treated as zero vectors.
pub const NORM_FLOOR: f64 = 1e-12;

impl Op {
    pub(crate) fn name(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::Param => "param",
            Op::MatMul => "matmul",
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::AddBroadcast => "add_broadcast",
            Op::MulBroadcast => "mul_broadcast",
            Op::Scale(_) => "scale",
            Op::Relu => "relu",
            Op::Sigmoid => "sigmoid",
            Op::Softmax => "softmax",
            Op::SumAll => "sum",
            Op::MeanAll => "mean",
            Op::SumAxis(_) => "sum_axis",
            Op::Square => "square",
            Op::Sqrt => "sqrt",
            Op::Concat => "concat",
            Op::MaskMul(_) => "mask_mul",
            Op::Dropout(_) => "dropout",
            Op::Gather(_) => "gather",
            Op::Reshape(_) => "reshape",
            Op::TransposeLast2 => "transpose",
            Op::SegmentSum(_) => "segment_sum",
            Op::L2NormalizeRows => "l2_normalize_rows",
            Op::LayerNorm(_) => "layer_norm",
            Op::BceWithLogits(_) => "bce_with_logits",
        }
    }

    pub(crate) fn is_leaf(&self) -> bool {
        matches!(self, Op::Input | Op::Param)
    }
}

fn shape_err(op: &'static str, detail: String) -> NumError {
    NumError::Shape { op, detail }
}

// ---------------------------------------------------------------------------
// matrix products

/// `c (+)= op(a) · op(b)` where `op(a)` is `m×k` and `op(b)` is `k×n`.
/// A transposed operand is stored row-major in its transposed shape.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    c: &mut [f64],
    accumulate: bool,
) {
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { 1.0 } else { 0.0 };
    if m * k * n < 2048 {
        for i in 0..m {
            for j in 0..n {
                let mut acc = 0.0;
                for l in 0..k {
                    let av = a[(i as isize * rsa + l as isize * csa) as usize];
                    let bv = b[(l as isize * rsb + j as isize * csb) as usize];
                    acc += av * bv;
                }
                let dst = &mut c[i * n + j];
                *dst = beta * *dst + acc;
            }
        }
        return;
    }
    // SAFETY: slice lengths are checked by the callers' shape validation, and
    // the strides above address exactly the m×k, k×n and m×n row-major blocks.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

enum MatMulKind {
    /// `[.., k] x [k, n]`, leading axes flattened into `rows`.
    Plain { rows: usize, k: usize, n: usize },
    /// `[bt, m, k] x [bt, k, n]`.
    Batched { bt: usize, m: usize, k: usize, n: usize },
}

fn matmul_kind(a: &Tensor, b: &Tensor) -> Result<(MatMulKind, Vec<usize>), NumError> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa.len() < 2 || sb.len() < 2 {
        return Err(shape_err("matmul", format!("{sa:?} x {sb:?}")));
    }
    if sb.len() == 2 {
        let k = sb[0];
        let n = sb[1];
        if *sa.last().unwrap() != k {
            return Err(shape_err("matmul", format!("{sa:?} x {sb:?}")));
        }
        let mut out = sa.to_vec();
        *out.last_mut().unwrap() = n;
        return Ok((MatMulKind::Plain { rows: a.len() / k.max(1), k, n }, out));
    }
    if sa.len() == 3 && sb.len() == 3 && sa[0] == sb[0] && sa[2] == sb[1] {
        let (bt, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
        return Ok((MatMulKind::Batched { bt, m, k, n }, vec![bt, m, n]));
    }
    Err(shape_err("matmul", format!("{sa:?} x {sb:?}")))
}

fn matmul_forward(a: &Tensor, b: &Tensor) -> Result<Tensor, NumError> {
    let (kind, out_shape) = matmul_kind(a, b)?;
    let mut out = Tensor::zeros(&out_shape);
    match kind {
        MatMulKind::Plain { rows, k, n } => {
            gemm(rows, k, n, a.data(), false, b.data(), false, out.data_mut(), false)
        }
        MatMulKind::Batched { bt, m, k, n } => {
            for t in 0..bt {
                gemm(
                    m,
                    k,
                    n,
                    &a.data()[t * m * k..(t + 1) * m * k],
                    false,
                    &b.data()[t * k * n..(t + 1) * k * n],
                    false,
                    &mut out.data_mut()[t * m * n..(t + 1) * m * n],
                    false,
                );
            }
        }
    }
    Ok(out)
}

fn matmul_backward(a: &Tensor, b: &Tensor, g: &Tensor, need: &[bool]) -> Vec<Option<Tensor>> {
    let (kind, _) = matmul_kind(a, b).expect("shapes validated in forward");
    let mut da = need[0].then(|| Tensor::zeros(a.shape()));
    let mut db = need[1].then(|| Tensor::zeros(b.shape()));
    match kind {
        MatMulKind::Plain { rows, k, n } => {
            if let Some(da) = da.as_mut() {
                // dA = G · Bᵀ
                gemm(rows, n, k, g.data(), false, b.data(), true, da.data_mut(), false);
            }
            if let Some(db) = db.as_mut() {
                // dB = Aᵀ · G
                gemm(k, rows, n, a.data(), true, g.data(), false, db.data_mut(), false);
            }
        }
        MatMulKind::Batched { bt, m, k, n } => {
            for t in 0..bt {
                let gs = &g.data()[t * m * n..(t + 1) * m * n];
                if let Some(da) = da.as_mut() {
                    let bs = &b.data()[t * k * n..(t + 1) * k * n];
                    gemm(m, n, k, gs, false, bs, true, &mut da.data_mut()[t * m * k..(t + 1) * m * k], false);
                }
                if let Some(db) = db.as_mut() {
                    let as_ = &a.data()[t * m * k..(t + 1) * m * k];
                    gemm(k, m, n, as_, true, gs, false, &mut db.data_mut()[t * k * n..(t + 1) * k * n], false);
                }
            }
        }
    }
    vec![da, db]
}

// ---------------------------------------------------------------------------
// helpers

fn map(x: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    let data = x.data().iter().map(|&v| f(v)).collect();
    Tensor::new(x.shape().to_vec(), data).expect("same shape")
}

fn zip(x: &Tensor, y: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = x.data().iter().zip(y.data()).map(|(&a, &b)| f(a, b)).collect();
    Tensor::new(x.shape().to_vec(), data).expect("same shape")
}

fn check_same(op: &'static str, a: &Tensor, b: &Tensor) -> Result<(), NumError> {
    if a.same_shape(b) {
        Ok(())
    } else {
        Err(shape_err(op, format!("{:?} vs {:?}", a.shape(), b.shape())))
    }
}

/// Validates `y` as broadcastable onto `x` and returns the repeat period.
fn broadcast_period(op: &'static str, x: &Tensor, y: &Tensor) -> Result<usize, NumError> {
    if y.len() == 1 {
        return Ok(1);
    }
    let (sx, sy) = (x.shape(), y.shape());
    if sy.len() <= sx.len() && sx[sx.len() - sy.len()..] == *sy {
        Ok(y.len())
    } else {
        Err(shape_err(op, format!("cannot broadcast {sy:?} onto {sx:?}")))
    }
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
pub(crate) fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

pub(crate) fn sigmoid_f64(x: f64) -> f64 {
    sigmoid(x)
}

// ---------------------------------------------------------------------------
// forward

pub(crate) fn forward(op: &Op, ins: &[&Tensor]) -> Result<Tensor, NumError> {
    let out = match op {
        Op::Input | Op::Param => unreachable!("leaves are not recomputed"),
        Op::MatMul => matmul_forward(ins[0], ins[1])?,
        Op::Add => {
            check_same("add", ins[0], ins[1])?;
            zip(ins[0], ins[1], |a, b| a + b)
        }
        Op::Sub => {
            check_same("sub", ins[0], ins[1])?;
            zip(ins[0], ins[1], |a, b| a - b)
        }
        Op::Mul => {
            check_same("mul", ins[0], ins[1])?;
            zip(ins[0], ins[1], |a, b| a * b)
        }
        Op::AddBroadcast | Op::MulBroadcast => {
            let (x, y) = (ins[0], ins[1]);
            let p = broadcast_period(op.name(), x, y)?;
            let yd = y.data();
            let mut out = x.clone();
            let add = matches!(op, Op::AddBroadcast);
            for (i, v) in out.data_mut().iter_mut().enumerate() {
                let w = yd[i % p];
                if add {
                    *v += w
                } else {
                    *v *= w
                }
            }
            out
        }
        Op::Scale(c) => map(ins[0], |v| v * c),
        Op::Relu => map(ins[0], |v| v.max(0.0)),
        Op::Sigmoid => map(ins[0], sigmoid),
        Op::Softmax => {
            let x = ins[0];
            let d = x.last_dim();
            let mut out = x.clone();
            for row in out.data_mut().chunks_mut(d) {
                let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut s = 0.0;
                for v in row.iter_mut() {
                    *v = (*v - mx).exp();
                    s += *v;
                }
                for v in row.iter_mut() {
                    *v /= s;
                }
            }
            out
        }
        Op::SumAll => Tensor::scalar(ins[0].sum()),
        Op::MeanAll => {
            let x = ins[0];
            if x.is_empty() {
                return Err(shape_err("mean", "empty tensor".into()));
            }
            Tensor::scalar(x.sum() / x.len() as f64)
        }
        Op::SumAxis(axis) => {
            let x = ins[0];
            if *axis >= x.rank() {
                return Err(shape_err("sum_axis", format!("axis {axis} of {:?}", x.shape())));
            }
            let (outer, n, inner) = split_axis(x.shape(), *axis);
            let mut shape = x.shape().to_vec();
            shape.remove(*axis);
            if shape.is_empty() {
                shape.push(1);
            }
            let mut out = Tensor::zeros(&shape);
            let (xd, od) = (x.data(), out.data_mut());
            for o in 0..outer {
                for j in 0..n {
                    let src = &xd[(o * n + j) * inner..(o * n + j + 1) * inner];
                    let dst = &mut od[o * inner..(o + 1) * inner];
                    for (d, s) in dst.iter_mut().zip(src) {
                        *d += s;
                    }
                }
            }
            out
        }
        Op::Square => map(ins[0], |v| v * v),
        Op::Sqrt => {
            if ins[0].data().iter().any(|&v| v < 0.0) {
                return Err(NumError::NonFinite { op: "sqrt" });
            }
            map(ins[0], f64::sqrt)
        }
        Op::Concat => {
            let lead = &ins[0].shape()[..ins[0].rank() - 1];
            let rows = ins[0].len() / ins[0].last_dim().max(1);
            for t in ins {
                if t.rank() != ins[0].rank() || &t.shape()[..t.rank() - 1] != lead {
                    return Err(shape_err("concat", format!("{:?} vs {:?}", t.shape(), ins[0].shape())));
                }
            }
            let total: usize = ins.iter().map(|t| t.last_dim()).sum();
            let mut data = Vec::with_capacity(rows * total);
            for r in 0..rows {
                for t in ins {
                    data.extend_from_slice(t.row(r));
                }
            }
            let mut shape = lead.to_vec();
            shape.push(total);
            Tensor::new(shape, data)?
        }
        Op::MaskMul(mask) | Op::Dropout(mask) => {
            check_same(op.name(), ins[0], mask)?;
            zip(ins[0], mask, |a, m| a * m)
        }
        Op::Gather(idx) => {
            let t = ins[0];
            if t.rank() != 2 {
                return Err(shape_err("gather", format!("table must be rank 2, got {:?}", t.shape())));
            }
            let (m, d) = (t.shape()[0], t.shape()[1]);
            let mut data = Vec::with_capacity(idx.len() * d);
            for &i in idx {
                if i >= m {
                    return Err(shape_err("gather", format!("index {i} out of {m} rows")));
                }
                data.extend_from_slice(&t.data()[i * d..(i + 1) * d]);
            }
            Tensor::new(vec![idx.len(), d], data)?
        }
        Op::Reshape(shape) => ins[0].clone().reshaped(shape)?,
        Op::TransposeLast2 => {
            let x = ins[0];
            let r = x.rank();
            if r < 2 {
                return Err(shape_err("transpose", format!("{:?}", x.shape())));
            }
            let (m, n) = (x.shape()[r - 2], x.shape()[r - 1]);
            let bt = x.len() / (m * n).max(1);
            let mut shape = x.shape().to_vec();
            shape.swap(r - 2, r - 1);
            let mut out = Tensor::zeros(&shape);
            transpose_into(x.data(), out.data_mut(), bt, m, n);
            out
        }
        Op::SegmentSum(lengths) => {
            let x = ins[0];
            let d = x.last_dim();
            let rows = x.len() / d.max(1);
            if lengths.iter().sum::<usize>() != rows {
                return Err(shape_err("segment_sum", format!("segments {lengths:?} over {rows} rows")));
            }
            let mut out = Tensor::zeros(&[lengths.len(), d]);
            let mut r = 0;
            for (s, &len) in lengths.iter().enumerate() {
                let dst = &mut out.data_mut()[s * d..(s + 1) * d];
                for _ in 0..len {
                    for (o, v) in dst.iter_mut().zip(x.row(r)) {
                        *o += v;
                    }
                    r += 1;
                }
            }
            out
        }
        Op::L2NormalizeRows => {
            let x = ins[0];
            let d = x.last_dim();
            let mut out = x.clone();
            for row in out.data_mut().chunks_mut(d) {
                let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                if n <= NORM_FLOOR {
                    row.iter_mut().for_each(|v| *v = 0.0);
                } else {
                    row.iter_mut().for_each(|v| *v /= n);
                }
            }
            out
        }
        Op::LayerNorm(eps) => {
            let x = ins[0];
            let d = x.last_dim();
            let mut out = x.clone();
            for row in out.data_mut().chunks_mut(d) {
                let mu = row.iter().sum::<f64>() / d as f64;
                let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / d as f64;
                let inv = 1.0 / (var + eps).sqrt();
                row.iter_mut().for_each(|v| *v = (*v - mu) * inv);
            }
            out
        }
        Op::BceWithLogits(labels) => {
            let z = ins[0];
            if z.len() != labels.len() || z.is_empty() {
                return Err(shape_err("bce_with_logits", format!("{} logits, {} labels", z.len(), labels.len())));
            }
            let total: f64 = z
                .data()
                .iter()
                .zip(labels)
                .map(|(&z, &y)| softplus(z) - y * z)
                .sum();
            Tensor::scalar(total / labels.len() as f64)
        }
    };
    if !out.all_finite() {
        return Err(NumError::NonFinite { op: op.name() });
    }
    Ok(out)
}

fn transpose_into(src: &[f64], dst: &mut [f64], bt: usize, m: usize, n: usize) {
    for t in 0..bt {
        let s = &src[t * m * n..(t + 1) * m * n];
        let d = &mut dst[t * m * n..(t + 1) * m * n];
        for i in 0..m {
            for j in 0..n {
                d[j * m + i] = s[i * n + j];
            }
        }
    }
}

// ---------------------------------------------------------------------------
// adjoints

/// Returns the adjoint for each input whose `need` flag is set.
pub(crate) fn backward(
    op: &Op,
    ins: &[&Tensor],
    out: &Tensor,
    g: &Tensor,
    need: &[bool],
) -> Vec<Option<Tensor>> {
    let one = |t: Tensor| vec![need[0].then_some(t)];
    match op {
        Op::Input | Op::Param => vec![],
        Op::MatMul => matmul_backward(ins[0], ins[1], g, need),
        Op::Add => vec![need[0].then(|| g.clone()), need[1].then(|| g.clone())],
        Op::Sub => vec![need[0].then(|| g.clone()), need[1].then(|| map(g, |v| -v))],
        Op::Mul => vec![
            need[0].then(|| zip(g, ins[1], |a, b| a * b)),
            need[1].then(|| zip(g, ins[0], |a, b| a * b)),
        ],
        Op::AddBroadcast | Op::MulBroadcast => {
            let (x, y) = (ins[0], ins[1]);
            let p = if y.len() == 1 { 1 } else { y.len() };
            let add = matches!(op, Op::AddBroadcast);
            let dx = need[0].then(|| {
                if add {
                    g.clone()
                } else {
                    let yd = y.data();
                    let mut dx = g.clone();
                    dx.data_mut().iter_mut().enumerate().for_each(|(i, v)| *v *= yd[i % p]);
                    dx
                }
            });
            let dy = need[1].then(|| {
                let mut acc = vec![0.0; p];
                for (i, gv) in g.data().iter().enumerate() {
                    acc[i % p] += if add { *gv } else { gv * x.data()[i] };
                }
                Tensor::new(y.shape().to_vec(), acc).expect("broadcast shape")
            });
            vec![dx, dy]
        }
        Op::Scale(c) => one(map(g, |v| v * c)),
        Op::Relu => one(zip(g, ins[0], |gv, x| if x > 0.0 { gv } else { 0.0 })),
        Op::Sigmoid => one(zip(g, out, |gv, s| gv * s * (1.0 - s))),
        Op::Softmax => {
            let d = out.last_dim();
            let mut dx = Tensor::zeros(out.shape());
            for ((dr, yr), gr) in dx
                .data_mut()
                .chunks_mut(d)
                .zip(out.data().chunks(d))
                .zip(g.data().chunks(d))
            {
                let dot: f64 = yr.iter().zip(gr).map(|(y, g)| y * g).sum();
                for ((o, y), gv) in dr.iter_mut().zip(yr).zip(gr) {
                    *o = y * (gv - dot);
                }
            }
            one(dx)
        }
        Op::SumAll => one(Tensor::filled(ins[0].shape(), g.data()[0])),
        Op::MeanAll => one(Tensor::filled(ins[0].shape(), g.data()[0] / ins[0].len() as f64)),
        Op::SumAxis(axis) => {
            let x = ins[0];
            let (outer, n, inner) = split_axis(x.shape(), *axis);
            let mut dx = Tensor::zeros(x.shape());
            let (gd, dd) = (g.data(), dx.data_mut());
            for o in 0..outer {
                let src = &gd[o * inner..(o + 1) * inner];
                for j in 0..n {
                    dd[(o * n + j) * inner..(o * n + j + 1) * inner].copy_from_slice(src);
                }
            }
            one(dx)
        }
        Op::Square => one(zip(g, ins[0], |gv, x| 2.0 * x * gv)),
        Op::Sqrt => one(zip(g, out, |gv, s| gv * 0.5 / s)),
        Op::Concat => {
            let rows = out.len() / out.last_dim().max(1);
            let total = out.last_dim();
            let mut offset = 0;
            let mut grads = Vec::with_capacity(ins.len());
            for (t, &needed) in ins.iter().zip(need) {
                let d = t.last_dim();
                if needed {
                    let mut data = Vec::with_capacity(t.len());
                    for r in 0..rows {
                        data.extend_from_slice(&g.data()[r * total + offset..r * total + offset + d]);
                    }
                    grads.push(Some(Tensor::new(t.shape().to_vec(), data).expect("concat shape")));
                } else {
                    grads.push(None);
                }
                offset += d;
            }
            grads
        }
        Op::MaskMul(mask) | Op::Dropout(mask) => one(zip(g, mask, |gv, m| gv * m)),
        Op::Gather(idx) => {
            let t = ins[0];
            let d = t.shape()[1];
            let mut dt = Tensor::zeros(t.shape());
            let dd = dt.data_mut();
            for (r, &i) in idx.iter().enumerate() {
                let src = &g.data()[r * d..(r + 1) * d];
                for (o, v) in dd[i * d..(i + 1) * d].iter_mut().zip(src) {
                    *o += v;
                }
            }
            one(dt)
        }
        Op::Reshape(_) => one(g.clone().reshaped(ins[0].shape()).expect("reshape adjoint")),
        Op::TransposeLast2 => {
            let x = ins[0];
            let r = x.rank();
            let (m, n) = (x.shape()[r - 2], x.shape()[r - 1]);
            let bt = x.len() / (m * n).max(1);
            let mut dx = Tensor::zeros(x.shape());
            // g has shape [.., n, m]
            transpose_into(g.data(), dx.data_mut(), bt, n, m);
            one(dx)
        }
        Op::SegmentSum(lengths) => {
            let x = ins[0];
            let d = x.last_dim();
            let mut dx = Tensor::zeros(x.shape());
            let mut r = 0;
            for (s, &len) in lengths.iter().enumerate() {
                let src = &g.data()[s * d..(s + 1) * d];
                for _ in 0..len {
                    dx.data_mut()[r * d..(r + 1) * d].copy_from_slice(src);
                    r += 1;
                }
            }
            one(dx)
        }
        Op::L2NormalizeRows => {
            let x = ins[0];
            let d = x.last_dim();
            let mut dx = Tensor::zeros(x.shape());
            for (((dr, xr), ur), gr) in dx
                .data_mut()
                .chunks_mut(d)
                .zip(x.data().chunks(d))
                .zip(out.data().chunks(d))
                .zip(g.data().chunks(d))
            {
                let n = xr.iter().map(|v| v * v).sum::<f64>().sqrt();
                if n <= NORM_FLOOR {
                    continue;
                }
                let ug: f64 = ur.iter().zip(gr).map(|(u, g)| u * g).sum();
                for ((o, u), gv) in dr.iter_mut().zip(ur).zip(gr) {
                    *o = (gv - u * ug) / n;
                }
            }
            one(dx)
        }
        Op::LayerNorm(eps) => {
            let x = ins[0];
            let d = x.last_dim();
            let mut dx = Tensor::zeros(x.shape());
            for (((dr, xr), yr), gr) in dx
                .data_mut()
                .chunks_mut(d)
                .zip(x.data().chunks(d))
                .zip(out.data().chunks(d))
                .zip(g.data().chunks(d))
            {
                let mu = xr.iter().sum::<f64>() / d as f64;
                let var = xr.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / d as f64;
                let inv = 1.0 / (var + eps).sqrt();
                let gm = gr.iter().sum::<f64>() / d as f64;
                let gy = gr.iter().zip(yr).map(|(g, y)| g * y).sum::<f64>() / d as f64;
                for ((o, y), gv) in dr.iter_mut().zip(yr).zip(gr) {
                    *o = inv * (gv - gm - y * gy);
                }
            }
            one(dx)
        }
        Op::BceWithLogits(labels) => {
            let n = labels.len() as f64;
            let scale = g.data()[0] / n;
            let data = ins[0]
                .data()
                .iter()
                .zip(labels)
                .map(|(&z, &y)| (sigmoid(z) - y) * scale)
                .collect();
            one(Tensor::new(ins[0].shape().to_vec(), data).expect("bce shape"))
        }
    }
}
