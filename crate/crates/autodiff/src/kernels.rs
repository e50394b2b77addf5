//! Forward kernels and vector–Jacobian products for every primitive.

use crate::error::{AutodiffError, Result};
use crate::graph::PrimitiveKind;
use crate::tensor::Tensor;

/// Forward result: output tensor plus optional saved indices (max-pool argmax).
pub(crate) type Forward = (Tensor, Option<Vec<usize>>);

fn arity(
    op: &'static str,
    inputs: &[&Tensor],
    ok: impl Fn(usize) -> bool,
    expected: usize,
) -> Result<()> {
    if ok(inputs.len()) {
        Ok(())
    } else {
        Err(AutodiffError::Arity {
            op,
            expected,
            actual: inputs.len(),
        })
    }
}

fn out(shape: Vec<usize>, data: Vec<f64>) -> Tensor {
    Tensor {
        shape,
        data,
        requires_grad: false,
        grad: None,
    }
}

/// `rhs` broadcasts over `lhs` when its shape equals a trailing suffix of `lhs`'s shape.
fn broadcast_ok(lhs: &[usize], rhs: &[usize]) -> bool {
    rhs.len() <= lhs.len() && lhs[lhs.len() - rhs.len()..] == *rhs
}

pub(crate) fn forward(kind: &PrimitiveKind, inputs: &[&Tensor]) -> Result<Forward> {
    use PrimitiveKind::*;
    match kind {
        Add | Sub | Mul => {
            let op = kind.name();
            arity(op, inputs, |n| n == 2, 2)?;
            let (a, b) = (inputs[0], inputs[1]);
            if !broadcast_ok(&a.shape, &b.shape) {
                return Err(AutodiffError::ShapeMismatch {
                    op,
                    lhs: a.shape.clone(),
                    rhs: b.shape.clone(),
                });
            }
            let m = b.data.len();
            let data = a
                .data
                .iter()
                .enumerate()
                .map(|(i, &x)| {
                    let y = b.data[i % m];
                    match kind {
                        Add => x + y,
                        Sub => x - y,
                        _ => x * y,
                    }
                })
                .collect();
            Ok((out(a.shape.clone(), data), None))
        }
        MatMul => {
            arity("matmul", inputs, |n| n == 2, 2)?;
            let (a, b) = (inputs[0], inputs[1]);
            if a.rank() != 2 || b.rank() != 2 || a.shape[1] != b.shape[0] {
                return Err(AutodiffError::ShapeMismatch {
                    op: "matmul",
                    lhs: a.shape.clone(),
                    rhs: b.shape.clone(),
                });
            }
            let (m, k, n) = (a.shape[0], a.shape[1], b.shape[1]);
            let mut c = vec![0.0; m * n];
            for i in 0..m {
                let row = &mut c[i * n..(i + 1) * n];
                for p in 0..k {
                    let av = a.data[i * k + p];
                    if av == 0.0 {
                        continue;
                    }
                    let brow = &b.data[p * n..(p + 1) * n];
                    for (cv, &bv) in row.iter_mut().zip(brow) {
                        *cv += av * bv;
                    }
                }
            }
            Ok((out(vec![m, n], c), None))
        }
        Conv2d { stride, padding } => conv2d_forward(inputs, *stride, *padding),
        MaxPool2d { size } => maxpool_forward(inputs, *size),
        Relu | Sigmoid | Log { .. } | Scale { .. } => {
            arity(kind.name(), inputs, |n| n == 1, 1)?;
            let x = inputs[0];
            let data = x
                .data
                .iter()
                .map(|&v| match kind {
                    Relu => v.max(0.0),
                    Sigmoid => sigmoid(v),
                    Log { floor } => v.max(*floor).ln(),
                    Scale { factor } => v * factor,
                    _ => unreachable!(),
                })
                .collect();
            Ok((out(x.shape.clone(), data), None))
        }
        Sum => {
            arity("sum", inputs, |n| n == 1, 1)?;
            Ok((Tensor::scalar(inputs[0].data.iter().sum()), None))
        }
        Reshape { shape } => {
            arity("reshape", inputs, |n| n == 1, 1)?;
            let x = inputs[0];
            if shape.iter().product::<usize>() != x.numel() || shape.contains(&0) {
                return Err(AutodiffError::ShapeMismatch {
                    op: "reshape",
                    lhs: x.shape.clone(),
                    rhs: shape.clone(),
                });
            }
            Ok((out(shape.clone(), x.data.clone()), None))
        }
        Slice { axis, indices } => {
            arity("slice", inputs, |n| n == 1, 1)?;
            let x = inputs[0];
            if *axis >= x.rank() {
                return Err(AutodiffError::InvalidOperand {
                    op: "slice",
                    shape: x.shape.clone(),
                    reason: format!("axis {axis} out of range"),
                });
            }
            let extent = x.shape[*axis];
            if indices.is_empty() || indices.iter().any(|&i| i >= extent) {
                return Err(AutodiffError::InvalidOperand {
                    op: "slice",
                    shape: x.shape.clone(),
                    reason: format!("indices must be non-empty and below {extent} on axis {axis}"),
                });
            }
            let (outer, inner) = split_axis(&x.shape, *axis);
            let mut data = Vec::with_capacity(outer * indices.len() * inner);
            for o in 0..outer {
                for &i in indices {
                    let start = (o * extent + i) * inner;
                    data.extend_from_slice(&x.data[start..start + inner]);
                }
            }
            let mut shape = x.shape.clone();
            shape[*axis] = indices.len();
            Ok((out(shape, data), None))
        }
        Concat { axis } => {
            if inputs.is_empty() {
                return Err(AutodiffError::Arity {
                    op: "concat",
                    expected: 1,
                    actual: 0,
                });
            }
            let first = inputs[0];
            if *axis >= first.rank() {
                return Err(AutodiffError::InvalidOperand {
                    op: "concat",
                    shape: first.shape.clone(),
                    reason: format!("axis {axis} out of range"),
                });
            }
            for t in &inputs[1..] {
                let compatible = t.rank() == first.rank()
                    && t.shape
                        .iter()
                        .zip(&first.shape)
                        .enumerate()
                        .all(|(d, (a, b))| d == *axis || a == b);
                if !compatible {
                    return Err(AutodiffError::ShapeMismatch {
                        op: "concat",
                        lhs: first.shape.clone(),
                        rhs: t.shape.clone(),
                    });
                }
            }
            let (outer, inner) = split_axis(&first.shape, *axis);
            let total: usize = inputs.iter().map(|t| t.shape[*axis]).sum();
            let mut data = Vec::with_capacity(outer * total * inner);
            for o in 0..outer {
                for t in inputs {
                    let block = t.shape[*axis] * inner;
                    data.extend_from_slice(&t.data[o * block..(o + 1) * block]);
                }
            }
            let mut shape = first.shape.clone();
            shape[*axis] = total;
            Ok((out(shape, data), None))
        }
    }
}

/// Computes input cotangents given the output cotangent `g`.
/// Only inputs with `need[i]` set receive a buffer.
pub(crate) fn vjp(
    kind: &PrimitiveKind,
    inputs: &[&Tensor],
    output: &Tensor,
    saved: Option<&[usize]>,
    g: &[f64],
    need: &[bool],
) -> Vec<Option<Vec<f64>>> {
    use PrimitiveKind::*;
    let mut grads: Vec<Option<Vec<f64>>> = vec![None; inputs.len()];
    match kind {
        Add | Sub | Mul => {
            let (a, b) = (inputs[0], inputs[1]);
            let m = b.data.len();
            if need[0] {
                grads[0] = Some(match kind {
                    Mul => g
                        .iter()
                        .enumerate()
                        .map(|(i, &gi)| gi * b.data[i % m])
                        .collect(),
                    _ => g.to_vec(),
                });
            }
            if need[1] {
                let mut gb = vec![0.0; m];
                for (i, &gi) in g.iter().enumerate() {
                    gb[i % m] += match kind {
                        Add => gi,
                        Sub => -gi,
                        _ => gi * a.data[i],
                    };
                }
                grads[1] = Some(gb);
            }
        }
        MatMul => {
            let (a, b) = (inputs[0], inputs[1]);
            let (m, k, n) = (a.shape[0], a.shape[1], b.shape[1]);
            if need[0] {
                let mut ga = vec![0.0; m * k];
                for i in 0..m {
                    let grow = &g[i * n..(i + 1) * n];
                    for p in 0..k {
                        let brow = &b.data[p * n..(p + 1) * n];
                        ga[i * k + p] = grow.iter().zip(brow).map(|(x, y)| x * y).sum();
                    }
                }
                grads[0] = Some(ga);
            }
            if need[1] {
                let mut gb = vec![0.0; k * n];
                for i in 0..m {
                    let grow = &g[i * n..(i + 1) * n];
                    for p in 0..k {
                        let av = a.data[i * k + p];
                        if av == 0.0 {
                            continue;
                        }
                        for (gv, &go) in gb[p * n..(p + 1) * n].iter_mut().zip(grow) {
                            *gv += av * go;
                        }
                    }
                }
                grads[1] = Some(gb);
            }
        }
        Conv2d { stride, padding } => {
            return conv2d_vjp(inputs, g, *stride, *padding, need);
        }
        MaxPool2d { .. } => {
            if need[0] {
                let idx = saved.expect("max-pool argmax saved at forward");
                let mut gx = vec![0.0; inputs[0].numel()];
                for (&i, &gi) in idx.iter().zip(g) {
                    gx[i] += gi;
                }
                grads[0] = Some(gx);
            }
        }
        Relu => {
            if need[0] {
                grads[0] = Some(
                    inputs[0]
                        .data
                        .iter()
                        .zip(g)
                        .map(|(&x, &gi)| if x > 0.0 { gi } else { 0.0 })
                        .collect(),
                );
            }
        }
        Sigmoid => {
            if need[0] {
                grads[0] = Some(
                    output
                        .data
                        .iter()
                        .zip(g)
                        .map(|(&y, &gi)| gi * y * (1.0 - y))
                        .collect(),
                );
            }
        }
        Log { floor } => {
            if need[0] {
                grads[0] = Some(
                    inputs[0]
                        .data
                        .iter()
                        .zip(g)
                        .map(|(&x, &gi)| if x > *floor { gi / x } else { 0.0 })
                        .collect(),
                );
            }
        }
        Scale { factor } => {
            if need[0] {
                grads[0] = Some(g.iter().map(|gi| gi * factor).collect());
            }
        }
        Sum => {
            if need[0] {
                grads[0] = Some(vec![g[0]; inputs[0].numel()]);
            }
        }
        Reshape { .. } => {
            if need[0] {
                grads[0] = Some(g.to_vec());
            }
        }
        Slice { axis, indices } => {
            if need[0] {
                let x = inputs[0];
                let extent = x.shape[*axis];
                let (outer, inner) = split_axis(&x.shape, *axis);
                let mut gx = vec![0.0; x.numel()];
                let mut src = 0;
                for o in 0..outer {
                    for &i in indices {
                        let start = (o * extent + i) * inner;
                        for (dst, &gv) in gx[start..start + inner]
                            .iter_mut()
                            .zip(&g[src..src + inner])
                        {
                            *dst += gv;
                        }
                        src += inner;
                    }
                }
                grads[0] = Some(gx);
            }
        }
        Concat { axis } => {
            let (outer, inner) = split_axis(&inputs[0].shape, *axis);
            let total: usize = inputs.iter().map(|t| t.shape[*axis]).sum();
            let mut offset = 0;
            for (j, t) in inputs.iter().enumerate() {
                let block = t.shape[*axis] * inner;
                if need[j] {
                    let mut gt = Vec::with_capacity(t.numel());
                    for o in 0..outer {
                        let start = o * total * inner + offset;
                        gt.extend_from_slice(&g[start..start + block]);
                    }
                    grads[j] = Some(gt);
                }
                offset += block;
            }
        }
    }
    grads
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, inner)
}

/// Output positions `o` in `[lo, hi)` whose input coordinate `o*stride + k - pad` lies in `[0, len)`.
fn valid_range(
    out_len: usize,
    in_len: usize,
    k: usize,
    stride: usize,
    pad: usize,
) -> (usize, usize) {
    let lo = if pad > k {
        (pad - k).div_ceil(stride)
    } else {
        0
    };
    let hi = if in_len + pad > k {
        (in_len + pad - k).div_ceil(stride).min(out_len)
    } else {
        0
    };
    (lo, hi.max(lo))
}

struct ConvDims {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    o: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
}

fn conv_dims(inputs: &[&Tensor], stride: usize, padding: usize) -> Result<ConvDims> {
    arity("conv2d", inputs, |n| n == 2 || n == 3, 2)?;
    let (x, k) = (inputs[0], inputs[1]);
    if !(1..=2).contains(&stride) {
        return Err(AutodiffError::InvalidOperand {
            op: "conv2d",
            shape: k.shape.clone(),
            reason: format!("stride {stride} unsupported (1 or 2)"),
        });
    }
    if x.rank() != 4 || k.rank() != 4 || x.shape[1] != k.shape[1] {
        return Err(AutodiffError::ShapeMismatch {
            op: "conv2d",
            lhs: x.shape.clone(),
            rhs: k.shape.clone(),
        });
    }
    let (n, c, h, w) = (x.shape[0], x.shape[1], x.shape[2], x.shape[3]);
    let (o, kh, kw) = (k.shape[0], k.shape[2], k.shape[3]);
    if h + 2 * padding < kh || w + 2 * padding < kw {
        return Err(AutodiffError::ShapeMismatch {
            op: "conv2d",
            lhs: x.shape.clone(),
            rhs: k.shape.clone(),
        });
    }
    if let Some(b) = inputs.get(2) {
        if b.shape != [o] {
            return Err(AutodiffError::ShapeMismatch {
                op: "conv2d",
                lhs: k.shape.clone(),
                rhs: b.shape.clone(),
            });
        }
    }
    Ok(ConvDims {
        n,
        c,
        h,
        w,
        o,
        kh,
        kw,
        ho: (h + 2 * padding - kh) / stride + 1,
        wo: (w + 2 * padding - kw) / stride + 1,
    })
}

fn conv2d_forward(inputs: &[&Tensor], stride: usize, padding: usize) -> Result<Forward> {
    let d = conv_dims(inputs, stride, padding)?;
    let (x, k) = (inputs[0], inputs[1]);
    let bias = inputs.get(2);
    let plane = d.ho * d.wo;
    let mut y = vec![0.0; d.n * d.o * plane];
    for n in 0..d.n {
        for o in 0..d.o {
            let yp = &mut y[(n * d.o + o) * plane..(n * d.o + o + 1) * plane];
            if let Some(b) = bias {
                yp.fill(b.data[o]);
            }
            for c in 0..d.c {
                let xp = &x.data[(n * d.c + c) * d.h * d.w..(n * d.c + c + 1) * d.h * d.w];
                for i in 0..d.kh {
                    let (oh_lo, oh_hi) = valid_range(d.ho, d.h, i, stride, padding);
                    for j in 0..d.kw {
                        let wv = k.data[((o * d.c + c) * d.kh + i) * d.kw + j];
                        let (ow_lo, ow_hi) = valid_range(d.wo, d.w, j, stride, padding);
                        for oh in oh_lo..oh_hi {
                            let ih = oh * stride + i - padding;
                            let xrow = &xp[ih * d.w..(ih + 1) * d.w];
                            let yrow = &mut yp[oh * d.wo..(oh + 1) * d.wo];
                            if stride == 1 {
                                let off = ow_lo + j - padding;
                                let xs = &xrow[off..off + (ow_hi - ow_lo)];
                                for (yv, &xv) in yrow[ow_lo..ow_hi].iter_mut().zip(xs) {
                                    *yv += wv * xv;
                                }
                            } else {
                                for ow in ow_lo..ow_hi {
                                    yrow[ow] += wv * xrow[ow * stride + j - padding];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Ok((out(vec![d.n, d.o, d.ho, d.wo], y), None))
}

fn conv2d_vjp(
    inputs: &[&Tensor],
    g: &[f64],
    stride: usize,
    padding: usize,
    need: &[bool],
) -> Vec<Option<Vec<f64>>> {
    let d = conv_dims(inputs, stride, padding).expect("shapes validated at forward");
    let (x, k) = (inputs[0], inputs[1]);
    let plane = d.ho * d.wo;
    let mut gx = need[0].then(|| vec![0.0; x.numel()]);
    let mut gk = need[1].then(|| vec![0.0; k.numel()]);
    for n in 0..d.n {
        for o in 0..d.o {
            let gp = &g[(n * d.o + o) * plane..(n * d.o + o + 1) * plane];
            for c in 0..d.c {
                let base = (n * d.c + c) * d.h * d.w;
                for i in 0..d.kh {
                    let (oh_lo, oh_hi) = valid_range(d.ho, d.h, i, stride, padding);
                    for j in 0..d.kw {
                        let widx = ((o * d.c + c) * d.kh + i) * d.kw + j;
                        let wv = k.data[widx];
                        let (ow_lo, ow_hi) = valid_range(d.wo, d.w, j, stride, padding);
                        let mut acc = 0.0;
                        for oh in oh_lo..oh_hi {
                            let ih = oh * stride + i - padding;
                            let grow = &gp[oh * d.wo..(oh + 1) * d.wo];
                            for ow in ow_lo..ow_hi {
                                let xi = base + ih * d.w + ow * stride + j - padding;
                                let gv = grow[ow];
                                acc += gv * x.data[xi];
                                if let Some(gx) = gx.as_mut() {
                                    gx[xi] += wv * gv;
                                }
                            }
                        }
                        if let Some(gk) = gk.as_mut() {
                            gk[widx] += acc;
                        }
                    }
                }
            }
        }
    }
    let mut grads = vec![gx, gk];
    if inputs.len() == 3 {
        grads.push(need[2].then(|| {
            let mut gb = vec![0.0; d.o];
            for n in 0..d.n {
                for (o, gbv) in gb.iter_mut().enumerate() {
                    *gbv += g[(n * d.o + o) * plane..(n * d.o + o + 1) * plane]
                        .iter()
                        .sum::<f64>();
                }
            }
            gb
        }));
    }
    grads
}

fn maxpool_forward(inputs: &[&Tensor], size: usize) -> Result<Forward> {
    arity("maxpool2d", inputs, |n| n == 1, 1)?;
    let x = inputs[0];
    if x.rank() != 4 || size == 0 || x.shape[2] < size || x.shape[3] < size {
        return Err(AutodiffError::InvalidOperand {
            op: "maxpool2d",
            shape: x.shape.clone(),
            reason: format!("needs rank-4 input with spatial extents >= window {size}"),
        });
    }
    let (n, c, h, w) = (x.shape[0], x.shape[1], x.shape[2], x.shape[3]);
    let (ho, wo) = (h / size, w / size);
    let mut y = Vec::with_capacity(n * c * ho * wo);
    let mut arg = Vec::with_capacity(n * c * ho * wo);
    for p in 0..n * c {
        let base = p * h * w;
        for oh in 0..ho {
            for ow in 0..wo {
                let mut best = base + oh * size * w + ow * size;
                for i in 0..size {
                    for j in 0..size {
                        let idx = base + (oh * size + i) * w + ow * size + j;
                        if x.data[idx] > x.data[best] {
                            best = idx;
                        }
                    }
                }
                y.push(x.data[best]);
                arg.push(best);
            }
        }
    }
    Ok((out(vec![n, c, ho, wo], y), Some(arg)))
}
