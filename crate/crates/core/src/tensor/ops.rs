//! Tensor operations with recorded gradients.

use super::{numel_of, Tensor, TensorError};

/// How two elementwise operands conform.
enum Conform {
    Equal,
    /// rhs is a suffix of lhs (rhs tiles across lhs's leading axes).
    RhsTiles,
    /// lhs is a suffix of rhs.
    LhsTiles,
}

fn conform(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Result<Conform, TensorError> {
    if lhs == rhs {
        return Ok(Conform::Equal);
    }
    if lhs.len() > rhs.len() && lhs.ends_with(rhs) {
        return Ok(Conform::RhsTiles);
    }
    if rhs.len() > lhs.len() && rhs.ends_with(lhs) {
        return Ok(Conform::LhsTiles);
    }
    Err(TensorError::ShapeMismatch { op, lhs: lhs.to_vec(), rhs: rhs.to_vec() })
}

/// (outer, extent, inner) block sizes around `axis`.
fn axis_blocks(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer: usize = shape[..axis].iter().product();
    let extent = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    (outer, extent, inner)
}

fn check_axis(op: &'static str, shape: &[usize], axis: usize) -> Result<(), TensorError> {
    if axis >= shape.len() {
        return Err(TensorError::AxisOutOfRange { op, axis, shape: shape.to_vec() });
    }
    Ok(())
}

// Raw 2-D kernels used by matmul forward and backward.
fn mm_nn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                orow[j] += av * brow[j];
            }
        }
    }
}

/// out[m,n] += a[m,k] * b[n,k]^T
fn mm_nt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            let mut s = 0.0;
            for p in 0..k {
                s += arow[p] * brow[p];
            }
            out[i * n + j] += s;
        }
    }
}

/// out[m,n] += a[k,m]^T * b[k,n]
fn mm_tn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for p in 0..k {
        let arow = &a[p * m..(p + 1) * m];
        let brow = &b[p * n..(p + 1) * n];
        for i in 0..m {
            let av = arow[i];
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                orow[j] += av * brow[j];
            }
        }
    }
}

impl Tensor {
    fn binary(
        &self,
        other: &Tensor,
        op: &'static str,
        fwd: impl Fn(f64, f64) -> f64,
        // (a, b, grad) -> (da, db) for one element pair
        bwd: impl Fn(f64, f64, f64) -> (f64, f64) + 'static,
    ) -> Result<Tensor, TensorError> {
        let plan = conform(op, self.shape(), other.shape())?;
        let (out_shape, a_n, b_n) = match plan {
            Conform::Equal | Conform::RhsTiles => {
                (self.shape().to_vec(), self.numel(), other.numel())
            }
            Conform::LhsTiles => (other.shape().to_vec(), self.numel(), other.numel()),
        };
        let total = numel_of(&out_shape);
        let a_data = self.to_vec();
        let b_data = other.to_vec();
        let mut out = Vec::with_capacity(total);
        for i in 0..total {
            out.push(fwd(a_data[i % a_n], b_data[i % b_n]));
        }
        let a = self.clone();
        let b = other.clone();
        Ok(Tensor::new_node(
            out_shape,
            out,
            vec![self.clone(), other.clone()],
            Box::new(move |g| {
                let mut da = vec![0.0; a_n];
                let mut db = vec![0.0; b_n];
                for (i, gi) in g.iter().enumerate() {
                    let (dai, dbi) = bwd(a_data[i % a_n], b_data[i % b_n], *gi);
                    da[i % a_n] += dai;
                    db[i % b_n] += dbi;
                }
                if a.requires_grad() {
                    a.accumulate_grad(&da);
                }
                if b.requires_grad() {
                    b.accumulate_grad(&db);
                }
            }),
        ))
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor, TensorError> {
        self.binary(other, "add", |x, y| x + y, |_, _, g| (g, g))
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor, TensorError> {
        self.binary(other, "sub", |x, y| x - y, |_, _, g| (g, -g))
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor, TensorError> {
        self.binary(other, "mul", |x, y| x * y, |x, y, g| (g * y, g * x))
    }

    pub fn div(&self, other: &Tensor) -> Result<Tensor, TensorError> {
        self.binary(other, "div", |x, y| x / y, |x, y, g| (g / y, -g * x / (y * y)))
    }

    fn unary(
        &self,
        fwd: impl Fn(f64) -> f64,
        // (x, out, grad) -> dx
        bwd: impl Fn(f64, f64, f64) -> f64 + 'static,
    ) -> Tensor {
        let x_data = self.to_vec();
        let out: Vec<f64> = x_data.iter().map(|&x| fwd(x)).collect();
        let out_saved = out.clone();
        let a = self.clone();
        Tensor::new_node(
            self.shape().to_vec(),
            out,
            vec![self.clone()],
            Box::new(move |g| {
                if a.requires_grad() {
                    let dx: Vec<f64> = g
                        .iter()
                        .enumerate()
                        .map(|(i, &gi)| bwd(x_data[i], out_saved[i], gi))
                        .collect();
                    a.accumulate_grad(&dx);
                }
            }),
        )
    }

    pub fn neg(&self) -> Tensor {
        self.unary(|x| -x, |_, _, g| -g)
    }

    pub fn exp(&self) -> Tensor {
        self.unary(f64::exp, |_, y, g| g * y)
    }

    pub fn log(&self) -> Tensor {
        self.unary(f64::ln, |x, _, g| g / x)
    }

    pub fn tanh(&self) -> Tensor {
        self.unary(f64::tanh, |_, y, g| g * (1.0 - y * y))
    }

    pub fn sigmoid(&self) -> Tensor {
        self.unary(|x| 1.0 / (1.0 + (-x).exp()), |_, y, g| g * y * (1.0 - y))
    }

    pub fn sqrt(&self) -> Tensor {
        self.unary(f64::sqrt, |_, y, g| g * 0.5 / y)
    }

    /// Gaussian error linear unit, tanh approximation:
    /// `0.5 * x * (1 + tanh(sqrt(2/pi) * (x + 0.044715 * x^3)))`.
    /// This is the one gelu formula used everywhere in the crate.
    pub fn gelu(&self) -> Tensor {
        const C: f64 = 0.044715;
        fn root_2_over_pi() -> f64 {
            (2.0 / std::f64::consts::PI).sqrt()
        }
        self.unary(
            |x| {
                let u = root_2_over_pi() * (x + C * x * x * x);
                0.5 * x * (1.0 + u.tanh())
            },
            |x, _, g| {
                let r = root_2_over_pi();
                let u = r * (x + C * x * x * x);
                let t = u.tanh();
                let du = r * (1.0 + 3.0 * C * x * x);
                g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du)
            },
        )
    }

    pub fn add_scalar(&self, c: f64) -> Tensor {
        self.unary(move |x| x + c, |_, _, g| g)
    }

    pub fn mul_scalar(&self, c: f64) -> Tensor {
        self.unary(move |x| x * c, move |_, _, g| g * c)
    }

    /// Matrix product over the last two axes. Leading axes must be equal, or
    /// one operand may be rank-2 and is then shared across the other's
    /// leading axes.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor, TensorError> {
        let (ls, rs) = (self.shape(), other.shape());
        if ls.len() < 2 || rs.len() < 2 {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: ls.to_vec(),
                rhs: rs.to_vec(),
            });
        }
        let (m, k) = (ls[ls.len() - 2], ls[ls.len() - 1]);
        let (k2, n) = (rs[rs.len() - 2], rs[rs.len() - 1]);
        let lb = &ls[..ls.len() - 2];
        let rb = &rs[..rs.len() - 2];
        let batch_ok = lb == rb || lb.is_empty() || rb.is_empty();
        if k != k2 || !batch_ok {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: ls.to_vec(),
                rhs: rs.to_vec(),
            });
        }
        let batch_shape: Vec<usize> = if lb.is_empty() { rb.to_vec() } else { lb.to_vec() };
        let batches = numel_of(&batch_shape);
        let lhs_batched = !lb.is_empty();
        let rhs_batched = !rb.is_empty();

        let a_data = self.to_vec();
        let b_data = other.to_vec();
        let mut out = vec![0.0; batches * m * n];
        for bi in 0..batches {
            let a_off = if lhs_batched { bi * m * k } else { 0 };
            let b_off = if rhs_batched { bi * k * n } else { 0 };
            mm_nn(
                &a_data[a_off..a_off + m * k],
                &b_data[b_off..b_off + k * n],
                m,
                k,
                n,
                &mut out[bi * m * n..(bi + 1) * m * n],
            );
        }
        let mut out_shape = batch_shape;
        out_shape.push(m);
        out_shape.push(n);

        let a = self.clone();
        let b = other.clone();
        Ok(Tensor::new_node(
            out_shape,
            out,
            vec![self.clone(), other.clone()],
            Box::new(move |g| {
                if a.requires_grad() {
                    // dA = G @ B^T per batch; shared A sums over batches.
                    let mut da = vec![0.0; a_data.len()];
                    for bi in 0..batches {
                        let a_off = if lhs_batched { bi * m * k } else { 0 };
                        let b_off = if rhs_batched { bi * k * n } else { 0 };
                        mm_nt(
                            &g[bi * m * n..(bi + 1) * m * n],
                            &b_data[b_off..b_off + k * n],
                            m,
                            n,
                            k,
                            &mut da[a_off..a_off + m * k],
                        );
                    }
                    a.accumulate_grad(&da);
                }
                if b.requires_grad() {
                    // dB = A^T @ G per batch; shared B sums over batches.
                    let mut db = vec![0.0; b_data.len()];
                    for bi in 0..batches {
                        let a_off = if lhs_batched { bi * m * k } else { 0 };
                        let b_off = if rhs_batched { bi * k * n } else { 0 };
                        mm_tn(
                            &a_data[a_off..a_off + m * k],
                            &g[bi * m * n..(bi + 1) * m * n],
                            k,
                            m,
                            n,
                            &mut db[b_off..b_off + k * n],
                        );
                    }
                    b.accumulate_grad(&db);
                }
            }),
        ))
    }

    /// Swap two axes.
    pub fn transpose(&self, ax0: usize, ax1: usize) -> Result<Tensor, TensorError> {
        check_axis("transpose", self.shape(), ax0)?;
        check_axis("transpose", self.shape(), ax1)?;
        let shape = self.shape().to_vec();
        let mut out_shape = shape.clone();
        out_shape.swap(ax0, ax1);

        let permute = move |src: &[f64], from: &[usize], a0: usize, a1: usize| -> Vec<f64> {
            let rank = from.len();
            let mut to = from.to_vec();
            to.swap(a0, a1);
            let mut to_strides = vec![1usize; rank];
            for i in (0..rank.saturating_sub(1)).rev() {
                to_strides[i] = to_strides[i + 1] * to[i + 1];
            }
            let mut out = vec![0.0; src.len()];
            let mut idx = vec![0usize; rank];
            for (flat, v) in src.iter().enumerate() {
                // unravel flat into `from` coordinates
                let mut rem = flat;
                for d in (0..rank).rev() {
                    idx[d] = rem % from[d];
                    rem /= from[d];
                }
                idx.swap(a0, a1);
                let mut dst = 0;
                for d in 0..rank {
                    dst += idx[d] * to_strides[d];
                }
                out[dst] = *v;
            }
            out
        };

        let out = permute(&self.data(), &shape, ax0, ax1);
        let a = self.clone();
        let out_shape_saved = out_shape.clone();
        Ok(Tensor::new_node(
            out_shape,
            out,
            vec![self.clone()],
            Box::new(move |g| {
                if a.requires_grad() {
                    a.accumulate_grad(&permute(g, &out_shape_saved, ax0, ax1));
                }
            }),
        ))
    }

    pub fn reshape(&self, new_shape: &[usize]) -> Result<Tensor, TensorError> {
        if numel_of(new_shape) != self.numel() || new_shape.contains(&0) {
            return Err(TensorError::ShapeMismatch {
                op: "reshape",
                lhs: self.shape().to_vec(),
                rhs: new_shape.to_vec(),
            });
        }
        let a = self.clone();
        Ok(Tensor::new_node(
            new_shape.to_vec(),
            self.to_vec(),
            vec![self.clone()],
            Box::new(move |g| {
                if a.requires_grad() {
                    a.accumulate_grad(g);
                }
            }),
        ))
    }

    /// Concatenate along `axis`. All parts must agree on every other axis.
    pub fn concat(parts: &[Tensor], axis: usize) -> Result<Tensor, TensorError> {
        if parts.is_empty() {
            return Err(TensorError::InvalidArgument("concat of zero tensors".into()));
        }
        let first = parts[0].shape().to_vec();
        check_axis("concat", &first, axis)?;
        let mut total_extent = 0;
        for p in parts {
            let s = p.shape();
            if s.len() != first.len()
                || s.iter().enumerate().any(|(i, &e)| i != axis && e != first[i])
            {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    lhs: first.clone(),
                    rhs: s.to_vec(),
                });
            }
            total_extent += s[axis];
        }
        let mut out_shape = first.clone();
        out_shape[axis] = total_extent;
        let (outer, _, inner) = axis_blocks(&out_shape, axis);

        let mut out = vec![0.0; numel_of(&out_shape)];
        let mut offset = 0;
        let mut part_extents = Vec::with_capacity(parts.len());
        for p in parts {
            let e = p.shape()[axis];
            let data = p.data();
            for o in 0..outer {
                let src = &data[o * e * inner..(o + 1) * e * inner];
                let dst_start = o * total_extent * inner + offset * inner;
                out[dst_start..dst_start + e * inner].copy_from_slice(src);
            }
            offset += e;
            part_extents.push(e);
        }

        let owned: Vec<Tensor> = parts.to_vec();
        Ok(Tensor::new_node(
            out_shape,
            out,
            owned.clone(),
            Box::new(move |g| {
                let mut offset = 0;
                for (p, &e) in owned.iter().zip(&part_extents) {
                    if p.requires_grad() {
                        let mut dp = vec![0.0; p.numel()];
                        for o in 0..outer {
                            let src_start = o * total_extent * inner + offset * inner;
                            dp[o * e * inner..(o + 1) * e * inner]
                                .copy_from_slice(&g[src_start..src_start + e * inner]);
                        }
                        p.accumulate_grad(&dp);
                    }
                    offset += e;
                }
            }),
        ))
    }

    /// Take `[start, end)` along `axis`.
    pub fn slice(&self, axis: usize, start: usize, end: usize) -> Result<Tensor, TensorError> {
        check_axis("slice", self.shape(), axis)?;
        let extent = self.shape()[axis];
        if start >= end || end > extent {
            return Err(TensorError::InvalidArgument(format!(
                "slice [{start}, {end}) out of range for axis {axis} with extent {extent}"
            )));
        }
        let (outer, _, inner) = axis_blocks(self.shape(), axis);
        let e = end - start;
        let mut out_shape = self.shape().to_vec();
        out_shape[axis] = e;
        let data = self.to_vec();
        let mut out = vec![0.0; outer * e * inner];
        for o in 0..outer {
            let src_start = o * extent * inner + start * inner;
            out[o * e * inner..(o + 1) * e * inner]
                .copy_from_slice(&data[src_start..src_start + e * inner]);
        }
        let a = self.clone();
        let total = self.numel();
        Ok(Tensor::new_node(
            out_shape,
            out,
            vec![self.clone()],
            Box::new(move |g| {
                if a.requires_grad() {
                    let mut da = vec![0.0; total];
                    for o in 0..outer {
                        let dst_start = o * extent * inner + start * inner;
                        da[dst_start..dst_start + e * inner]
                            .copy_from_slice(&g[o * e * inner..(o + 1) * e * inner]);
                    }
                    a.accumulate_grad(&da);
                }
            }),
        ))
    }

    /// Sum of all elements as a rank-0 scalar.
    pub fn sum(&self) -> Tensor {
        let s: f64 = self.data().iter().sum();
        let a = self.clone();
        let n = self.numel();
        Tensor::new_node(
            vec![],
            vec![s],
            vec![self.clone()],
            Box::new(move |g| {
                if a.requires_grad() {
                    a.accumulate_grad(&vec![g[0]; n]);
                }
            }),
        )
    }

    /// Mean of all elements as a rank-0 scalar.
    pub fn mean(&self) -> Tensor {
        let n = self.numel();
        self.sum().mul_scalar(1.0 / n as f64)
    }

    /// Sum along one axis; the axis is removed from the shape.
    pub fn sum_axis(&self, axis: usize) -> Result<Tensor, TensorError> {
        check_axis("sum_axis", self.shape(), axis)?;
        let (outer, extent, inner) = axis_blocks(self.shape(), axis);
        let data = self.data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for j in 0..extent {
                let base = o * extent * inner + j * inner;
                for i in 0..inner {
                    out[o * inner + i] += data[base + i];
                }
            }
        }
        drop(data);
        let mut out_shape = self.shape().to_vec();
        out_shape.remove(axis);
        if out_shape.is_empty() {
            out_shape.push(1);
        }
        let a = self.clone();
        let total = self.numel();
        Ok(Tensor::new_node(
            out_shape,
            out,
            vec![self.clone()],
            Box::new(move |g| {
                if a.requires_grad() {
                    let mut da = vec![0.0; total];
                    for o in 0..outer {
                        for j in 0..extent {
                            let base = o * extent * inner + j * inner;
                            for i in 0..inner {
                                da[base + i] = g[o * inner + i];
                            }
                        }
                    }
                    a.accumulate_grad(&da);
                }
            }),
        ))
    }

    /// Mean along one axis; the axis is removed from the shape.
    pub fn mean_axis(&self, axis: usize) -> Result<Tensor, TensorError> {
        check_axis("mean_axis", self.shape(), axis)?;
        let extent = self.shape()[axis];
        Ok(self.sum_axis(axis)?.mul_scalar(1.0 / extent as f64))
    }

    /// Repeat every element across new trailing axes: shape `S` becomes
    /// `S ++ extra`.
    pub fn expand_trailing(&self, extra: &[usize]) -> Result<Tensor, TensorError> {
        if extra.is_empty() || extra.contains(&0) {
            return Err(TensorError::InvalidArgument(format!(
                "expand_trailing with invalid extents {extra:?}"
            )));
        }
        let block = numel_of(extra);
        let data = self.to_vec();
        let mut out = Vec::with_capacity(data.len() * block);
        for &v in &data {
            out.extend(std::iter::repeat_n(v, block));
        }
        let mut out_shape = self.shape().to_vec();
        out_shape.extend_from_slice(extra);
        let a = self.clone();
        let n = data.len();
        Ok(Tensor::new_node(
            out_shape,
            out,
            vec![self.clone()],
            Box::new(move |g| {
                if a.requires_grad() {
                    let mut da = vec![0.0; n];
                    for (i, d) in da.iter_mut().enumerate() {
                        *d = g[i * block..(i + 1) * block].iter().sum();
                    }
                    a.accumulate_grad(&da);
                }
            }),
        ))
    }

    /// Numerically stable softmax along `axis` (max subtraction per lane).
    pub fn softmax(&self, axis: usize) -> Result<Tensor, TensorError> {
        check_axis("softmax", self.shape(), axis)?;
        let (outer, extent, inner) = axis_blocks(self.shape(), axis);
        let data = self.data();
        let mut out = vec![0.0; data.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| o * extent * inner + j * inner + i;
                let mut max = f64::NEG_INFINITY;
                for j in 0..extent {
                    max = max.max(data[at(j)]);
                }
                let mut sum = 0.0;
                for j in 0..extent {
                    let e = (data[at(j)] - max).exp();
                    out[at(j)] = e;
                    sum += e;
                }
                for j in 0..extent {
                    out[at(j)] /= sum;
                }
            }
        }
        drop(data);
        let y = out.clone();
        let a = self.clone();
        Ok(Tensor::new_node(
            self.shape().to_vec(),
            out,
            vec![self.clone()],
            Box::new(move |g| {
                if a.requires_grad() {
                    let mut dx = vec![0.0; g.len()];
                    for o in 0..outer {
                        for i in 0..inner {
                            let at = |j: usize| o * extent * inner + j * inner + i;
                            let mut dot = 0.0;
                            for j in 0..extent {
                                dot += g[at(j)] * y[at(j)];
                            }
                            for j in 0..extent {
                                dx[at(j)] = y[at(j)] * (g[at(j)] - dot);
                            }
                        }
                    }
                    a.accumulate_grad(&dx);
                }
            }),
        ))
    }

    /// log(softmax) along `axis`, computed stably in one pass.
    pub fn log_softmax(&self, axis: usize) -> Result<Tensor, TensorError> {
        check_axis("log_softmax", self.shape(), axis)?;
        let (outer, extent, inner) = axis_blocks(self.shape(), axis);
        let data = self.data();
        let mut out = vec![0.0; data.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| o * extent * inner + j * inner + i;
                let mut max = f64::NEG_INFINITY;
                for j in 0..extent {
                    max = max.max(data[at(j)]);
                }
                let mut sum = 0.0;
                for j in 0..extent {
                    sum += (data[at(j)] - max).exp();
                }
                let lse = max + sum.ln();
                for j in 0..extent {
                    out[at(j)] = data[at(j)] - lse;
                }
            }
        }
        drop(data);
        let log_y = out.clone();
        let a = self.clone();
        Ok(Tensor::new_node(
            self.shape().to_vec(),
            out,
            vec![self.clone()],
            Box::new(move |g| {
                if a.requires_grad() {
                    let mut dx = vec![0.0; g.len()];
                    for o in 0..outer {
                        for i in 0..inner {
                            let at = |j: usize| o * extent * inner + j * inner + i;
                            let mut gsum = 0.0;
                            for j in 0..extent {
                                gsum += g[at(j)];
                            }
                            for j in 0..extent {
                                dx[at(j)] = g[at(j)] - log_y[at(j)].exp() * gsum;
                            }
                        }
                    }
                    a.accumulate_grad(&dx);
                }
            }),
        ))
    }

    /// Layer normalization over the last axis with learned gain and bias.
    #[allow(clippy::needless_range_loop)]
    pub fn layer_norm(
        &self,
        gain: &Tensor,
        bias: &Tensor,
        eps: f64,
    ) -> Result<Tensor, TensorError> {
        if eps <= 0.0 {
            return Err(TensorError::InvalidArgument("layer_norm eps must be > 0".into()));
        }
        let d = *self.shape().last().ok_or_else(|| {
            TensorError::InvalidArgument("layer_norm requires rank >= 1".into())
        })?;
        if gain.shape() != [d] || bias.shape() != [d] {
            return Err(TensorError::ShapeMismatch {
                op: "layer_norm",
                lhs: self.shape().to_vec(),
                rhs: gain.shape().to_vec(),
            });
        }
        let lanes = self.numel() / d;
        let x = self.to_vec();
        let g_data = gain.to_vec();
        let b_data = bias.to_vec();
        let mut out = vec![0.0; x.len()];
        let mut xhat = vec![0.0; x.len()];
        let mut inv_std = vec![0.0; lanes];
        for l in 0..lanes {
            let row = &x[l * d..(l + 1) * d];
            let mu = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[l] = is;
            for j in 0..d {
                let xh = (row[j] - mu) * is;
                xhat[l * d + j] = xh;
                out[l * d + j] = xh * g_data[j] + b_data[j];
            }
        }
        let a = self.clone();
        let gt = gain.clone();
        let bt = bias.clone();
        Ok(Tensor::new_node(
            self.shape().to_vec(),
            out,
            vec![self.clone(), gain.clone(), bias.clone()],
            Box::new(move |g| {
                let mut dgain = vec![0.0; d];
                let mut dbias = vec![0.0; d];
                let mut dx = vec![0.0; g.len()];
                for l in 0..lanes {
                    let is = inv_std[l];
                    let mut mean_q = 0.0;
                    let mut mean_qx = 0.0;
                    for j in 0..d {
                        let idx = l * d + j;
                        let q = g[idx] * g_data[j];
                        mean_q += q;
                        mean_qx += q * xhat[idx];
                        dgain[j] += g[idx] * xhat[idx];
                        dbias[j] += g[idx];
                    }
                    mean_q /= d as f64;
                    mean_qx /= d as f64;
                    for j in 0..d {
                        let idx = l * d + j;
                        let q = g[idx] * g_data[j];
                        dx[idx] = is * (q - mean_q - xhat[idx] * mean_qx);
                    }
                }
                if a.requires_grad() {
                    a.accumulate_grad(&dx);
                }
                if gt.requires_grad() {
                    gt.accumulate_grad(&dgain);
                }
                if bt.requires_grad() {
                    bt.accumulate_grad(&dbias);
                }
            }),
        ))
    }

    /// Row lookup into a `[rows, d]` table; the output has shape
    /// `lead_shape ++ [d]`. Ids out of range report the offending flat
    /// position.
    pub fn lookup(&self, ids: &[usize], lead_shape: &[usize]) -> Result<Tensor, TensorError> {
        if self.shape().len() != 2 {
            return Err(TensorError::InvalidArgument(format!(
                "lookup table must be rank 2, got {:?}",
                self.shape()
            )));
        }
        if ids.len() != numel_of(lead_shape) {
            return Err(TensorError::InvalidArgument(format!(
                "lookup got {} ids for lead shape {:?}",
                ids.len(),
                lead_shape
            )));
        }
        let rows = self.shape()[0];
        let d = self.shape()[1];
        let data = self.data();
        let mut out = Vec::with_capacity(ids.len() * d);
        for (pos, &id) in ids.iter().enumerate() {
            if id >= rows {
                return Err(TensorError::IndexOutOfRange { index: id, bound: rows, position: pos });
            }
            out.extend_from_slice(&data[id * d..(id + 1) * d]);
        }
        drop(data);
        let mut out_shape = lead_shape.to_vec();
        out_shape.push(d);
        let table = self.clone();
        let ids_saved = ids.to_vec();
        let table_numel = self.numel();
        Ok(Tensor::new_node(
            out_shape,
            out,
            vec![self.clone()],
            Box::new(move |g| {
                if table.requires_grad() {
                    let mut dt = vec![0.0; table_numel];
                    for (pos, &id) in ids_saved.iter().enumerate() {
                        for j in 0..d {
                            dt[id * d + j] += g[pos * d + j];
                        }
                    }
                    table.accumulate_grad(&dt);
                }
            }),
        ))
    }
}
