//! Elementwise, reduction, shape and linear-algebra ops with their
//! backward rules.

use crate::error::{Result, SedError};

use super::{same_shape, Tensor};

#[derive(Clone, Copy, PartialEq)]
enum Broadcast {
    Same,
    /// rhs is a single value
    RhsScalar,
    /// rhs is a vector matching the trailing dimension of lhs
    RhsLastDim,
}

fn broadcast_kind(a: &Tensor, b: &Tensor, op: &str) -> Result<Broadcast> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa == sb {
        Ok(Broadcast::Same)
    } else if b.numel() == 1 {
        Ok(Broadcast::RhsScalar)
    } else if sb.len() == 1 && sa.last() == Some(&sb[0]) {
        Ok(Broadcast::RhsLastDim)
    } else {
        Err(SedError::Dimension(format!(
            "{op}: shapes {sa:?} and {sb:?} are not broadcast-compatible"
        )))
    }
}

/// Reduce a full-size gradient back to the broadcast operand's shape.
fn reduce_for_broadcast(grad: &[f64], kind: Broadcast, rhs_len: usize) -> Vec<f64> {
    match kind {
        Broadcast::Same => grad.to_vec(),
        Broadcast::RhsScalar => vec![grad.iter().sum()],
        Broadcast::RhsLastDim => {
            let mut out = vec![0.0; rhs_len];
            for (i, g) in grad.iter().enumerate() {
                out[i % rhs_len] += g;
            }
            out
        }
    }
}

fn rhs_value(b: &[f64], kind: Broadcast, i: usize) -> f64 {
    match kind {
        Broadcast::Same => b[i],
        Broadcast::RhsScalar => b[0],
        Broadcast::RhsLastDim => b[i % b.len()],
    }
}

impl Tensor {
    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        let kind = broadcast_kind(self, other, "add")?;
        let (a, b) = (self.data(), other.data());
        let out: Vec<f64> = a
            .iter()
            .enumerate()
            .map(|(i, &x)| x + rhs_value(&b, kind, i))
            .collect();
        let rhs_len = b.len();
        Ok(Tensor::make_op(
            "add",
            vec![self.clone(), other.clone()],
            out,
            self.shape(),
            Box::new(move |g| {
                vec![
                    Some(g.to_vec()),
                    Some(reduce_for_broadcast(g, kind, rhs_len)),
                ]
            }),
        ))
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        let kind = broadcast_kind(self, other, "sub")?;
        let (a, b) = (self.data(), other.data());
        let out: Vec<f64> = a
            .iter()
            .enumerate()
            .map(|(i, &x)| x - rhs_value(&b, kind, i))
            .collect();
        let rhs_len = b.len();
        Ok(Tensor::make_op(
            "sub",
            vec![self.clone(), other.clone()],
            out,
            self.shape(),
            Box::new(move |g| {
                let neg: Vec<f64> = g.iter().map(|x| -x).collect();
                vec![
                    Some(g.to_vec()),
                    Some(reduce_for_broadcast(&neg, kind, rhs_len)),
                ]
            }),
        ))
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        let kind = broadcast_kind(self, other, "mul")?;
        let (a, b) = (self.data(), other.data());
        let out: Vec<f64> = a
            .iter()
            .enumerate()
            .map(|(i, &x)| x * rhs_value(&b, kind, i))
            .collect();
        let (ca, cb) = (a, b);
        Ok(Tensor::make_op(
            "mul",
            vec![self.clone(), other.clone()],
            out,
            self.shape(),
            Box::new(move |g| {
                let ga: Vec<f64> = g
                    .iter()
                    .enumerate()
                    .map(|(i, &gi)| gi * rhs_value(&cb, kind, i))
                    .collect();
                let gb_full: Vec<f64> = g.iter().zip(&ca).map(|(&gi, &ai)| gi * ai).collect();
                vec![
                    Some(ga),
                    Some(reduce_for_broadcast(&gb_full, kind, cb.len())),
                ]
            }),
        ))
    }

    fn unary(
        &self,
        op_kind: &'static str,
        f: impl Fn(f64) -> f64,
        // derivative as a function of (input, output)
        df: impl Fn(f64, f64) -> f64 + 'static,
    ) -> Tensor {
        let x = self.data();
        let out: Vec<f64> = x.iter().map(|&v| f(v)).collect();
        let saved_in = x;
        let saved_out = out.clone();
        Tensor::make_op(
            op_kind,
            vec![self.clone()],
            out,
            self.shape(),
            Box::new(move |g| {
                let gx: Vec<f64> = g
                    .iter()
                    .zip(saved_in.iter().zip(&saved_out))
                    .map(|(&gi, (&xi, &yi))| gi * df(xi, yi))
                    .collect();
                vec![Some(gx)]
            }),
        )
    }

    pub fn neg(&self) -> Tensor {
        self.unary("neg", |x| -x, |_, _| -1.0)
    }

    pub fn exp(&self) -> Tensor {
        self.unary("exp", f64::exp, |_, y| y)
    }

    pub fn log(&self) -> Tensor {
        self.unary("log", f64::ln, |x, _| 1.0 / x)
    }

    pub fn sigmoid(&self) -> Tensor {
        self.unary("sigmoid", |x| 1.0 / (1.0 + (-x).exp()), |_, y| y * (1.0 - y))
    }

    pub fn tanh(&self) -> Tensor {
        self.unary("tanh", f64::tanh, |_, y| 1.0 - y * y)
    }

    pub fn relu(&self) -> Tensor {
        self.unary("relu", |x| x.max(0.0), |x, _| if x > 0.0 { 1.0 } else { 0.0 })
    }

    pub fn leaky_relu(&self, slope: f64) -> Tensor {
        self.unary(
            "leaky_relu",
            move |x| if x > 0.0 { x } else { slope * x },
            move |x, _| if x > 0.0 { 1.0 } else { slope },
        )
    }

    /// Clamp values to [lo, hi]; gradient passes through strictly inside
    /// the interval and is zero at and beyond the clamp bounds.
    pub fn clamp(&self, lo: f64, hi: f64) -> Tensor {
        self.unary(
            "clamp",
            move |x| x.clamp(lo, hi),
            move |x, _| if x > lo && x < hi { 1.0 } else { 0.0 },
        )
    }

    pub fn mul_scalar(&self, c: f64) -> Tensor {
        self.unary("mul_scalar", move |x| c * x, move |_, _| c)
    }

    pub fn add_scalar(&self, c: f64) -> Tensor {
        self.unary("add_scalar", move |x| x + c, |_, _| 1.0)
    }

    pub fn sum_all(&self) -> Tensor {
        let s: f64 = self.data().iter().sum();
        let n = self.numel();
        Tensor::make_op(
            "sum",
            vec![self.clone()],
            vec![s],
            vec![1],
            Box::new(move |g| vec![Some(vec![g[0]; n])]),
        )
    }

    pub fn mean_all(&self) -> Tensor {
        let n = self.numel();
        let s: f64 = self.data().iter().sum();
        Tensor::make_op(
            "mean",
            vec![self.clone()],
            vec![s / n as f64],
            vec![1],
            Box::new(move |g| vec![Some(vec![g[0] / n as f64; n])]),
        )
    }

    /// Softmax over the last dimension.
    pub fn softmax_lastdim(&self) -> Tensor {
        let shape = self.shape();
        let d = *shape.last().expect("softmax on 0-d tensor");
        let x = self.data();
        let mut out = vec![0.0; x.len()];
        for row in 0..x.len() / d {
            let xs = &x[row * d..(row + 1) * d];
            let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for (j, &v) in xs.iter().enumerate() {
                let e = (v - m).exp();
                out[row * d + j] = e;
                z += e;
            }
            for j in 0..d {
                out[row * d + j] /= z;
            }
        }
        let saved = out.clone();
        Tensor::make_op(
            "softmax",
            vec![self.clone()],
            out,
            shape,
            Box::new(move |g| {
                let mut gx = vec![0.0; g.len()];
                for row in 0..g.len() / d {
                    let ys = &saved[row * d..(row + 1) * d];
                    let gs = &g[row * d..(row + 1) * d];
                    let dot: f64 = ys.iter().zip(gs).map(|(&y, &gi)| y * gi).sum();
                    for j in 0..d {
                        gx[row * d + j] = ys[j] * (gs[j] - dot);
                    }
                }
                vec![Some(gx)]
            }),
        )
    }

    pub fn reshape(&self, new_shape: &[usize]) -> Result<Tensor> {
        let numel: usize = new_shape.iter().product();
        if numel != self.numel() {
            return Err(SedError::Dimension(format!(
                "reshape: {:?} has {} elements, target {:?} has {}",
                self.shape(),
                self.numel(),
                new_shape,
                numel
            )));
        }
        Ok(Tensor::make_op(
            "reshape",
            vec![self.clone()],
            self.data(),
            new_shape.to_vec(),
            Box::new(move |g| vec![Some(g.to_vec())]),
        ))
    }

    /// Contiguous slice `[start, start+len)` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Tensor> {
        let shape = self.shape();
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(SedError::Dimension(format!(
                "narrow: axis {axis} range {start}..{} out of bounds for {:?}",
                start + len,
                shape
            )));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let src_axis = shape[axis];
        let x = self.data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * src_axis * inner;
            out.extend_from_slice(&x[base + start * inner..base + (start + len) * inner]);
        }
        let mut out_shape = shape.clone();
        out_shape[axis] = len;
        let total = x.len();
        Ok(Tensor::make_op(
            "narrow",
            vec![self.clone()],
            out,
            out_shape,
            Box::new(move |g| {
                let mut gx = vec![0.0; total];
                for o in 0..outer {
                    let base = o * src_axis * inner;
                    let gbase = o * len * inner;
                    gx[base + start * inner..base + (start + len) * inner]
                        .copy_from_slice(&g[gbase..gbase + len * inner]);
                }
                vec![Some(gx)]
            }),
        ))
    }

    /// Concatenate along `axis`; all other dimensions must agree.
    pub fn concat(tensors: &[Tensor], axis: usize) -> Result<Tensor> {
        if tensors.is_empty() {
            return Err(SedError::Usage("concat of empty tensor list".into()));
        }
        let first = tensors[0].shape();
        if axis >= first.len() {
            return Err(SedError::Dimension(format!(
                "concat: axis {axis} out of bounds for rank {}",
                first.len()
            )));
        }
        let mut axis_sizes = Vec::with_capacity(tensors.len());
        for t in tensors {
            let s = t.shape();
            if s.len() != first.len()
                || s.iter()
                    .zip(&first)
                    .enumerate()
                    .any(|(i, (a, b))| i != axis && a != b)
            {
                return Err(SedError::Dimension(format!(
                    "concat: shape {s:?} incompatible with {first:?} along axis {axis}"
                )));
            }
            axis_sizes.push(s[axis]);
        }
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let total_axis: usize = axis_sizes.iter().sum();
        let mut out = Vec::with_capacity(outer * total_axis * inner);
        let datas: Vec<Vec<f64>> = tensors.iter().map(|t| t.data()).collect();
        for o in 0..outer {
            for (t_idx, d) in datas.iter().enumerate() {
                let a = axis_sizes[t_idx];
                out.extend_from_slice(&d[o * a * inner..(o + 1) * a * inner]);
            }
        }
        let mut out_shape = first.clone();
        out_shape[axis] = total_axis;
        let sizes = axis_sizes.clone();
        Ok(Tensor::make_op(
            "concat",
            tensors.to_vec(),
            out,
            out_shape,
            Box::new(move |g| {
                let mut grads: Vec<Vec<f64>> = sizes
                    .iter()
                    .map(|&a| Vec::with_capacity(outer * a * inner))
                    .collect();
                let mut pos = 0;
                for _o in 0..outer {
                    for (t_idx, &a) in sizes.iter().enumerate() {
                        grads[t_idx].extend_from_slice(&g[pos..pos + a * inner]);
                        pos += a * inner;
                    }
                }
                grads.into_iter().map(Some).collect()
            }),
        ))
    }

    /// Gather time step `t` from a `[B, T, D]` tensor, yielding `[B, D]`.
    pub fn select_time(&self, t: usize) -> Result<Tensor> {
        let shape = self.shape();
        if shape.len() != 3 || t >= shape[1] {
            return Err(SedError::Dimension(format!(
                "select_time: index {t} invalid for shape {shape:?}"
            )));
        }
        let (b, tt, d) = (shape[0], shape[1], shape[2]);
        let x = self.data();
        let mut out = Vec::with_capacity(b * d);
        for bi in 0..b {
            out.extend_from_slice(&x[(bi * tt + t) * d..(bi * tt + t + 1) * d]);
        }
        let total = x.len();
        Ok(Tensor::make_op(
            "select_time",
            vec![self.clone()],
            out,
            vec![b, d],
            Box::new(move |g| {
                let mut gx = vec![0.0; total];
                for bi in 0..b {
                    gx[(bi * tt + t) * d..(bi * tt + t + 1) * d]
                        .copy_from_slice(&g[bi * d..(bi + 1) * d]);
                }
                vec![Some(gx)]
            }),
        ))
    }

    /// Stack `T` tensors of shape `[B, D]` into `[B, T, D]`.
    pub fn stack_time(steps: &[Tensor]) -> Result<Tensor> {
        if steps.is_empty() {
            return Err(SedError::Usage("stack_time of empty list".into()));
        }
        let s0 = steps[0].shape();
        if s0.len() != 2 {
            return Err(SedError::Dimension(format!(
                "stack_time expects [B, D] steps, got {s0:?}"
            )));
        }
        let (b, d) = (s0[0], s0[1]);
        for s in steps {
            same_shape(&steps[0], s, "stack_time")?;
        }
        let t = steps.len();
        let datas: Vec<Vec<f64>> = steps.iter().map(|s| s.data()).collect();
        let mut out = vec![0.0; b * t * d];
        for bi in 0..b {
            for (ti, step) in datas.iter().enumerate() {
                out[(bi * t + ti) * d..(bi * t + ti + 1) * d]
                    .copy_from_slice(&step[bi * d..(bi + 1) * d]);
            }
        }
        Ok(Tensor::make_op(
            "stack_time",
            steps.to_vec(),
            out,
            vec![b, t, d],
            Box::new(move |g| {
                let mut grads: Vec<Vec<f64>> = vec![vec![0.0; b * d]; t];
                for bi in 0..b {
                    for (ti, gt) in grads.iter_mut().enumerate() {
                        gt[bi * d..(bi + 1) * d]
                            .copy_from_slice(&g[(bi * t + ti) * d..(bi * t + ti + 1) * d]);
                    }
                }
                grads.into_iter().map(Some).collect()
            }),
        ))
    }

    /// 2-D matrix product `[M, K] x [K, N] -> [M, N]`.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (sa, sb) = (self.shape(), other.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(SedError::Dimension(format!(
                "matmul: incompatible shapes {sa:?} x {sb:?}"
            )));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let a = self.data();
        let b = other.data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..k {
                let aip = a[i * k + p];
                if aip == 0.0 {
                    continue;
                }
                let brow = &b[p * n..(p + 1) * n];
                let orow = &mut out[i * n..(i + 1) * n];
                for j in 0..n {
                    orow[j] += aip * brow[j];
                }
            }
        }
        let (ca, cb) = (a, b);
        Ok(Tensor::make_op(
            "matmul",
            vec![self.clone(), other.clone()],
            out,
            vec![m, n],
            Box::new(move |g| {
                // dA = G B^T, dB = A^T G
                let mut ga = vec![0.0; m * k];
                for i in 0..m {
                    for p in 0..k {
                        let mut s = 0.0;
                        for j in 0..n {
                            s += g[i * n + j] * cb[p * n + j];
                        }
                        ga[i * k + p] = s;
                    }
                }
                let mut gb = vec![0.0; k * n];
                for i in 0..m {
                    for p in 0..k {
                        let aip = ca[i * k + p];
                        if aip == 0.0 {
                            continue;
                        }
                        let grow = &g[i * n..(i + 1) * n];
                        let brow = &mut gb[p * n..(p + 1) * n];
                        for j in 0..n {
                            brow[j] += aip * grow[j];
                        }
                    }
                }
                vec![Some(ga), Some(gb)]
            }),
        ))
    }

    /// Partition `axis` into `target` contiguous near-equal bins and
    /// average each. Gradient is spread uniformly within each bin. Used
    /// both for frequency-halving pooling in the conv stack and for the
    /// temporal-congruence pooling of feature distillation.
    pub fn adaptive_avg_axis(&self, axis: usize, target: usize) -> Result<Tensor> {
        let shape = self.shape();
        if axis >= shape.len() {
            return Err(SedError::Dimension(format!(
                "adaptive_avg_axis: axis {axis} out of bounds for {shape:?}"
            )));
        }
        let src = shape[axis];
        if target < 1 || target > src {
            return Err(SedError::Config(format!(
                "adaptive_avg_axis: target {target} invalid for source length {src} (no upsampling)"
            )));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        // bin i covers [floor(i*src/target), floor((i+1)*src/target))
        let bounds: Vec<(usize, usize)> = (0..target)
            .map(|i| (i * src / target, (i + 1) * src / target))
            .collect();
        let x = self.data();
        let mut out = vec![0.0; outer * target * inner];
        for o in 0..outer {
            for (i, &(lo, hi)) in bounds.iter().enumerate() {
                for q in 0..inner {
                    let mut s = 0.0;
                    for j in lo..hi {
                        s += x[(o * src + j) * inner + q];
                    }
                    out[(o * target + i) * inner + q] = s / (hi - lo) as f64;
                }
            }
        }
        let mut out_shape = shape.clone();
        out_shape[axis] = target;
        let total = x.len();
        Ok(Tensor::make_op(
            "adaptive_avg",
            vec![self.clone()],
            out,
            out_shape,
            Box::new(move |g| {
                let mut gx = vec![0.0; total];
                for o in 0..outer {
                    for (i, &(lo, hi)) in bounds.iter().enumerate() {
                        let w = 1.0 / (hi - lo) as f64;
                        for q in 0..inner {
                            let gi = g[(o * target + i) * inner + q] * w;
                            for j in lo..hi {
                                gx[(o * src + j) * inner + q] += gi;
                            }
                        }
                    }
                }
                vec![Some(gx)]
            }),
        ))
    }

    /// Rescale a `[B, C, T, F]` map by per-(batch, channel) gates `[B, C]`.
    pub fn scale_channels(&self, gates: &Tensor) -> Result<Tensor> {
        let shape = self.shape();
        let gs = gates.shape();
        if shape.len() != 4 || gs != vec![shape[0], shape[1]] {
            return Err(SedError::Dimension(format!(
                "scale_channels: x {shape:?} vs gates {gs:?}"
            )));
        }
        let (b, c, t, f) = (shape[0], shape[1], shape[2], shape[3]);
        let x = self.data();
        let g_data = gates.data();
        let tf = t * f;
        let mut out = vec![0.0; x.len()];
        for bi in 0..b {
            for ci in 0..c {
                let gate = g_data[bi * c + ci];
                let base = (bi * c + ci) * tf;
                for k in 0..tf {
                    out[base + k] = x[base + k] * gate;
                }
            }
        }
        let (cx, cg) = (x, g_data);
        Ok(Tensor::make_op(
            "scale_channels",
            vec![self.clone(), gates.clone()],
            out,
            shape.clone(),
            Box::new(move |g| {
                let mut gx = vec![0.0; cx.len()];
                let mut gg = vec![0.0; cg.len()];
                for bi in 0..b {
                    for ci in 0..c {
                        let gate = cg[bi * c + ci];
                        let base = (bi * c + ci) * tf;
                        let mut s = 0.0;
                        for k in 0..tf {
                            gx[base + k] = g[base + k] * gate;
                            s += g[base + k] * cx[base + k];
                        }
                        gg[bi * c + ci] = s;
                    }
                }
                vec![Some(gx), Some(gg)]
            }),
        ))
    }

    /// Rescale a `[B, C, T, F]` map by per-(batch, time, freq) gates
    /// `[B, T, F]`, broadcast over channels.
    pub fn scale_time_freq(&self, gates: &Tensor) -> Result<Tensor> {
        let shape = self.shape();
        let gs = gates.shape();
        if shape.len() != 4 || gs != vec![shape[0], shape[2], shape[3]] {
            return Err(SedError::Dimension(format!(
                "scale_time_freq: x {shape:?} vs gates {gs:?}"
            )));
        }
        let (b, c, t, f) = (shape[0], shape[1], shape[2], shape[3]);
        let x = self.data();
        let g_data = gates.data();
        let tf = t * f;
        let mut out = vec![0.0; x.len()];
        for bi in 0..b {
            for ci in 0..c {
                let base = (bi * c + ci) * tf;
                for k in 0..tf {
                    out[base + k] = x[base + k] * g_data[bi * tf + k];
                }
            }
        }
        let (cx, cg) = (x, g_data);
        Ok(Tensor::make_op(
            "scale_time_freq",
            vec![self.clone(), gates.clone()],
            out,
            shape.clone(),
            Box::new(move |g| {
                let mut gx = vec![0.0; cx.len()];
                let mut gg = vec![0.0; cg.len()];
                for bi in 0..b {
                    for ci in 0..c {
                        let base = (bi * c + ci) * tf;
                        for k in 0..tf {
                            gx[base + k] = g[base + k] * cg[bi * tf + k];
                            gg[bi * tf + k] += g[base + k] * cx[base + k];
                        }
                    }
                }
                vec![Some(gx), Some(gg)]
            }),
        ))
    }

    /// Swap the last two axes of a 3-d tensor.
    pub fn transpose_12(&self) -> Result<Tensor> {
        let shape = self.shape();
        if shape.len() != 3 {
            return Err(SedError::Dimension(format!(
                "transpose_12 expects a 3-d tensor, got {shape:?}"
            )));
        }
        let (b, m, n) = (shape[0], shape[1], shape[2]);
        let x = self.data();
        let mut out = vec![0.0; x.len()];
        for bi in 0..b {
            for i in 0..m {
                for j in 0..n {
                    out[(bi * n + j) * m + i] = x[(bi * m + i) * n + j];
                }
            }
        }
        Ok(Tensor::make_op(
            "transpose_12",
            vec![self.clone()],
            out,
            vec![b, n, m],
            Box::new(move |g| {
                let mut gx = vec![0.0; g.len()];
                for bi in 0..b {
                    for i in 0..m {
                        for j in 0..n {
                            gx[(bi * m + i) * n + j] = g[(bi * n + j) * m + i];
                        }
                    }
                }
                vec![Some(gx)]
            }),
        ))
    }

    /// Mean over (T, F) of a `[B, C, T, F]` map, yielding `[B, C]`.
    pub fn global_avg_pool(&self) -> Result<Tensor> {
        let shape = self.shape();
        if shape.len() != 4 {
            return Err(SedError::Dimension(format!(
                "global_avg_pool expects [B, C, T, F], got {shape:?}"
            )));
        }
        let (b, c, tf) = (shape[0], shape[1], shape[2] * shape[3]);
        let x = self.data();
        let mut out = vec![0.0; b * c];
        for i in 0..b * c {
            out[i] = x[i * tf..(i + 1) * tf].iter().sum::<f64>() / tf as f64;
        }
        let total = x.len();
        Ok(Tensor::make_op(
            "global_avg_pool",
            vec![self.clone()],
            out,
            vec![b, c],
            Box::new(move |g| {
                let mut gx = vec![0.0; total];
                for i in 0..b * c {
                    let gi = g[i] / tf as f64;
                    for k in 0..tf {
                        gx[i * tf + k] = gi;
                    }
                }
                vec![Some(gx)]
            }),
        ))
    }

    /// Mean over the channel axis of a `[B, C, T, F]` map, yielding `[B, T, F]`.
    pub fn mean_channels(&self) -> Result<Tensor> {
        let shape = self.shape();
        if shape.len() != 4 {
            return Err(SedError::Dimension(format!(
                "mean_channels expects [B, C, T, F], got {shape:?}"
            )));
        }
        let (b, c, tf) = (shape[0], shape[1], shape[2] * shape[3]);
        let x = self.data();
        let mut out = vec![0.0; b * tf];
        for bi in 0..b {
            for ci in 0..c {
                let base = (bi * c + ci) * tf;
                for k in 0..tf {
                    out[bi * tf + k] += x[base + k];
                }
            }
        }
        for v in out.iter_mut() {
            *v /= c as f64;
        }
        let total = x.len();
        Ok(Tensor::make_op(
            "mean_channels",
            vec![self.clone()],
            out,
            vec![b, shape[2], shape[3]],
            Box::new(move |g| {
                let mut gx = vec![0.0; total];
                for bi in 0..b {
                    for ci in 0..c {
                        let base = (bi * c + ci) * tf;
                        for k in 0..tf {
                            gx[base + k] = g[bi * tf + k] / c as f64;
                        }
                    }
                }
                vec![Some(gx)]
            }),
        ))
    }
}
