//! Dense row-major f32 tensors and the small op set the model is built from.
//!
//! Shapes are explicit `Vec<usize>` and every op validates its operands; the
//! kernels are plain loops arranged so the inner dimension is contiguous.
//! Multiply-accumulate work is tallied into a thread-local counter (see
//! [`macs`]) so a forward pass can be audited against analytic cost formulas.

use crate::error::{HitError, Result};

/// Thread-local multiply-accumulate accounting.
///
/// Every op that performs MACs (matmul, linear, conv, transpose conv) adds its
/// nominal count on entry. Elementwise work, softmax, and reductions are not
/// counted, matching the cost-report convention.
pub mod macs {
    use std::cell::Cell;

    thread_local! {
        static COUNTER: Cell<u64> = const { Cell::new(0) };
    }

    pub(crate) fn add(n: u64) {
        COUNTER.with(|c| c.set(c.get().wrapping_add(n)));
    }

    /// Reset the calling thread's counter to zero.
    pub fn reset() {
        COUNTER.with(|c| c.set(0));
    }

    /// Read the calling thread's counter.
    pub fn total() -> u64 {
        COUNTER.with(|c| c.get())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if shape.is_empty() || shape.contains(&0) {
            return Err(HitError::EmptyTensor {
                op: "new",
                shape: shape.clone(),
            });
        }
        if expected != data.len() {
            return Err(HitError::ShapeDataMismatch {
                shape,
                expected,
                actual: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self> {
        let n: usize = shape.iter().product();
        Self::new(shape, vec![0.0; n])
    }

    pub fn filled(shape: Vec<usize>, value: f32) -> Result<Self> {
        let n: usize = shape.iter().product();
        Self::new(shape, vec![value; n])
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn dims2(&self, op: &'static str) -> Result<(usize, usize)> {
        match *self.shape {
            [a, b] => Ok((a, b)),
            _ => Err(HitError::BadRank {
                op,
                expected: 2,
                shape: self.shape.clone(),
            }),
        }
    }

    pub fn dims3(&self, op: &'static str) -> Result<(usize, usize, usize)> {
        match *self.shape {
            [a, b, c] => Ok((a, b, c)),
            _ => Err(HitError::BadRank {
                op,
                expected: 3,
                shape: self.shape.clone(),
            }),
        }
    }

    pub fn dims4(&self, op: &'static str) -> Result<(usize, usize, usize, usize)> {
        match *self.shape {
            [a, b, c, d] => Ok((a, b, c, d)),
            _ => Err(HitError::BadRank {
                op,
                expected: 4,
                shape: self.shape.clone(),
            }),
        }
    }

    /// Element accessor for rank-2 tensors; row-major, unchecked bounds beyond
    /// debug assertions because callers validate shapes first.
    pub fn at2(&self, r: usize, c: usize) -> f32 {
        debug_assert!(self.rank() == 2 && r < self.shape[0] && c < self.shape[1]);
        self.data[r * self.shape[1] + c]
    }

    /// Element accessor for rank-3 tensors laid out as [rows][cols][channels].
    pub fn at3(&self, y: usize, x: usize, c: usize) -> f32 {
        debug_assert!(self.rank() == 3);
        let (_, w, ch) = (self.shape[0], self.shape[1], self.shape[2]);
        self.data[(y * w + x) * ch + c]
    }

    /// Reinterpret the buffer under a new shape with the same element count.
    pub fn reshape(&self, shape: Vec<usize>) -> Result<Tensor> {
        let elems: usize = shape.iter().product();
        if shape.is_empty() || shape.contains(&0) || elems != self.data.len() {
            return Err(HitError::BadReshape {
                from: self.shape.clone(),
                to: shape,
                elems: self.data.len(),
            });
        }
        Ok(Tensor {
            shape,
            data: self.data.clone(),
        })
    }

    /// Contiguous copy of a column block `[.., start..start+width]` of a
    /// rank-2 tensor. Used to slice per-head projections out of packed
    /// projection outputs.
    pub fn col_block(&self, start: usize, width: usize) -> Result<Tensor> {
        let (rows, cols) = self.dims2("col_block")?;
        if start + width > cols || width == 0 {
            return Err(HitError::BadReshape {
                from: self.shape.clone(),
                to: vec![rows, width],
                elems: self.data.len(),
            });
        }
        let mut out = Vec::with_capacity(rows * width);
        for r in 0..rows {
            let row = &self.data[r * cols + start..r * cols + start + width];
            out.extend_from_slice(row);
        }
        Tensor::new(vec![rows, width], out)
    }
}

/// `[m,k] x [k,n] -> [m,n]`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = a.dims2("matmul")?;
    let (k2, n) = b.dims2("matmul")?;
    if k != k2 {
        return Err(HitError::DimMismatch {
            op: "matmul",
            left: a.shape.clone(),
            right: b.shape.clone(),
        });
    }
    macs::add(m as u64 * k as u64 * n as u64);
    let mut out = vec![0.0f32; m * n];
    for i in 0..m {
        let a_row = &a.data[i * k..(i + 1) * k];
        let o_row = &mut out[i * n..(i + 1) * n];
        for (p, &av) in a_row.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let b_row = &b.data[p * n..(p + 1) * n];
            for (o, &bv) in o_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
    Tensor::new(vec![m, n], out)
}

/// `[m,k] x [n,k]^T -> [m,n]`; both operands are read row-contiguously, which
/// is why attention scores use this instead of materializing a transpose.
pub fn matmul_nt(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = a.dims2("matmul_nt")?;
    let (n, k2) = b.dims2("matmul_nt")?;
    if k != k2 {
        return Err(HitError::DimMismatch {
            op: "matmul_nt",
            left: a.shape.clone(),
            right: b.shape.clone(),
        });
    }
    macs::add(m as u64 * k as u64 * n as u64);
    let mut out = vec![0.0f32; m * n];
    for i in 0..m {
        let a_row = &a.data[i * k..(i + 1) * k];
        for j in 0..n {
            let b_row = &b.data[j * k..(j + 1) * k];
            out[i * n + j] = a_row.iter().zip(b_row).map(|(&x, &y)| x * y).sum();
        }
    }
    Tensor::new(vec![m, n], out)
}

/// Elementwise sum of two same-shape tensors.
pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape != b.shape {
        return Err(HitError::DimMismatch {
            op: "add",
            left: a.shape.clone(),
            right: b.shape.clone(),
        });
    }
    let data = a.data.iter().zip(&b.data).map(|(&x, &y)| x + y).collect();
    Tensor::new(a.shape.clone(), data)
}

/// x * clamp(x + 3, 0, 6) / 6, applied elementwise.
pub fn hardswish(x: &Tensor) -> Tensor {
    let data = x.data.iter().map(|&v| hardswish_scalar(v)).collect();
    Tensor {
        shape: x.shape.clone(),
        data,
    }
}

pub fn hardswish_scalar(v: f32) -> f32 {
    v * (v + 3.0).clamp(0.0, 6.0) / 6.0
}

/// Numerically stable softmax over the last axis of a rank-2 tensor.
pub fn softmax_rows(x: &Tensor) -> Result<Tensor> {
    let (rows, cols) = x.dims2("softmax_rows")?;
    let mut data = vec![0.0f32; rows * cols];
    for r in 0..rows {
        let row = &x.data[r * cols..(r + 1) * cols];
        let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let out = &mut data[r * cols..(r + 1) * cols];
        let mut sum = 0.0f32;
        for (o, &v) in out.iter_mut().zip(row) {
            let e = (v - max).exp();
            *o = e;
            sum += e;
        }
        for o in out.iter_mut() {
            *o /= sum;
        }
    }
    Tensor::new(vec![rows, cols], data)
}

/// Stack rank-2 token tensors along the token axis; channel counts must agree.
pub fn concat_tokens(parts: &[&Tensor]) -> Result<Tensor> {
    if parts.is_empty() {
        return Err(HitError::EmptyTensor {
            op: "concat_tokens",
            shape: vec![],
        });
    }
    let (_, c0) = parts[0].dims2("concat_tokens")?;
    let mut rows = 0;
    let mut data = Vec::new();
    for p in parts {
        let (t, c) = p.dims2("concat_tokens")?;
        if c != c0 {
            return Err(HitError::DimMismatch {
                op: "concat_tokens",
                left: parts[0].shape.clone(),
                right: p.shape.clone(),
            });
        }
        rows += t;
        data.extend_from_slice(&p.data);
    }
    Tensor::new(vec![rows, c0], data)
}

/// Keep even-indexed rows and columns of an [H,W,C] map: output extents are
/// ceil(H/2) x ceil(W/2).
pub fn subsample2x(x: &Tensor) -> Result<Tensor> {
    let (h, w, c) = x.dims3("subsample2x")?;
    let oh = h.div_ceil(2);
    let ow = w.div_ceil(2);
    let mut data = Vec::with_capacity(oh * ow * c);
    for y in (0..h).step_by(2) {
        for xx in (0..w).step_by(2) {
            let px = &x.data[(y * w + xx) * c..(y * w + xx + 1) * c];
            data.extend_from_slice(px);
        }
    }
    Tensor::new(vec![oh, ow, c], data)
}

/// Mean over the token axis of a [T,C] tensor, returned as [1,C].
pub fn mean_rows(x: &Tensor) -> Result<Tensor> {
    let (t, c) = x.dims2("mean_rows")?;
    let mut out = vec![0.0f32; c];
    for r in 0..t {
        for (o, &v) in out.iter_mut().zip(&x.data[r * c..(r + 1) * c]) {
            *o += v;
        }
    }
    let inv = 1.0 / t as f32;
    for o in &mut out {
        *o *= inv;
    }
    Tensor::new(vec![1, c], out)
}

/// Fully connected layer. Weight layout is [in, out]; bias is optional because
/// attention projections store their normalization pre-folded with no shift.
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: Tensor,
    pub b: Option<Tensor>,
}

impl Linear {
    pub fn new(w: Tensor, b: Option<Tensor>) -> Result<Self> {
        let (_, out) = w.dims2("linear weight")?;
        if let Some(ref b) = b {
            if b.shape() != [out] {
                return Err(HitError::DimMismatch {
                    op: "linear bias",
                    left: w.shape.clone(),
                    right: b.shape().to_vec(),
                });
            }
        }
        Ok(Self { w, b })
    }

    pub fn in_dim(&self) -> usize {
        self.w.shape()[0]
    }

    pub fn out_dim(&self) -> usize {
        self.w.shape()[1]
    }

    /// `[T,in] -> [T,out]`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut y = matmul(x, &self.w)?;
        if let Some(ref b) = self.b {
            let (t, n) = y.dims2("linear")?;
            for r in 0..t {
                for (o, &bv) in y.data[r * n..(r + 1) * n].iter_mut().zip(&b.data) {
                    *o += bv;
                }
            }
        }
        Ok(y)
    }
}

/// 2-D convolution over [H,W,Cin] maps with [kh,kw,Cin,Cout] weights.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub w: Tensor,
    pub b: Tensor,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    pub fn new(w: Tensor, b: Tensor, stride: usize, pad: usize) -> Result<Self> {
        let (_, _, _, cout) = w.dims4("conv2d weight")?;
        if b.shape() != [cout] {
            return Err(HitError::DimMismatch {
                op: "conv2d bias",
                left: w.shape.clone(),
                right: b.shape().to_vec(),
            });
        }
        Ok(Self { w, b, stride, pad })
    }

    pub fn out_channels(&self) -> usize {
        self.w.shape()[3]
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        conv2d(x, &self.w, &self.b, self.stride, self.pad)
    }
}

/// Convolution via an im2col gather and one matmul; the gather order matches
/// the row-major flattening of the weight tensor.
pub fn conv2d(x: &Tensor, w: &Tensor, b: &Tensor, stride: usize, pad: usize) -> Result<Tensor> {
    let (h, wd, cin) = x.dims3("conv2d")?;
    let (kh, kw, wcin, cout) = w.dims4("conv2d")?;
    if wcin != cin {
        return Err(HitError::DimMismatch {
            op: "conv2d",
            left: x.shape.clone(),
            right: w.shape.clone(),
        });
    }
    if stride == 0 || h + 2 * pad < kh || wd + 2 * pad < kw {
        return Err(HitError::EmptyTensor {
            op: "conv2d",
            shape: x.shape.clone(),
        });
    }
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (wd + 2 * pad - kw) / stride + 1;
    let patch = kh * kw * cin;

    let mut cols = vec![0.0f32; oh * ow * patch];
    for oy in 0..oh {
        for ox in 0..ow {
            let row = &mut cols[(oy * ow + ox) * patch..(oy * ow + ox + 1) * patch];
            let mut idx = 0;
            for dy in 0..kh {
                for dx in 0..kw {
                    let iy = (oy * stride + dy) as isize - pad as isize;
                    let ix = (ox * stride + dx) as isize - pad as isize;
                    if iy >= 0 && (iy as usize) < h && ix >= 0 && (ix as usize) < wd {
                        let src = (iy as usize * wd + ix as usize) * cin;
                        row[idx..idx + cin].copy_from_slice(&x.data[src..src + cin]);
                    }
                    idx += cin;
                }
            }
        }
    }
    let cols_t = Tensor::new(vec![oh * ow, patch], cols)?;
    let w_flat = w.reshape(vec![patch, cout])?;
    let mut y = matmul(&cols_t, &w_flat)?;
    for r in 0..oh * ow {
        for (o, &bv) in y.data[r * cout..(r + 1) * cout].iter_mut().zip(&b.data) {
            *o += bv;
        }
    }
    y.reshape(vec![oh, ow, cout])
}

/// Transposed convolution (scatter form): every input pixel adds its
/// kernel-weighted value into a [(H-1)s+kh, (W-1)s+kw] output map.
pub fn transpose_conv2d(x: &Tensor, w: &Tensor, b: &Tensor, stride: usize) -> Result<Tensor> {
    let (h, wd, cin) = x.dims3("transpose_conv2d")?;
    let (kh, kw, wcin, cout) = w.dims4("transpose_conv2d")?;
    if wcin != cin || b.shape() != [cout] {
        return Err(HitError::DimMismatch {
            op: "transpose_conv2d",
            left: x.shape.clone(),
            right: w.shape.clone(),
        });
    }
    if stride == 0 {
        return Err(HitError::EmptyTensor {
            op: "transpose_conv2d",
            shape: x.shape.clone(),
        });
    }
    macs::add((h * wd * kh * kw * cin * cout) as u64);
    let oh = (h - 1) * stride + kh;
    let ow = (wd - 1) * stride + kw;
    let mut out = vec![0.0f32; oh * ow * cout];
    for y in 0..h {
        for xx in 0..wd {
            let in_px = &x.data[(y * wd + xx) * cin..(y * wd + xx + 1) * cin];
            for dy in 0..kh {
                for dx in 0..kw {
                    let oy = y * stride + dy;
                    let ox = xx * stride + dx;
                    let out_px = &mut out[(oy * ow + ox) * cout..(oy * ow + ox + 1) * cout];
                    for (ci, &xv) in in_px.iter().enumerate() {
                        if xv == 0.0 {
                            continue;
                        }
                        let w_row = &w.data[((dy * kw + dx) * cin + ci) * cout..][..cout];
                        for (o, &wv) in out_px.iter_mut().zip(w_row) {
                            *o += xv * wv;
                        }
                    }
                }
            }
        }
    }
    for px in 0..oh * ow {
        for (o, &bv) in out[px * cout..(px + 1) * cout].iter_mut().zip(&b.data) {
            *o += bv;
        }
    }
    Tensor::new(vec![oh, ow, cout], out)
}

/// Per-channel affine `y = scale*x + shift`, the inference-time residue of a
/// batch-norm style layer. Kept separate so it can be folded into the
/// preceding linear map's weights.
#[derive(Debug, Clone)]
pub struct Affine {
    pub scale: Tensor,
    pub shift: Tensor,
}

impl Affine {
    pub fn identity(channels: usize) -> Result<Self> {
        Ok(Self {
            scale: Tensor::filled(vec![channels], 1.0)?,
            shift: Tensor::zeros(vec![channels])?,
        })
    }

    pub fn channels(&self) -> usize {
        self.scale.len()
    }

    /// Apply along the last axis (channels) of any tensor.
    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        let c = self.scale.len();
        if self.shift.len() != c || x.len() % c != 0 || *x.shape().last().unwrap() != c {
            return Err(HitError::DimMismatch {
                op: "affine",
                left: x.shape().to_vec(),
                right: self.scale.shape().to_vec(),
            });
        }
        let mut data = x.data().to_vec();
        for px in data.chunks_mut(c) {
            for ((v, &s), &t) in px.iter_mut().zip(self.scale.data()).zip(self.shift.data()) {
                *v = *v * s + t;
            }
        }
        Tensor::new(x.shape().to_vec(), data)
    }
}

/// Fold a per-channel affine into the preceding linear layer:
/// `affine(x W + b) == x W' + b'` with `W'[:,o] = scale[o] W[:,o]` and
/// `b'[o] = scale[o] b[o] + shift[o]`.
pub fn fold_norm(affine: &Affine, layer: &Linear) -> Result<Linear> {
    let (cin, cout) = layer.w.dims2("fold_norm")?;
    if affine.channels() != cout {
        return Err(HitError::DimMismatch {
            op: "fold_norm",
            left: layer.w.shape().to_vec(),
            right: affine.scale.shape().to_vec(),
        });
    }
    let scale = affine.scale.data();
    let mut w = layer.w.data().to_vec();
    for r in 0..cin {
        for (o, &s) in w[r * cout..(r + 1) * cout].iter_mut().zip(scale) {
            *o *= s;
        }
    }
    let mut b = vec![0.0f32; cout];
    if let Some(ref lb) = layer.b {
        for ((bo, &s), &lbv) in b.iter_mut().zip(scale).zip(lb.data()) {
            *bo = s * lbv;
        }
    }
    for (bo, &t) in b.iter_mut().zip(affine.shift.data()) {
        *bo += t;
    }
    Linear::new(
        Tensor::new(vec![cin, cout], w)?,
        Some(Tensor::new(vec![cout], b)?),
    )
}

/// Same fold for a convolution, scaling along the output-channel axis.
pub fn fold_norm_conv(affine: &Affine, conv: &Conv2d) -> Result<Conv2d> {
    let (kh, kw, cin, cout) = conv.w.dims4("fold_norm_conv")?;
    if affine.channels() != cout {
        return Err(HitError::DimMismatch {
            op: "fold_norm_conv",
            left: conv.w.shape().to_vec(),
            right: affine.scale.shape().to_vec(),
        });
    }
    let scale = affine.scale.data();
    let mut w = conv.w.data().to_vec();
    for tap in w.chunks_mut(cout) {
        for (o, &s) in tap.iter_mut().zip(scale) {
            *o *= s;
        }
    }
    let b: Vec<f32> = conv
        .b
        .data()
        .iter()
        .zip(scale)
        .zip(affine.shift.data())
        .map(|((&bv, &s), &t)| s * bv + t)
        .collect();
    Conv2d::new(
        Tensor::new(vec![kh, kw, cin, cout], w)?,
        Tensor::new(vec![cout], b)?,
        conv.stride,
        conv.pad,
    )
}
