//! Weight construction. Every model component builds its tensors through a
//! [`TensorSource`], so random initialization and loading from a weight file
//! share one code path and enumerate parameters in the same order. Random
//! weights and biases draw from uniform(-1/sqrt(fan_in), +1/sqrt(fan_in));
//! affine scales start at one, affine shifts and attention bias tables at
//! zero.

use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{HitError, Result};
use crate::posenc::BiasTable;
use crate::tensor::{Affine, Conv2d, Linear, Tensor};

pub enum TensorSource<'a> {
    /// Seeded initialization for a fresh model.
    Random(&'a mut ChaCha8Rng),
    /// All-zero weights; degenerate models for tests.
    Zeros,
    /// Tensors loaded from a weight file, keyed by parameter name. Each
    /// tensor is consumed when requested; leftovers mean a mismatched file.
    Stored(&'a mut HashMap<String, Tensor>),
}

impl TensorSource<'_> {
    fn take(&mut self, name: &str, shape: &[usize], fill: Fill) -> Result<Tensor> {
        match self {
            TensorSource::Random(rng) => Ok(match fill {
                Fill::FanIn(n) => {
                    let bound = 1.0 / (n as f32).sqrt();
                    let len: usize = shape.iter().product();
                    let data = (0..len).map(|_| rng.gen_range(-bound..bound)).collect();
                    Tensor::new(shape.to_vec(), data)?
                }
                Fill::Zero => Tensor::zeros(shape.to_vec())?,
                Fill::One => Tensor::filled(shape.to_vec(), 1.0)?,
            }),
            TensorSource::Zeros => Ok(Tensor::zeros(shape.to_vec())?),
            TensorSource::Stored(map) => {
                let t = map.remove(name).ok_or_else(|| {
                    HitError::WeightFormat(format!("missing tensor `{name}`"))
                })?;
                if t.shape() != shape {
                    return Err(HitError::WeightFormat(format!(
                        "tensor `{name}` has shape {:?}, model expects {:?}",
                        t.shape(),
                        shape
                    )));
                }
                Ok(t)
            }
        }
    }

    /// Weight or bias drawn at uniform(+-1/sqrt(fan_in)) when random.
    pub fn fan_in(&mut self, name: &str, shape: &[usize], fan_in: usize) -> Result<Tensor> {
        self.take(name, shape, Fill::FanIn(fan_in))
    }

    pub fn zeros(&mut self, name: &str, shape: &[usize]) -> Result<Tensor> {
        self.take(name, shape, Fill::Zero)
    }

    pub fn ones(&mut self, name: &str, shape: &[usize]) -> Result<Tensor> {
        self.take(name, shape, Fill::One)
    }
}

enum Fill {
    FanIn(usize),
    Zero,
    One,
}

/// Bias-free projection stored under a single tensor name.
pub fn attn_linear(
    src: &mut TensorSource,
    name: &str,
    in_dim: usize,
    out_dim: usize,
) -> Result<Linear> {
    Linear::new(src.fan_in(name, &[in_dim, out_dim], in_dim)?, None)
}

/// Linear with bias, stored as two named tensors.
pub fn biased_linear(
    src: &mut TensorSource,
    wname: &str,
    bname: &str,
    in_dim: usize,
    out_dim: usize,
) -> Result<Linear> {
    let w = src.fan_in(wname, &[in_dim, out_dim], in_dim)?;
    let b = src.fan_in(bname, &[out_dim], in_dim)?;
    Linear::new(w, Some(b))
}

/// 3x3 (or kxk) convolution with affine normalization parameters, stored as
/// `{prefix}.{w,b,scale,shift}`.
#[derive(Debug, Clone)]
pub struct NormConv {
    pub conv: Conv2d,
    pub affine: Affine,
}

impl NormConv {
    pub fn build(
        src: &mut TensorSource,
        prefix: &str,
        k: usize,
        cin: usize,
        cout: usize,
        stride: usize,
        pad: usize,
    ) -> Result<Self> {
        let fan = k * k * cin;
        let w = src.fan_in(&format!("{prefix}.w"), &[k, k, cin, cout], fan)?;
        let b = src.fan_in(&format!("{prefix}.b"), &[cout], fan)?;
        let scale = src.ones(&format!("{prefix}.scale"), &[cout])?;
        let shift = src.zeros(&format!("{prefix}.shift"), &[cout])?;
        Ok(Self {
            conv: Conv2d::new(w, b, stride, pad)?,
            affine: Affine { scale, shift },
        })
    }

    /// conv -> affine -> hardswish.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(crate::tensor::hardswish(&self.affine.apply(&self.conv.forward(x)?)?))
    }

    pub fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        out.push((format!("{prefix}.w"), &self.conv.w));
        out.push((format!("{prefix}.b"), &self.conv.b));
        out.push((format!("{prefix}.scale"), &self.affine.scale));
        out.push((format!("{prefix}.shift"), &self.affine.shift));
    }
}

pub fn mlp(src: &mut TensorSource, prefix: &str, channels: usize) -> Result<crate::attention::Mlp> {
    let w1 = biased_linear(
        src,
        &format!("{prefix}.w1"),
        &format!("{prefix}.b1"),
        channels,
        2 * channels,
    )?;
    let w2 = biased_linear(
        src,
        &format!("{prefix}.w2"),
        &format!("{prefix}.b2"),
        2 * channels,
        channels,
    )?;
    crate::attention::Mlp::new(w1, w2)
}

pub fn visit_mlp<'a>(
    mlp: &'a crate::attention::Mlp,
    prefix: &str,
    out: &mut Vec<(String, &'a Tensor)>,
) {
    out.push((format!("{prefix}.w1"), &mlp.w1.w));
    out.push((format!("{prefix}.b1"), mlp.w1.b.as_ref().expect("mlp w1 bias")));
    out.push((format!("{prefix}.w2"), &mlp.w2.w));
    out.push((format!("{prefix}.b2"), mlp.w2.b.as_ref().expect("mlp w2 bias")));
}

/// Zero-initialized relative-position bias table, one grid per head.
pub fn bias_table(
    src: &mut TensorSource,
    name: &str,
    heads: usize,
    extent: (usize, usize),
) -> Result<BiasTable> {
    let (ex, ey) = extent;
    BiasTable::from_tensor(src.zeros(name, &[heads, ey, ex])?)
}
