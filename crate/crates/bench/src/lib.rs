//! Shared fixtures for the criterion benchmarks: deterministic tensors and
//! seeded models, so runs are comparable across machines and commits.

use hit_core::backbone::{ModelConfig, Variant};
use hit_core::model::{AblationSpec, HitModel};
use hit_core::tensor::Tensor;

/// Deterministic pseudo-random fill in [-1, 1) (xorshift; no RNG dependency).
pub fn filled(shape: Vec<usize>, seed: u64) -> Tensor {
    let n: usize = shape.iter().product();
    let mut s = seed.wrapping_mul(0x9e3779b97f4a7c15).max(1);
    let data = (0..n)
        .map(|_| {
            s ^= s << 13;
            s ^= s >> 7;
            s ^= s << 17;
            ((s >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0) as f32
        })
        .collect();
    Tensor::new(shape, data).expect("fixture tensor")
}

/// Image-shaped fixture in [0, 1).
pub fn image(side: usize, seed: u64) -> Tensor {
    let mut t = filled(vec![side, side, 3], seed);
    for v in t.data_mut() {
        *v = (*v + 1.0) * 0.5;
    }
    t
}

pub fn model(variant: Variant) -> (ModelConfig, HitModel, Tensor, Tensor) {
    let cfg = ModelConfig::for_variant(variant);
    let m = HitModel::init(&cfg, AblationSpec::default(), 0).expect("model");
    let t = image(cfg.template_size, 1);
    let s = image(cfg.search_size, 2);
    (cfg, m, t, s)
}
