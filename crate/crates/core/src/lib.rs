//! Inference-oriented implementation of a hierarchical-transformer visual
//! tracker: a three-stage attention backbone over a search/template image
//! pair, a feature-pyramid bridge, a corner-regression head, and the tracking
//! loop, metrics, and cost-accounting tools around them.

pub mod accounting;
pub mod attention;
pub mod backbone;
pub mod bridge;
pub mod error;
pub mod head;
pub mod init;
pub mod latency;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod posenc;
pub mod ppm;
pub mod selfcheck;
pub mod synth;
pub mod tensor;
pub mod tracker;
pub mod weights;

pub use error::{HitError, Result};
pub use tensor::Tensor;
