use thiserror::Error;

/// Crate-wide error type. Numeric ops report shape problems eagerly so a bad
/// wiring fails at the first op instead of producing garbage downstream.
#[derive(Debug, Error)]
pub enum HitError {
    #[error("{op}: dimension mismatch, left shape {left:?} vs right shape {right:?}")]
    DimMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("{op}: expected rank-{expected} tensor, got shape {shape:?}")]
    BadRank {
        op: &'static str,
        expected: usize,
        shape: Vec<usize>,
    },

    #[error("shape {shape:?} implies {expected} elements, data has {actual}")]
    ShapeDataMismatch {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },

    #[error("{op}: empty or zero-extent tensor {shape:?}")]
    EmptyTensor { op: &'static str, shape: Vec<usize> },

    #[error("reshape: cannot view {from:?} ({elems} elements) as {to:?}")]
    BadReshape {
        from: Vec<usize>,
        to: Vec<usize>,
        elems: usize,
    },

    #[error(
        "bias table {have_x}x{have_y} too small: arrangement reaches offsets up to {need_x}x{need_y}"
    )]
    BiasTableTooSmall {
        have_x: usize,
        have_y: usize,
        need_x: usize,
        need_y: usize,
    },

    #[error("{op}: token count {tokens} does not match arrangement ({expected} tokens)")]
    TokenCountMismatch {
        op: &'static str,
        tokens: usize,
        expected: usize,
    },

    #[error("{op}: extents must be even, got {extent:?}")]
    OddExtent {
        op: &'static str,
        extent: (usize, usize),
    },

    #[error("absolute encoding needs an even channel count, got {0}")]
    OddChannels(usize),

    #[error("invalid box {context}: ({x0}, {y0}, {x1}, {y1})")]
    InvalidBox {
        context: &'static str,
        x0: f32,
        y0: f32,
        x1: f32,
        y1: f32,
    },

    #[error("gradient undefined at this point: {0}")]
    NonDifferentiable(&'static str),

    #[error("weight file: {0}")]
    WeightFormat(String),

    #[error("ppm: {0}")]
    PpmFormat(String),

    #[error("trajectory: {0}")]
    Trajectory(String),

    #[error("sequence length mismatch: {pred} predictions vs {gt} ground-truth boxes")]
    SequenceMismatch { pred: usize, gt: usize },

    #[error("{0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, HitError>;
