//! Deterministic synthetic sequences: a checker-textured square rigidly
//! moving over a smooth contrasting background, with exact per-frame ground
//! truth. Used for end-to-end tracker runs and metric-engine tests without
//! any dataset dependency.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{HitError, Result};
use crate::tensor::Tensor;
use crate::tracker::BBox;

pub const FRAME_WIDTH: usize = 320;
pub const FRAME_HEIGHT: usize = 240;

/// Target motion model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Motion {
    /// The target never moves.
    Static,
    /// Constant velocity, reflecting off the frame borders.
    Linear,
}

impl Motion {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "static" => Ok(Motion::Static),
            "linear" => Ok(Motion::Linear),
            other => Err(HitError::Config(format!(
                "unknown motion `{other}`, expected static|linear"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Motion::Static => "static",
            Motion::Linear => "linear",
        }
    }
}

/// A generated sequence: frames as `[H, W, 3]` tensors in [0,1] and the
/// matching ground-truth boxes.
#[derive(Debug, Clone)]
pub struct SynthSequence {
    pub frames: Vec<Tensor>,
    pub boxes: Vec<BBox>,
}

/// Generate `n_frames` frames of a textured square target. The same seed
/// always produces the same pixels and boxes.
pub fn synth_sequence(seed: u64, n_frames: usize, motion: Motion) -> Result<SynthSequence> {
    if n_frames == 0 {
        return Err(HitError::Config("need at least one frame".into()));
    }
    let (w, h) = (FRAME_WIDTH, FRAME_HEIGHT);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let side = rng.gen_range(28.0f32..56.0);
    let margin = 8.0;
    let mut cx = rng.gen_range(side / 2.0 + margin..w as f32 - side / 2.0 - margin);
    let mut cy = rng.gen_range(side / 2.0 + margin..h as f32 - side / 2.0 - margin);
    let (mut vx, mut vy) = match motion {
        Motion::Static => (0.0, 0.0),
        Motion::Linear => (rng.gen_range(-4.0f32..4.0), rng.gen_range(-4.0f32..4.0)),
    };
    // background hue and texture phase are per-sequence constants
    let bg = [
        rng.gen_range(0.05f32..0.25),
        rng.gen_range(0.05f32..0.25),
        rng.gen_range(0.35f32..0.55),
    ];
    let checker_phase = rng.gen_range(0u32..8);

    let mut frames = Vec::with_capacity(n_frames);
    let mut boxes = Vec::with_capacity(n_frames);
    for _ in 0..n_frames {
        let bx = cx - side / 2.0;
        let by = cy - side / 2.0;
        frames.push(render_frame(w, h, bx, by, side, bg, checker_phase));
        boxes.push(BBox::new(bx, by, side, side)?);

        cx += vx;
        cy += vy;
        // reflect so the target (plus margin) stays inside the frame
        let (lo_x, hi_x) = (side / 2.0, w as f32 - side / 2.0);
        if cx < lo_x {
            cx = 2.0 * lo_x - cx;
            vx = -vx;
        } else if cx > hi_x {
            cx = 2.0 * hi_x - cx;
            vx = -vx;
        }
        let (lo_y, hi_y) = (side / 2.0, h as f32 - side / 2.0);
        if cy < lo_y {
            cy = 2.0 * lo_y - cy;
            vy = -vy;
        } else if cy > hi_y {
            cy = 2.0 * hi_y - cy;
            vy = -vy;
        }
    }
    Ok(SynthSequence { frames, boxes })
}

/// Draw one frame: smooth background gradient with the checkerboard square
/// composited on top. The checker pattern is anchored to the box, so the
/// target's appearance is translation-invariant.
fn render_frame(
    w: usize,
    h: usize,
    bx: f32,
    by: f32,
    side: f32,
    bg: [f32; 3],
    checker_phase: u32,
) -> Tensor {
    let mut data = Vec::with_capacity(h * w * 3);
    for y in 0..h {
        for x in 0..w {
            let px = x as f32 + 0.5;
            let py = y as f32 + 0.5;
            if px >= bx && px < bx + side && py >= by && py < by + side {
                // object-anchored 8-pixel checkerboard, bright vs dark
                let u = ((px - bx) / 8.0) as u32;
                let v = ((py - by) / 8.0) as u32;
                let cell = (u + v + checker_phase) % 2;
                if cell == 0 {
                    data.extend_from_slice(&[0.95, 0.9, 0.1]);
                } else {
                    data.extend_from_slice(&[0.85, 0.15, 0.1]);
                }
            } else {
                let gx = x as f32 / w as f32;
                let gy = y as f32 / h as f32;
                data.push(bg[0] * (1.0 - 0.3 * gx));
                data.push(bg[1] * (1.0 - 0.3 * gy));
                data.push(bg[2] * (0.7 + 0.3 * gx * gy));
            }
        }
    }
    Tensor::new(vec![h, w, 3], data).expect("render dimensions are consistent")
}
