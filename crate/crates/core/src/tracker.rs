//! End-to-end tracking loop: template initialization from the first frame,
//! per-frame square search-region cropping around the previous box, one
//! forward pass, and mapping the normalized prediction back to frame pixels.
//! No post-processing (no window/scale penalties, no smoothing).

use crate::error::{HitError, Result};
use crate::head::BoxNorm;
use crate::model::BoxPredictor;
use crate::tensor::Tensor;

/// Template crop expands the target box side to `2·√(w·h)`.
pub const TEMPLATE_FACTOR: f32 = 2.0;
/// Search crop expands the previous box side to `4·√(w·h)`.
pub const SEARCH_FACTOR: f32 = 4.0;

/// Axis-aligned box in frame pixels, top-left corner form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub x: f32,
    pub y: f32,
    pub w: f32,
    pub h: f32,
}

impl BBox {
    pub fn new(x: f32, y: f32, w: f32, h: f32) -> Result<Self> {
        if !(x.is_finite() && y.is_finite() && w > 0.0 && h > 0.0 && w.is_finite() && h.is_finite())
        {
            return Err(HitError::InvalidBox {
                context: "BBox",
                x0: x,
                y0: y,
                x1: w,
                y1: h,
            });
        }
        Ok(Self { x, y, w, h })
    }

    pub fn center(&self) -> (f32, f32) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }
}

/// Affine map between crop coordinates and frame coordinates: a crop pixel
/// coordinate `u` corresponds to frame coordinate `offset + u·scale`, and a
/// normalized crop coordinate `n ∈ [0,1]` to `offset + n·side`.
#[derive(Debug, Clone, Copy)]
pub struct CropTransform {
    /// Frame pixels per crop pixel (`side / out_size`).
    pub scale: f32,
    /// Frame coordinates of the crop window origin.
    pub offset_x: f32,
    pub offset_y: f32,
    /// Crop resolution the normalized coordinates refer to.
    pub out_size: usize,
}

impl CropTransform {
    /// Side length of the crop window in frame pixels.
    pub fn side(&self) -> f32 {
        self.scale * self.out_size as f32
    }

    /// Map a normalized crop point into frame coordinates.
    pub fn norm_to_frame(&self, nx: f32, ny: f32) -> (f32, f32) {
        (
            self.offset_x + nx * self.side(),
            self.offset_y + ny * self.side(),
        )
    }

    /// Map a frame point into normalized crop coordinates (may fall outside
    /// [0,1] if the point is outside the window).
    pub fn frame_to_norm(&self, x: f32, y: f32) -> (f32, f32) {
        let side = self.side();
        ((x - self.offset_x) / side, (y - self.offset_y) / side)
    }

    /// Map a normalized corner-form box into a frame-pixel corner box
    /// `(x0, y0, x1, y1)`.
    pub fn box_to_frame(&self, b: &BoxNorm) -> (f32, f32, f32, f32) {
        let (x0, y0) = self.norm_to_frame(b.x0, b.y0);
        let (x1, y1) = self.norm_to_frame(b.x1, b.y1);
        (x0, y0, x1, y1)
    }
}

/// Cut a square window of side `factor·√(w·h)` centered on the box out of the
/// frame, filling out-of-frame area with the frame's per-channel mean, and
/// bilinearly resample it to `out_size × out_size` using the half-pixel
/// convention (output pixel `i` samples source coordinate `(i+0.5)·scale`).
pub fn crop_square(
    img: &Tensor,
    bbox: &BBox,
    factor: f32,
    out_size: usize,
) -> Result<(Tensor, CropTransform)> {
    let (h, w, c) = img.dims3("crop_square")?;
    if !(factor > 0.0) || out_size == 0 {
        return Err(HitError::InvalidBox {
            context: "crop_square factor/out_size",
            x0: factor,
            y0: out_size as f32,
            x1: 0.0,
            y1: 0.0,
        });
    }
    let side = factor * (bbox.w * bbox.h).sqrt();
    let (cx, cy) = bbox.center();
    let x0 = cx - side / 2.0;
    let y0 = cy - side / 2.0;

    let mut means = vec![0.0f32; c];
    for px in img.data().chunks_exact(c) {
        for (m, &v) in means.iter_mut().zip(px) {
            *m += v;
        }
    }
    let inv_n = 1.0 / (h * w) as f32;
    for m in &mut means {
        *m *= inv_n;
    }

    let scale = side / out_size as f32;
    let mut out = vec![0.0f32; out_size * out_size * c];
    for oy in 0..out_size {
        // half-pixel: sample at the center of each output pixel, expressed in
        // source index coordinates (pixel i has its center at index i).
        let sy = y0 + (oy as f32 + 0.5) * scale - 0.5;
        let fy = sy.floor();
        let ty = sy - fy;
        let iy = fy as isize;
        for ox in 0..out_size {
            let sx = x0 + (ox as f32 + 0.5) * scale - 0.5;
            let fx = sx.floor();
            let tx = sx - fx;
            let ix = fx as isize;
            let dst = &mut out[(oy * out_size + ox) * c..(oy * out_size + ox + 1) * c];
            for (ch, d) in dst.iter_mut().enumerate() {
                let p00 = sample(img, iy, ix, ch, &means, h, w, c);
                let p01 = sample(img, iy, ix + 1, ch, &means, h, w, c);
                let p10 = sample(img, iy + 1, ix, ch, &means, h, w, c);
                let p11 = sample(img, iy + 1, ix + 1, ch, &means, h, w, c);
                let top = p00 + (p01 - p00) * tx;
                let bot = p10 + (p11 - p10) * tx;
                *d = top + (bot - top) * ty;
            }
        }
    }
    Ok((
        Tensor::new(vec![out_size, out_size, c], out)?,
        CropTransform {
            scale,
            offset_x: x0,
            offset_y: y0,
            out_size,
        },
    ))
}

#[inline]
fn sample(img: &Tensor, y: isize, x: isize, ch: usize, means: &[f32], h: usize, w: usize, c: usize) -> f32 {
    if y < 0 || x < 0 || y as usize >= h || x as usize >= w {
        means[ch]
    } else {
        img.data()[(y as usize * w + x as usize) * c + ch]
    }
}

/// Clamp a frame-pixel corner box fully inside a `fw × fh` frame with at
/// least one pixel of extent on each axis.
fn clamp_to_frame(x0: f32, y0: f32, x1: f32, y1: f32, fw: f32, fh: f32) -> BBox {
    let w = (x1 - x0).max(1.0).min(fw.max(1.0));
    let h = (y1 - y0).max(1.0).min(fh.max(1.0));
    let x = x0.clamp(0.0, (fw - w).max(0.0));
    let y = y0.clamp(0.0, (fh - h).max(0.0));
    BBox { x, y, w, h }
}

/// Per-sequence tracking state: the fixed template crop taken at `init` and
/// the box returned for the previous frame. The predictor is shared and
/// read-only; use a reference to run many trackers off one model.
#[derive(Debug, Clone)]
pub struct Tracker<P: BoxPredictor> {
    predictor: P,
    template: Tensor,
    prev_box: BBox,
}

impl<P: BoxPredictor> Tracker<P> {
    /// Initialize from the first frame: crop the template at 2× expansion and
    /// remember the given box.
    pub fn init(predictor: P, frame: &Tensor, bbox: BBox) -> Result<Self> {
        let (template, _) = crop_square(frame, &bbox, TEMPLATE_FACTOR, predictor.template_size())?;
        Ok(Self {
            predictor,
            template,
            prev_box: bbox,
        })
    }

    /// Locate the target in the next frame: crop the search region at 4×
    /// expansion around the previous box, predict, map the normalized box
    /// back through the crop transform, and clamp it into the frame.
    pub fn track(&mut self, frame: &Tensor) -> Result<BBox> {
        let (fh, fw, _) = frame.dims3("track")?;
        let (search, xf) = crop_square(
            frame,
            &self.prev_box,
            SEARCH_FACTOR,
            self.predictor.search_size(),
        )?;
        let norm = self.predictor.predict(&self.template, &search)?;
        let (x0, y0, x1, y1) = xf.box_to_frame(&norm);
        let out = clamp_to_frame(x0, y0, x1, y1, fw as f32, fh as f32);
        self.prev_box = out;
        Ok(out)
    }

    pub fn template(&self) -> &Tensor {
        &self.template
    }

    pub fn prev_box(&self) -> BBox {
        self.prev_box
    }
}
