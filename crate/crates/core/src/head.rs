//! Corner prediction head: the fused search map is optionally re-weighted by
//! similarity to the pooled global vector, pushed through a shared trunk and
//! two convolutional branches producing top-left and bottom-right heatmaps,
//! and decoded to a normalized box with soft-argmax.

use crate::error::{HitError, Result};
use crate::init::{biased_linear, NormConv, TensorSource};
use crate::tensor::{matmul_nt, softmax_rows, Conv2d, Linear, Tensor};

/// Box in crop-normalized coordinates: every component in [0,1],
/// (x0,y0) the top-left corner, (x1,y1) the bottom-right.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxNorm {
    pub x0: f32,
    pub y0: f32,
    pub x1: f32,
    pub y1: f32,
}

impl BoxNorm {
    pub fn new(x0: f32, y0: f32, x1: f32, y1: f32) -> Result<Self> {
        let inside = (0.0..=1.0).contains(&x0)
            && (0.0..=1.0).contains(&y0)
            && (0.0..=1.0).contains(&x1)
            && (0.0..=1.0).contains(&y1);
        if !inside || x0 > x1 || y0 > y1 {
            return Err(HitError::InvalidBox {
                context: "BoxNorm",
                x0,
                y0,
                x1,
                y1,
            });
        }
        Ok(Self { x0, y0, x1, y1 })
    }

    pub fn width(&self) -> f32 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f32 {
        self.y1 - self.y0
    }

    pub fn area(&self) -> f32 {
        self.width() * self.height()
    }
}

/// Fixed trunk width of the corner branches, shared by every variant.
pub const HEAD_WIDTH: usize = 384;

/// One corner branch: four 3x3 conv+norm+hardswish layers halving channels,
/// then a 1x1 convolution to a single-channel logit map.
#[derive(Debug, Clone)]
pub struct Branch {
    pub convs: Vec<NormConv>,
    pub out: Conv2d,
}

impl Branch {
    fn build(src: &mut TensorSource, prefix: &str) -> Result<Self> {
        let mut convs = Vec::with_capacity(4);
        let mut c = HEAD_WIDTH;
        for i in 0..4 {
            convs.push(NormConv::build(
                src,
                &format!("{prefix}.conv{i}"),
                3,
                c,
                c / 2,
                1,
                1,
            )?);
            c /= 2;
        }
        let out = Conv2d::new(
            src.fan_in(&format!("{prefix}.out.w"), &[1, 1, c, 1], c)?,
            src.fan_in(&format!("{prefix}.out.b"), &[1], c)?,
            1,
            0,
        )?;
        Ok(Self { convs, out })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut t = x.clone();
        for nc in &self.convs {
            t = nc.forward(&t)?;
        }
        self.out.forward(&t)
    }

    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        for (i, nc) in self.convs.iter().enumerate() {
            nc.visit(&format!("{prefix}.conv{i}"), out);
        }
        out.push((format!("{prefix}.out.w"), &self.out.w));
        out.push((format!("{prefix}.out.b"), &self.out.b));
    }
}

#[derive(Debug, Clone)]
pub struct CornerHead {
    /// Global-vector projection C3 -> C1; absent when re-weighting is
    /// disabled.
    pub gproj: Option<Linear>,
    /// 1x1 conv C1 -> HEAD_WIDTH shared by both branches.
    pub trunk: NormConv,
    pub tl: Branch,
    pub br: Branch,
    in_channels: usize,
    grid: usize,
}

impl CornerHead {
    pub fn build(
        c1: usize,
        c3: usize,
        grid: usize,
        use_g: bool,
        src: &mut TensorSource,
    ) -> Result<Self> {
        let gproj = if use_g {
            Some(biased_linear(src, "head.gproj.w", "head.gproj.b", c3, c1)?)
        } else {
            None
        };
        let trunk = NormConv::build(src, "head.trunk.conv", 1, c1, HEAD_WIDTH, 1, 0)?;
        let tl = Branch::build(src, "head.tl")?;
        let br = Branch::build(src, "head.br")?;
        Ok(Self {
            gproj,
            trunk,
            tl,
            br,
            in_channels: c1,
            grid,
        })
    }

    pub fn uses_g(&self) -> bool {
        self.gproj.is_some()
    }

    pub fn visit<'a>(&'a self, out: &mut Vec<(String, &'a Tensor)>) {
        if let Some(g) = &self.gproj {
            out.push(("head.gproj.w".into(), &g.w));
            out.push(("head.gproj.b".into(), g.b.as_ref().expect("gproj bias")));
        }
        self.trunk.visit("head.trunk.conv", out);
        self.tl.visit("head.tl", out);
        self.br.visit("head.br", out);
    }

    fn check_map(&self, os: &Tensor) -> Result<()> {
        if os.shape() != [self.grid, self.grid, self.in_channels] {
            return Err(HitError::Config(format!(
                "head expects a {0}x{0}x{1} map, got {2:?}",
                self.grid,
                self.in_channels,
                os.shape()
            )));
        }
        Ok(())
    }

    /// Scale each spatial feature by its softmax-normalized similarity to the
    /// projected global vector: out(p) = os(p) * (1 + map(p) * P) over P
    /// positions, so a uniform map doubles everything and a saturated map
    /// scales its winner by P+1.
    pub fn reweight(&self, g: &Tensor, os: &Tensor) -> Result<Tensor> {
        self.check_map(os)?;
        let gproj = self.gproj.as_ref().ok_or(HitError::Config(
            "reweight called on a head built without the global branch".into(),
        ))?;
        let positions = self.grid * self.grid;
        let c = self.in_channels;
        let gp = gproj.forward(g)?;
        let flat = os.clone().reshape(vec![positions, c])?;
        let mut score = matmul_nt(&flat, &gp)?;
        let inv = 1.0 / (c as f32).sqrt();
        for v in score.data_mut() {
            *v *= inv;
        }
        let map = softmax_rows(&score.reshape(vec![1, positions])?)?;
        let mut out = os.clone();
        let scale = positions as f32;
        for (p, &m) in map.data().iter().enumerate() {
            let f = 1.0 + m * scale;
            for v in &mut out.data_mut()[p * c..(p + 1) * c] {
                *v *= f;
            }
        }
        Ok(out)
    }

    /// Trunk + both branches; each logit map is softmax-normalized over all
    /// its cells.
    pub fn corner_heatmaps(&self, feat: &Tensor) -> Result<(Tensor, Tensor)> {
        self.check_map(feat)?;
        let t = self.trunk.forward(feat)?;
        let norm = |logits: Tensor| -> Result<Tensor> {
            let cells = self.grid * self.grid;
            let flat = logits.reshape(vec![1, cells])?;
            softmax_rows(&flat)?.reshape(vec![self.grid, self.grid])
        };
        Ok((
            norm(self.tl.forward(&t)?)?,
            norm(self.br.forward(&t)?)?,
        ))
    }

    /// Full decode: optional re-weighting, heatmaps, soft-argmax, corner
    /// ordering.
    pub fn forward(&self, g: &Tensor, os: &Tensor) -> Result<BoxNorm> {
        let feat = match &self.gproj {
            Some(_) => self.reweight(g, os)?,
            None => os.clone(),
        };
        let (tl_hm, br_hm) = self.corner_heatmaps(&feat)?;
        let (tlx, tly) = soft_argmax(&tl_hm)?;
        let (brx, bry) = soft_argmax(&br_hm)?;
        BoxNorm::new(
            tlx.min(brx),
            tly.min(bry),
            tlx.max(brx),
            tly.max(bry),
        )
    }
}

/// Probability-weighted mean of pixel-center coordinates, mapped to [0,1].
pub fn soft_argmax(hm: &Tensor) -> Result<(f32, f32)> {
    let (h, w) = hm.dims2("soft_argmax")?;
    let sum: f32 = hm.data().iter().sum();
    if (sum - 1.0).abs() > 1e-4 {
        return Err(HitError::Config(format!(
            "soft_argmax input sums to {sum}, expected a normalized heatmap"
        )));
    }
    let (mut x, mut y) = (0.0f32, 0.0f32);
    for i in 0..h {
        for j in 0..w {
            let p = hm.at2(i, j);
            x += p * (j as f32 + 0.5) / w as f32;
            y += p * (i as f32 + 0.5) / h as f32;
        }
    }
    Ok((x, y))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const C1: usize = 128;
    const C3: usize = 384;

    fn rand_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Tensor::new(shape, data).unwrap()
    }

    fn head(seed: u64, use_g: bool) -> CornerHead {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        CornerHead::build(C1, C3, 16, use_g, &mut TensorSource::Random(&mut rng)).unwrap()
    }

    fn one_hot(side: usize, i: usize, j: usize) -> Tensor {
        let mut t = Tensor::zeros(vec![side, side]).unwrap();
        t.data_mut()[i * side + j] = 1.0;
        t
    }

    #[test]
    fn soft_argmax_examples() {
        let (x, y) = soft_argmax(&one_hot(16, 0, 0)).unwrap();
        assert!((x - 0.03125).abs() < 1e-7 && (y - 0.03125).abs() < 1e-7);
        let (x, y) = soft_argmax(&one_hot(16, 15, 15)).unwrap();
        assert!((x - 0.96875).abs() < 1e-7 && (y - 0.96875).abs() < 1e-7);
        let uniform = Tensor::filled(vec![16, 16], 1.0 / 256.0).unwrap();
        let (x, y) = soft_argmax(&uniform).unwrap();
        assert!((x - 0.5).abs() < 1e-6 && (y - 0.5).abs() < 1e-6);
    }

    #[test]
    fn soft_argmax_rejects_unnormalized_input() {
        let t = Tensor::filled(vec![16, 16], 1.0).unwrap();
        assert!(soft_argmax(&t).is_err());
    }

    #[test]
    fn uniform_reweight_doubles_features() {
        // zero gproj weight and bias give a constant score map
        let mut h = head(1, true);
        let g = h.gproj.as_ref().unwrap();
        let (i, o) = (g.in_dim(), g.out_dim());
        h.gproj = Some(
            Linear::new(
                Tensor::zeros(vec![i, o]).unwrap(),
                Some(Tensor::zeros(vec![o]).unwrap()),
            )
            .unwrap(),
        );
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let os = rand_tensor(&mut rng, vec![16, 16, C1]);
        let gvec = rand_tensor(&mut rng, vec![1, C3]);
        let out = h.reweight(&gvec, &os).unwrap();
        for (a, b) in out.data().iter().zip(os.data()) {
            assert!((a - 2.0 * b).abs() < 1e-5);
        }
    }

    #[test]
    fn saturated_score_scales_winner_by_positions_plus_one() {
        // Rig os so one position dwarfs the rest in similarity to g'.
        let mut h = head(3, true);
        let g = h.gproj.as_ref().unwrap();
        let (i, o) = (g.in_dim(), g.out_dim());
        // gproj ignores its input and emits the fixed direction e0
        let w = Tensor::zeros(vec![i, o]).unwrap();
        let mut b = Tensor::zeros(vec![o]).unwrap();
        b.data_mut()[0] = 1.0;
        h.gproj = Some(Linear::new(w, Some(b)).unwrap());
        let mut os = Tensor::zeros(vec![16, 16, C1]).unwrap();
        // position (0,0) has a huge component along e0, so score(0) is huge
        os.data_mut()[0] = 1e4;
        // give every other position a small distinct value off-axis
        for p in 1..256 {
            os.data_mut()[p * C1 + 1] = 0.5;
        }
        let gvec = Tensor::zeros(vec![1, C3]).unwrap();
        let out = h.reweight(&gvec, &os).unwrap();
        assert!((out.data()[0] / os.data()[0] - 257.0).abs() < 1e-3);
        for p in 1..256 {
            let ratio = out.data()[p * C1 + 1] / os.data()[p * C1 + 1];
            assert!((ratio - 1.0).abs() < 1e-3, "position {p} scaled by {ratio}");
        }
    }

    #[test]
    fn heatmaps_are_normalized_and_finite() {
        let h = head(4, true);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let feat = rand_tensor(&mut rng, vec![16, 16, C1]);
        let (tl, br) = h.corner_heatmaps(&feat).unwrap();
        for hm in [&tl, &br] {
            assert_eq!(hm.shape(), &[16, 16]);
            let sum: f32 = hm.data().iter().sum();
            assert!((sum - 1.0).abs() < 1e-6);
            assert!(hm.data().iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn zero_weight_head_gives_uniform_heatmaps_and_center_box() {
        let h = CornerHead::build(C1, C3, 16, true, &mut TensorSource::Zeros).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let os = rand_tensor(&mut rng, vec![16, 16, C1]);
        let g = rand_tensor(&mut rng, vec![1, C3]);
        let (tl, _) = h.corner_heatmaps(&os).unwrap();
        for &v in tl.data() {
            assert!((v - 1.0 / 256.0).abs() < 1e-9);
        }
        let b = h.forward(&g, &os).unwrap();
        assert!((b.x0 - 0.5).abs() < 1e-6 && (b.y1 - 0.5).abs() < 1e-6);
    }

    #[test]
    fn decoded_boxes_are_ordered_and_in_range() {
        for seed in 0..8 {
            let h = head(seed, seed % 2 == 0);
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let os = rand_tensor(&mut rng, vec![16, 16, C1]);
            let g = rand_tensor(&mut rng, vec![1, C3]);
            let b = h.forward(&g, &os).unwrap();
            assert!(b.x0 <= b.x1 && b.y0 <= b.y1);
            for v in [b.x0, b.y0, b.x1, b.y1] {
                assert!((0.0..=1.0).contains(&v));
            }
        }
    }

    #[test]
    fn zero_gproj_path_is_exactly_the_doubled_feature_path() {
        // With g' = 0 the re-weighted path reduces to running the heatmap
        // stack on 2*os: the two paths differ only by that uniform doubling.
        // (The doubling itself can still reorder heatmap cells downstream,
        // because the branch convolutions carry biases and the activation is
        // not monotone, so argmax equality between the paths is not a
        // property of this head.)
        let mut with_g = head(7, true);
        let g = with_g.gproj.as_ref().unwrap();
        let (i, o) = (g.in_dim(), g.out_dim());
        with_g.gproj = Some(
            Linear::new(
                Tensor::zeros(vec![i, o]).unwrap(),
                Some(Tensor::zeros(vec![o]).unwrap()),
            )
            .unwrap(),
        );
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let os = rand_tensor(&mut rng, vec![16, 16, C1]);
        let gvec = rand_tensor(&mut rng, vec![1, C3]);

        let feat = with_g.reweight(&gvec, &os).unwrap();
        let mut doubled = os.clone();
        for v in doubled.data_mut() {
            *v *= 2.0;
        }
        // softmax over 256 zero scores is exactly 1/256, so the multiplier is
        // exactly 2 and the equality is bitwise
        assert_eq!(feat.data(), doubled.data());

        let (tl_a, br_a) = with_g.corner_heatmaps(&feat).unwrap();
        let (tl_b, br_b) = with_g.corner_heatmaps(&doubled).unwrap();
        assert_eq!(tl_a.data(), tl_b.data());
        assert_eq!(br_a.data(), br_b.data());
    }

    #[test]
    fn branch_channel_schedule() {
        let h = head(9, false);
        assert!(h.gproj.is_none());
        let widths: Vec<usize> = h.tl.convs.iter().map(|c| c.conv.out_channels()).collect();
        assert_eq!(widths, vec![192, 96, 48, 24]);
        assert_eq!(h.trunk.conv.out_channels(), HEAD_WIDTH);
        assert_eq!(h.tl.out.w.shape(), &[1, 1, 24, 1]);
    }

    #[test]
    fn boxnorm_validates() {
        assert!(BoxNorm::new(0.2, 0.2, 0.8, 0.9).is_ok());
        assert!(BoxNorm::new(0.8, 0.2, 0.2, 0.9).is_err());
        assert!(BoxNorm::new(-0.1, 0.2, 0.8, 0.9).is_err());
        assert!(BoxNorm::new(0.2, 0.2, 0.8, 1.1).is_err());
        let b = BoxNorm::new(0.25, 0.25, 0.75, 0.75).unwrap();
        assert!((b.area() - 0.25).abs() < 1e-7);
    }
}
