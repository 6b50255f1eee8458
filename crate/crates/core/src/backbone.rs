//! The hierarchical transformer: patch embedding, three stages of attention
//! blocks joined by shrink junctions, per-stage search-feature capture, and
//! the pooled global vector.
//!
//! A 256x256 search image and a 128x128 template are each embedded to a
//! 16x-downsampled token grid (256 and 64 tokens), concatenated search-first,
//! and pushed through the stages. Each junction quarters the token count and
//! raises the channel width. After stage i the search-region slice is
//! reshaped to its 2-D map, giving a three-level feature pyramid, and the
//! final stage's tokens are averaged into a single global vector.

use rand_chacha::ChaCha8Rng;

use crate::attention::{
    mha_forward, mlp_block, shrink_forward, split_to_grids, subsample_downsample, MhaLayer, Mlp,
    ShrinkLayer,
};
use crate::error::{HitError, Result};
use crate::init::{attn_linear, bias_table, biased_linear, mlp, visit_mlp, NormConv, TensorSource};
use crate::posenc::{absolute_encoding, max_table_extent, Arrangement, Placement};
use crate::tensor::{add, concat_tokens, mean_rows, Linear, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Base,
    Small,
    Tiny,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Base => "base",
            Variant::Small => "small",
            Variant::Tiny => "tiny",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "base" => Ok(Variant::Base),
            "small" => Ok(Variant::Small),
            "tiny" => Ok(Variant::Tiny),
            other => Err(HitError::Config(format!(
                "unknown variant `{other}` (expected base, small, or tiny)"
            ))),
        }
    }
}

/// Per-variant hyperparameters.
#[derive(Debug, Clone)]
pub struct ModelConfig {
    pub variant: Variant,
    /// Per-head query/key width D.
    pub key_dim: usize,
    /// Attention blocks per stage.
    pub blocks: [usize; 3],
    /// Channel width per stage.
    pub channels: [usize; 3],
    /// Attention heads per stage.
    pub mha_heads: [usize; 3],
    /// Heads of the two shrink junctions.
    pub sa_heads: [usize; 2],
    /// Spatial stride of each junction.
    pub sa_stride: usize,
    pub search_size: usize,
    pub template_size: usize,
    pub patch_stride: usize,
}

impl ModelConfig {
    pub fn base() -> Self {
        Self {
            variant: Variant::Base,
            key_dim: 32,
            blocks: [4, 4, 4],
            channels: [384, 512, 768],
            mha_heads: [6, 9, 12],
            sa_heads: [12, 18],
            sa_stride: 2,
            search_size: 256,
            template_size: 128,
            patch_stride: 16,
        }
    }

    pub fn small() -> Self {
        Self {
            variant: Variant::Small,
            key_dim: 16,
            blocks: [4, 4, 4],
            channels: [128, 256, 384],
            mha_heads: [4, 8, 12],
            sa_heads: [8, 16],
            ..Self::base()
        }
    }

    pub fn tiny() -> Self {
        Self {
            variant: Variant::Tiny,
            key_dim: 16,
            blocks: [2, 3, 4],
            channels: [128, 256, 384],
            mha_heads: [4, 6, 8],
            sa_heads: [8, 16],
            ..Self::base()
        }
    }

    pub fn for_variant(v: Variant) -> Self {
        match v {
            Variant::Base => Self::base(),
            Variant::Small => Self::small(),
            Variant::Tiny => Self::tiny(),
        }
    }

    /// Search token grid side at stage `level` (0-based).
    pub fn search_grid(&self, level: usize) -> usize {
        (self.search_size / self.patch_stride) >> level
    }

    /// Template token grid side at stage `level`.
    pub fn template_grid(&self, level: usize) -> usize {
        (self.template_size / self.patch_stride) >> level
    }

    /// Token arrangement at stage `level` under the given placement.
    pub fn arrangement(&self, placement: Placement, level: usize) -> Arrangement {
        let s = self.search_grid(level);
        let t = self.template_grid(level);
        Arrangement::new(placement, (s, s), (t, t))
    }

    /// Bias-table extent at stage `level`: sized for the most demanding
    /// placement so tables are interchangeable across placements.
    pub fn table_extent(&self, level: usize) -> (usize, usize) {
        let s = self.search_grid(level);
        let t = self.template_grid(level);
        max_table_extent((s, s), (t, t))
    }
}

/// How the stage junctions reduce token resolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DownsampleKind {
    /// Shrink attention: subsampled queries over full-resolution keys/values.
    ShrinkAttention,
    /// Plain even-index subsampling with a linear channel projection.
    Subsample,
}

impl DownsampleKind {
    pub fn name(self) -> &'static str {
        match self {
            DownsampleKind::ShrinkAttention => "shrink",
            DownsampleKind::Subsample => "subsample",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "shrink" | "sa" | "shrinkattention" => Ok(DownsampleKind::ShrinkAttention),
            "subsample" | "sub" => Ok(DownsampleKind::Subsample),
            other => Err(HitError::Config(format!(
                "unknown downsample kind `{other}` (expected shrink or subsample)"
            ))),
        }
    }
}

/// One stage block: pre-norm-free attention with residual, then the MLP.
#[derive(Debug, Clone)]
pub struct Block {
    pub attn: MhaLayer,
    pub mlp: Mlp,
}

#[derive(Debug, Clone)]
pub enum Junction {
    Shrink(ShrinkLayer),
    Subsample(Linear),
}

/// Stage junction: a resolution-reducing operator followed by an MLP at the
/// widened channel count.
#[derive(Debug, Clone)]
pub struct JunctionBlock {
    pub down: Junction,
    pub mlp: Mlp,
}

/// Backbone outputs: per-stage search-region maps plus the global vector.
#[derive(Debug, Clone)]
pub struct FeaturePyramid {
    /// [16,16,C1]
    pub s_max: Tensor,
    /// [8,8,C2]
    pub s_mid: Tensor,
    /// [4,4,C3]
    pub s_min: Tensor,
    /// [1,C3], mean over all final-stage tokens.
    pub g: Tensor,
}

/// Everything a forward pass produces, for tests and instrumentation.
#[derive(Debug, Clone)]
pub struct BackboneTrace {
    /// Final token matrix of each stage, joint sequence.
    pub stage_tokens: Vec<Tensor>,
    /// Arrangement at each stage.
    pub stage_arrs: Vec<Arrangement>,
    pub pyramid: FeaturePyramid,
}

#[derive(Debug, Clone)]
pub struct Backbone {
    pub cfg: ModelConfig,
    pub placement: Placement,
    pub embed: Vec<NormConv>,
    pub stages: Vec<Vec<Block>>,
    pub junctions: Vec<JunctionBlock>,
    /// Sinusoidal per-image encodings, present only for absolute placement:
    /// (search [256,C1], template [64,C1]).
    abs_enc: Option<(Tensor, Tensor)>,
}

/// Embedding channel ladder: 3 -> C1/8 -> C1/4 -> C1/2 -> C1.
pub fn embed_channels(c1: usize) -> [usize; 5] {
    [3, c1 / 8, c1 / 4, c1 / 2, c1]
}

impl Backbone {
    pub fn build(
        cfg: &ModelConfig,
        placement: Placement,
        downsample: DownsampleKind,
        src: &mut TensorSource,
    ) -> Result<Self> {
        let ch = embed_channels(cfg.channels[0]);
        let mut embed = Vec::with_capacity(4);
        for i in 0..4 {
            embed.push(NormConv::build(
                src,
                &format!("embed.conv{i}"),
                3,
                ch[i],
                ch[i + 1],
                2,
                1,
            )?);
        }

        let mut stages = Vec::with_capacity(3);
        let mut junctions = Vec::with_capacity(2);
        for s in 0..3 {
            let c = cfg.channels[s];
            let heads = cfg.mha_heads[s];
            let ext = cfg.table_extent(s);
            let mut blocks = Vec::with_capacity(cfg.blocks[s]);
            for k in 0..cfg.blocks[s] {
                let p = format!("stage{}.block{k}", s + 1);
                let nd = heads * cfg.key_dim;
                let attn = MhaLayer::new(
                    heads,
                    cfg.key_dim,
                    attn_linear(src, &format!("{p}.attn.wq"), c, nd)?,
                    attn_linear(src, &format!("{p}.attn.wk"), c, nd)?,
                    attn_linear(src, &format!("{p}.attn.wv"), c, 2 * nd)?,
                    attn_linear(src, &format!("{p}.attn.wo"), 2 * nd, c)?,
                    bias_table(src, &format!("{p}.attn.bias"), heads, ext)?,
                )?;
                let mlp = mlp(src, &format!("{p}.mlp"), c)?;
                blocks.push(Block { attn, mlp });
            }
            stages.push(blocks);

            if s < 2 {
                let c_next = cfg.channels[s + 1];
                let p = format!("sa{}", s + 1);
                let down = match downsample {
                    DownsampleKind::ShrinkAttention => {
                        let n = cfg.sa_heads[s];
                        let nd = n * cfg.key_dim;
                        Junction::Shrink(ShrinkLayer::new(
                            n,
                            cfg.key_dim,
                            attn_linear(src, &format!("{p}.wq"), c, nd)?,
                            attn_linear(src, &format!("{p}.wk"), c, nd)?,
                            attn_linear(src, &format!("{p}.wv"), c, 4 * nd)?,
                            attn_linear(src, &format!("{p}.wo"), 4 * nd, c_next)?,
                            bias_table(src, &format!("{p}.bias"), n, ext)?,
                        )?)
                    }
                    DownsampleKind::Subsample => Junction::Subsample(biased_linear(
                        src,
                        &format!("{p}.sub.w"),
                        &format!("{p}.sub.b"),
                        c,
                        c_next,
                    )?),
                };
                let jmlp = mlp(src, &format!("{p}.mlp"), c_next)?;
                junctions.push(JunctionBlock { down, mlp: jmlp });
            }
        }

        let abs_enc = if placement == Placement::Absolute {
            let s = cfg.search_grid(0);
            let t = cfg.template_grid(0);
            Some((
                absolute_encoding((s, s), cfg.channels[0])?,
                absolute_encoding((t, t), cfg.channels[0])?,
            ))
        } else {
            None
        };

        Ok(Self {
            cfg: cfg.clone(),
            placement,
            embed,
            stages,
            junctions,
            abs_enc,
        })
    }

    /// Fresh model with seeded random weights.
    pub fn init(
        cfg: &ModelConfig,
        placement: Placement,
        downsample: DownsampleKind,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        Self::build(cfg, placement, downsample, &mut TensorSource::Random(rng))
    }

    pub fn downsample_kind(&self) -> DownsampleKind {
        match self.junctions[0].down {
            Junction::Shrink(_) => DownsampleKind::ShrinkAttention,
            Junction::Subsample(_) => DownsampleKind::Subsample,
        }
    }

    /// Parameter tensors in construction order, names matching the weight
    /// file manifest.
    pub fn visit<'a>(&'a self, out: &mut Vec<(String, &'a Tensor)>) {
        for (i, nc) in self.embed.iter().enumerate() {
            nc.visit(&format!("embed.conv{i}"), out);
        }
        for (s, blocks) in self.stages.iter().enumerate() {
            for (k, b) in blocks.iter().enumerate() {
                let p = format!("stage{}.block{k}", s + 1);
                out.push((format!("{p}.attn.wq"), &b.attn.wq.w));
                out.push((format!("{p}.attn.wk"), &b.attn.wk.w));
                out.push((format!("{p}.attn.wv"), &b.attn.wv.w));
                out.push((format!("{p}.attn.wo"), &b.attn.wo.w));
                out.push((format!("{p}.attn.bias"), b.attn.bias.tensor()));
                visit_mlp(&b.mlp, &format!("{p}.mlp"), out);
            }
            if s < 2 {
                let p = format!("sa{}", s + 1);
                let j = &self.junctions[s];
                match &j.down {
                    Junction::Shrink(sa) => {
                        out.push((format!("{p}.wq"), &sa.wq.w));
                        out.push((format!("{p}.wk"), &sa.wk.w));
                        out.push((format!("{p}.wv"), &sa.wv.w));
                        out.push((format!("{p}.wo"), &sa.wo.w));
                        out.push((format!("{p}.bias"), sa.bias.tensor()));
                    }
                    Junction::Subsample(proj) => {
                        out.push((format!("{p}.sub.w"), &proj.w));
                        out.push((format!("{p}.sub.b"), proj.b.as_ref().expect("sub bias")));
                    }
                }
                visit_mlp(&j.mlp, &format!("{p}.mlp"), out);
            }
        }
    }

    /// Run the embedding stack on one image and flatten to tokens.
    pub fn patch_embed(&self, image: &Tensor) -> Result<Tensor> {
        patch_embed(&self.embed, image, self.cfg.patch_stride)
    }

    pub fn forward(&self, template: &Tensor, search: &Tensor) -> Result<FeaturePyramid> {
        Ok(self.forward_trace(template, search)?.pyramid)
    }

    /// Forward pass keeping per-stage token matrices.
    pub fn forward_trace(&self, template: &Tensor, search: &Tensor) -> Result<BackboneTrace> {
        let want = |t: &Tensor, side: usize, what: &'static str| -> Result<()> {
            if t.shape() != [side, side, 3] {
                return Err(HitError::Config(format!(
                    "{what} image must be {side}x{side}x3, got {:?}",
                    t.shape()
                )));
            }
            Ok(())
        };
        want(template, self.cfg.template_size, "template")?;
        want(search, self.cfg.search_size, "search")?;

        let mut search_tokens = self.patch_embed(search)?;
        let mut template_tokens = self.patch_embed(template)?;
        if let Some((es, et)) = &self.abs_enc {
            search_tokens = add(&search_tokens, es)?;
            template_tokens = add(&template_tokens, et)?;
        }
        let mut tokens = concat_tokens(&[&search_tokens, &template_tokens])?;
        let mut arr = self.cfg.arrangement(self.placement, 0);

        let mut stage_tokens = Vec::with_capacity(3);
        let mut stage_arrs = Vec::with_capacity(3);
        let mut maps = Vec::with_capacity(3);
        for (s, blocks) in self.stages.iter().enumerate() {
            for b in blocks {
                tokens = add(&tokens, &mha_forward(&b.attn, &tokens, &arr)?)?;
                tokens = mlp_block(&b.mlp, &tokens)?;
            }
            let (search_map, _) = split_to_grids(&tokens, &arr)?;
            maps.push(search_map);
            stage_tokens.push(tokens.clone());
            stage_arrs.push(arr.clone());
            if s < 2 {
                let j = &self.junctions[s];
                let (next, next_arr) = match &j.down {
                    Junction::Shrink(sa) => shrink_forward(sa, &tokens, &arr)?,
                    Junction::Subsample(proj) => subsample_downsample(proj, &tokens, &arr)?,
                };
                tokens = mlp_block(&j.mlp, &next)?;
                arr = next_arr;
            }
        }

        let g = mean_rows(&tokens)?;
        let mut maps = maps.into_iter();
        let pyramid = FeaturePyramid {
            s_max: maps.next().unwrap(),
            s_mid: maps.next().unwrap(),
            s_min: maps.next().unwrap(),
            g,
        };
        Ok(BackboneTrace {
            stage_tokens,
            stage_arrs,
            pyramid,
        })
    }
}

/// Four stride-2 convolutions, each with affine normalization and hardswish,
/// then flatten the final map to a token matrix.
pub fn patch_embed(convs: &[NormConv], image: &Tensor, patch_stride: usize) -> Result<Tensor> {
    let (h, w, _) = image.dims3("patch_embed")?;
    if h % patch_stride != 0 || w % patch_stride != 0 {
        return Err(HitError::Config(format!(
            "image extent {h}x{w} not divisible by patch stride {patch_stride}"
        )));
    }
    let mut map = image.clone();
    for nc in convs {
        map = nc.forward(&map)?;
    }
    let (mh, mw, c) = map.dims3("patch_embed output")?;
    map.reshape(vec![mh * mw, c])
}

/// Split a stage's token matrix into its search and template halves.
pub fn stage_token_split(tokens: &Tensor, arr: &Arrangement) -> Result<(Tensor, Tensor)> {
    let (t, c) = tokens.dims2("stage_token_split")?;
    if t != arr.token_count() {
        return Err(HitError::TokenCountMismatch {
            op: "stage_token_split",
            tokens: t,
            expected: arr.token_count(),
        });
    }
    let split = arr.search_tokens() * c;
    Ok((
        Tensor::new(vec![arr.search_tokens(), c], tokens.data()[..split].to_vec())?,
        Tensor::new(
            vec![arr.template_tokens(), c],
            tokens.data()[split..].to_vec(),
        )?,
    ))
}
