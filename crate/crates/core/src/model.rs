//! Full tracker model: backbone, bridge, and corner head behind one
//! constructor, one forward pass, and one parameter enumeration.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::backbone::{Backbone, BackboneTrace, DownsampleKind, ModelConfig};
use crate::bridge::{Bridge, BridgeConfig};
use crate::error::{HitError, Result};
use crate::head::{BoxNorm, CornerHead};
use crate::init::TensorSource;
use crate::posenc::Placement;
use crate::tensor::Tensor;

/// The four structural switches a model can be built with. The default is
/// the reference configuration; every other combination is an ablation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AblationSpec {
    /// Pyramid levels fused by the bridge.
    pub bridge: BridgeConfig,
    /// Token placement for relative position bias, or absolute encoding.
    pub pos_enc: Placement,
    /// Junction operator between stages.
    pub downsample: DownsampleKind,
    /// Whether the head re-weights features with the global vector.
    pub use_g: bool,
}

impl Default for AblationSpec {
    fn default() -> Self {
        Self {
            bridge: BridgeConfig::ALL,
            pos_enc: Placement::Diagonal,
            downsample: DownsampleKind::ShrinkAttention,
            use_g: true,
        }
    }
}

impl AblationSpec {
    /// Parse a whitespace-separated list of `key=value` switches, e.g.
    /// `"bridge=max,mid pos=ver downsample=subsample g=off"`. Omitted keys
    /// keep their default; an empty string is the default spec.
    pub fn parse(s: &str) -> Result<Self> {
        let mut spec = AblationSpec::default();
        let mut seen: Vec<&str> = Vec::new();
        for token in s.split_whitespace() {
            let (key, value) = token.split_once('=').ok_or_else(|| {
                HitError::Config(format!("ablation switch `{token}` is not key=value"))
            })?;
            if seen.contains(&key) {
                return Err(HitError::Config(format!("duplicate ablation key `{key}`")));
            }
            match key {
                "bridge" => spec.bridge = BridgeConfig::parse(value)?,
                "pos" => spec.pos_enc = Placement::parse(value)?,
                "downsample" => spec.downsample = DownsampleKind::parse(value)?,
                "g" => {
                    spec.use_g = match value {
                        "on" | "true" | "1" => true,
                        "off" | "false" | "0" => false,
                        other => {
                            return Err(HitError::Config(format!(
                                "bad value `{other}` for g, expected on|off"
                            )))
                        }
                    }
                }
                other => {
                    return Err(HitError::Config(format!(
                        "unknown ablation key `{other}`, expected bridge|pos|downsample|g"
                    )))
                }
            }
            seen.push(key);
        }
        Ok(spec)
    }

    /// Canonical `key=value` rendering; `parse` of this string round-trips.
    pub fn name(&self) -> String {
        format!(
            "bridge={} pos={} downsample={} g={}",
            self.bridge.name(),
            self.pos_enc.name(),
            self.downsample.name(),
            if self.use_g { "on" } else { "off" }
        )
    }

    /// Every constructible combination: 7 bridge subsets × 5 placements ×
    /// 2 junction kinds × 2 global-vector switches = 140 specs.
    pub fn enumerate() -> Vec<AblationSpec> {
        let mut all = Vec::with_capacity(140);
        for bridge in BridgeConfig::enumerate() {
            for pos_enc in Placement::ALL {
                for downsample in [DownsampleKind::ShrinkAttention, DownsampleKind::Subsample] {
                    for use_g in [true, false] {
                        all.push(AblationSpec {
                            bridge,
                            pos_enc,
                            downsample,
                            use_g,
                        });
                    }
                }
            }
        }
        all
    }
}

/// Build a runnable, seeded model realizing one ablation spec on top of a
/// variant's base configuration.
pub fn build_variant(cfg: &ModelConfig, spec: AblationSpec, seed: u64) -> Result<HitModel> {
    HitModel::init(cfg, spec, seed)
}

/// Anything that maps a (template, search) pair to a normalized box. The
/// tracker is generic over this so tests can rig the prediction.
pub trait BoxPredictor {
    /// Side length of the square template image this predictor consumes.
    fn template_size(&self) -> usize;
    /// Side length of the square search image this predictor consumes.
    fn search_size(&self) -> usize;
    fn predict(&self, template: &Tensor, search: &Tensor) -> Result<BoxNorm>;
}

impl<P: BoxPredictor + ?Sized> BoxPredictor for &P {
    fn template_size(&self) -> usize {
        (**self).template_size()
    }
    fn search_size(&self) -> usize {
        (**self).search_size()
    }
    fn predict(&self, template: &Tensor, search: &Tensor) -> Result<BoxNorm> {
        (**self).predict(template, search)
    }
}

#[derive(Debug, Clone)]
pub struct HitModel {
    pub backbone: Backbone,
    pub bridge: Bridge,
    pub head: CornerHead,
    pub spec: AblationSpec,
}

/// Intermediate products of one forward pass.
#[derive(Debug, Clone)]
pub struct ModelTrace {
    pub backbone: BackboneTrace,
    /// Bridge output, [16,16,C1].
    pub fused: Tensor,
    pub box_norm: BoxNorm,
}

impl HitModel {
    pub fn build(cfg: &ModelConfig, spec: AblationSpec, src: &mut TensorSource) -> Result<Self> {
        let backbone = Backbone::build(cfg, spec.pos_enc, spec.downsample, src)?;
        let bridge = Bridge::build(cfg, spec.bridge, src)?;
        let head = CornerHead::build(
            cfg.channels[0],
            cfg.channels[2],
            cfg.search_grid(0),
            spec.use_g,
            src,
        )?;
        Ok(Self {
            backbone,
            bridge,
            head,
            spec,
        })
    }

    /// Seeded random initialization.
    pub fn init(cfg: &ModelConfig, spec: AblationSpec, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::build(cfg, spec, &mut TensorSource::Random(&mut rng))
    }

    pub fn config(&self) -> &ModelConfig {
        &self.backbone.cfg
    }

    /// Every learned tensor with its manifest name, in manifest order.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        self.backbone.visit(&mut out);
        self.bridge.visit(&mut out);
        self.head.visit(&mut out);
        out
    }

    /// Total learned scalar count, by enumeration.
    pub fn param_count(&self) -> u64 {
        self.named_tensors()
            .iter()
            .map(|(_, t)| t.len() as u64)
            .sum()
    }

    pub fn forward(&self, template: &Tensor, search: &Tensor) -> Result<BoxNorm> {
        Ok(self.forward_trace(template, search)?.box_norm)
    }

    pub fn forward_trace(&self, template: &Tensor, search: &Tensor) -> Result<ModelTrace> {
        let backbone = self.backbone.forward_trace(template, search)?;
        let fused = self.bridge.forward(&backbone.pyramid)?;
        let box_norm = self.head.forward(&backbone.pyramid.g, &fused)?;
        Ok(ModelTrace {
            backbone,
            fused,
            box_norm,
        })
    }
}

impl BoxPredictor for HitModel {
    fn template_size(&self) -> usize {
        self.backbone.cfg.template_size
    }
    fn search_size(&self) -> usize {
        self.backbone.cfg.search_size
    }
    fn predict(&self, template: &Tensor, search: &Tensor) -> Result<BoxNorm> {
        self.forward(template, search)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn rand_image(rng: &mut ChaCha8Rng, side: usize) -> Tensor {
        let data = (0..side * side * 3).map(|_| rng.gen_range(0.0..1.0)).collect();
        Tensor::new(vec![side, side, 3], data).unwrap()
    }

    #[test]
    fn default_tiny_model_forward_is_valid_and_deterministic() {
        let model = HitModel::init(&ModelConfig::tiny(), AblationSpec::default(), 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let template = rand_image(&mut rng, 128);
        let search = rand_image(&mut rng, 256);
        let a = model.forward(&template, &search).unwrap();
        let b = model.forward(&template, &search).unwrap();
        assert_eq!(a, b);
        assert!(a.x0 <= a.x1 && a.y0 <= a.y1);
        assert!(a.x0 >= 0.0 && a.y1 <= 1.0);
    }

    #[test]
    fn trace_exposes_fused_map_shape() {
        let model = HitModel::init(&ModelConfig::tiny(), AblationSpec::default(), 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let trace = model
            .forward_trace(&rand_image(&mut rng, 128), &rand_image(&mut rng, 256))
            .unwrap();
        assert_eq!(trace.fused.shape(), &[16, 16, 128]);
        assert_eq!(trace.backbone.pyramid.g.shape(), &[1, 384]);
    }

    #[test]
    fn named_tensors_are_unique_and_cover_all_components() {
        let model = HitModel::init(&ModelConfig::tiny(), AblationSpec::default(), 5).unwrap();
        let named = model.named_tensors();
        let names: Vec<&str> = named.iter().map(|(n, _)| n.as_str()).collect();
        let mut sorted = names.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), names.len());
        assert_eq!(names[0], "embed.conv0.w");
        assert_eq!(*names.last().unwrap(), "head.br.out.b");
        for expected in [
            "stage3.block3.mlp.b2",
            "sa2.bias",
            "bridge.up1.w",
            "bridge.up2.b",
            "head.gproj.w",
            "head.trunk.conv.scale",
            "head.tl.conv3.shift",
        ] {
            assert!(names.contains(&expected), "missing {expected}");
        }
        // default bridge uses no projection
        assert!(!names.contains(&"bridge.proj.w"));
    }

    #[test]
    fn ablation_switches_change_the_manifest() {
        let spec = AblationSpec {
            bridge: BridgeConfig::new(false, true, false).unwrap(),
            pos_enc: Placement::Separate,
            downsample: DownsampleKind::Subsample,
            use_g: false,
        };
        let model = HitModel::init(&ModelConfig::tiny(), spec, 6).unwrap();
        let named = model.named_tensors();
        let names: Vec<&str> = named.iter().map(|(n, _)| n.as_str()).collect();
        assert!(names.contains(&"sa1.sub.w"));
        assert!(!names.contains(&"sa1.wq"));
        assert!(names.contains(&"bridge.proj.w"));
        assert!(!names.contains(&"bridge.up1.w"));
        assert!(!names.contains(&"head.gproj.w"));
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let b = model
            .forward(&rand_image(&mut rng, 128), &rand_image(&mut rng, 256))
            .unwrap();
        assert!(b.x0 <= b.x1 && b.y0 <= b.y1);
    }

    #[test]
    fn same_seed_same_model() {
        let a = HitModel::init(&ModelConfig::tiny(), AblationSpec::default(), 9).unwrap();
        let b = HitModel::init(&ModelConfig::tiny(), AblationSpec::default(), 9).unwrap();
        let pa = a.named_tensors();
        let pb = b.named_tensors();
        assert_eq!(pa.len(), pb.len());
        for ((na, ta), (nb, tb)) in pa.iter().zip(pb.iter()) {
            assert_eq!(na, nb);
            assert_eq!(ta.data(), tb.data());
        }
    }

    #[test]
    fn ablation_spec_parsing() {
        assert_eq!(AblationSpec::parse("").unwrap(), AblationSpec::default());
        let s = AblationSpec::parse("bridge=max,mid pos=ver downsample=subsample g=off").unwrap();
        assert_eq!(s.bridge, BridgeConfig::new(true, true, false).unwrap());
        assert_eq!(s.pos_enc, Placement::Vertical);
        assert_eq!(s.downsample, DownsampleKind::Subsample);
        assert!(!s.use_g);

        // partial specs keep defaults for omitted keys
        let p = AblationSpec::parse("pos=abs").unwrap();
        assert_eq!(p.bridge, BridgeConfig::ALL);
        assert_eq!(p.pos_enc, Placement::Absolute);
        assert!(p.use_g);

        for bad in [
            "pos",              // no '='
            "pos=ver pos=hor",  // duplicate key
            "color=red",        // unknown key
            "g=maybe",          // bad value
            "bridge=",          // empty bridge list
        ] {
            assert!(AblationSpec::parse(bad).is_err(), "`{bad}` should fail");
        }
    }

    #[test]
    fn ablation_name_round_trips() {
        for spec in AblationSpec::enumerate() {
            assert_eq!(AblationSpec::parse(&spec.name()).unwrap(), spec);
        }
    }

    #[test]
    fn enumeration_covers_all_140_distinct_specs() {
        let all = AblationSpec::enumerate();
        assert_eq!(all.len(), 140);
        assert!(all.contains(&AblationSpec::default()));
        let names: std::collections::HashSet<String> =
            all.iter().map(AblationSpec::name).collect();
        assert_eq!(names.len(), 140);
    }
}
