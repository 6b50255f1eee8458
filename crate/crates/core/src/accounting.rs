//! Analytic parameter and MAC accounting. The formulas here enumerate, layer
//! by layer, exactly the learned scalars the builders allocate and exactly
//! the multiply-accumulates the tensor kernels tally during one
//! (template, search) forward pass — so both can be cross-checked: parameter
//! totals against the weight manifest, MAC totals against the thread-local
//! instrumentation counter, and variant totals against the reference figures
//! reported for HiT.
//!
//! Conventions: 1 MAC = one multiply + one add. Only matrix products count
//! (linear maps, attention score/value products, convolutions as one im2col
//! product, transposed convolutions as their scatter product). Bias adds,
//! activations, softmax, the attention-bias table lookup, and reductions are
//! free, and so are the head's reweighting multiplier and soft-argmax, which
//! are implemented as plain loops.

use crate::backbone::{DownsampleKind, ModelConfig, Variant};
use crate::head::HEAD_WIDTH;
use crate::model::AblationSpec;

/// Reference totals the implementation is measured against, per variant:
/// (parameters, MACs per forward).
pub fn reference_totals(v: Variant) -> (f64, f64) {
    match v {
        Variant::Base => (42.14e6, 4.34e9),
        Variant::Small => (11.03e6, 1.13e9),
        Variant::Tiny => (9.59e6, 0.99e9),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ComponentCost {
    pub name: &'static str,
    pub params: u64,
    pub macs: u64,
}

/// Per-component cost breakdown; totals are the exact sums of the parts.
#[derive(Debug, Clone)]
pub struct CostReport {
    pub components: Vec<ComponentCost>,
    pub params: u64,
    pub macs: u64,
}

impl CostReport {
    pub fn component(&self, name: &str) -> Option<&ComponentCost> {
        self.components.iter().find(|c| c.name == name)
    }

    fn is_backbone(name: &str) -> bool {
        name != "bridge" && name != "head"
    }

    /// Parameters in the embedding, stages, and junctions (everything the
    /// fusion bridge and prediction head do not own).
    pub fn backbone_params(&self) -> u64 {
        self.components
            .iter()
            .filter(|c| Self::is_backbone(c.name))
            .map(|c| c.params)
            .sum()
    }

    pub fn backbone_macs(&self) -> u64 {
        self.components
            .iter()
            .filter(|c| Self::is_backbone(c.name))
            .map(|c| c.macs)
            .sum()
    }

    /// Fraction of all parameters owned by the backbone.
    pub fn backbone_param_share(&self) -> f64 {
        self.backbone_params() as f64 / self.params as f64
    }
}

/// Cost of the default configuration of a named variant.
pub fn variant_report(v: Variant) -> CostReport {
    cost_report(&ModelConfig::for_variant(v), &AblationSpec::default())
}

/// Full analytic cost of one model configuration.
pub fn cost_report(cfg: &ModelConfig, spec: &AblationSpec) -> CostReport {
    let mut components = Vec::with_capacity(8);
    components.push(embed_cost(cfg));
    let stage_names = ["stage1", "stage2", "stage3"];
    let junction_names = ["sa1", "sa2"];
    for level in 0..3 {
        components.push(stage_cost(cfg, level, stage_names[level]));
        if level < 2 {
            components.push(junction_cost(cfg, spec, level, junction_names[level]));
        }
    }
    components.push(bridge_cost(cfg, spec));
    components.push(head_cost(cfg, spec));

    let params = components.iter().map(|c| c.params).sum();
    let macs = components.iter().map(|c| c.macs).sum();
    CostReport {
        components,
        params,
        macs,
    }
}

/// Joint token count at a pyramid level: search grid plus template grid.
fn tokens(cfg: &ModelConfig, level: usize) -> u64 {
    let s = cfg.search_grid(level) as u64;
    let t = cfg.template_grid(level) as u64;
    s * s + t * t
}

/// Patch embedding: four stride-2 3×3 convolutions with per-channel affine,
/// applied to both images.
fn embed_cost(cfg: &ModelConfig) -> ComponentCost {
    let c1 = cfg.channels[0] as u64;
    let ch = [3u64, c1 / 8, c1 / 4, c1 / 2, c1];
    let mut params = 0u64;
    let mut macs = 0u64;
    for i in 0..4 {
        let (cin, cout) = (ch[i], ch[i + 1]);
        params += 9 * cin * cout + cout + 2 * cout; // kernel + bias + affine
        let s_out = (cfg.search_size as u64) >> (i + 1);
        let t_out = (cfg.template_size as u64) >> (i + 1);
        macs += (s_out * s_out + t_out * t_out) * 9 * cin * cout;
    }
    ComponentCost {
        name: "embed",
        params,
        macs,
    }
}

/// One stage: `blocks[level]` residual attention blocks, each an attention
/// layer plus a 2× MLP, with a relative-position bias table per attention.
fn stage_cost(cfg: &ModelConfig, level: usize, name: &'static str) -> ComponentCost {
    let c = cfg.channels[level] as u64;
    let n = cfg.mha_heads[level] as u64;
    let d = cfg.key_dim as u64;
    let t = tokens(cfg, level);
    let (ey, ex) = cfg.table_extent(level);
    let table = n * ey as u64 * ex as u64;

    let nd = n * d;
    let attn_params = c * nd * 2 + c * (2 * nd) + (2 * nd) * c + table;
    let attn_macs =
        t * c * nd * 2 + t * c * (2 * nd) + t * (2 * nd) * c + n * t * t * d + n * t * t * (2 * d);
    let (mlp_params, mlp_macs) = mlp_cost(c, t);

    let blocks = cfg.blocks[level] as u64;
    ComponentCost {
        name,
        params: blocks * (attn_params + mlp_params),
        macs: blocks * (attn_macs + mlp_macs),
    }
}

/// Token-mixing MLP with 2× expansion: params for both biased linears, MACs
/// for `t` tokens through both.
fn mlp_cost(c: u64, t: u64) -> (u64, u64) {
    let params = c * (2 * c) + 2 * c + (2 * c) * c + c;
    let macs = t * c * (2 * c) * 2;
    (params, macs)
}

/// Junction after stage `level`: either shrink attention (subsampled queries
/// against full-resolution keys/values, 4× value width) or a plain subsample
/// with a channel projection; both are followed by an MLP at the new width.
fn junction_cost(
    cfg: &ModelConfig,
    spec: &AblationSpec,
    level: usize,
    name: &'static str,
) -> ComponentCost {
    let cin = cfg.channels[level] as u64;
    let cout = cfg.channels[level + 1] as u64;
    let tq = tokens(cfg, level + 1);
    let tkv = tokens(cfg, level);
    let d = cfg.key_dim as u64;

    let (mut params, mut macs) = match spec.downsample {
        DownsampleKind::ShrinkAttention => {
            let n = cfg.sa_heads[level] as u64;
            let nd = n * d;
            // queries carry pre-subsample coordinates, so the bias table is
            // sized for the pre-junction grid
            let (ey, ex) = cfg.table_extent(level);
            let params = cin * nd * 2 + cin * (4 * nd) + (4 * nd) * cout + n * ey as u64 * ex as u64;
            let macs = tq * cin * nd
                + tkv * cin * nd
                + tkv * cin * (4 * nd)
                + n * tq * tkv * d
                + n * tq * tkv * (4 * d)
                + tq * (4 * nd) * cout;
            (params, macs)
        }
        DownsampleKind::Subsample => (cin * cout + cout, tq * cin * cout),
    };
    let (mp, mm) = mlp_cost(cout, tq);
    params += mp;
    macs += mm;
    ComponentCost { name, params, macs }
}

/// Bridge: stride-2 2×2 transposed convolutions lifting the selected pyramid
/// levels to the full grid, plus a 1×1 projection when the top level is
/// excluded. Level grids are 16/8/4 on the search side.
fn bridge_cost(cfg: &ModelConfig, spec: &AblationSpec) -> ComponentCost {
    let c1 = cfg.channels[0] as u64;
    let c2 = cfg.channels[1] as u64;
    let c3 = cfg.channels[2] as u64;
    let b = &spec.bridge;
    let mut params = 0u64;
    let mut macs = 0u64;

    if b.use_min {
        params += 4 * c3 * c2 + c2;
        let in_pos = {
            let g = cfg.search_grid(2) as u64;
            g * g
        };
        macs += in_pos * 4 * c3 * c2;
    }
    if b.use_mid || b.use_min {
        let cout = if b.use_max { c1 } else { c2 };
        params += 4 * c2 * cout + cout;
        let in_pos = {
            let g = cfg.search_grid(1) as u64;
            g * g
        };
        macs += in_pos * 4 * c2 * cout;
        if !b.use_max {
            params += c2 * c1 + c1;
            let g = cfg.search_grid(0) as u64;
            macs += g * g * c2 * c1;
        }
    }
    ComponentCost {
        name: "bridge",
        params,
        macs,
    }
}

/// Corner head: optional global-vector projection and score product, a 1×1
/// trunk to the fixed head width, and two halving 3×3 branches with 1×1
/// single-channel outputs.
fn head_cost(cfg: &ModelConfig, spec: &AblationSpec) -> ComponentCost {
    let c1 = cfg.channels[0] as u64;
    let c3 = cfg.channels[2] as u64;
    let h = HEAD_WIDTH as u64;
    let g = cfg.search_grid(0) as u64;
    let cells = g * g;

    let mut params = 0u64;
    let mut macs = 0u64;
    if spec.use_g {
        params += c3 * c1 + c1;
        macs += c3 * c1 + cells * c1; // projection + per-cell score dots
    }
    params += c1 * h + h + 2 * h;
    macs += cells * c1 * h;

    let bw = [h, h / 2, h / 4, h / 8, h / 16];
    let mut branch_params = 0u64;
    let mut branch_macs = 0u64;
    for i in 0..4 {
        branch_params += 9 * bw[i] * bw[i + 1] + bw[i + 1] + 2 * bw[i + 1];
        branch_macs += cells * 9 * bw[i] * bw[i + 1];
    }
    branch_params += bw[4] + 1;
    branch_macs += cells * bw[4];
    params += 2 * branch_params;
    macs += 2 * branch_macs;

    ComponentCost {
        name: "head",
        params,
        macs,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bridge::BridgeConfig;
    use crate::model::HitModel;
    use crate::posenc::Placement;
    use crate::tensor::{macs, Tensor};

    #[test]
    fn variant_totals_match_independent_enumeration() {
        // expected numbers come from an independent recount of every layer
        let base = variant_report(Variant::Base);
        assert_eq!(base.params, 42_492_354);
        assert_eq!(base.macs, 4_413_202_432);

        let small = variant_report(Variant::Small);
        assert_eq!(small.params, 10_810_850);
        assert_eq!(small.macs, 1_148_370_944);

        let tiny = variant_report(Variant::Tiny);
        assert_eq!(tiny.params, 9_376_706);
        assert_eq!(tiny.macs, 970_747_904);
    }

    #[test]
    fn base_component_breakdown_is_exact() {
        let r = variant_report(Variant::Base);
        let expect: [(&str, u64, u64); 8] = [
            ("embed", 874_368, 663_552_000),
            ("stage1", 4_147_200, 1_557_135_360),
            ("sa1", 2_728_192, 443_678_720),
            ("stage2", 7_744_576, 640_778_240),
            ("sa2", 5_903_136, 211_046_400),
            ("stage3", 16_526_016, 332_144_640),
            ("bridge", 2_360_192, 75_497_472),
            ("head", 2_208_674, 489_369_600),
        ];
        assert_eq!(r.components.len(), 8);
        for (name, params, macs) in expect {
            let c = r.component(name).unwrap();
            assert_eq!(c.params, params, "{name} params");
            assert_eq!(c.macs, macs, "{name} macs");
        }
        assert_eq!(r.params, r.components.iter().map(|c| c.params).sum::<u64>());
        assert_eq!(r.macs, r.components.iter().map(|c| c.macs).sum::<u64>());
    }

    #[test]
    fn totals_sit_within_reproduction_tolerances() {
        for v in [Variant::Base, Variant::Small, Variant::Tiny] {
            let r = variant_report(v);
            let (p_ref, m_ref) = reference_totals(v);
            let dp = (r.params as f64 - p_ref).abs() / p_ref;
            let dm = (r.macs as f64 - m_ref).abs() / m_ref;
            assert!(dp < 0.05, "{v:?} params off by {:.2}%", dp * 100.0);
            assert!(dm < 0.10, "{v:?} macs off by {:.2}%", dm * 100.0);
        }
    }

    #[test]
    fn backbone_share_values_are_pinned() {
        let shares: Vec<(Variant, f64)> = [Variant::Base, Variant::Small, Variant::Tiny]
            .into_iter()
            .map(|v| (v, variant_report(v).backbone_param_share()))
            .collect();
        assert!((shares[0].1 - 0.892).abs() < 0.002, "base {:?}", shares[0]);
        assert!((shares[1].1 - 0.779).abs() < 0.002, "small {:?}", shares[1]);
        assert!((shares[2].1 - 0.745).abs() < 0.002, "tiny {:?}", shares[2]);
    }

    #[test]
    fn analytic_params_equal_manifest_enumeration() {
        for (cfg, spec) in [
            (ModelConfig::tiny(), AblationSpec::default()),
            (ModelConfig::small(), AblationSpec::default()),
            (ModelConfig::base(), AblationSpec::default()),
            (
                ModelConfig::tiny(),
                AblationSpec {
                    downsample: DownsampleKind::Subsample,
                    ..AblationSpec::default()
                },
            ),
            (
                ModelConfig::tiny(),
                AblationSpec {
                    bridge: BridgeConfig::new(true, false, false).unwrap(),
                    use_g: false,
                    ..AblationSpec::default()
                },
            ),
            (
                ModelConfig::tiny(),
                AblationSpec {
                    bridge: BridgeConfig::new(false, true, true).unwrap(),
                    pos_enc: Placement::Absolute,
                    ..AblationSpec::default()
                },
            ),
        ] {
            let model = HitModel::init(&cfg, spec.clone(), 1).unwrap();
            let report = cost_report(&cfg, &spec);
            assert_eq!(
                model.param_count(),
                report.params,
                "cfg {:?} spec {:?}",
                cfg.variant,
                spec
            );
        }
    }

    #[test]
    fn instrumented_forward_macs_equal_analytic_exactly() {
        let specs = [
            AblationSpec::default(),
            AblationSpec {
                downsample: DownsampleKind::Subsample,
                ..AblationSpec::default()
            },
            AblationSpec {
                bridge: BridgeConfig::new(true, false, false).unwrap(),
                ..AblationSpec::default()
            },
            AblationSpec {
                bridge: BridgeConfig::new(false, true, true).unwrap(),
                use_g: false,
                ..AblationSpec::default()
            },
            AblationSpec {
                pos_enc: Placement::Absolute,
                ..AblationSpec::default()
            },
        ];
        let cfg = ModelConfig::tiny();
        let template = Tensor::zeros(vec![128, 128, 3]).unwrap();
        let search = Tensor::zeros(vec![256, 256, 3]).unwrap();
        for spec in specs {
            let model = HitModel::init(&cfg, spec.clone(), 2).unwrap();
            let analytic = cost_report(&cfg, &spec).macs;
            macs::reset();
            model.forward(&template, &search).unwrap();
            assert_eq!(macs::total(), analytic, "spec {spec:?}");
        }
    }

    #[test]
    fn plain_subsample_is_cheaper_than_shrink_attention() {
        for v in [Variant::Base, Variant::Small, Variant::Tiny] {
            let cfg = ModelConfig::for_variant(v);
            let shrink = cost_report(&cfg, &AblationSpec::default());
            let sub = cost_report(
                &cfg,
                &AblationSpec {
                    downsample: DownsampleKind::Subsample,
                    ..AblationSpec::default()
                },
            );
            for name in ["sa1", "sa2"] {
                assert!(
                    sub.component(name).unwrap().macs < shrink.component(name).unwrap().macs,
                    "{v:?} {name}"
                );
            }
            assert!(sub.macs < shrink.macs);
        }
    }

    #[test]
    fn position_placement_never_changes_cost() {
        let cfg = ModelConfig::tiny();
        let baseline = cost_report(&cfg, &AblationSpec::default());
        for p in Placement::ALL {
            let r = cost_report(
                &cfg,
                &AblationSpec {
                    pos_enc: p,
                    ..AblationSpec::default()
                },
            );
            assert_eq!(r.params, baseline.params);
            assert_eq!(r.macs, baseline.macs);
        }
    }
}
