//! Named runtime invariant checks behind the `selfcheck` CLI subcommand: a
//! fast, self-contained sweep over every module's core contracts, each
//! reporting pass/fail with a diagnostic detail string. These mirror the
//! decisive unit-test assertions so a packaged binary can prove its own
//! arithmetic without a test harness.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::accounting::{cost_report, variant_report};
use crate::backbone::{ModelConfig, Variant};
use crate::head::{soft_argmax, BoxNorm};
use crate::loss::{giou_xyxy, loss_grad_xyxy, total_loss_xyxy, LossWeights};
use crate::metrics::{eval_sequence, SuccessCurve};
use crate::model::{AblationSpec, HitModel};
use crate::posenc::{ImageRole, Placement};
use crate::tensor::{self, hardswish_scalar, macs, Tensor};
use crate::tracker::{crop_square, BBox, Tracker};

type Check = std::result::Result<String, String>;

#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

macro_rules! ensure {
    ($cond:expr, $($arg:tt)*) => {
        if !($cond) {
            return Err(format!($($arg)*));
        }
    };
}

fn err_str<T, E: std::fmt::Display>(r: std::result::Result<T, E>) -> std::result::Result<T, String> {
    r.map_err(|e| e.to_string())
}

/// Run every named check, never panicking; returns one outcome per check.
pub fn run_selfcheck() -> Vec<CheckOutcome> {
    let checks: Vec<(&'static str, fn() -> Check)> = vec![
        ("activation-endpoints", check_activation),
        ("softmax-normalization", check_softmax),
        ("position-overlap-flags", check_position_overlap),
        ("token-pipeline-shapes", check_token_pipeline),
        ("global-vector-mean", check_global_vector),
        ("bridge-passthrough", check_bridge_passthrough),
        ("head-decode-range", check_head_decode),
        ("soft-argmax-pinned", check_soft_argmax),
        ("loss-worked-examples", check_loss_examples),
        ("loss-gradient-fd", check_loss_gradient),
        ("crop-round-trip", check_crop_round_trip),
        ("rigged-static-tracking", check_rigged_tracking),
        ("metrics-perfect-score", check_metrics_perfect),
        ("success-curve-monotone", check_curve_monotone),
        ("weights-bitwise-round-trip", check_weight_round_trip),
        ("params-match-manifest", check_param_manifest),
        ("macs-match-instrumented", check_mac_instrumented),
        ("forward-determinism", check_determinism),
    ];
    checks
        .into_iter()
        .map(|(name, f)| match f() {
            Ok(detail) => CheckOutcome {
                name,
                passed: true,
                detail,
            },
            Err(detail) => CheckOutcome {
                name,
                passed: false,
                detail,
            },
        })
        .collect()
}

fn check_activation() -> Check {
    ensure!(hardswish_scalar(-3.0) == 0.0, "h(-3) != 0");
    ensure!(hardswish_scalar(3.0) == 3.0, "h(3) != 3");
    ensure!(hardswish_scalar(0.0) == 0.0, "h(0) != 0");
    ensure!(hardswish_scalar(6.0) == 6.0, "h saturates to identity above 3");
    Ok("hardswish endpoints exact".into())
}

fn check_softmax() -> Check {
    let x = err_str(Tensor::new(
        vec![2, 4],
        vec![0.0, 1.0, -2.0, 3.0, 10.0, 10.0, 10.0, 10.0],
    ))?;
    let s = err_str(tensor::softmax_rows(&x))?;
    for r in 0..2 {
        let sum: f32 = (0..4).map(|c| s.at2(r, c)).sum();
        ensure!((sum - 1.0).abs() < 1e-6, "row {r} sums to {sum}");
    }
    ensure!(s.at2(1, 0) == 0.25, "uniform row must be exactly 1/4");
    Ok("rows normalized; uniform row exact".into())
}

fn check_position_overlap() -> Check {
    let cfg = ModelConfig::tiny();
    let sep = cfg.arrangement(Placement::Separate, 0);
    ensure!(
        sep.coordinate_overlap() == (true, true),
        "separate placement must overlap on both axes"
    );
    let diag = cfg.arrangement(Placement::Diagonal, 0);
    ensure!(
        diag.coordinate_overlap() == (false, false),
        "diagonal placement must not overlap"
    );
    let ver = cfg.arrangement(Placement::Vertical, 0);
    ensure!(
        ver.coordinate_overlap() == (true, false),
        "vertical placement overlaps in x only"
    );
    // a template corner and the search origin stay distinct under diagonal
    let t = err_str(diag.global_coord(ImageRole::Template, (0, 0)))?;
    let s = err_str(diag.global_coord(ImageRole::Search, (0, 0)))?;
    ensure!(t != s, "diagonal template corner collides with search origin");
    Ok("overlap flags match placement geometry".into())
}

fn check_token_pipeline() -> Check {
    let cfg = ModelConfig::tiny();
    let model = err_str(HitModel::init(&cfg, AblationSpec::default(), 1))?;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let t = rand_image(&mut rng, 128);
    let s = rand_image(&mut rng, 256);
    let trace = err_str(model.forward_trace(&t, &s))?;
    let toks: Vec<usize> = trace
        .backbone
        .stage_tokens
        .iter()
        .map(|t| t.shape()[0])
        .collect();
    ensure!(toks == [320, 80, 20], "stage token counts {toks:?}");
    ensure!(
        trace.fused.shape() == [16, 16, cfg.channels[0]],
        "fused map shape {:?}",
        trace.fused.shape()
    );
    Ok("320/80/20 tokens; fused 16x16 map".into())
}

fn check_global_vector() -> Check {
    let cfg = ModelConfig::tiny();
    let model = err_str(HitModel::init(&cfg, AblationSpec::default(), 2))?;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let trace = err_str(model.forward_trace(&rand_image(&mut rng, 128), &rand_image(&mut rng, 256)))?;
    let last = trace.backbone.stage_tokens.last().unwrap();
    let g = &trace.backbone.pyramid.g;
    let (n, c) = err_str(last.dims2("check"))?;
    for j in 0..c {
        let mean: f32 = (0..n).map(|i| last.at2(i, j)).sum::<f32>() / n as f32;
        ensure!(
            (mean - g.at2(0, j)).abs() < 1e-5,
            "g[{j}] = {} but token mean = {mean}",
            g.at2(0, j)
        );
    }
    Ok("g equals the mean of all final tokens".into())
}

fn check_bridge_passthrough() -> Check {
    use crate::bridge::{Bridge, BridgeConfig};
    use crate::init::TensorSource;
    let cfg = ModelConfig::tiny();
    let max_only = err_str(BridgeConfig::new(true, false, false))?;
    let bridge = err_str(Bridge::build(
        &cfg,
        max_only,
        &mut TensorSource::Zeros,
    ))?;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let model = err_str(HitModel::init(&cfg, AblationSpec::default(), 3))?;
    let trace = err_str(model.forward_trace(&rand_image(&mut rng, 128), &rand_image(&mut rng, 256)))?;
    let out = err_str(bridge.forward(&trace.backbone.pyramid))?;
    let s_max = &trace.backbone.pyramid.s_max;
    ensure!(
        out.data() == s_max.data(),
        "top-level-only bridge must be the identity on the top level"
    );
    Ok("single-level bridge passes the top level through untouched".into())
}

fn check_head_decode() -> Check {
    let cfg = ModelConfig::tiny();
    let model = err_str(HitModel::init(&cfg, AblationSpec::default(), 4))?;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..3 {
        let b = err_str(model.forward(&rand_image(&mut rng, 128), &rand_image(&mut rng, 256)))?;
        ensure!(
            b.x0 <= b.x1 && b.y0 <= b.y1,
            "decoded corners disordered: {b:?}"
        );
        for v in [b.x0, b.y0, b.x1, b.y1] {
            ensure!((0.0..=1.0).contains(&v), "coordinate {v} out of range");
        }
    }
    Ok("decoded boxes ordered and inside [0,1]".into())
}

fn check_soft_argmax() -> Check {
    let mut hm = vec![0.0f32; 256];
    hm[0] = 1.0;
    let t = err_str(Tensor::new(vec![16, 16], hm))?;
    let (x, y) = err_str(soft_argmax(&t))?;
    ensure!(x == 0.03125 && y == 0.03125, "corner cell maps to {x},{y}");
    let uniform = err_str(Tensor::new(vec![16, 16], vec![1.0 / 256.0; 256]))?;
    let (ux, uy) = err_str(soft_argmax(&uniform))?;
    ensure!(
        (ux - 0.5).abs() < 1e-6 && (uy - 0.5).abs() < 1e-6,
        "uniform heatmap maps to {ux},{uy}"
    );
    Ok("pixel-center convention verified at corner and uniform".into())
}

fn check_loss_examples() -> Check {
    let w = LossWeights::default();
    let same = [0.2, 0.2, 0.8, 0.8];
    ensure!(giou_xyxy(same, same) == 1.0, "identical boxes giou != 1");
    ensure!(
        total_loss_xyxy(same, same, &w) == 0.0,
        "identical boxes loss != 0"
    );
    let a = [0.0, 0.0, 0.5, 0.5];
    let b = [0.5, 0.5, 1.0, 1.0];
    ensure!(giou_xyxy(a, b) == -0.5, "disjoint giou {}", giou_xyxy(a, b));
    ensure!(
        total_loss_xyxy(a, b, &w) == 13.0,
        "disjoint total {}",
        total_loss_xyxy(a, b, &w)
    );
    let outer = [0.0, 0.0, 1.0, 1.0];
    let quarter = [0.0, 0.0, 0.5, 0.5];
    ensure!(
        giou_xyxy(outer, quarter) == 0.25,
        "nested quarter giou {}",
        giou_xyxy(outer, quarter)
    );
    Ok("identity, disjoint, and nested cases exact".into())
}

fn check_loss_gradient() -> Check {
    let w = LossWeights::default();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut checked = 0;
    while checked < 20 {
        let g = random_box(&mut rng);
        let p = random_box(&mut rng);
        let grad = match loss_grad_xyxy(g, p, &w) {
            Ok(gr) => gr,
            Err(_) => continue, // on a kink; resample
        };
        let eps = 1e-6;
        for k in 0..4 {
            let mut hi = p;
            let mut lo = p;
            hi[k] += eps;
            lo[k] -= eps;
            let fd = (total_loss_xyxy(g, hi, &w) - total_loss_xyxy(g, lo, &w)) / (2.0 * eps);
            let denom = grad[k].abs().max(1.0);
            ensure!(
                (fd - grad[k]).abs() / denom < 1e-3,
                "component {k}: fd {fd} vs analytic {}",
                grad[k]
            );
        }
        checked += 1;
    }
    Ok("20 random finite-difference probes agree".into())
}

fn check_crop_round_trip() -> Check {
    let frame = err_str(Tensor::zeros(vec![480, 640, 3]))?;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..100 {
        let w = rng.gen_range(4.0..100.0f32);
        let h = rng.gen_range(4.0..100.0f32);
        let x = rng.gen_range(0.0..(640.0 - w));
        let y = rng.gen_range(0.0..(480.0 - h));
        let b = err_str(BBox::new(x, y, w, h))?;
        let (_, xf) = err_str(crop_square(&frame, &b, 4.0, 256))?;
        let (nx, ny) = xf.frame_to_norm(x, y);
        let (rx, ry) = xf.norm_to_frame(nx, ny);
        ensure!(
            (rx - x).abs() < 0.5 && (ry - y).abs() < 0.5,
            "round trip drifted: ({x},{y}) -> ({rx},{ry})"
        );
    }
    Ok("100 random boxes round-trip within 0.5 px".into())
}

struct Rigged;

impl crate::model::BoxPredictor for Rigged {
    fn template_size(&self) -> usize {
        128
    }
    fn search_size(&self) -> usize {
        256
    }
    fn predict(&self, _t: &Tensor, _s: &Tensor) -> crate::error::Result<BoxNorm> {
        BoxNorm::new(0.375, 0.375, 0.625, 0.625)
    }
}

fn check_rigged_tracking() -> Check {
    let seq = err_str(crate::synth::synth_sequence(1, 5, crate::synth::Motion::Static))?;
    let init = seq.boxes[0];
    let mut tracker = err_str(Tracker::init(Rigged, &seq.frames[0], init))?;
    for f in &seq.frames {
        let out = err_str(tracker.track(f))?;
        ensure!(
            (out.x - init.x).abs() < 0.5
                && (out.y - init.y).abs() < 0.5
                && (out.w - init.w).abs() < 0.5
                && (out.h - init.h).abs() < 0.5,
            "static target drifted: {out:?} vs {init:?}"
        );
    }
    Ok("rigged predictor holds a static box within 0.5 px".into())
}

fn check_metrics_perfect() -> Check {
    let gt: Vec<BBox> = (0..25)
        .map(|i| BBox::new(10.0 + i as f32, 20.0, 30.0, 40.0).unwrap())
        .collect();
    let m = err_str(eval_sequence(&gt, &gt))?;
    ensure!(m.auc == 1.0, "perfect auc {}", m.auc);
    ensure!(m.precision == 1.0, "perfect precision {}", m.precision);
    ensure!(
        m.norm_precision == 1.0,
        "perfect norm precision {}",
        m.norm_precision
    );
    Ok("self-evaluation scores exactly 1.0 on all metrics".into())
}

fn check_curve_monotone() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..50 {
        let ious: Vec<f64> = (0..40).map(|_| rng.gen_range(0.0..=1.0)).collect();
        let c = err_str(SuccessCurve::from_ious(&ious))?;
        for w in c.rates.windows(2) {
            ensure!(w[1] <= w[0], "curve increased: {} -> {}", w[0], w[1]);
        }
    }
    Ok("50 random curves nonincreasing".into())
}

fn check_weight_round_trip() -> Check {
    let dir = err_str(tempfile::tempdir())?;
    let path = dir.path().join("selfcheck.hitw");
    let cfg = ModelConfig::tiny();
    let model = err_str(HitModel::init(&cfg, AblationSpec::default(), 8))?;
    err_str(crate::weights::save_model(&path, &model))?;
    let loaded = err_str(crate::weights::load_model(&path, &cfg, AblationSpec::default()))?;
    for ((na, ta), (nb, tb)) in model
        .named_tensors()
        .iter()
        .zip(loaded.named_tensors().iter())
    {
        ensure!(na == nb, "manifest order changed: {na} vs {nb}");
        for (x, y) in ta.data().iter().zip(tb.data()) {
            ensure!(x.to_bits() == y.to_bits(), "tensor {na} not bitwise equal");
        }
    }
    Ok("save/load reproduces every tensor bitwise".into())
}

fn check_param_manifest() -> Check {
    let cfg = ModelConfig::tiny();
    let spec = AblationSpec::default();
    let model = err_str(HitModel::init(&cfg, spec, 9))?;
    let report = cost_report(&cfg, &spec);
    ensure!(
        model.param_count() == report.params,
        "manifest {} vs analytic {}",
        model.param_count(),
        report.params
    );
    let base = variant_report(Variant::Base);
    ensure!(base.params == 42_492_354, "base total {}", base.params);
    Ok("analytic count equals weight-manifest enumeration".into())
}

fn check_mac_instrumented() -> Check {
    let cfg = ModelConfig::tiny();
    let spec = AblationSpec::default();
    let model = err_str(HitModel::init(&cfg, spec, 10))?;
    let t = err_str(Tensor::zeros(vec![128, 128, 3]))?;
    let s = err_str(Tensor::zeros(vec![256, 256, 3]))?;
    let analytic = cost_report(&cfg, &spec).macs;
    macs::reset();
    err_str(model.forward(&t, &s))?;
    let measured = macs::total();
    ensure!(
        measured == analytic,
        "instrumented {measured} vs analytic {analytic}"
    );
    Ok(format!("forward pass tallies exactly {analytic} MACs"))
}

fn check_determinism() -> Check {
    let cfg = ModelConfig::tiny();
    let model = err_str(HitModel::init(&cfg, AblationSpec::default(), 11))?;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let t = rand_image(&mut rng, 128);
    let s = rand_image(&mut rng, 256);
    let a = err_str(model.forward(&t, &s))?;
    let b = err_str(model.forward(&t, &s))?;
    ensure!(
        a.x0.to_bits() == b.x0.to_bits()
            && a.y0.to_bits() == b.y0.to_bits()
            && a.x1.to_bits() == b.x1.to_bits()
            && a.y1.to_bits() == b.y1.to_bits(),
        "repeated forward differs"
    );
    Ok("repeated forward passes bitwise identical".into())
}

fn rand_image(rng: &mut ChaCha8Rng, side: usize) -> Tensor {
    let data = (0..side * side * 3).map(|_| rng.gen_range(0.0..1.0)).collect();
    Tensor::new(vec![side, side, 3], data).expect("consistent dims")
}

fn random_box(rng: &mut ChaCha8Rng) -> [f64; 4] {
    let x0 = rng.gen_range(0.0..0.6);
    let y0 = rng.gen_range(0.0..0.6);
    let x1 = x0 + rng.gen_range(0.05..0.39);
    let y1 = y0 + rng.gen_range(0.05..0.39);
    [x0, y0, x1, y1]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_check_passes() {
        let outcomes = run_selfcheck();
        assert!(outcomes.len() >= 15);
        for o in &outcomes {
            assert!(o.passed, "{} failed: {}", o.name, o.detail);
        }
    }

    #[test]
    fn check_names_are_unique() {
        let outcomes = run_selfcheck();
        let names: std::collections::HashSet<&str> =
            outcomes.iter().map(|o| o.name).collect();
        assert_eq!(names.len(), outcomes.len());
    }
}
