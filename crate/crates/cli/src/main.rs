//! `hit` — command-line interface: cost reports, latency benchmarks, tracking
//! over PPM frame directories, synthetic sequence generation, trajectory
//! evaluation, and the runtime invariant suite.

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use hit_core::accounting::{cost_report, reference_totals};
use hit_core::backbone::{ModelConfig, Variant};
use hit_core::latency::{measure_latency, measure_throughput};
use hit_core::metrics::eval_sequence;
use hit_core::model::{AblationSpec, HitModel};
use hit_core::ppm::{list_frames, read_ppm, write_ppm};
use hit_core::selfcheck::run_selfcheck;
use hit_core::synth::{synth_sequence, Motion};
use hit_core::tensor::Tensor;
use hit_core::tracker::{BBox, Tracker};
use hit_core::weights::load_model;

#[derive(Parser)]
#[command(
    name = "hit",
    about = "Hierarchical-transformer visual tracker: inference, accounting, and evaluation tools",
    version
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Report the exact parameter count with a per-component breakdown.
    Paramcount {
        #[arg(long, value_parser = parse_variant)]
        variant: Variant,
        /// Structural switches, e.g. "bridge=max,mid pos=ver downsample=subsample g=off".
        #[arg(long, default_value = "")]
        ablation: String,
    },
    /// Report the exact multiply-accumulate count of one forward pass.
    Macs {
        #[arg(long, value_parser = parse_variant)]
        variant: Variant,
        #[arg(long, default_value = "")]
        ablation: String,
    },
    /// Measure forward-pass latency on fixed random input.
    Bench {
        #[arg(long, value_parser = parse_variant)]
        variant: Variant,
        #[arg(long, default_value_t = 10)]
        iters: usize,
        #[arg(long, default_value_t = 2)]
        warmup: usize,
        /// Measure aggregate throughput of N concurrent trackers instead.
        #[arg(long)]
        threads: Option<usize>,
        #[arg(long, default_value = "")]
        ablation: String,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Track a target through a directory of PPM frames.
    Track {
        #[arg(long, value_parser = parse_variant)]
        variant: Variant,
        /// Weight file; omitted means seeded random initialization.
        #[arg(long)]
        weights: Option<PathBuf>,
        /// Directory of P6 PPM frames, ordered by file name.
        #[arg(long)]
        frames: PathBuf,
        /// Initial box "X,Y,W,H" in pixels on the first frame.
        #[arg(long)]
        init: String,
        /// Output trajectory CSV (header: frame,x,y,w,h).
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "")]
        ablation: String,
    },
    /// Run the named runtime invariant checks.
    Selfcheck,
    /// Generate a synthetic tracking sequence (PPM frames + gt.csv).
    Synth {
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        frames: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "linear", value_parser = parse_motion)]
        motion: Motion,
    },
    /// Score a predicted trajectory CSV against a ground-truth CSV.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
    },
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    Variant::parse(s).map_err(|e| e.to_string())
}

fn parse_motion(s: &str) -> Result<Motion, String> {
    Motion::parse(s).map_err(|e| e.to_string())
}

/// Seed precedence: `--seed`, then the `HIT_SEED` environment variable, then 0.
fn resolve_seed(cli_seed: Option<u64>) -> Result<u64> {
    if let Some(s) = cli_seed {
        return Ok(s);
    }
    match std::env::var("HIT_SEED") {
        Ok(v) => v
            .parse::<u64>()
            .with_context(|| format!("HIT_SEED must be an unsigned integer, got `{v}`")),
        Err(_) => Ok(0),
    }
}

fn main() -> Result<()> {
    // Die quietly when a downstream pipe closes (e.g. `hit paramcount | head`)
    // instead of panicking on the failed write.
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    match Cli::parse().cmd {
        Cmd::Paramcount { variant, ablation } => cmd_cost(variant, &ablation, CostKind::Params),
        Cmd::Macs { variant, ablation } => cmd_cost(variant, &ablation, CostKind::Macs),
        Cmd::Bench {
            variant,
            iters,
            warmup,
            threads,
            ablation,
            seed,
        } => cmd_bench(variant, iters, warmup, threads, &ablation, seed),
        Cmd::Track {
            variant,
            weights,
            frames,
            init,
            out,
            seed,
            ablation,
        } => cmd_track(variant, weights, &frames, &init, &out, seed, &ablation),
        Cmd::Selfcheck => cmd_selfcheck(),
        Cmd::Synth {
            seed,
            frames,
            out,
            motion,
        } => cmd_synth(seed, frames, &out, motion),
        Cmd::Eval { pred, gt } => cmd_eval(&pred, &gt),
    }
}

enum CostKind {
    Params,
    Macs,
}

fn cmd_cost(variant: Variant, ablation: &str, kind: CostKind) -> Result<()> {
    let spec = AblationSpec::parse(ablation)?;
    let cfg = ModelConfig::for_variant(variant);
    let report = cost_report(&cfg, &spec);
    let pick = |c: &hit_core::accounting::ComponentCost| match kind {
        CostKind::Params => c.params,
        CostKind::Macs => c.macs,
    };

    let label = match kind {
        CostKind::Params => "parameters",
        CostKind::Macs => "macs per forward",
    };
    println!("hit-{} {label} ({})", variant.name(), spec.name());
    for c in &report.components {
        println!("  {:<8} {:>14}", c.name, pick(c));
    }
    let (total, backbone) = match kind {
        CostKind::Params => (report.params, report.backbone_params()),
        CostKind::Macs => (report.macs, report.backbone_macs()),
    };
    println!("total    {total:>16}");
    println!(
        "backbone {:>16} ({:.1}% of total)",
        backbone,
        backbone as f64 / total as f64 * 100.0
    );
    if spec == AblationSpec::default() {
        let (p_ref, m_ref) = reference_totals(variant);
        let reference = match kind {
            CostKind::Params => p_ref,
            CostKind::Macs => m_ref,
        };
        println!(
            "reference {:>15} (delta {:+.2}%)",
            reference as u64,
            (total as f64 - reference) / reference * 100.0
        );
    }
    Ok(())
}

fn build_model(
    variant: Variant,
    ablation: &str,
    weights: Option<&Path>,
    seed: u64,
) -> Result<(ModelConfig, HitModel)> {
    let spec = AblationSpec::parse(ablation)?;
    let cfg = ModelConfig::for_variant(variant);
    let model = match weights {
        Some(path) => load_model(path, &cfg, spec)
            .with_context(|| format!("loading weights from {}", path.display()))?,
        None => HitModel::init(&cfg, spec, seed)?,
    };
    Ok((cfg, model))
}

fn fixed_inputs(cfg: &ModelConfig) -> Result<(Tensor, Tensor)> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x1177);
    let mut img = |side: usize| -> Result<Tensor> {
        let data = (0..side * side * 3).map(|_| rng.gen_range(0.0..1.0)).collect();
        Ok(Tensor::new(vec![side, side, 3], data)?)
    };
    let t = img(cfg.template_size)?;
    let s = img(cfg.search_size)?;
    Ok((t, s))
}

fn cmd_bench(
    variant: Variant,
    iters: usize,
    warmup: usize,
    threads: Option<usize>,
    ablation: &str,
    seed: Option<u64>,
) -> Result<()> {
    let seed = resolve_seed(seed)?;
    let (cfg, model) = build_model(variant, ablation, None, seed)?;
    let (t, s) = fixed_inputs(&cfg)?;
    println!(
        "bench hit-{} iters={iters} warmup={warmup} seed={seed}",
        variant.name()
    );
    match threads {
        None | Some(1) => {
            let r = measure_latency(|| model.forward(&t, &s).map(|_| ()), iters, warmup)?;
            println!("mean_ms {:.3}", r.mean_ms);
            println!("p50_ms  {:.3}", r.p50_ms);
            println!("p95_ms  {:.3}", r.p95_ms);
            println!("fps     {:.2}", r.fps);
        }
        Some(n) => {
            let r = measure_throughput(|| model.forward(&t, &s).map(|_| ()), iters, warmup, n)?;
            println!("threads    {}", r.threads);
            println!("elapsed_ms {:.3}", r.elapsed_ms);
            println!("fps        {:.2}", r.fps);
        }
    }
    Ok(())
}

fn parse_init_box(s: &str) -> Result<BBox> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 4 {
        bail!("--init must be X,Y,W,H (got `{s}`)");
    }
    let mut v = [0.0f32; 4];
    for (slot, part) in v.iter_mut().zip(&parts) {
        *slot = part
            .parse::<f32>()
            .with_context(|| format!("bad number `{part}` in --init"))?;
    }
    Ok(BBox::new(v[0], v[1], v[2], v[3])?)
}

fn cmd_track(
    variant: Variant,
    weights: Option<PathBuf>,
    frames_dir: &Path,
    init: &str,
    out: &Path,
    seed: Option<u64>,
    ablation: &str,
) -> Result<()> {
    let seed = resolve_seed(seed)?;
    let init_box = parse_init_box(init)?;
    let (_, model) = build_model(variant, ablation, weights.as_deref(), seed)?;

    let frame_paths = list_frames(frames_dir)
        .with_context(|| format!("listing frames in {}", frames_dir.display()))?;
    if frame_paths.is_empty() {
        bail!("no .ppm frames in {}", frames_dir.display());
    }
    let first = read_ppm(&frame_paths[0])?;
    let mut tracker = Tracker::init(&model, &first, init_box)?;

    let mut csv = String::from("frame,x,y,w,h\n");
    push_row(&mut csv, 0, &init_box);
    for (i, path) in frame_paths.iter().enumerate().skip(1) {
        let frame = read_ppm(path).with_context(|| format!("reading {}", path.display()))?;
        let b = tracker.track(&frame)?;
        push_row(&mut csv, i, &b);
    }
    let mut f = std::fs::File::create(out)?;
    f.write_all(csv.as_bytes())?;
    println!(
        "tracked {} frames from {} -> {}",
        frame_paths.len(),
        frames_dir.display(),
        out.display()
    );
    Ok(())
}

fn push_row(csv: &mut String, frame: usize, b: &BBox) {
    use std::fmt::Write as _;
    // shortest round-trip float formatting keeps re-parsing lossless
    writeln!(csv, "{frame},{},{},{},{}", b.x, b.y, b.w, b.h).expect("string write");
}

fn cmd_selfcheck() -> Result<()> {
    let outcomes = run_selfcheck();
    let mut failed = 0;
    for o in &outcomes {
        let status = if o.passed { "ok  " } else { "FAIL" };
        println!("{status} {:<28} {}", o.name, o.detail);
        if !o.passed {
            failed += 1;
        }
    }
    println!("{} checks, {} failed", outcomes.len(), failed);
    if failed > 0 {
        bail!("{failed} selfcheck(s) failed");
    }
    Ok(())
}

fn cmd_synth(seed: Option<u64>, frames: usize, out: &Path, motion: Motion) -> Result<()> {
    let seed = resolve_seed(seed)?;
    let seq = synth_sequence(seed, frames, motion)?;
    std::fs::create_dir_all(out)?;
    let mut csv = String::from("frame,x,y,w,h\n");
    for (i, (frame, b)) in seq.frames.iter().zip(&seq.boxes).enumerate() {
        write_ppm(&out.join(format!("{i:05}.ppm")), frame)?;
        push_row(&mut csv, i, b);
    }
    std::fs::write(out.join("gt.csv"), csv)?;
    println!(
        "wrote {frames} {} frames (seed {seed}) and gt.csv to {}",
        motion.name(),
        out.display()
    );
    Ok(())
}

/// Read a trajectory CSV (`frame,x,y,w,h` header) into boxes.
fn read_boxes(path: &Path) -> Result<Vec<BBox>> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim_end() == "frame,x,y,w,h" => {}
        other => bail!(
            "{}: expected header `frame,x,y,w,h`, got {:?}",
            path.display(),
            other
        ),
    }
    let mut boxes = Vec::new();
    for (ln, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            bail!("{} line {}: expected 5 fields", path.display(), ln + 2);
        }
        let mut v = [0.0f32; 4];
        for (slot, field) in v.iter_mut().zip(&fields[1..]) {
            *slot = field
                .trim()
                .parse::<f32>()
                .with_context(|| format!("{} line {}: bad number", path.display(), ln + 2))?;
        }
        boxes.push(BBox::new(v[0], v[1], v[2], v[3])?);
    }
    Ok(boxes)
}

fn cmd_eval(pred: &Path, gt: &Path) -> Result<()> {
    let p = read_boxes(pred)?;
    let g = read_boxes(gt)?;
    let m = eval_sequence(&p, &g)?;
    println!("frames          {}", p.len());
    println!("auc             {:.6}", m.auc);
    println!("precision       {:.6}", m.precision);
    println!("norm_precision  {:.6}", m.norm_precision);
    Ok(())
}
