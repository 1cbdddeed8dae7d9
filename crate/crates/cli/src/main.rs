use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use edgeflow::bench::{equal_pixel_sweep, render_table};
use edgeflow::chunker::{chunked_infer, plan_chunks};
use edgeflow::config::AppConfig;
use edgeflow::datamodel::{flo_write, load_image, save_image, ImagePair};
use edgeflow::latency::{max_safe_speed, speed_curves, CurveFamily, SpeedGrid};
use edgeflow::metrics::{EvalItem, EvalReport};
use edgeflow::model::LoadedModel;
use edgeflow::net::{init_weights, load_weights, save_weights, OutputMode};
use edgeflow::quantsim::{calibrate, range_coverage, save_quantized};
use edgeflow::sweep::{ball_sweep, overlap_sweep, render_ball_table};
use edgeflow::synthgen::{ball_sweep_radii, gen_dataset, generate_samples, BallScene, Manifest, Sample, MANIFEST_NAME};
use edgeflow::train::{train, LossConfig, LossMode};
use edgeflow::viz::{flow_to_image, svg_line_plot, Series};
use edgeflow::{Error, Result};

#[derive(Parser)]
#[command(name = "edgeflow", version, about = "Multi-scale optical flow toolkit")]
struct Cli {
    /// TOML configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic dataset with a manifest.
    Synth(SynthArgs),
    /// Train a network on a generated dataset.
    Train(TrainArgs),
    /// EPE report for a dataset.
    Eval(EvalArgs),
    /// Flow for one image pair.
    Infer(InferArgs),
    /// EPE and FPS across chunk overlaps.
    ChunkSweep(ChunkSweepArgs),
    /// Calibrate and write an 8-bit model.
    Quantize(QuantizeArgs),
    /// Throughput at equal pixel counts.
    Bench(BenchArgs),
    /// Maximum safe speed from latency and detection rate.
    Maxspeed(MaxspeedArgs),
    /// Obstacle IoU for seam-centered balls.
    Ballbench(BallArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 100)]
    count: usize,
    #[arg(long)]
    height: Option<usize>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    max_flow: Option<f32>,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset directory holding `manifest.txt`.
    #[arg(long)]
    data: PathBuf,
    /// Held-out dataset; defaults to the last tenth of `--data`.
    #[arg(long)]
    val: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    /// raw | shift50 | multiscale | multiscale_uncertainty
    #[arg(long)]
    mode: Option<OutputMode>,
    /// Start from these weights instead of a fresh init.
    #[arg(long)]
    init: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    weights: PathBuf,
    /// Line-delimited per-sample records.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct InferArgs {
    #[arg(long, num_args = 2, value_names = ["FRAME1", "FRAME2"])]
    pair: Vec<PathBuf>,
    #[arg(long)]
    weights: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Color-coded flow image.
    #[arg(long)]
    png: Option<PathBuf>,
    /// Chunk grid such as `2x2`.
    #[arg(long, value_parser = parse_grid)]
    chunks: Option<(usize, usize)>,
    #[arg(long, default_value_t = 0)]
    overlap: usize,
}

#[derive(Args)]
struct ChunkSweepArgs {
    #[arg(long)]
    weights: PathBuf,
    /// Dataset directory; synthesized from the seed when absent.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    count: usize,
    #[arg(long, default_value_t = 192)]
    height: usize,
    #[arg(long, default_value_t = 256)]
    width: usize,
    #[arg(long, value_parser = parse_grid, default_value = "2x2")]
    chunks: (usize, usize),
    #[arg(long, value_delimiter = ',', default_value = "0,16,32,64")]
    overlaps: Vec<usize>,
    #[arg(long, default_value_t = 5)]
    reps: usize,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct QuantizeArgs {
    #[arg(long)]
    weights: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Calibration dataset; synthesized from the seed when absent.
    #[arg(long)]
    calib: Option<PathBuf>,
    #[arg(long, default_value_t = 64)]
    calib_count: usize,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    weights: PathBuf,
    #[arg(long, default_value_t = 192)]
    height: usize,
    #[arg(long, default_value_t = 256)]
    width: usize,
    /// Chunk factors; factor f runs f² chunks of (H/f)×(W/f).
    #[arg(long, value_delimiter = ',', default_value = "1,2,4")]
    factors: Vec<usize>,
    #[arg(long, default_value_t = 2)]
    warmup: usize,
    #[arg(long, default_value_t = 10)]
    reps: usize,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct MaxspeedArgs {
    #[arg(long)]
    dr: Option<f64>,
    #[arg(long)]
    drs: Option<f64>,
    /// Perception latency, s.
    #[arg(long, conflicts_with = "fps")]
    tau_p: Option<f64>,
    /// Inference rate; sets the perception latency to its inverse.
    #[arg(long)]
    fps: Option<f64>,
    #[arg(long)]
    depth: Option<f64>,
    #[arg(long)]
    length: Option<f64>,
    /// Write the speed grid as line-delimited records.
    #[arg(long)]
    curves: Option<PathBuf>,
    /// Render the speed curves as SVG.
    #[arg(long)]
    plot: Option<PathBuf>,
}

#[derive(Args)]
struct BallArgs {
    #[arg(long)]
    weights: PathBuf,
    #[arg(long, value_delimiter = ',')]
    radii: Option<Vec<f32>>,
    #[arg(long, value_delimiter = ',', default_value = "0,16,32,64")]
    overlaps: Vec<usize>,
    #[arg(long, default_value_t = 4.0)]
    speed: f32,
    #[arg(long, default_value_t = 480)]
    height: usize,
    #[arg(long, default_value_t = 352)]
    width: usize,
    #[arg(long, value_parser = parse_grid, default_value = "2x2")]
    chunks: (usize, usize),
    #[arg(long)]
    report: Option<PathBuf>,
}

fn parse_grid(s: &str) -> std::result::Result<(usize, usize), String> {
    let (a, b) = s.split_once(['x', 'X']).ok_or_else(|| format!("expected MxN, got '{s}'"))?;
    let m = a.trim().parse().map_err(|_| format!("bad row count '{a}'"))?;
    let n = b.trim().parse().map_err(|_| format!("bad column count '{b}'"))?;
    Ok((m, n))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::Io { path: dir.into(), source: e })?;
    }
    fs::write(path, text).map_err(|e| Error::Io { path: path.into(), source: e })
}

fn jsonl<T: serde::Serialize>(items: impl IntoIterator<Item = T>) -> String {
    items
        .into_iter()
        .map(|r| serde_json::to_string(&r).expect("records serialize") + "\n")
        .collect()
}

fn load_dataset(dir: &Path) -> Result<Vec<Sample>> {
    Manifest::load(dir.join(MANIFEST_NAME))?.load_samples(dir)
}

struct Ctx {
    cfg: AppConfig,
    seed: u64,
}

fn synth(ctx: &Ctx, a: SynthArgs) -> Result<()> {
    let mut dist = ctx.cfg.synth.clone();
    if let Some(h) = a.height {
        dist.height = h;
    }
    if let Some(w) = a.width {
        dist.width = w;
    }
    if let Some(m) = a.max_flow {
        dist.max_flow = m;
    }
    let m = gen_dataset(a.count, &dist, ctx.seed, &a.out)?;
    println!("wrote {} samples to {}", m.records.len(), a.out.display());
    Ok(())
}

fn train_cmd(ctx: &Ctx, a: TrainArgs) -> Result<()> {
    let mut samples = load_dataset(&a.data)?;
    let val = match &a.val {
        Some(v) => load_dataset(v)?,
        None => {
            let keep = samples.len() - samples.len() / 10;
            samples.split_off(keep)
        }
    };
    let mut net = ctx.cfg.net.clone();
    if let Some(m) = a.mode {
        net = edgeflow::net::NetConfig { uncertainty_head: m == OutputMode::MultiscaleUncertainty, output_mode: m, ..net };
    }
    let weights = match &a.init {
        Some(p) => load_weights(p)?,
        None => init_weights(&net, ctx.seed)?,
    };
    let mut tcfg = ctx.cfg.train.clone();
    tcfg.seed = ctx.seed;
    tcfg.checkpoint_dir = Some(a.out.clone());
    if let Some(e) = a.epochs {
        tcfg.epochs = e;
    }
    if let Some(lr) = a.lr {
        tcfg.learning_rate = lr;
    }
    if let Some(b) = a.batch {
        tcfg.batch_size = b;
    }
    let lcfg = LossConfig {
        mode: LossMode::for_output(weights.config.output_mode),
        ..ctx.cfg.loss.clone()
    };
    let (w, _) = train(weights, &samples, &val, &tcfg, &lcfg, |r| {
        println!(
            "epoch {:>3}  loss {:.5}  val EPE {}",
            r.epoch,
            r.train_loss,
            r.val_epe.map_or("-".into(), |e| format!("{e:.4}"))
        )
    })?;
    let path = a.out.join("final.efnw");
    save_weights(&w, &path)?;
    println!("saved {}", path.display());
    Ok(())
}

fn eval(_ctx: &Ctx, a: EvalArgs) -> Result<()> {
    let model = LoadedModel::load(&a.weights)?;
    let samples = load_dataset(&a.data)?;
    let preds = samples.iter().map(|s| model.as_model().infer(&s.pair())).collect::<Result<Vec<_>>>()?;
    let items: Vec<_> = samples
        .iter()
        .zip(&preds)
        .map(|(s, p)| EvalItem { pred: p, gt: &s.flow, gt_mask: None })
        .collect();
    let meta = serde_json::json!({ "weights": a.weights, "data": a.data, "quantized": model.as_model().is_quantized() });
    let report = EvalReport::compute(&items, None, meta)?;
    print!("{}", report.summary_table());
    if let Some(p) = &a.report {
        write_text(p, &report.to_jsonl())?;
    }
    Ok(())
}

fn infer(_ctx: &Ctx, a: InferArgs) -> Result<()> {
    let model = LoadedModel::load(&a.weights)?;
    let pair = ImagePair::from_frames(&load_image(&a.pair[0])?, &load_image(&a.pair[1])?)?;
    let flow = match a.chunks {
        Some((m, n)) => {
            let plan = plan_chunks(pair.height(), pair.width(), m, n, a.overlap)?;
            chunked_infer(&pair, &plan, model.as_model())?.flow
        }
        None => model.as_model().infer(&pair)?,
    };
    flo_write(&flow, &a.out)?;
    if let Some(p) = &a.png {
        save_image(&flow_to_image(&flow, None), p)?;
    }
    println!("wrote {}", a.out.display());
    Ok(())
}

fn chunk_sweep(ctx: &Ctx, a: ChunkSweepArgs) -> Result<()> {
    let model = LoadedModel::load(&a.weights)?;
    let samples = match &a.data {
        Some(d) => load_dataset(d)?,
        None => {
            let dist = edgeflow::synthgen::SceneDistribution { height: a.height, width: a.width, ..ctx.cfg.synth.clone() };
            generate_samples(a.count, &dist, ctx.seed)?
        }
    };
    let sweep = overlap_sweep(model.as_model(), &samples, a.chunks.0, a.chunks.1, &a.overlaps, a.reps)?;
    print!("{}", sweep.render());
    if let Some(p) = &a.report {
        write_text(p, &jsonl(&sweep.results))?;
    }
    Ok(())
}

fn quantize(ctx: &Ctx, a: QuantizeArgs) -> Result<()> {
    let weights = load_weights(&a.weights)?;
    let (calib, dist) = match &a.calib {
        Some(d) => {
            let m = Manifest::load(d.join(MANIFEST_NAME))?;
            (m.load_samples(d)?, m.distribution)
        }
        None => (generate_samples(a.calib_count, &ctx.cfg.synth, ctx.seed)?, ctx.cfg.synth.clone()),
    };
    let pairs: Vec<_> = calib.iter().map(Sample::pair).collect();
    let q = calibrate(&weights, &pairs)?;
    for w in &q.warnings {
        eprintln!("warning: {w}");
    }
    // fresh samples the calibration never saw
    let probe: Vec<_> = generate_samples(pairs.len().min(64), &dist, ctx.seed.wrapping_add(1))?
        .iter()
        .map(Sample::pair)
        .collect();
    let cov = range_coverage(&weights, &q, &probe)?;
    save_quantized(&q, &a.out)?;
    println!("wrote {} ({} layers, probe coverage {:.4}%)", a.out.display(), q.ops.len(), cov * 100.0);
    Ok(())
}

fn bench(ctx: &Ctx, a: BenchArgs) -> Result<()> {
    let model = LoadedModel::load(&a.weights)?;
    let results = equal_pixel_sweep(model.as_model(), a.height, a.width, &a.factors, a.warmup, a.reps, ctx.seed)?;
    print!("{}", render_table(&results));
    if let Some(p) = &a.report {
        write_text(p, &jsonl(&results))?;
    }
    Ok(())
}

fn maxspeed(ctx: &Ctx, a: MaxspeedArgs) -> Result<()> {
    let mut p = ctx.cfg.vehicle.clone();
    if let Some(v) = a.dr {
        p.detection_rate = v;
    }
    if let Some(v) = a.drs {
        p.detection_confidence = v;
    }
    if let Some(v) = a.tau_p {
        p.tau_p = v;
    }
    if let Some(f) = a.fps {
        if !(f > 0.0) {
            return Err(Error::Argument(format!("fps must be positive, got {f}")));
        }
        p.tau_p = 1.0 / f;
    }
    if let Some(v) = a.depth {
        p.depth = v;
    }
    if let Some(v) = a.length {
        p.length = v;
    }
    let s = max_safe_speed(&p)?;
    println!("N={}", s.observations);
    println!("tau_A={:.4} s", s.tau_a);
    println!("V={:.3} m/s", s.speed);
    if s.latency_dominated {
        println!("note: latency budget exceeds the dodge time");
    }
    if a.curves.is_some() || a.plot.is_some() {
        let rows = speed_curves(&p, &SpeedGrid::default())?;
        if let Some(path) = &a.curves {
            write_text(path, &jsonl(&rows))?;
        }
        if let Some(path) = &a.plot {
            let mut series: Vec<Series> = Vec::new();
            for r in rows.iter().filter(|r| r.family == CurveFamily::Depth) {
                let label = format!("DR {} Z {} m", r.detection_rate, r.depth);
                match series.iter_mut().find(|s| s.label == label) {
                    Some(s) => s.points.push((r.tau_p, r.speed)),
                    None => series.push(Series { label, points: vec![(r.tau_p, r.speed)] }),
                }
            }
            write_text(path, &svg_line_plot(&series, "Maximum safe speed", "perception latency (s)", "V (m/s)"))?;
        }
    }
    Ok(())
}

fn ballbench(_ctx: &Ctx, a: BallArgs) -> Result<()> {
    let model = LoadedModel::load(&a.weights)?;
    let scene = BallScene { height: a.height, width: a.width, ..Default::default() };
    let radii = a.radii.unwrap_or_else(ball_sweep_radii);
    let rows = ball_sweep(model.as_model(), &scene, &radii, a.speed, a.chunks.0, a.chunks.1, &a.overlaps)?;
    print!("{}", render_ball_table(&rows));
    if let Some(p) = &a.report {
        write_text(p, &jsonl(&rows))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let cfg = match &cli.config {
        Some(p) => AppConfig::load(p).map_err(|e| match e {
            Error::Io { path, source } => Error::Argument(format!("{}: {source}", path.display())),
            other => other,
        })?,
        None => AppConfig::default(),
    };
    let ctx = Ctx {
        seed: cli.seed.or(cfg.seed).unwrap_or(0),
        cfg,
    };
    match cli.cmd {
        Cmd::Synth(a) => synth(&ctx, a),
        Cmd::Train(a) => train_cmd(&ctx, a),
        Cmd::Eval(a) => eval(&ctx, a),
        Cmd::Infer(a) => infer(&ctx, a),
        Cmd::ChunkSweep(a) => chunk_sweep(&ctx, a),
        Cmd::Quantize(a) => quantize(&ctx, a),
        Cmd::Bench(a) => bench(&ctx, a),
        Cmd::Maxspeed(a) => maxspeed(&ctx, a),
        Cmd::Ballbench(a) => ballbench(&ctx, a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_argument() { 2 } else { 1 })
        }
    }
}
