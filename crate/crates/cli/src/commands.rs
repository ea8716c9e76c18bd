use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand};

use s3d_core::data::{annotation_dir, write_dataset, Manifest, Split, MANIFEST_FILE};
use s3d_core::eval::{read_records, write_json};
use s3d_core::net::io::{load_model, save_model};
use s3d_core::{
    detect_video, mean_ap, tile_default_spans, EvalReport, Network, Sgd, SpanGridConfig, Tensor, VideoAnnotations,
    VideoDetections,
};

use crate::config::{check_grid_matches, config_hash, RunConfig};
use crate::plot::render_timeline;
use crate::train::{load_split, write_loss_csv, Checkpoint, CheckpointState, StepRecord, Trainer};

#[derive(Debug, Parser)]
#[command(name = "s3d", version, about = "Single-shot temporal activity detection")]
pub struct Cli {
    /// JSON run configuration; missing fields take defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the run and dataset seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; falls back to S3D_THREADS, then all cores.
    #[arg(long, global = true, env = "S3D_THREADS")]
    pub threads: Option<usize>,
    /// Overwrite existing outputs.
    #[arg(long, global = true)]
    pub force: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset.
    Gen(GenArgs),
    /// Train a model on the train split.
    Train(TrainArgs),
    /// Run windowed detection over a split.
    Detect(DetectArgs),
    /// Score detections against annotations.
    Eval(EvalArgs),
    /// Print the default span table.
    Tile(TileArgs),
    /// Measure forward-pass throughput.
    Bench(BenchArgs),
    /// Draw detections and annotations as an SVG timeline.
    Plot(PlotArgs),
}

#[derive(Debug, Clone, Args)]
pub struct GenArgs {
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Train repeatedly on a single window instead of the dataset.
    #[arg(long)]
    pub overfit_one_window: bool,
    /// Step count for the overfit mode.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Per-step loss CSV; defaults to `<out>.loss.csv`.
    #[arg(long)]
    pub loss_log: Option<PathBuf>,
    /// Directory for per-epoch checkpoints.
    #[arg(long)]
    pub checkpoint_dir: Option<PathBuf>,
    /// Continue from the checkpoint in `--checkpoint-dir`.
    #[arg(long, requires = "checkpoint_dir")]
    pub resume: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum SplitArg {
    Train,
    Test,
    All,
}

impl SplitArg {
    fn split(self) -> Option<Split> {
        match self {
            SplitArg::Train => Some(Split::Train),
            SplitArg::Test => Some(Split::Test),
            SplitArg::All => None,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct DetectArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory, one JSON file per video.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,
    #[arg(long)]
    pub score_threshold: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    /// Detection JSON file or directory.
    #[arg(long)]
    pub detections: PathBuf,
    /// Annotation JSON file or directory.
    #[arg(long)]
    pub annotations: PathBuf,
    /// Comma-separated IoU thresholds.
    #[arg(long, value_delimiter = ',')]
    pub thresholds: Option<Vec<f64>>,
    /// Dataset manifest supplying the class vocabulary.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct TileArgs {
    #[arg(long, value_delimiter = ',', default_value = "32,16,8,4,2,1")]
    pub layers: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "0.25,0.5,0.75,1.0")]
    pub ratios: Vec<f64>,
    /// Print every span, not only the per-layer summary.
    #[arg(long)]
    pub list: bool,
}

#[derive(Debug, Clone, Args)]
pub struct BenchArgs {
    /// Model file; a freshly initialised network when omitted.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    pub windows: usize,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Clone, Args)]
pub struct PlotArgs {
    #[arg(long)]
    pub detections: PathBuf,
    #[arg(long)]
    pub annotations: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0.1)]
    pub min_score: f64,
}

/// Shared startup state for every command.
#[derive(Debug, Clone)]
pub struct Ctx {
    pub config: RunConfig,
    pub force: bool,
    pub threads: usize,
}

impl Ctx {
    pub fn new(config: RunConfig, force: bool) -> Self {
        Ctx {
            config,
            force,
            threads: rayon::current_num_threads(),
        }
    }
}

pub fn resolve_config(path: Option<&Path>, seed: Option<u64>) -> Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = seed {
        cfg = cfg.with_seed(s);
    }
    cfg.validate().context("invalid configuration")?;
    Ok(cfg)
}

pub fn run(cli: Cli, out: &mut impl Write) -> Result<()> {
    if let Some(n) = cli.threads {
        ensure!(n >= 1, "--threads must be >= 1");
        // A global pool may already exist when called from tests.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    if let Command::Tile(args) = &cli.command {
        return cmd_tile(args, out).map(|_| ());
    }
    let cfg = resolve_config(cli.config.as_deref(), cli.seed)?;
    let ctx = Ctx::new(cfg, cli.force);
    match &cli.command {
        Command::Gen(a) => cmd_gen(&ctx, a, out).map(|_| ()),
        Command::Train(a) => cmd_train(&ctx, a, out).map(|_| ()),
        Command::Detect(a) => cmd_detect(&ctx, a, out).map(|_| ()),
        Command::Eval(a) => cmd_eval(&ctx, a, out).map(|_| ()),
        Command::Tile(_) => unreachable!(),
        Command::Bench(a) => cmd_bench(&ctx, a, out).map(|_| ()),
        Command::Plot(a) => cmd_plot(a, out),
    }
}

fn is_non_empty_dir(p: &Path) -> bool {
    fs::read_dir(p).map(|mut d| d.next().is_some()).unwrap_or(false)
}

fn guard_output(path: &Path, force: bool) -> Result<()> {
    if path.is_file() && !force {
        bail!("{} already exists; pass --force to overwrite", path.display());
    }
    if path.is_dir() && is_non_empty_dir(path) && !force {
        bail!("{} is not empty; pass --force to overwrite", path.display());
    }
    Ok(())
}

pub fn cmd_gen(ctx: &Ctx, args: &GenArgs, out: &mut impl Write) -> Result<Manifest> {
    guard_output(&args.out, ctx.force)?;
    if ctx.force {
        for stale in ["videos", "annotations"] {
            let p = args.out.join(stale);
            if p.is_dir() {
                fs::remove_dir_all(&p)?;
            }
        }
    }
    let spec = &ctx.config.synthetic;
    let manifest = write_dataset(spec, &args.out)?;
    let train = manifest.entries(Some(Split::Train)).count();
    let test = manifest.entries(Some(Split::Test)).count();
    let hours: f64 = manifest.videos.iter().map(|v| v.duration_sec).sum::<f64>() / 3600.0;
    writeln!(
        out,
        "wrote {} videos ({train} train, {test} test, {hours:.2} h) with {} classes [{}] to {}",
        manifest.videos.len(),
        manifest.num_classes,
        manifest.class_names.join(", "),
        args.out.display()
    )?;
    Ok(manifest)
}

fn check_manifest(cfg: &RunConfig, manifest: &Manifest, net: &Network) -> Result<()> {
    ensure!(
        manifest.num_classes == net.config().num_classes,
        "dataset has {} classes, model predicts {}",
        manifest.num_classes,
        net.config().num_classes
    );
    let [_, h, w, _] = net.input_shape();
    ensure!(
        manifest.frame_size == [h, w],
        "dataset frames are {:?}, model expects {h}x{w}",
        manifest.frame_size
    );
    check_grid_matches(net.config(), &cfg.span_grid).context("model/config span grid mismatch")
}

/// Hash of the configuration that must stay fixed across a resume.
fn resume_hash(cfg: &RunConfig) -> String {
    let mut c = cfg.clone();
    c.training.epochs = 0;
    config_hash(&c)
}

pub struct TrainOutcome {
    pub net: Network,
    pub records: Vec<StepRecord>,
}

pub fn cmd_train(ctx: &Ctx, args: &TrainArgs, out: &mut impl Write) -> Result<TrainOutcome> {
    let cfg = &ctx.config;
    guard_output(&args.out, ctx.force)?;
    let manifest = Manifest::load(&args.data).with_context(|| format!("reading {}", args.data.join(MANIFEST_FILE).display()))?;
    let epochs = args.epochs.unwrap_or(cfg.training.epochs);
    let loss_log = args
        .loss_log
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("{}.loss.csv", args.out.display())));

    let resumed = match (&args.checkpoint_dir, args.resume) {
        (Some(dir), true) => {
            let ckpt = Checkpoint::load(dir)?;
            ensure!(
                ckpt.state.config_hash == resume_hash(cfg),
                "checkpoint in {} was written with a different configuration",
                dir.display()
            );
            Some(ckpt)
        }
        _ => None,
    };
    let (mut net, mut opt, first_epoch, first_step) = match resumed {
        Some(c) => (c.net, c.opt, c.state.epochs_done, c.state.steps_done),
        None => {
            let net = Network::new(cfg.network_config(), cfg.seed)?;
            let opt = Sgd::new(&net, cfg.optimizer);
            (net, opt, 0, 0)
        }
    };
    check_manifest(cfg, &manifest, &net)?;
    let videos = load_split(&args.data, &manifest, Split::Train)?;
    ensure!(!videos.is_empty(), "dataset has no training videos");
    let trainer = Trainer::new(cfg, &net, &videos)?;

    let started = Instant::now();
    let mut all = Vec::new();
    if args.overfit_one_window {
        let steps = args.steps.unwrap_or(cfg.training.overfit_steps);
        all = trainer.overfit_one_window(&mut net, &mut opt, steps)?;
        write_loss_csv(&loss_log, &all, false)?;
        if let (Some(first), Some(last)) = (all.first(), all.last()) {
            writeln!(
                out,
                "overfit: {} steps, total loss {:.5} -> {:.5} ({:.1}%)",
                all.len(),
                first.report.total,
                last.report.total,
                100.0 * last.report.total / first.report.total
            )?;
        }
    } else {
        writeln!(
            out,
            "training on {} windows from {} videos, epochs {first_epoch}..{epochs}, batch {}",
            trainer.num_windows(),
            videos.len(),
            cfg.training.batch_size
        )?;
        if first_epoch == 0 {
            write_loss_csv(&loss_log, &[], false)?;
        }
        let hash = resume_hash(cfg);
        trainer.run(&mut net, &mut opt, first_epoch, epochs, first_step, |epoch, net, opt, records| {
            write_loss_csv(&loss_log, records, true)?;
            let mean = records.iter().map(|r| r.report.total).sum::<f64>() / records.len().max(1) as f64;
            writeln!(
                out,
                "epoch {epoch}: mean total loss {mean:.5} ({:.0}s)",
                started.elapsed().as_secs_f64()
            )?;
            if let Some(dir) = &args.checkpoint_dir {
                Checkpoint {
                    net: net.clone(),
                    opt: opt.clone(),
                    state: CheckpointState {
                        epochs_done: epoch + 1,
                        steps_done: records.last().map_or(0, |r| r.step),
                        config_hash: hash.clone(),
                    },
                }
                .save(dir)?;
            }
            all.extend_from_slice(records);
            Ok(())
        })?;
    }
    save_model(&net, &args.out)?;
    writeln!(out, "saved model to {}", args.out.display())?;
    Ok(TrainOutcome { net, records: all })
}

pub fn cmd_detect(ctx: &Ctx, args: &DetectArgs, out: &mut impl Write) -> Result<Vec<VideoDetections>> {
    let cfg = &ctx.config;
    guard_output(&args.out, ctx.force)?;
    let net = load_model(&args.model).with_context(|| format!("loading {}", args.model.display()))?;
    let manifest = Manifest::load(&args.data)?;
    check_manifest(cfg, &manifest, &net)?;
    let mut icfg = cfg.inference;
    if let Some(t) = args.score_threshold {
        icfg.score_threshold = t;
    }
    icfg.validate()?;
    fs::create_dir_all(&args.out)?;
    let mut results = Vec::new();
    for entry in manifest.entries(args.split.split()) {
        let video = s3d_core::data::load_video(&args.data, &manifest, entry)?;
        let dets = detect_video(&net, &video.frames, video.fps, &icfg)?;
        let labeled = VideoDetections::new(&video.video_id, &dets, &manifest.class_names)?;
        write_json(&args.out.join(format!("{}.json", video.video_id)), &labeled)?;
        results.push(labeled);
    }
    let total: usize = results.iter().map(|r| r.detections.len()).sum();
    writeln!(
        out,
        "wrote {total} detections for {} videos to {}",
        results.len(),
        args.out.display()
    )?;
    Ok(results)
}

pub fn format_report(report: &EvalReport) -> String {
    let fmt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
    let mut s = String::from("class");
    for t in &report.thresholds {
        s.push_str(&format!("\t{t:.2}"));
    }
    s.push('\n');
    for (class, aps) in &report.per_class {
        s.push_str(class);
        for ap in aps {
            s.push('\t');
            s.push_str(&fmt(*ap));
        }
        s.push('\n');
    }
    s.push_str("mAP");
    for m in &report.map {
        s.push('\t');
        s.push_str(&fmt(*m));
    }
    s.push('\n');
    s
}

pub fn report_csv(report: &EvalReport) -> String {
    let cell = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
    let mut s = String::from("class");
    for t in &report.thresholds {
        s.push_str(&format!(",{t}"));
    }
    s.push('\n');
    for (class, aps) in &report.per_class {
        s.push_str(class);
        for ap in aps {
            s.push(',');
            s.push_str(&cell(*ap));
        }
        s.push('\n');
    }
    s.push_str("mAP");
    for m in &report.map {
        s.push(',');
        s.push_str(&cell(*m));
    }
    s.push('\n');
    s
}

pub fn cmd_eval(ctx: &Ctx, args: &EvalArgs, out: &mut impl Write) -> Result<EvalReport> {
    let mut ecfg = ctx.config.eval.clone();
    if let Some(t) = &args.thresholds {
        ecfg.iou_thresholds = t.clone();
    }
    let detections: Vec<VideoDetections> = read_records(&args.detections)
        .with_context(|| format!("reading detections from {}", args.detections.display()))?;
    let annotations: Vec<VideoAnnotations> = read_records(&args.annotations)
        .with_context(|| format!("reading annotations from {}", args.annotations.display()))?;
    let vocab = match &args.manifest {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            Some(serde_json::from_str::<Manifest>(&text)?.class_names)
        }
        None => None,
    };
    let report = mean_ap(&detections, &annotations, vocab.as_deref(), &ecfg)?;
    write!(out, "{}", format_report(&report))?;
    if let Some(csv) = &args.csv {
        fs::write(csv, report_csv(&report)).with_context(|| format!("writing {}", csv.display()))?;
    }
    Ok(report)
}

pub fn cmd_tile(args: &TileArgs, out: &mut impl Write) -> Result<usize> {
    let grid_cfg = SpanGridConfig::new(args.layers.clone(), args.ratios.clone())?;
    let grid = tile_default_spans(&grid_cfg)?;
    writeln!(out, "layer\tcells\tratios\tspans\tlength (window fraction)")?;
    for (i, &l) in grid_cfg.layer_lengths.iter().enumerate() {
        let lengths: Vec<String> = grid_cfg.ratios.iter().map(|r| format!("{:.4}", r / l as f64)).collect();
        writeln!(
            out,
            "{i}\t{l}\t{}\t{}\t{}",
            grid_cfg.ratios.len(),
            l * grid_cfg.ratios.len(),
            lengths.join(",")
        )?;
    }
    if args.list {
        writeln!(out, "index\tlayer\tcell\tratio\tcenter\tlength")?;
        for (i, (s, o)) in grid.spans.iter().zip(&grid.origins).enumerate() {
            writeln!(
                out,
                "{i}\t{}\t{}\t{}\t{:.6}\t{:.6}",
                o.layer,
                o.cell,
                grid_cfg.ratios[o.ratio],
                s.center(),
                s.length()
            )?;
        }
    }
    writeln!(out, "{} spans", grid.len())?;
    Ok(grid.len())
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct BenchReport {
    pub windows: usize,
    pub frames_per_window: usize,
    /// Total time of the timed windows.
    pub elapsed_sec: f64,
    /// Median time of one window.
    pub median_window_sec: f64,
    /// Frames per second at the median window time.
    pub fps: f64,
    pub threads: usize,
    pub config_hash: String,
}

/// Untimed warm-up: at least this many windows and this much time.
const BENCH_WARMUP_WINDOWS: usize = 3;
const BENCH_WARMUP_SEC: f64 = 0.2;

pub fn cmd_bench(ctx: &Ctx, args: &BenchArgs, out: &mut impl Write) -> Result<BenchReport> {
    ensure!(args.windows >= 1, "--windows must be >= 1");
    let net = match &args.model {
        Some(p) => load_model(p).with_context(|| format!("loading {}", p.display()))?,
        None => Network::new(ctx.config.network_config(), ctx.config.seed)?,
    };
    let shape = net.input_shape();
    let n: usize = shape.iter().product();
    let mut rng = s3d_core::data::video_rng(ctx.config.seed, 0);
    let data: Vec<f64> = (0..n).map(|_| rand::Rng::random::<f64>(&mut rng)).collect();
    let input = Tensor::from_vec(&shape, data)?;
    let warmup = Instant::now();
    let mut warm = 0;
    while warm < BENCH_WARMUP_WINDOWS || warmup.elapsed().as_secs_f64() < BENCH_WARMUP_SEC {
        std::hint::black_box(net.forward(std::hint::black_box(&input))?);
        warm += 1;
    }
    let mut times = Vec::with_capacity(args.windows);
    for _ in 0..args.windows {
        let t = Instant::now();
        std::hint::black_box(net.forward(std::hint::black_box(&input))?);
        times.push(t.elapsed().as_secs_f64());
    }
    let elapsed: f64 = times.iter().sum();
    times.sort_by(f64::total_cmp);
    let mid = times.len() / 2;
    let median = if times.len() % 2 == 1 {
        times[mid]
    } else {
        0.5 * (times[mid - 1] + times[mid])
    };
    let report = BenchReport {
        windows: args.windows,
        frames_per_window: shape[0],
        elapsed_sec: elapsed,
        median_window_sec: median,
        fps: shape[0] as f64 / median,
        threads: ctx.threads,
        config_hash: config_hash(net.config()),
    };
    if args.json {
        writeln!(out, "{}", serde_json::to_string(&report)?)?;
    } else {
        writeln!(
            out,
            "{} windows x {} frames in {:.3}s: {:.1} FPS (threads {}, config {})",
            report.windows, report.frames_per_window, report.elapsed_sec, report.fps, report.threads, report.config_hash
        )?;
    }
    Ok(report)
}

pub fn cmd_plot(args: &PlotArgs, out: &mut impl Write) -> Result<()> {
    let detections: Vec<VideoDetections> = if args.detections.exists() {
        read_records(&args.detections)?
    } else {
        bail!("{} does not exist", args.detections.display())
    };
    let annotations: Vec<VideoAnnotations> = read_records(&args.annotations)?;
    let svg = render_timeline(&detections, &annotations, args.min_score);
    fs::write(&args.out, svg).with_context(|| format!("writing {}", args.out.display()))?;
    writeln!(
        out,
        "wrote timeline of {} videos to {}",
        detections.len().max(annotations.len()),
        args.out.display()
    )?;
    Ok(())
}

/// Annotation directory of a dataset split.
pub fn split_annotations(data_dir: &Path, split: Split) -> PathBuf {
    annotation_dir(data_dir, split)
}
