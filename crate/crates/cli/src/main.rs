//! `gtm`: train, render, evaluate and inspect time-variant Gaussian scenes.
//!
//! Machine-readable results go to stdout as JSON; progress and the echoed
//! configuration go to stderr. Exit status is 0 on success, 2 for usage,
//! configuration or input errors and 3 for runtime or numerical failures.

mod camera_spec;

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use gtm::bench::{orbit_cameras, run_bench};
use gtm::dataset::{bounding_diagonal, Image, SceneManifest, Split};
use gtm::model::TimeInput;
use gtm::raster::{render, RenderSettings};
use gtm::scene_io::{load_checkpoint, load_scene, save_checkpoint, save_scene};
use gtm::synth::{SynthScene, SynthSpec};
use gtm::train::{evaluate, TrainConfig, Trainer};
use gtm::{EncoderMode, GtmError, SceneModel};
use serde_json::json;

use camera_spec::CameraArgs;

#[derive(Parser)]
#[command(name = "gtm", version, about = "Time-variant neural Gaussian splatting")]
struct Cli {
    /// Worker threads for the rasterizer (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a scene from a manifest.
    Train(TrainArgs),
    /// Render one image at a trained or interpolated time.
    Render(RenderArgs),
    /// Report PSNR and SSIM over one split of a manifest.
    Eval(EvalArgs),
    /// Render a fixed camera across interpolated time embeddings.
    Interpolate(InterpolateArgs),
    /// Convert a checkpoint (or re-validate a scene) into a `.gtms` file.
    Export(ExportArgs),
    /// Measure decode and render throughput.
    Bench(BenchArgs),
    /// Write a synthetic multi-time dataset with known ground truth.
    Synth(SynthArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum EncoderArg {
    Embedding,
    Pe,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// TOML file mirroring the training configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Total iterations.
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long, value_enum)]
    encoder: Option<EncoderArg>,
    /// Disable anchor growing and pruning.
    #[arg(long)]
    no_adapt: bool,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Args)]
struct RenderArgs {
    #[arg(long)]
    scene: PathBuf,
    #[command(flatten)]
    camera: CameraArgs,
    /// Trained time index.
    #[arg(long, conflicts_with = "alpha")]
    time: Option<usize>,
    /// Interpolated time `t0:t1:a`.
    #[arg(long)]
    alpha: Option<String>,
    #[arg(long)]
    out: PathBuf,
    /// Background color `r,g,b` in [0, 1].
    #[arg(long, default_value = "0,0,0")]
    background: String,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value = "test")]
    split: String,
    #[arg(long, default_value = "0,0,0")]
    background: String,
}

#[derive(Args)]
struct InterpolateArgs {
    #[arg(long)]
    scene: PathBuf,
    #[command(flatten)]
    camera: CameraArgs,
    /// Time pair `t0:t1`.
    #[arg(long)]
    between: String,
    #[arg(long, default_value_t = 16)]
    steps: usize,
    /// Output directory for the frames.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "0,0,0")]
    background: String,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long, conflicts_with = "scene", required_unless_present = "scene")]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    scene: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    scene: PathBuf,
    /// Use the manifest's cameras instead of an orbit.
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long, default_value_t = 30)]
    frames: usize,
    #[arg(long, default_value_t = 0)]
    time: usize,
    /// Orbit image size in pixels.
    #[arg(long, default_value_t = 256)]
    size: u32,
}

#[derive(Clone, Copy, ValueEnum)]
enum FixtureArg {
    TwoTime,
    FourTime,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "two-time")]
    fixture: FixtureArg,
    #[arg(long)]
    size: Option<u32>,
}

/// A failure with the exit status it maps to.
enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<GtmError> for Failure {
    fn from(e: GtmError) -> Self {
        match e {
            GtmError::Numerical(_) | GtmError::State(_) | GtmError::Shape(_) => Failure::Runtime(e.to_string()),
            _ => Failure::Usage(e.to_string()),
        }
    }
}

type CmdResult = Result<(), Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    GtmError::io(path, e).into()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure worker threads: {e}");
            return ExitCode::from(3);
        }
    }
    let result = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Render(a) => cmd_render(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Interpolate(a) => cmd_interpolate(a),
        Command::Export(a) => cmd_export(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Synth(a) => cmd_synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(3)
        }
    }
}

fn print_json(value: &serde_json::Value) {
    println!(
        "{}",
        serde_json::to_string_pretty(value).expect("JSON value serializes")
    );
}

fn parse_background(s: &str) -> Result<[f64; 3], Failure> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| usage(format!("background `{s}` is not r,g,b")))?;
    match v[..] {
        [r, g, b] if v.iter().all(|c| (0.0..=1.0).contains(c)) => Ok([r, g, b]),
        _ => Err(usage(format!("background `{s}` must be three numbers in [0, 1]"))),
    }
}

fn settings_with(background: &str) -> Result<RenderSettings, Failure> {
    Ok(RenderSettings {
        background: parse_background(background)?,
        ..Default::default()
    })
}

fn load_config(path: &Path) -> Result<TrainConfig, Failure> {
    let text = fs::read_to_string(path).map_err(|e| io_failure(path, e))?;
    toml::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn cmd_train(a: TrainArgs) -> CmdResult {
    let manifest = SceneManifest::load(&a.manifest)?;
    let views = manifest.load_split(Split::Train)?;

    let resumed = a.resume.as_deref().map(load_checkpoint).transpose()?;
    let mut config = match (&resumed, &a.config) {
        (Some(_), Some(_)) => return Err(usage("--config cannot be combined with --resume")),
        (Some(c), None) => TrainConfig::from_json(&c.config_json)?,
        (None, Some(p)) => load_config(p)?,
        (None, None) => TrainConfig::default(),
    };
    if let Some(s) = a.steps {
        config.iterations = s;
    }
    if resumed.is_none() {
        if let Some(s) = a.seed {
            config.seed = s;
        }
        if let Some(e) = a.encoder {
            config.model.encoder = match e {
                EncoderArg::Embedding => EncoderMode::Embedding,
                EncoderArg::Pe => EncoderMode::Positional,
            };
        }
        if a.no_adapt {
            config.adapt.enabled = false;
        }
    } else if a.seed.is_some() || a.encoder.is_some() || a.no_adapt {
        return Err(usage(
            "--seed, --encoder and --no-adapt are fixed by the checkpoint when resuming",
        ));
    }
    config.validate()?;
    let resolved = toml::to_string(&config).map_err(|e| Failure::Runtime(format!("config echo: {e}")))?;
    eprintln!("# resolved configuration\n{resolved}");

    fs::create_dir_all(a.out.join("checkpoints")).map_err(|e| io_failure(&a.out, e))?;
    fs::write(a.out.join("config.toml"), &resolved).map_err(|e| io_failure(&a.out, e))?;
    let times = serde_json::to_string_pretty(&manifest.times).expect("strings serialize");
    fs::write(a.out.join("times.json"), times).map_err(|e| io_failure(&a.out, e))?;

    let mut trainer = match resumed {
        Some(ckpt) => {
            if ckpt.model.num_times() != manifest.num_times() {
                return Err(usage("checkpoint and manifest disagree on the number of times"));
            }
            let mut t = Trainer::from_checkpoint(ckpt, views)?;
            t.config.iterations = config.iterations;
            t
        }
        None => {
            let points = &manifest.sfm.points.positions;
            let extent = bounding_diagonal(points);
            Trainer::new(config.clone(), views, points, extent, manifest.num_times())?
        }
    };

    let metrics_path = a.out.join("metrics.jsonl");
    let file = if trainer.iteration > 0 {
        OpenOptions::new().create(true).append(true).open(&metrics_path)
    } else {
        File::create(&metrics_path)
    }
    .map_err(|e| io_failure(&metrics_path, e))?;
    let mut metrics = BufWriter::new(file);

    let start = Instant::now();
    let progress_every = (config.iterations / 20).max(1);
    let mut last = None;
    while !trainer.is_done() {
        let report = trainer.step()?;
        let it = report.iteration;
        let done = trainer.is_done();
        if it % config.log_every.max(1) == 0 || report.adapt.is_some() || done {
            serde_json::to_writer(&mut metrics, &report).expect("report serializes");
            metrics.write_all(b"\n").map_err(|e| io_failure(&metrics_path, e))?;
        }
        if config.checkpoint_every > 0 && it % config.checkpoint_every == 0 {
            metrics.flush().map_err(|e| io_failure(&metrics_path, e))?;
            let path = a.out.join("checkpoints").join(format!("iter_{it:06}.gtmc"));
            save_checkpoint(&path, &trainer.checkpoint())?;
        }
        if it % progress_every == 0 || done {
            eprintln!(
                "iter {it}/{}  loss {:.5}  psnr {:.2}  anchors {}  {:.1}s",
                config.iterations,
                report.loss,
                report.psnr,
                report.anchors,
                start.elapsed().as_secs_f64()
            );
        }
        last = Some(report);
    }
    metrics.flush().map_err(|e| io_failure(&metrics_path, e))?;

    let final_ckpt = a.out.join("checkpoints").join("final.gtmc");
    save_checkpoint(&final_ckpt, &trainer.checkpoint())?;
    let scene_path = a.out.join("scene.gtms");
    save_scene(&scene_path, &trainer.model)?;
    print_json(&json!({
        "iterations": trainer.iteration,
        "anchors": trainer.model.anchors.len(),
        "times": manifest.times,
        "last_loss": last.as_ref().map(|r| r.loss),
        "scene": scene_path,
        "checkpoint": final_ckpt,
        "metrics": metrics_path,
    }));
    Ok(())
}

fn parse_pair(s: &str) -> Result<(usize, usize), Failure> {
    let parts: Vec<&str> = s.split(':').collect();
    match parts[..] {
        [a, b] => Ok((
            a.parse().map_err(|_| usage(format!("bad time index `{a}`")))?,
            b.parse().map_err(|_| usage(format!("bad time index `{b}`")))?,
        )),
        _ => Err(usage(format!("`{s}` is not t0:t1"))),
    }
}

fn parse_alpha(s: &str) -> Result<(usize, usize, f64), Failure> {
    let (pair, a) = s
        .rsplit_once(':')
        .ok_or_else(|| usage(format!("`{s}` is not t0:t1:a")))?;
    let (t0, t1) = parse_pair(pair)?;
    let alpha: f64 = a
        .parse()
        .map_err(|_| usage(format!("bad interpolation weight `{a}`")))?;
    if !(0.0..=1.0).contains(&alpha) {
        return Err(usage(format!("interpolation weight {alpha} is outside [0, 1]")));
    }
    Ok((t0, t1, alpha))
}

fn write_png(path: &Path, width: usize, height: usize, pixels: &[f32]) -> CmdResult {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_failure(dir, e))?;
    }
    Image::from_real(width as u32, height as u32, pixels)?.write_png(path)?;
    Ok(())
}

fn cmd_render(a: RenderArgs) -> CmdResult {
    let model = load_scene(&a.scene)?;
    let camera = a.camera.resolve()?;
    let settings = settings_with(&a.background)?;
    let (vector, label) = match (a.time, &a.alpha) {
        (Some(t), None) => (model.time_vector(TimeInput::Index(t))?, json!({ "time": t })),
        (None, Some(s)) => {
            let (t0, t1, alpha) = parse_alpha(s)?;
            (
                model.interpolated_time_vector(t0, t1, alpha)?,
                json!({ "t0": t0, "t1": t1, "alpha": alpha }),
            )
        }
        _ => return Err(usage("give either --time or --alpha")),
    };
    let out = render(&model, &camera, TimeInput::Vector(&vector), &settings, false)?.output;
    write_png(&a.out, out.width, out.height, &out.image)?;
    eprintln!("wrote {} ({}×{})", a.out.display(), out.width, out.height);
    print_json(&json!({
        "out": a.out,
        "width": out.width,
        "height": out.height,
        "time": label,
        "skipped_singular": out.skipped_singular,
    }));
    Ok(())
}

fn check_times(model: &SceneModel<f32>, manifest: &SceneManifest) -> CmdResult {
    if model.num_times() != manifest.num_times() {
        return Err(usage(format!(
            "scene has {} times but the manifest has {}",
            model.num_times(),
            manifest.num_times()
        )));
    }
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> CmdResult {
    let split: Split = a.split.parse()?;
    let model = load_scene(&a.scene)?;
    let manifest = SceneManifest::load(&a.manifest)?;
    check_times(&model, &manifest)?;
    let views = manifest.load_split(split)?;
    if views.is_empty() {
        return Err(usage(format!("split `{}` has no frames", a.split)));
    }
    let records = evaluate(&model, &views, &settings_with(&a.background)?)?;
    let n = records.len() as f64;
    let mean_psnr = records.iter().map(|r| r.psnr).sum::<f64>() / n;
    let mean_ssim = records.iter().map(|r| r.ssim).sum::<f64>() / n;
    eprintln!(
        "{} views: mean PSNR {mean_psnr:.2} dB, mean SSIM {mean_ssim:.4}",
        records.len()
    );
    print_json(&json!({
        "split": a.split,
        "mean_psnr": mean_psnr,
        "mean_ssim": mean_ssim,
        "views": records,
    }));
    Ok(())
}

fn cmd_interpolate(a: InterpolateArgs) -> CmdResult {
    let model = load_scene(&a.scene)?;
    let camera = a.camera.resolve()?;
    let settings = settings_with(&a.background)?;
    let (t0, t1) = parse_pair(&a.between)?;
    if a.steps < 2 {
        return Err(usage("--steps must be at least 2"));
    }
    fs::create_dir_all(&a.out).map_err(|e| io_failure(&a.out, e))?;
    let mut frames = Vec::with_capacity(a.steps);
    let mut reference = None;
    let mut geometry_identical = true;
    for i in 0..a.steps {
        let alpha = i as f64 / (a.steps - 1) as f64;
        let z = model.interpolated_time_vector(t0, t1, alpha)?;
        let rendered = render(&model, &camera, TimeInput::Vector(&z), &settings, false)?;
        let g = &rendered.batch.gaussians;
        let geometry = (g.means.clone(), g.scales.clone(), g.rotations.clone());
        match &reference {
            None => reference = Some(geometry),
            Some(r) => geometry_identical &= *r == geometry,
        }
        let name = format!("frame_{i:03}.png");
        let out = &rendered.output;
        write_png(&a.out.join(&name), out.width, out.height, &out.image)?;
        frames.push(json!({ "file": name, "alpha": alpha }));
    }
    if !geometry_identical {
        return Err(Failure::Runtime(
            "decoded geometry changed across interpolated times".into(),
        ));
    }
    eprintln!("wrote {} frames to {}", a.steps, a.out.display());
    print_json(&json!({
        "t0": t0,
        "t1": t1,
        "frames": frames,
        "geometry_identical": geometry_identical,
    }));
    Ok(())
}

fn scene_summary(model: &SceneModel<f32>) -> serde_json::Value {
    json!({
        "anchors": model.anchors.len(),
        "offsets_per_anchor": model.config.offsets_per_anchor,
        "feature_dim": model.config.feature_dim,
        "times": model.num_times(),
        "encoder": model.config.encoder,
        "time_dim": model.config.time_dim(),
        "hidden_layers": model.config.hidden_layers,
        "hidden_width": model.config.hidden_width,
        "scene_extent": model.scene_extent,
    })
}

fn cmd_export(a: ExportArgs) -> CmdResult {
    let (model, source) = match (&a.checkpoint, &a.scene) {
        (Some(c), _) => (load_checkpoint(c)?.model, c),
        (None, Some(s)) => (load_scene(s)?, s),
        (None, None) => return Err(usage("give --checkpoint or --scene")),
    };
    save_scene(&a.out, &model)?;
    let bytes = fs::metadata(&a.out).map_err(|e| io_failure(&a.out, e))?.len();
    eprintln!("exported {} to {} ({bytes} bytes)", source.display(), a.out.display());
    print_json(&json!({ "out": a.out, "bytes": bytes, "scene": scene_summary(&model) }));
    Ok(())
}

fn cmd_bench(a: BenchArgs) -> CmdResult {
    let model = load_scene(&a.scene)?;
    if a.time >= model.num_times() {
        return Err(GtmError::Index {
            index: a.time,
            len: model.num_times(),
        }
        .into());
    }
    let cameras = match &a.manifest {
        Some(m) => {
            let manifest = SceneManifest::load(m)?;
            check_times(&model, &manifest)?;
            manifest.frames.iter().map(|f| f.camera.clone()).collect()
        }
        None => {
            let n = model.anchors.len().max(1) as f64;
            let mut c = [0.0; 3];
            for i in 0..model.anchors.len() {
                let p = model.anchors.center(i);
                for k in 0..3 {
                    c[k] += p[k] as f64 / n;
                }
            }
            let r = 0.6 * model.scene_extent;
            orbit_cameras(c, r, 0.3 * r, 16, a.size as f64, a.size, a.size)?
        }
    };
    let report = run_bench(&model, &cameras, a.time, a.frames, &RenderSettings::default())?;
    eprintln!(
        "{} frames at {}×{}: mean {:.2} FPS, median {:.2} FPS",
        report.frames, report.width, report.height, report.mean_fps, report.median_fps
    );
    print_json(&serde_json::to_value(&report).expect("report serializes"));
    Ok(())
}

fn cmd_synth(a: SynthArgs) -> CmdResult {
    let mut spec = match a.fixture {
        FixtureArg::TwoTime => SynthSpec::two_time(),
        FixtureArg::FourTime => SynthSpec::four_time(),
    };
    if let Some(s) = a.size {
        spec.image_size = s;
    }
    let scene = SynthScene::generate(spec)?;
    let manifest = scene.write(&a.out)?;
    eprintln!("wrote synthetic dataset to {}", a.out.display());
    print_json(&json!({
        "manifest": manifest,
        "times": scene.spec.num_times(),
        "cameras": scene.cameras.len(),
        "gaussians": scene.gaussians.len(),
    }));
    Ok(())
}
