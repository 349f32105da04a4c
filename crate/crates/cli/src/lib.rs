//! Command-line front end: detection, tracking, the KLT baseline, synthetic
//! data, evaluation and benchmarking.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or config error.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use comal_core::bench::run_bench;
use comal_core::comal::{detect_corners, write_contours_csv, write_corners_csv, LevelLineSegment};
use comal_core::config::Config;
use comal_core::eval::{
    generate_gt, read_mot_csv, score_matches, synth_sequence, write_mot_csv, write_plot_csv, write_results_csv, PRResult,
    Strata, SynthSpec,
};
use comal_core::image::io::{load_image, load_mask, write_mask, write_pgm};
use comal_core::image::{BinaryMask, GrayImage};
use comal_core::klt::run_klt_sequence;
use comal_core::mser::detect_msers;
use comal_core::tracker::{run_sequence, trackable_corners, write_candidates_csv};
use comal_core::tracklog::TrackLog;

pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "comal", version, about = "Point tracking on stable level lines")]
pub struct Cli {
    /// Flat `section.key = value` config file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads (output does not depend on this).
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,
    /// Seed for commands that draw random numbers.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output file (directory for `synth`); stdout when omitted.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Detect corners in one image.
    Detect {
        image: PathBuf,
        /// Also write every stable region's contour.
        #[arg(long)]
        dump_msers: Option<PathBuf>,
    },
    /// Track corners detected in the first frame through a sequence.
    Track {
        #[command(flatten)]
        frames: FramesArg,
        /// Write every shortlisted candidate with its chamfer score.
        #[arg(long)]
        dump_chamfer: Option<PathBuf>,
    },
    /// Track the same corners with the KLT baseline.
    Klt {
        #[command(flatten)]
        frames: FramesArg,
        /// Start points: a CSV with `x` and `y` columns (e.g. `detect`
        /// output). Defaults to the corners `track` would start from.
        #[arg(long)]
        points: Option<PathBuf>,
    },
    /// Write a synthetic sequence with boxes and masks.
    Synth {
        /// Spec file; built-in defaults when omitted.
        spec: Option<PathBuf>,
    },
    /// Score track logs against box annotations.
    Eval {
        /// Annotations, `frame,object_id,left,top,width,height`.
        #[arg(long)]
        gt: PathBuf,
        /// Track logs, each `PATH` or `THRESHOLD=PATH`.
        #[arg(required = true)]
        logs: Vec<String>,
        /// Foreground masks (directory or list file), one per frame.
        #[arg(long)]
        masks: Option<PathBuf>,
        #[arg(long)]
        tolerance: Option<f64>,
        #[arg(long)]
        band: Option<f64>,
        /// Precision / correct-matches points for plotting.
        #[arg(long)]
        plot_data: Option<PathBuf>,
    },
    /// Time tracking against re-detect-and-match, single-threaded.
    Bench {
        #[command(flatten)]
        frames: FramesArg,
        #[arg(long, default_value_t = 200)]
        tracks: usize,
    },
}

#[derive(Debug, Args)]
pub struct FramesArg {
    /// Directory of frames (sorted by file name bytes) or a list file with
    /// one path per line.
    pub frames: PathBuf,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Runtime(e) => write!(f, "{e:#}"),
        }
    }
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Runtime(e)
    }
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    /// Every config key with the value used.
    pub config: BTreeMap<String, String>,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub seed: Option<u64>,
    pub jobs: usize,
    pub timings_ms: BTreeMap<String, f64>,
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

/// Parses `args` (program name first) and runs; returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn load_config(path: Option<&Path>) -> Result<Config, CliError> {
    let Some(path) = path else {
        return Ok(Config::default());
    };
    let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    Config::parse(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

fn is_image(p: &Path) -> bool {
    let ext = p.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase());
    matches!(ext.as_deref(), Some("pgm") | Some("png"))
}

/// Frame paths from a directory (image files sorted by name bytes) or a
/// list file (one path per line, relative to the list; `#` comments).
pub fn frame_paths(path: &Path) -> anyhow::Result<Vec<PathBuf>> {
    if path.is_dir() {
        let mut v: Vec<PathBuf> = fs::read_dir(path)
            .with_context(|| format!("cannot list {}", path.display()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file() && is_image(p))
            .collect();
        v.sort_by(|a, b| a.as_os_str().as_encoded_bytes().cmp(b.as_os_str().as_encoded_bytes()));
        return Ok(v);
    }
    let text = fs::read_to_string(path).with_context(|| format!("cannot read frame list {}", path.display()))?;
    let base = path.parent().unwrap_or(Path::new("."));
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| base.join(l))
        .collect())
}

pub fn load_frames(path: &Path) -> anyhow::Result<(Vec<PathBuf>, Vec<GrayImage>)> {
    let paths = frame_paths(path)?;
    if paths.is_empty() {
        bail!("no frames found in {}", path.display());
    }
    let frames = paths
        .iter()
        .map(|p| load_image(p).with_context(|| format!("cannot decode frame {}", p.display())))
        .collect::<anyhow::Result<Vec<_>>>()?;
    Ok((paths, frames))
}

fn load_masks(path: &Path) -> anyhow::Result<Vec<BinaryMask>> {
    frame_paths(path)?
        .iter()
        .map(|p| load_mask(p).with_context(|| format!("cannot decode mask {}", p.display())))
        .collect()
}

/// Writes to `path`, or stdout when `None`.
fn write_output(path: Option<&Path>, f: impl FnOnce(&mut dyn Write) -> anyhow::Result<()>) -> anyhow::Result<()> {
    match path {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
            }
            let mut file = io::BufWriter::new(fs::File::create(p).with_context(|| format!("cannot create {}", p.display()))?);
            f(&mut file)?;
            file.flush()?;
        }
        None => {
            let stdout = io::stdout();
            let mut lock = stdout.lock();
            f(&mut lock)?;
            lock.flush()?;
        }
    }
    Ok(())
}

/// Manifest path for an output file: `<out>.manifest.json`.
pub fn manifest_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

struct Run<'a> {
    cli: &'a Cli,
    cfg: Config,
    inputs: Vec<String>,
    outputs: Vec<String>,
    timings: BTreeMap<String, f64>,
}

impl Run<'_> {
    fn manifest(&self, command: &str) -> RunManifest {
        RunManifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config: self.cfg.to_pairs().into_iter().collect(),
            inputs: self.inputs.clone(),
            outputs: self.outputs.clone(),
            seed: self.cli.seed,
            jobs: self.cli.jobs,
            timings_ms: self.timings.clone(),
        }
    }

    /// Writes the manifest next to the primary output, if there is a file
    /// to sit next to.
    fn finish(&mut self, command: &str, at: Option<PathBuf>) -> anyhow::Result<()> {
        let Some(path) = at.or_else(|| self.cli.out.as_deref().map(manifest_path)) else {
            return Ok(());
        };
        self.outputs.push(path_str(&path));
        let json = serde_json::to_string_pretty(&self.manifest(command))?;
        fs::write(&path, json + "\n").with_context(|| format!("cannot write {}", path.display()))?;
        Ok(())
    }

    fn output(&mut self, p: &Path) {
        self.outputs.push(path_str(p));
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = load_config(cli.config.as_deref())?;
    if cli.jobs == 0 {
        return Err(CliError::Usage("--jobs must be at least 1".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.jobs)
        .build()
        .map_err(|e| CliError::Runtime(anyhow!(e)))?;
    let mut run = Run {
        cli: &cli,
        cfg,
        inputs: cli.config.iter().map(|p| path_str(p)).collect(),
        outputs: Vec::new(),
        timings: BTreeMap::new(),
    };
    pool.install(|| match &cli.command {
        Command::Detect { image, dump_msers } => cmd_detect(&mut run, image, dump_msers.as_deref()),
        Command::Track { frames, dump_chamfer } => cmd_track(&mut run, &frames.frames, dump_chamfer.as_deref()),
        Command::Klt { frames, points } => cmd_klt(&mut run, &frames.frames, points.as_deref()),
        Command::Synth { spec } => cmd_synth(&mut run, spec.as_deref()),
        Command::Eval {
            gt,
            logs,
            masks,
            tolerance,
            band,
            plot_data,
        } => cmd_eval(&mut run, gt, logs, masks.as_deref(), *tolerance, *band, plot_data.as_deref()),
        Command::Bench { frames, tracks } => cmd_bench(&mut run, &frames.frames, *tracks),
    })
}

fn cmd_detect(run: &mut Run, image: &Path, dump: Option<&Path>) -> Result<(), CliError> {
    let img = load_image(image).with_context(|| format!("cannot decode image {}", image.display()))?;
    run.inputs.push(path_str(image));
    let t = Instant::now();
    let corners = detect_corners(&img, &run.cfg.tracker.detector).context("corner detection failed")?;
    run.timings.insert("detect".into(), ms(t.elapsed()));
    let out = run.cli.out.clone();
    write_output(out.as_deref(), |w| Ok(write_corners_csv(w, &corners)?))?;
    if let Some(p) = &out {
        run.output(p);
    }
    if let Some(p) = dump {
        let regions = detect_msers(&img, &run.cfg.tracker.detector.mser).context("region detection failed")?;
        let contours: Vec<_> = regions
            .iter()
            .map(|r| LevelLineSegment::from_region(r, &img.bounds()).contour)
            .collect();
        write_output(Some(p), |w| Ok(write_contours_csv(w, &contours)?))?;
        run.output(p);
    }
    run.finish("detect", None)?;
    Ok(())
}

fn write_log(run: &mut Run, log: &TrackLog) -> anyhow::Result<()> {
    let out = run.cli.out.clone();
    write_output(out.as_deref(), |w| Ok(log.write_csv(w)?))?;
    if let Some(p) = &out {
        run.output(p);
    }
    Ok(())
}

fn cmd_track(run: &mut Run, frames: &Path, dump: Option<&Path>) -> Result<(), CliError> {
    let (paths, images) = load_frames(frames)?;
    run.inputs.extend(paths.iter().map(|p| path_str(p)));
    let t = Instant::now();
    let seq = run_sequence(&images, &run.cfg.tracker).context("tracking failed")?;
    run.timings.insert("total".into(), ms(t.elapsed()));
    run.timings.insert("detect".into(), ms(seq.timings.detect));
    run.timings.insert("mser".into(), ms(seq.timings.mser));
    run.timings.insert("chamfer".into(), ms(seq.timings.chamfer));
    run.timings.insert("ssd".into(), ms(seq.timings.ssd));
    write_log(run, &seq.log)?;
    if let Some(p) = dump {
        write_output(Some(p), |w| Ok(write_candidates_csv(w, &seq.candidates)?))?;
        run.output(p);
    }
    run.finish("track", None)?;
    Ok(())
}

/// `x` and `y` columns of a CSV with a header.
pub fn read_points(path: &Path) -> anyhow::Result<Vec<(f64, f64)>> {
    let mut rd = csv::Reader::from_path(path).with_context(|| format!("cannot read points {}", path.display()))?;
    let headers = rd.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| anyhow!("{} has no `{name}` column", path.display()))
    };
    let (xi, yi) = (col("x")?, col("y")?);
    let mut out = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let num = |i: usize| -> anyhow::Result<f64> {
            rec.get(i)
                .and_then(|v| v.trim().parse().ok())
                .ok_or_else(|| anyhow!("bad number in {}", path.display()))
        };
        out.push((num(xi)?, num(yi)?));
    }
    Ok(out)
}

fn cmd_klt(run: &mut Run, frames: &Path, points: Option<&Path>) -> Result<(), CliError> {
    let (paths, images) = load_frames(frames)?;
    run.inputs.extend(paths.iter().map(|p| path_str(p)));
    let t = Instant::now();
    let pts = match points {
        Some(p) => {
            run.inputs.push(path_str(p));
            read_points(p)?
        }
        None => trackable_corners(
            &images[0],
            detect_corners(&images[0], &run.cfg.tracker.detector).context("corner detection failed")?,
            &run.cfg.tracker,
        )
        .iter()
            .map(|c| (c.position.x as f64, c.position.y as f64))
            .collect(),
    };
    run.timings.insert("detect".into(), ms(t.elapsed()));
    let t = Instant::now();
    let log = run_klt_sequence(&images, &pts, &run.cfg.klt).map_err(|e| CliError::Usage(e.to_string()))?;
    run.timings.insert("klt".into(), ms(t.elapsed()));
    write_log(run, &log)?;
    run.finish("klt", None)?;
    Ok(())
}

fn cmd_synth(run: &mut Run, spec_path: Option<&Path>) -> Result<(), CliError> {
    let Some(out) = run.cli.out.clone() else {
        return Err(CliError::Usage("synth needs --out DIR".into()));
    };
    let mut spec = match spec_path {
        Some(p) => {
            run.inputs.push(path_str(p));
            let text = fs::read_to_string(p).with_context(|| format!("cannot read spec {}", p.display()))?;
            SynthSpec::parse(&text).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?
        }
        None => SynthSpec::default(),
    };
    if let Some(s) = run.cli.seed {
        spec.seed = s;
    }
    let t = Instant::now();
    let seq = synth_sequence(&spec).map_err(|e| CliError::Usage(e.to_string()))?;
    run.timings.insert("generate".into(), ms(t.elapsed()));

    let frames_dir = out.join("frames");
    let masks_dir = out.join("masks");
    for d in [&frames_dir, &masks_dir] {
        fs::create_dir_all(d).with_context(|| format!("cannot create {}", d.display()))?;
    }
    let mut list = String::new();
    for (i, (f, m)) in seq.frames.iter().zip(&seq.masks).enumerate() {
        let fp = frames_dir.join(format!("frame_{i:04}.pgm"));
        let mp = masks_dir.join(format!("mask_{i:04}.pgm"));
        write_pgm(&fp, f).with_context(|| format!("cannot write {}", fp.display()))?;
        write_mask(&mp, m).with_context(|| format!("cannot write {}", mp.display()))?;
        list.push_str(&format!("frames/frame_{i:04}.pgm\n"));
        run.output(&fp);
        run.output(&mp);
    }
    let lp = out.join("frames.txt");
    fs::write(&lp, list).with_context(|| format!("cannot write {}", lp.display()))?;
    run.output(&lp);
    let gp = out.join("gt.csv");
    write_output(Some(&gp), |w| Ok(write_mot_csv(w, &seq.annotations)?))?;
    run.output(&gp);
    let sp = out.join("spec.txt");
    fs::write(&sp, spec.to_text()).with_context(|| format!("cannot write {}", sp.display()))?;
    run.output(&sp);
    run.finish("synth", Some(out.join("manifest.json")))?;
    Ok(())
}

/// `THRESHOLD=PATH` or `PATH`.
fn split_log_arg(s: &str) -> Result<(Option<f64>, PathBuf), CliError> {
    if let Some((t, p)) = s.split_once('=') {
        if let Ok(v) = t.trim().parse::<f64>() {
            return Ok((Some(v), PathBuf::from(p)));
        }
        return Err(CliError::Usage(format!("bad threshold in `{s}`")));
    }
    Ok((None, PathBuf::from(s)))
}

fn cmd_eval(
    run: &mut Run,
    gt: &Path,
    logs: &[String],
    masks: Option<&Path>,
    tolerance: Option<f64>,
    band: Option<f64>,
    plot: Option<&Path>,
) -> Result<(), CliError> {
    let tolerance = tolerance.unwrap_or(run.cfg.eval.tolerance);
    let band = band.unwrap_or(run.cfg.eval.band);
    if !(tolerance >= 0.0 && band >= 0.0) {
        return Err(CliError::Usage("tolerance and band must be non-negative".into()));
    }
    run.cfg.eval.tolerance = tolerance;
    run.cfg.eval.band = band;
    let gt_file = fs::File::open(gt).with_context(|| format!("cannot open annotations {}", gt.display()))?;
    let annotations = read_mot_csv(gt_file).with_context(|| format!("bad annotations {}", gt.display()))?;
    run.inputs.push(path_str(gt));
    let masks = match masks {
        Some(p) => {
            run.inputs.push(path_str(p));
            Some(load_masks(p)?)
        }
        None => None,
    };
    let t = Instant::now();
    let mut rows: Vec<(Option<f64>, PRResult)> = Vec::new();
    for arg in logs {
        let (threshold, path) = split_log_arg(arg)?;
        let file = fs::File::open(&path).with_context(|| format!("cannot open track log {}", path.display()))?;
        let log = TrackLog::read_csv(file).with_context(|| format!("bad track log {}", path.display()))?;
        run.inputs.push(path_str(&path));
        let corr = generate_gt(&log, &annotations, masks.as_deref());
        let strata = masks.as_deref().map(|m| Strata { masks: m, band });
        let report = score_matches(&log, &corr, tolerance, strata.as_ref());
        rows.extend(report.results.iter().map(|r| (threshold, *r)));
    }
    run.timings.insert("score".into(), ms(t.elapsed()));
    let out = run.cli.out.clone();
    write_output(out.as_deref(), |w| Ok(write_results_csv(w, &rows)?))?;
    if let Some(p) = &out {
        run.output(p);
    }
    if let Some(p) = plot {
        write_output(Some(p), |w| Ok(write_plot_csv(w, &rows)?))?;
        run.output(p);
    }
    run.finish("eval", None)?;
    Ok(())
}

fn cmd_bench(run: &mut Run, frames: &Path, tracks: usize) -> Result<(), CliError> {
    let (paths, images) = load_frames(frames)?;
    run.inputs.extend(paths.iter().map(|p| path_str(p)));
    let report = run_bench(&images, &run.cfg.tracker, tracks).context("benchmark failed")?;
    run.timings.insert("median_tracking".into(), report.median_tracking_ms);
    run.timings.insert("median_detect_match".into(), report.median_baseline_ms);
    run.timings.insert("median_gated_detect_match".into(), report.median_gated_baseline_ms);
    let json = serde_json::json!({
        "frames": images.len(),
        "samples": report.tracking_ms.len(),
        "tracks": report.tracks,
        "tracking_ms": report.tracking_ms,
        "detect_match_ms": report.baseline_ms,
        "gated_detect_match_ms": report.gated_baseline_ms,
        "median_tracking_ms": report.median_tracking_ms,
        "median_detect_match_ms": report.median_baseline_ms,
        "median_gated_detect_match_ms": report.median_gated_baseline_ms,
        "ratio": report.ratio,
        "gated_ratio": report.gated_ratio,
    });
    let out = run.cli.out.clone();
    write_output(out.as_deref(), |w| {
        serde_json::to_writer_pretty(&mut *w, &json)?;
        writeln!(w)?;
        Ok(())
    })?;
    if let Some(p) = &out {
        run.output(p);
    }
    eprintln!(
        "median tracking {:.2} ms, median detect+match {:.2} ms, ratio {:.3} ({} samples)",
        report.median_tracking_ms,
        report.median_baseline_ms,
        report.ratio,
        report.tracking_ms.len()
    );
    run.finish("bench", None)?;
    Ok(())
}
