//! The `platform-risk` command line.
//!
//! Every command reads explicitly named inputs, writes explicitly named
//! outputs and leaves a run manifest (`<out>.manifest.json`, or
//! `manifest.json` inside an output directory) recording arguments, seed,
//! input/output digests and timing.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::evaluation::{cross_validate, EvalReport, ItemKey, DEFAULT_THRESHOLD};
use crate::geometry::{build_zone_partition, rasterize_zones, Point2};
use crate::heatmap::{GridSidecar, HeatmapGrid, DEFAULT_SIGMA_M};
use crate::indicators::{
    compute_indicators, read_indicator_csv, sliding_indicators, write_indicator_csv, IndicatorContext, IndicatorParams,
    IndicatorRow, WindowSpec, FEATURE_COUNT, FEATURE_NAMES,
};
use crate::ingest::{parse_labels, parse_stream, write_labels, Label, PersonTimeline, SceneConfig};
use crate::pipeline::{build_risk_map, item_keys, prepare_video, BoostFoldPipeline, PersonRecord, PrepareOptions, Scene};
use crate::projection::estimate;
use crate::riskmodel::{train, BoostParams, TreeEnsemble};
use crate::simulator::{benchmark_corpus, generate_all, NoiseSpec, Profile};

pub const EXIT_OK: i32 = 0;
pub const EXIT_DATA: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

const SHAPLEY_BACKGROUND_MAX: usize = 100;

#[derive(Parser, Debug)]
#[command(name = "platform-risk", version, about = "Per-person platform risk scoring from perception streams")]
pub struct Cli {
    /// Worker threads (default: one per core).
    #[arg(long, global = true, value_parser = clap::value_parser!(u16).range(1..))]
    pub jobs: Option<u16>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Estimate the image-to-platform homography from point correspondences.
    Calibrate(CalibrateArgs),
    /// Write the zone partition of a scene.
    Zones(ZonesArgs),
    /// Build the position risk map from at-risk trajectories.
    Heatmap(HeatmapArgs),
    /// Compute per-person indicators.
    Indicators(IndicatorsArgs),
    /// Train a risk model on an indicator table.
    Train(TrainArgs),
    /// Score an indicator table with a trained model.
    Score(ScoreArgs),
    /// Feature importance and Shapley attributions of a model.
    Explain(ExplainArgs),
    /// Grouped k-fold cross-validation.
    Evaluate(EvaluateArgs),
    /// Write a synthetic scenario corpus.
    Simulate(SimulateArgs),
}

fn parse_unit_interval(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(format!("{v} is not in [0, 1]"))
    }
}

fn parse_positive(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(format!("{v} must be > 0"))
    }
}

#[derive(Args, Debug)]
pub struct CalibrateArgs {
    /// Correspondence CSV with columns src_x,src_y,dst_x,dst_y.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Scene configuration to update.
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ZonesArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Also render the zones as a PGM image.
    #[arg(long)]
    pub overlay: Option<PathBuf>,
    /// Longest side of the rendered overlay, pixels.
    #[arg(long, default_value_t = 512, value_parser = clap::value_parser!(u32).range(1..=8192))]
    pub overlay_size: u32,
}

#[derive(Args, Debug)]
pub struct StreamInputs {
    /// Perception streams; the video id is the file stem.
    #[arg(long = "in", required = true, num_args = 1..)]
    pub inputs: Vec<PathBuf>,
    /// Scene configuration shared by all streams (default: `<stem>.scene.json`
    /// next to each stream).
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Copy)]
pub struct IndicatorFlags {
    /// Frames a zone or yellow-line change must persist.
    #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u32).range(1..))]
    pub hysteresis: u32,
    /// Separate LookTunnel runs needed for the lt indicator.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..))]
    pub lt_min_events: u32,
    /// Heatmap smoothing sigma, meters.
    #[arg(long, default_value_t = DEFAULT_SIGMA_M, value_parser = parse_positive)]
    pub sigma: f64,
    /// Window length in frames (0 = whole timeline).
    #[arg(long, default_value_t = 0)]
    pub tau: u64,
}

impl IndicatorFlags {
    fn params(&self) -> IndicatorParams {
        IndicatorParams { hysteresis_frames: self.hysteresis as usize, lt_min_events: self.lt_min_events as usize }
    }

    fn prepare(&self) -> PrepareOptions {
        PrepareOptions { params: self.params(), sigma_m: self.sigma, window: WindowSpec { tau: self.tau, stride: 1 } }
    }
}

#[derive(Args, Debug)]
pub struct HeatmapArgs {
    #[command(flatten)]
    pub streams: StreamInputs,
    /// Labels CSV (video_id,person_id,label).
    #[arg(long)]
    pub labels: PathBuf,
    /// Aggregated, normalized map as CSV.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the map as a 16-bit PGM.
    #[arg(long)]
    pub overlay: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_SIGMA_M, value_parser = parse_positive)]
    pub sigma: f64,
}

#[derive(Args, Debug)]
pub struct IndicatorsArgs {
    #[command(flatten)]
    pub streams: StreamInputs,
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Position risk map CSV; without it `pr` is 0.
    #[arg(long)]
    pub heatmap: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub flags: IndicatorFlags,
    /// Frames between window ends when `--tau` > 0.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    pub stride: u64,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Indicator CSV.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Labels CSV; overrides labels in the indicator CSV.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
    pub rounds: Option<u32>,
}

#[derive(Args, Debug)]
pub struct ScoreArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Indicator CSV.
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Persons scoring strictly above this are flagged.
    #[arg(long, default_value_t = DEFAULT_THRESHOLD, value_parser = parse_unit_interval)]
    pub threshold: f64,
    /// Also compute Shapley attributions (written to `<out>.shapley.csv`).
    #[arg(long)]
    pub explain: bool,
}

#[derive(Args, Debug)]
pub struct ExplainArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Indicator CSV to attribute; importance only when omitted.
    #[arg(long = "in")]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    /// Evaluate on a generated corpus instead of files.
    #[arg(long)]
    pub profile: Option<Profile>,
    /// Streams, or a single indicator CSV.
    #[arg(long = "in", num_args = 1..)]
    pub inputs: Vec<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u32).range(2..))]
    pub folds: u32,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD, value_parser = parse_unit_interval)]
    pub threshold: f64,
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
    pub rounds: Option<u32>,
    #[command(flatten)]
    pub flags: IndicatorFlags,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[arg(long, default_value = "smoke")]
    pub profile: Profile,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Disable observation noise.
    #[arg(long)]
    pub clean: bool,
}

/// Failure of a command on valid arguments (exit code 1).
#[derive(Debug)]
pub struct CliError(pub String);

impl<E: std::error::Error> From<E> for CliError {
    fn from(e: E) -> Self {
        CliError(e.to_string())
    }
}

type CliResult<T> = Result<T, CliError>;

fn fail<T>(msg: impl Into<String>) -> CliResult<T> {
    Err(CliError(msg.into()))
}

#[derive(Debug, Clone, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    pub config: Vec<String>,
    pub seed: Option<u64>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub tool_version: String,
    pub wall_clock_s: f64,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Tracks every file a command touches.
struct Ctx {
    inputs: Vec<FileDigest>,
    outputs: Vec<FileDigest>,
    config: Vec<String>,
    seed: Option<u64>,
}

impl Ctx {
    fn read(&mut self, path: &Path) -> CliResult<String> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError(format!("{}: {e}", path.display())))?;
        self.inputs.push(FileDigest { path: path.display().to_string(), sha256: sha256_hex(text.as_bytes()) });
        Ok(text)
    }

    fn read_config(&mut self, path: &Path) -> CliResult<SceneConfig> {
        let text = self.read(path)?;
        self.config.push(path.display().to_string());
        SceneConfig::from_json(&text).map_err(|e| CliError(format!("{}: {e}", path.display())))
    }

    fn write(&mut self, path: &Path, bytes: &[u8]) -> CliResult<()> {
        let shown = path.display().to_string();
        if self.inputs.iter().any(|d| d.path == shown) {
            return fail(format!("refusing to overwrite input {shown}"));
        }
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| CliError(format!("{}: {e}", dir.display())))?;
        }
        std::fs::write(path, bytes).map_err(|e| CliError(format!("{shown}: {e}")))?;
        self.outputs.push(FileDigest { path: shown, sha256: sha256_hex(bytes) });
        Ok(())
    }
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s: OsString = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn video_id_of(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| path.display().to_string())
}

struct Video {
    scene: Scene,
    timelines: Vec<PersonTimeline>,
}

fn load_videos(ctx: &mut Ctx, streams: &StreamInputs, labels: Option<&BTreeMap<(String, i64), Label>>) -> CliResult<Vec<Video>> {
    let shared = match &streams.config {
        Some(p) => Some(ctx.read_config(p)?),
        None => None,
    };
    let mut out = Vec::new();
    for path in &streams.inputs {
        let vid = video_id_of(path);
        let config = match &shared {
            Some(c) => c.clone(),
            None => {
                let sibling = path.with_file_name(format!("{vid}.scene.json"));
                if !sibling.exists() {
                    return fail(format!("no --config given and {} does not exist", sibling.display()));
                }
                ctx.read_config(&sibling)?
            }
        };
        let text = ctx.read(path)?;
        let mut timelines = parse_stream(&text, &vid).map_err(|e| CliError(format!("{}: {e}", path.display())))?;
        if let Some(map) = labels {
            for t in &mut timelines {
                t.label = map.get(&(vid.clone(), t.person_id)).copied();
            }
        }
        out.push(Video { scene: Scene::new(config)?, timelines });
    }
    Ok(out)
}

fn load_labels(ctx: &mut Ctx, path: &Path) -> CliResult<BTreeMap<(String, i64), Label>> {
    let text = ctx.read(path)?;
    parse_labels(&text).map_err(|e| CliError(format!("{}: {e}", path.display())))
}

fn load_records(videos: &[Video], opts: &PrepareOptions) -> CliResult<Vec<PersonRecord>> {
    let mut records = Vec::new();
    for v in videos {
        records.extend(prepare_video(&v.scene, &v.timelines, opts)?);
    }
    Ok(records)
}

fn load_indicator_rows(ctx: &mut Ctx, input: &Path, labels: Option<&Path>) -> CliResult<Vec<IndicatorRow>> {
    let text = ctx.read(input)?;
    let mut rows = read_indicator_csv(&text).map_err(|e| CliError(format!("{}: {e}", input.display())))?;
    if let Some(p) = labels {
        let map = load_labels(ctx, p)?;
        for r in &mut rows {
            r.label = map.get(&(r.video_id.clone(), r.person_id)).copied();
        }
    }
    Ok(rows)
}

/// The last window of every person, in first-seen order.
fn last_window_per_person(rows: Vec<IndicatorRow>) -> Vec<IndicatorRow> {
    let mut order: Vec<(String, i64)> = Vec::new();
    let mut best: BTreeMap<(String, i64), IndicatorRow> = BTreeMap::new();
    for r in rows {
        let key = (r.video_id.clone(), r.person_id);
        match best.get(&key) {
            None => {
                order.push(key.clone());
                best.insert(key, r);
            }
            Some(prev) if r.end_frame >= prev.end_frame => {
                best.insert(key, r);
            }
            Some(_) => {}
        }
    }
    order.into_iter().map(|k| best.remove(&k).expect("key recorded")).collect()
}

fn labeled_features(rows: &[IndicatorRow]) -> CliResult<(Vec<[f64; FEATURE_COUNT]>, Vec<Label>)> {
    let mut x = Vec::with_capacity(rows.len());
    let mut y = Vec::with_capacity(rows.len());
    for r in rows {
        let Some(l) = r.label else {
            return fail(format!("no label for video {} person {}", r.video_id, r.person_id));
        };
        x.push(r.indicators.to_features());
        y.push(l);
    }
    Ok((x, y))
}

fn boost_params(seed: u64, rounds: Option<u32>) -> BoostParams {
    let mut p = BoostParams { seed, ..Default::default() };
    if let Some(r) = rounds {
        p.rounds = r as usize;
    }
    p
}

/// Right-aligned columns separated by two spaces.
fn table(header: &[String], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for r in rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.chars().count());
        }
    }
    let line = |cells: &[String]| {
        cells.iter().zip(&widths).map(|(c, w)| format!("{c:>w$}", w = *w)).collect::<Vec<_>>().join("  ")
    };
    let mut out = line(header);
    out.push('\n');
    for r in rows {
        out.push_str(&line(r));
        out.push('\n');
    }
    out
}

fn to_json<T: Serialize>(v: &T) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(v).expect("serializable report");
    s.push('\n');
    s.into_bytes()
}

fn cmd_calibrate(ctx: &mut Ctx, a: &CalibrateArgs) -> CliResult<String> {
    let mut config = ctx.read_config(&a.config)?;
    let text = ctx.read(&a.input)?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let mut pairs = Vec::new();
    for (i, rec) in rdr.deserialize::<(f64, f64, f64, f64)>().enumerate() {
        let (sx, sy, dx, dy) = rec.map_err(|e| CliError(format!("{} row {}: {e}", a.input.display(), i + 2)))?;
        pairs.push((Point2::new(sx, sy), Point2::new(dx, dy)));
    }
    let est = estimate(&pairs)?;
    config.homography = est.homography.rows();
    config.validate()?;
    ctx.write(&a.out, &to_json(&config))?;
    Ok(format!("homography from {} correspondences, rms reprojection error {:e}\n", pairs.len(), est.rms))
}

#[derive(Serialize)]
struct ZonesDoc<'a> {
    zone_a: &'a [Point2],
    zone_b: &'a [Point2],
    zone_c: &'a [Point2],
    s_d: [Point2; 2],
    yellow_boundary: &'a [Point2],
}

fn pgm8(width: usize, height: usize, px: &[u8]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(px);
    out
}

fn cmd_zones(ctx: &mut Ctx, a: &ZonesArgs) -> CliResult<String> {
    let config = ctx.read_config(&a.config)?;
    let z = build_zone_partition(&config)?;
    let doc = ZonesDoc {
        zone_a: &z.zone_a,
        zone_b: &z.zone_b,
        zone_c: &z.zone_c,
        s_d: [z.s_d.a, z.s_d.b],
        yellow_boundary: &z.yellow_boundary.points,
    };
    ctx.write(&a.out, &to_json(&doc))?;
    if let Some(p) = &a.overlay {
        let r = rasterize_zones(&z, a.overlay_size as usize);
        ctx.write(p, &pgm8(r.width, r.height, &r.codes))?;
    }
    let rows: Vec<Vec<String>> = [("A", &z.zone_a), ("B", &z.zone_b), ("C", &z.zone_c)]
        .iter()
        .map(|(n, poly)| {
            let pts = poly.iter().map(|p| format!("({}, {})", p.x, p.y)).collect::<Vec<_>>().join(" ");
            vec![n.to_string(), pts]
        })
        .collect();
    Ok(table(&["zone".into(), "vertices".into()], &rows))
}

fn cmd_heatmap(ctx: &mut Ctx, a: &HeatmapArgs) -> CliResult<String> {
    let labels = load_labels(ctx, &a.labels)?;
    let videos = load_videos(ctx, &a.streams, Some(&labels))?;
    let opts = PrepareOptions { sigma_m: a.sigma, ..Default::default() };
    let records = load_records(&videos, &opts)?;
    let refs: Vec<&PersonRecord> = records.iter().collect();
    let Some(map) = build_risk_map(&refs)? else {
        return fail("no labeled at-risk individual in the inputs");
    };
    let out_of_extent: usize = records.iter().map(|r| r.out_of_extent).sum();
    ctx.write(&a.out, map.to_csv().as_bytes())?;
    ctx.write(&with_suffix(&a.out, ".sidecar.json"), &to_json(&GridSidecar::of(&map, Some(out_of_extent))))?;
    if let Some(p) = &a.overlay {
        let mut buf = Vec::new();
        map.write_pgm16(&mut buf)?;
        ctx.write(p, &buf)?;
    }
    Ok(format!(
        "risk map {}x{} from {} at-risk of {} individuals, {} samples outside the grid\n",
        map.nx,
        map.ny,
        map.sources.len(),
        records.len(),
        out_of_extent
    ))
}

fn cmd_indicators(ctx: &mut Ctx, a: &IndicatorsArgs) -> CliResult<String> {
    let labels = match &a.labels {
        Some(p) => Some(load_labels(ctx, p)?),
        None => None,
    };
    let videos = load_videos(ctx, &a.streams, labels.as_ref())?;
    let risk_map = match &a.heatmap {
        Some(p) => {
            let text = ctx.read(p)?;
            Some(HeatmapGrid::from_csv(&text).map_err(|e| CliError(format!("{}: {e}", p.display())))?)
        }
        None => None,
    };
    let window = WindowSpec { tau: a.flags.tau, stride: a.stride };
    let mut rows: Vec<IndicatorRow> = Vec::new();
    for v in &videos {
        let ctx_ind = IndicatorContext {
            partition: &v.scene.partition,
            to_platform: &v.scene.to_platform,
            risk_map: risk_map.as_ref(),
            fps: v.scene.config.fps,
            params: a.flags.params(),
        };
        let per_person: Vec<CliResult<Vec<IndicatorRow>>> = v
            .timelines
            .par_iter()
            .map(|t| {
                let row = |end_frame: u64, truncated: bool, indicators| IndicatorRow {
                    video_id: t.video_id.clone(),
                    person_id: t.person_id,
                    end_frame,
                    truncated,
                    indicators,
                    label: t.label,
                };
                if window.tau == 0 {
                    let ind = compute_indicators(t, &ctx_ind, window)?;
                    Ok(vec![row(t.last_frame().unwrap_or(0), false, ind)])
                } else {
                    Ok(sliding_indicators(t, &ctx_ind, window)?
                        .into_iter()
                        .map(|w| row(w.end_frame, w.truncated, w.indicators))
                        .collect())
                }
            })
            .collect();
        for r in per_person {
            rows.extend(r?);
        }
    }
    ctx.write(&a.out, write_indicator_csv(&rows).as_bytes())?;
    Ok(format!("{} indicator rows for {} videos\n", rows.len(), videos.len()))
}

fn cmd_train(ctx: &mut Ctx, a: &TrainArgs) -> CliResult<String> {
    ctx.seed = Some(a.seed);
    let rows = last_window_per_person(load_indicator_rows(ctx, &a.input, a.labels.as_deref())?);
    let (x, y) = labeled_features(&rows)?;
    let model = train(&x, &y, &boost_params(a.seed, a.rounds))?;
    ctx.write(&a.out, model.to_json().as_bytes())?;
    let imp = model.feature_importance();
    let header: Vec<String> = FEATURE_NAMES.iter().map(|s| s.to_string()).collect();
    let mut out = format!(
        "{} trees, max depth {}, trained on {} rows ({} at risk)\nsplit counts:\n",
        model.trees.len(),
        model.max_depth(),
        x.len(),
        y.iter().filter(|l| l.is_at_risk()).count()
    );
    out.push_str(&table(&header, &[imp.iter().map(|v| format!("{v}")).collect()]));
    Ok(out)
}

/// Up to `SHAPLEY_BACKGROUND_MAX` rows taken at an even stride.
fn background_of(x: &[[f64; FEATURE_COUNT]]) -> Vec<[f64; FEATURE_COUNT]> {
    let step = x.len().div_ceil(SHAPLEY_BACKGROUND_MAX).max(1);
    x.iter().step_by(step).copied().collect()
}

fn shapley_table(model: &TreeEnsemble, rows: &[IndicatorRow]) -> CliResult<(Vec<String>, Vec<Vec<String>>, Vec<[f64; FEATURE_COUNT]>)> {
    let x: Vec<[f64; FEATURE_COUNT]> = rows.iter().map(|r| r.indicators.to_features()).collect();
    let background = background_of(&x);
    let phis: Vec<_> = x.par_iter().map(|xi| model.shapley(xi, &background)).collect::<Result<_, _>>()?;
    let mut header: Vec<String> = vec!["video_id".into(), "person_id".into(), "window_end".into(), "base".into()];
    header.extend(FEATURE_NAMES.iter().map(|n| format!("phi_{n}")));
    header.push("margin".into());
    let mut out_rows = Vec::new();
    let mut all = Vec::new();
    for ((r, s), xi) in rows.iter().zip(&phis).zip(&x) {
        let mut cells = vec![r.video_id.clone(), r.person_id.to_string(), r.end_frame.to_string(), format!("{}", s.base)];
        cells.extend(s.phi.iter().map(|v| format!("{v}")));
        cells.push(format!("{}", model.margin(xi)));
        out_rows.push(cells);
        all.push(s.phi);
    }
    Ok((header, out_rows, all))
}

fn csv_of(header: &[String], rows: &[Vec<String>]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory csv");
    for r in rows {
        w.write_record(r).expect("in-memory csv");
    }
    w.into_inner().expect("in-memory csv")
}

fn cmd_score(ctx: &mut Ctx, a: &ScoreArgs) -> CliResult<String> {
    let model_text = ctx.read(&a.model)?;
    let model = TreeEnsemble::from_json(&model_text).map_err(|e| CliError(format!("{}: {e}", a.model.display())))?;
    let rows = load_indicator_rows(ctx, &a.input, None)?;
    let header: Vec<String> =
        ["video_id", "person_id", "window_end", "risk", "flagged"].iter().map(|s| s.to_string()).collect();
    let mut flagged = 0;
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let p = model.predict(&r.indicators.to_features());
            let f = p > a.threshold;
            flagged += usize::from(f);
            vec![r.video_id.clone(), r.person_id.to_string(), r.end_frame.to_string(), format!("{p}"), u8::from(f).to_string()]
        })
        .collect();
    ctx.write(&a.out, &csv_of(&header, &body))?;
    let shown: Vec<Vec<String>> = body
        .iter()
        .map(|c| {
            let p: f64 = c[3].parse().expect("formatted above");
            vec![c[0].clone(), c[1].clone(), c[2].clone(), format!("{p:.4}"), if c[4] == "1" { "yes".into() } else { "".into() }]
        })
        .collect();
    let mut out = table(&header, &shown);
    let _ = writeln!(out, "{flagged} of {} flagged at R_p > {}", rows.len(), a.threshold);
    if a.explain {
        let (h, r, _) = shapley_table(&model, &rows)?;
        ctx.write(&with_suffix(&a.out, ".shapley.csv"), &csv_of(&h, &r))?;
        let short: Vec<Vec<String>> = r
            .iter()
            .map(|cells| {
                cells
                    .iter()
                    .enumerate()
                    .map(|(i, c)| if i >= 3 { format!("{:+.3}", c.parse::<f64>().expect("number")) } else { c.clone() })
                    .collect()
            })
            .collect();
        out.push_str("\nShapley attributions (margin space):\n");
        out.push_str(&table(&h, &short));
    }
    Ok(out)
}

#[derive(Serialize)]
struct Explanation {
    feature_names: Vec<String>,
    split_counts: [f64; FEATURE_COUNT],
    internal_nodes: usize,
    mean_abs_shapley: Option<[f64; FEATURE_COUNT]>,
    rows: usize,
}

fn cmd_explain(ctx: &mut Ctx, a: &ExplainArgs) -> CliResult<String> {
    let model_text = ctx.read(&a.model)?;
    let model = TreeEnsemble::from_json(&model_text).map_err(|e| CliError(format!("{}: {e}", a.model.display())))?;
    let mut doc = Explanation {
        feature_names: model.feature_names.clone(),
        split_counts: model.feature_importance(),
        internal_nodes: model.internal_node_count(),
        mean_abs_shapley: None,
        rows: 0,
    };
    if let Some(input) = &a.input {
        let rows = load_indicator_rows(ctx, input, None)?;
        if rows.is_empty() {
            return fail(format!("{}: no rows", input.display()));
        }
        let (_, _, phis) = shapley_table(&model, &rows)?;
        let mut mean = [0.0; FEATURE_COUNT];
        for phi in &phis {
            for (m, v) in mean.iter_mut().zip(phi) {
                *m += v.abs() / phis.len() as f64;
            }
        }
        doc.mean_abs_shapley = Some(mean);
        doc.rows = rows.len();
    }
    ctx.write(&a.out, &to_json(&doc))?;
    let header = vec!["feature".to_string(), "split count".to_string(), "mean |phi|".to_string()];
    let body: Vec<Vec<String>> = (0..FEATURE_COUNT)
        .map(|i| {
            vec![
                doc.feature_names[i].clone(),
                format!("{}", doc.split_counts[i]),
                doc.mean_abs_shapley.map(|m| format!("{:.4}", m[i])).unwrap_or_default(),
            ]
        })
        .collect();
    Ok(table(&header, &body))
}

#[derive(Serialize)]
struct EvaluateDoc {
    source: String,
    folds: u32,
    seed: u64,
    notes: Vec<String>,
    report: EvalReport,
}

fn cmd_evaluate(ctx: &mut Ctx, a: &EvaluateArgs) -> CliResult<String> {
    ctx.seed = Some(a.seed);
    let params = boost_params(a.seed, a.rounds);
    let k = a.folds as usize;
    let mut notes = Vec::new();
    let (source, report) = if let Some(profile) = a.profile {
        if !a.inputs.is_empty() {
            return fail("--profile and --in are mutually exclusive");
        }
        let scenarios = generate_all(&benchmark_corpus(profile, a.seed))?;
        let mut records = Vec::new();
        for sc in &scenarios {
            let scene = Scene::new(sc.scene.clone())?;
            records.extend(prepare_video(&scene, &sc.timelines, &a.flags.prepare())?);
        }
        let items = item_keys(&records)?;
        let pipe = BoostFoldPipeline { records: &records, params };
        (format!("profile {}", profile.name()), cross_validate(&items, k, &pipe, a.seed, a.threshold)?)
    } else if a.inputs.len() == 1 && a.inputs[0].extension().is_some_and(|e| e == "csv") {
        let rows = last_window_per_person(load_indicator_rows(ctx, &a.inputs[0], a.labels.as_deref())?);
        let (x, y) = labeled_features(&rows)?;
        let items: Vec<ItemKey> =
            rows.iter().zip(&y).map(|(r, &label)| ItemKey { video_id: r.video_id.clone(), label }).collect();
        let scorer = |train_idx: &[usize], test_idx: &[usize], seed: u64| -> Result<Vec<f64>, String> {
            let tx: Vec<_> = train_idx.iter().map(|&i| x[i]).collect();
            let ty: Vec<_> = train_idx.iter().map(|&i| y[i]).collect();
            let m = train(&tx, &ty, &BoostParams { seed, ..params }).map_err(|e| e.to_string())?;
            Ok(test_idx.iter().map(|&i| m.predict(&x[i])).collect())
        };
        notes.push("pr taken from the indicator table; the risk map is not rebuilt per fold".into());
        (format!("indicators {}", a.inputs[0].display()), cross_validate(&items, k, &scorer, a.seed, a.threshold)?)
    } else if !a.inputs.is_empty() {
        let Some(lp) = &a.labels else {
            return fail("--labels is required when evaluating streams");
        };
        let labels = load_labels(ctx, lp)?;
        let streams = StreamInputs { inputs: a.inputs.clone(), config: a.config.clone() };
        let videos = load_videos(ctx, &streams, Some(&labels))?;
        let records = load_records(&videos, &a.flags.prepare())?;
        let items = item_keys(&records)?;
        let pipe = BoostFoldPipeline { records: &records, params };
        (format!("{} streams", videos.len()), cross_validate(&items, k, &pipe, a.seed, a.threshold)?)
    } else {
        return fail("give --profile or --in");
    };
    let table_text = report.to_table();
    ctx.write(&a.out, &to_json(&EvaluateDoc { source, folds: a.folds, seed: a.seed, notes, report }))?;
    let mut table_path = a.out.with_extension("txt");
    if table_path == a.out {
        table_path = with_suffix(&a.out, ".table.txt");
    }
    ctx.write(&table_path, table_text.as_bytes())?;
    Ok(table_text)
}

fn cmd_simulate(ctx: &mut Ctx, a: &SimulateArgs) -> CliResult<String> {
    ctx.seed = Some(a.seed);
    let mut specs = benchmark_corpus(a.profile, a.seed);
    if a.clean {
        for s in &mut specs {
            s.noise = NoiseSpec::none();
        }
    }
    let scenarios = generate_all(&specs)?;
    let mut all_labels: Vec<(String, i64, Label)> = Vec::new();
    for sc in &scenarios {
        let dir = &a.out;
        let vid = &sc.video_id;
        ctx.write(&dir.join(format!("{vid}.jsonl")), crate::ingest::serialize_stream(&sc.timelines).as_bytes())?;
        ctx.write(&dir.join(format!("{vid}.scene.json")), format!("{}\n", sc.scene.to_json()).as_bytes())?;
        let truth = serde_json::to_string(&sc.truth).expect("truth serializes");
        ctx.write(&dir.join(format!("{vid}.truth.json")), truth.as_bytes())?;
        let labels = sc.labels();
        ctx.write(&dir.join(format!("{vid}.labels.csv")), write_labels(labels.iter().copied()).as_bytes())?;
        all_labels.extend(labels.into_iter().map(|(v, p, l)| (v.to_string(), p, l)));
    }
    ctx.write(
        &a.out.join("labels.csv"),
        write_labels(all_labels.iter().map(|(v, p, l)| (v.as_str(), *p, *l))).as_bytes(),
    )?;
    let n_risk = all_labels.iter().filter(|(_, _, l)| l.is_at_risk()).count();
    Ok(format!(
        "{} scenarios, {} control and {} at-risk individuals written to {}\n",
        scenarios.len(),
        all_labels.len() - n_risk,
        n_risk,
        a.out.display()
    ))
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Calibrate(_) => "calibrate",
            Command::Zones(_) => "zones",
            Command::Heatmap(_) => "heatmap",
            Command::Indicators(_) => "indicators",
            Command::Train(_) => "train",
            Command::Score(_) => "score",
            Command::Explain(_) => "explain",
            Command::Evaluate(_) => "evaluate",
            Command::Simulate(_) => "simulate",
        }
    }

    fn manifest_path(&self) -> PathBuf {
        match self {
            Command::Simulate(a) => a.out.join("manifest.json"),
            Command::Calibrate(CalibrateArgs { out, .. })
            | Command::Zones(ZonesArgs { out, .. })
            | Command::Heatmap(HeatmapArgs { out, .. })
            | Command::Indicators(IndicatorsArgs { out, .. })
            | Command::Train(TrainArgs { out, .. })
            | Command::Score(ScoreArgs { out, .. })
            | Command::Explain(ExplainArgs { out, .. })
            | Command::Evaluate(EvaluateArgs { out, .. }) => with_suffix(out, ".manifest.json"),
        }
    }

    fn execute(&self, ctx: &mut Ctx) -> CliResult<String> {
        match self {
            Command::Calibrate(a) => cmd_calibrate(ctx, a),
            Command::Zones(a) => cmd_zones(ctx, a),
            Command::Heatmap(a) => cmd_heatmap(ctx, a),
            Command::Indicators(a) => cmd_indicators(ctx, a),
            Command::Train(a) => cmd_train(ctx, a),
            Command::Score(a) => cmd_score(ctx, a),
            Command::Explain(a) => cmd_explain(ctx, a),
            Command::Evaluate(a) => cmd_evaluate(ctx, a),
            Command::Simulate(a) => cmd_simulate(ctx, a),
        }
    }
}

fn execute_with_manifest(cli: &Cli, args: Vec<String>) -> CliResult<String> {
    let start = Instant::now();
    let mut ctx = Ctx { inputs: Vec::new(), outputs: Vec::new(), config: Vec::new(), seed: None };
    let text = cli.command.execute(&mut ctx)?;
    let manifest = RunManifest {
        command: cli.command.name().to_string(),
        args,
        config: ctx.config.clone(),
        seed: ctx.seed,
        inputs: ctx.inputs.clone(),
        outputs: ctx.outputs.clone(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        wall_clock_s: start.elapsed().as_secs_f64(),
    };
    let path = cli.command.manifest_path();
    std::fs::write(&path, to_json(&manifest)).map_err(|e| CliError(format!("{}: {e}", path.display())))?;
    Ok(text)
}

/// Runs the command line and returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => EXIT_USAGE,
                _ => EXIT_USAGE,
            };
            let _ = e.print();
            return code;
        }
    };
    let args: Vec<String> = argv.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    let outcome = match cli.jobs {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n as usize).build() {
            Ok(pool) => pool.install(|| execute_with_manifest(&cli, args)),
            Err(e) => Err(CliError(e.to_string())),
        },
        None => execute_with_manifest(&cli, args),
    };
    match outcome {
        Ok(text) => {
            print!("{text}");
            EXIT_OK
        }
        Err(CliError(msg)) => {
            eprintln!("error: {msg}");
            EXIT_DATA
        }
    }
}
