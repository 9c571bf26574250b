//! Per-person indicator engine.
//!
//! Each timeline is reduced to per-frame facts (zone, yellow-line side, far-end
//! membership, activity, platform position) and then summarized over a frame
//! window into eight indicators:
//!
//! | name | meaning |
//! |------|---------|
//! | `pr`  | mean position-risk map value along the trajectory |
//! | `cr`  | walked or stood on the yellow line |
//! | `ncr` | number of yellow-line entries |
//! | `ty`  | seconds on the yellow line |
//! | `ly`  | longest uninterrupted yellow-line stay, seconds |
//! | `bf`  | overlapping A-B-A / B-A-B visit triples |
//! | `lt`  | looked toward the tunnel |
//! | `e`   | entered the far-end zone |
//!
//! Zone and yellow-line states are debounced: a change is registered only
//! after `hysteresis_frames` consecutive samples agree on the new state.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Point2, ZonePartition};
use crate::heatmap::{position_risk, HeatmapGrid};
use crate::ingest::{Activity, Label, PersonTimeline};
use crate::projection::Homography;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IndicatorError {
    #[error("fps must be > 0, got {0}")]
    Fps(f64),
    #[error("window stride must be >= 1 when tau > 0")]
    Stride,
    #[error("sliding windows need tau > 0")]
    Tau,
    #[error("indicator csv: {0}")]
    Csv(String),
}

pub const FEATURE_COUNT: usize = 8;
pub const FEATURE_NAMES: [&str; FEATURE_COUNT] = ["pr", "cr", "ncr", "ty", "ly", "bf", "lt", "e"];

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct IndicatorVector {
    pub pr: f64,
    pub cr: bool,
    pub ncr: u32,
    pub ty: f64,
    pub ly: f64,
    pub bf: u32,
    pub lt: bool,
    pub e: bool,
}

impl IndicatorVector {
    /// Model input, booleans as 0/1, in [`FEATURE_NAMES`] order.
    pub fn to_features(&self) -> [f64; FEATURE_COUNT] {
        let b = |v: bool| if v { 1.0 } else { 0.0 };
        [self.pr, b(self.cr), self.ncr as f64, self.ty, self.ly, self.bf as f64, b(self.lt), b(self.e)]
    }

    pub fn from_features(x: &[f64; FEATURE_COUNT]) -> IndicatorVector {
        IndicatorVector {
            pr: x[0],
            cr: x[1] != 0.0,
            ncr: x[2].max(0.0) as u32,
            ty: x[3],
            ly: x[4],
            bf: x[5].max(0.0) as u32,
            lt: x[6] != 0.0,
            e: x[7] != 0.0,
        }
    }
}

/// `tau` frames per window (0 = whole timeline), windows every `stride` frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub tau: u64,
    pub stride: u64,
}

impl Default for WindowSpec {
    fn default() -> Self {
        WindowSpec { tau: 0, stride: 1 }
    }
}

impl WindowSpec {
    pub fn whole() -> Self {
        Self::default()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndicatorParams {
    pub hysteresis_frames: usize,
    /// Minimum number of separate LookTunnel runs for `lt`.
    pub lt_min_events: usize,
}

impl Default for IndicatorParams {
    fn default() -> Self {
        IndicatorParams { hysteresis_frames: 3, lt_min_events: 1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Zone {
    A,
    B,
    Other,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Visit {
    pub zone: Zone,
    pub enter_frame: u64,
    pub exit_frame: u64,
}

/// Hysteresis filter: the state follows the raw signal only once the same raw
/// value has been seen `h` times in a row.
#[derive(Debug, Clone)]
pub struct Debouncer<T> {
    state: T,
    candidate: Option<T>,
    streak: usize,
    h: usize,
}

impl<T: Copy + PartialEq> Debouncer<T> {
    pub fn new(initial: T, hysteresis: usize) -> Self {
        Debouncer { state: initial, candidate: None, streak: 0, h: hysteresis.max(1) }
    }

    pub fn state(&self) -> T {
        self.state
    }

    /// Feed one raw value. Returns `Some(streak_len)` when this value flips
    /// the state, `streak_len` being the number of samples in the confirming
    /// streak (including this one).
    pub fn push(&mut self, raw: T) -> Option<usize> {
        if raw == self.state {
            self.candidate = None;
            self.streak = 0;
            return None;
        }
        if self.candidate == Some(raw) {
            self.streak += 1;
        } else {
            self.candidate = Some(raw);
            self.streak = 1;
        }
        if self.streak >= self.h {
            let n = self.streak;
            self.state = raw;
            self.candidate = None;
            self.streak = 0;
            return Some(n);
        }
        None
    }
}

/// Everything the window summaries need from one sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameFacts {
    pub frame: u64,
    pub zone: Zone,
    pub raw_yellow: bool,
    pub in_c: bool,
    pub activity: Activity,
    /// Foot point in platform coordinates; `None` if it projects to infinity.
    pub platform: Option<Point2>,
}

pub fn frame_facts(timeline: &PersonTimeline, partition: &ZonePartition, to_platform: &Homography) -> Vec<FrameFacts> {
    timeline
        .samples
        .iter()
        .zip(&timeline.foot_points)
        .map(|(obs, &foot)| {
            let m = partition.locate(foot);
            let zone = if m.in_a {
                Zone::A
            } else if m.in_b {
                Zone::B
            } else {
                Zone::Other
            };
            let raw_yellow = match (obs.left_leg, obs.right_leg) {
                (None, None) => m.on_yellow,
                (l, r) => l.is_some_and(|k| partition.on_yellow(k)) || r.is_some_and(|k| partition.on_yellow(k)),
            };
            FrameFacts {
                frame: obs.frame_index,
                zone,
                raw_yellow,
                in_c: m.in_c,
                activity: obs.activity,
                platform: to_platform.apply(foot).ok(),
            }
        })
        .collect()
}

fn visits_from_facts(facts: &[FrameFacts], hysteresis: usize) -> Vec<Visit> {
    let mut deb: Debouncer<Option<Zone>> = Debouncer::new(None, hysteresis);
    let mut visits: Vec<Visit> = Vec::new();
    for (i, f) in facts.iter().enumerate() {
        if let Some(n) = deb.push(Some(f.zone)) {
            let start = i + 1 - n;
            if let Some(prev) = visits.last_mut() {
                prev.exit_frame = facts[start - 1].frame;
            }
            visits.push(Visit { zone: f.zone, enter_frame: facts[start].frame, exit_frame: f.frame });
        }
    }
    if let (Some(v), Some(last)) = (visits.last_mut(), facts.last()) {
        v.exit_frame = last.frame;
    }
    visits
}

/// Debounced sequence of zone visits (A, B or other) over the whole timeline.
pub fn zone_sequence(
    timeline: &PersonTimeline,
    partition: &ZonePartition,
    hysteresis_frames: usize,
) -> Vec<Visit> {
    let facts = frame_facts(timeline, partition, &Homography::identity());
    visits_from_facts(&facts, hysteresis_frames)
}

/// Overlapping A-B-A / B-A-B triples in the visit string restricted to A/B.
pub fn count_back_and_forth(visits: &[Visit]) -> u32 {
    let mut seq: Vec<Zone> = Vec::new();
    for v in visits {
        if v.zone != Zone::Other && seq.last() != Some(&v.zone) {
            seq.push(v.zone);
        }
    }
    seq.windows(3).filter(|w| w[0] == w[2] && w[0] != w[1]).count() as u32
}

/// All indicators except `pr`, which depends on the risk map.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BehaviorSummary {
    pub cr: bool,
    pub ncr: u32,
    pub ty: f64,
    pub ly: f64,
    pub bf: u32,
    pub lt: bool,
    pub e: bool,
}

impl BehaviorSummary {
    pub fn with_pr(self, pr: f64) -> IndicatorVector {
        IndicatorVector { pr, cr: self.cr, ncr: self.ncr, ty: self.ty, ly: self.ly, bf: self.bf, lt: self.lt, e: self.e }
    }
}

pub fn summarize_behavior(facts: &[FrameFacts], fps: f64, params: &IndicatorParams) -> Result<BehaviorSummary, IndicatorError> {
    if !(fps > 0.0 && fps.is_finite()) {
        return Err(IndicatorError::Fps(fps));
    }
    let mut yellow = Debouncer::new(false, params.hysteresis_frames);
    let mut out = BehaviorSummary::default();
    let (mut on_frames, mut run, mut longest) = (0usize, 0usize, 0usize);
    let mut lt_runs = 0usize;
    let mut prev_look = false;
    for f in facts {
        let was = yellow.state();
        yellow.push(f.raw_yellow);
        let on = yellow.state();
        if on {
            if !was {
                out.ncr += 1;
            }
            on_frames += 1;
            run += 1;
            longest = longest.max(run);
            if matches!(f.activity, Activity::Walk | Activity::Stand) {
                out.cr = true;
            }
        } else {
            run = 0;
        }
        let look = f.activity == Activity::LookTunnel;
        if look && !prev_look {
            lt_runs += 1;
        }
        prev_look = look;
        out.e |= f.in_c;
    }
    out.ty = on_frames as f64 / fps;
    out.ly = longest as f64 / fps;
    out.bf = count_back_and_forth(&visits_from_facts(facts, params.hysteresis_frames));
    out.lt = lt_runs >= params.lt_min_events.max(1);
    Ok(out)
}

pub fn position_risk_of(facts: &[FrameFacts], risk_map: Option<&HeatmapGrid>) -> f64 {
    match risk_map {
        None => 0.0,
        Some(map) => {
            let pts: Vec<Point2> = facts.iter().filter_map(|f| f.platform).collect();
            position_risk(map, &pts)
        }
    }
}

/// Shared inputs for indicator computation on one scene.
#[derive(Debug, Clone, Copy)]
pub struct IndicatorContext<'a> {
    pub partition: &'a ZonePartition,
    pub to_platform: &'a Homography,
    /// Normalized position risk map; `pr` is 0 without one.
    pub risk_map: Option<&'a HeatmapGrid>,
    pub fps: f64,
    pub params: IndicatorParams,
}

impl IndicatorContext<'_> {
    pub fn summarize(&self, facts: &[FrameFacts]) -> Result<IndicatorVector, IndicatorError> {
        Ok(summarize_behavior(facts, self.fps, &self.params)?.with_pr(position_risk_of(facts, self.risk_map)))
    }
}

fn window_slice(facts: &[FrameFacts], end: u64, tau: u64) -> &[FrameFacts] {
    let start = (end + 1).saturating_sub(tau);
    let lo = facts.partition_point(|f| f.frame < start);
    let hi = facts.partition_point(|f| f.frame <= end);
    &facts[lo..hi.max(lo)]
}

/// Indicators over the whole timeline (`tau == 0`) or over the last `tau`
/// frames ending at the timeline's last frame.
pub fn compute_indicators(
    timeline: &PersonTimeline,
    ctx: &IndicatorContext<'_>,
    window: WindowSpec,
) -> Result<IndicatorVector, IndicatorError> {
    if !(ctx.fps > 0.0 && ctx.fps.is_finite()) {
        return Err(IndicatorError::Fps(ctx.fps));
    }
    let facts = frame_facts(timeline, ctx.partition, ctx.to_platform);
    let slice = match (window.tau, facts.last()) {
        (0, _) | (_, None) => &facts[..],
        (tau, Some(last)) => window_slice(&facts, last.frame, tau),
    };
    ctx.summarize(slice)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowResult {
    pub end_frame: u64,
    /// The timeline was shorter than `tau`; a single window covers it.
    pub truncated: bool,
    pub indicators: IndicatorVector,
}

/// One indicator vector per window `[t - tau + 1, t]`, with `t` stepping by
/// `stride` from the first full window.
pub fn sliding_indicators(
    timeline: &PersonTimeline,
    ctx: &IndicatorContext<'_>,
    window: WindowSpec,
) -> Result<Vec<WindowResult>, IndicatorError> {
    if window.tau == 0 {
        return Err(IndicatorError::Tau);
    }
    if window.stride == 0 {
        return Err(IndicatorError::Stride);
    }
    if !(ctx.fps > 0.0 && ctx.fps.is_finite()) {
        return Err(IndicatorError::Fps(ctx.fps));
    }
    let facts = frame_facts(timeline, ctx.partition, ctx.to_platform);
    let (Some(first), Some(last)) = (facts.first(), facts.last()) else {
        return Ok(Vec::new());
    };
    let (first, last) = (first.frame, last.frame);
    if last - first + 1 < window.tau {
        return Ok(vec![WindowResult { end_frame: last, truncated: true, indicators: ctx.summarize(&facts)? }]);
    }
    let mut out = Vec::new();
    let mut t = first + window.tau - 1;
    while t <= last {
        out.push(WindowResult {
            end_frame: t,
            truncated: false,
            indicators: ctx.summarize(window_slice(&facts, t, window.tau))?,
        });
        t += window.stride;
    }
    Ok(out)
}

/// One row of the indicator CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct IndicatorRow {
    pub video_id: String,
    pub person_id: i64,
    pub end_frame: u64,
    pub truncated: bool,
    pub indicators: IndicatorVector,
    pub label: Option<Label>,
}

#[derive(Serialize, Deserialize)]
struct CsvRow {
    video_id: String,
    person_id: i64,
    window_end: u64,
    truncated: u8,
    pr: f64,
    cr: u8,
    ncr: u32,
    ty: f64,
    ly: f64,
    bf: u32,
    lt: u8,
    e: u8,
    label: Option<u8>,
}

pub fn write_indicator_csv(rows: &[IndicatorRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        let v = &r.indicators;
        w.serialize(CsvRow {
            video_id: r.video_id.clone(),
            person_id: r.person_id,
            window_end: r.end_frame,
            truncated: u8::from(r.truncated),
            pr: v.pr,
            cr: u8::from(v.cr),
            ncr: v.ncr,
            ty: v.ty,
            ly: v.ly,
            bf: v.bf,
            lt: u8::from(v.lt),
            e: u8::from(v.e),
            label: r.label.map(|l| u8::from(l.is_at_risk())),
        })
        .expect("in-memory csv write");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv flush")).expect("csv is utf-8")
}

pub fn read_indicator_csv(text: &str) -> Result<Vec<IndicatorRow>, IndicatorError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let flag = |v: u8, name: &str| match v {
        0 => Ok(false),
        1 => Ok(true),
        _ => Err(IndicatorError::Csv(format!("{name} must be 0 or 1, got {v}"))),
    };
    let mut out = Vec::new();
    for (i, rec) in rdr.deserialize::<CsvRow>().enumerate() {
        let r = rec.map_err(|e| IndicatorError::Csv(format!("row {}: {e}", i + 2)))?;
        if ![r.pr, r.ty, r.ly].iter().all(|v| v.is_finite()) {
            return Err(IndicatorError::Csv(format!("row {}: non-finite value", i + 2)));
        }
        out.push(IndicatorRow {
            video_id: r.video_id,
            person_id: r.person_id,
            end_frame: r.window_end,
            truncated: flag(r.truncated, "truncated")?,
            indicators: IndicatorVector {
                pr: r.pr,
                cr: flag(r.cr, "cr")?,
                ncr: r.ncr,
                ty: r.ty,
                ly: r.ly,
                bf: r.bf,
                lt: flag(r.lt, "lt")?,
                e: flag(r.e, "e")?,
            },
            label: r.label.map(|l| flag(l, "label").map(Label::from_bool)).transpose()?,
        });
    }
    Ok(out)
}
