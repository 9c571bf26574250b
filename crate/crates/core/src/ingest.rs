//! Perception stream and scene configuration parsing.
//!
//! A perception stream is newline-delimited JSON, one record per frame and
//! tracked person:
//!
//! ```text
//! {"f":12,"id":3,"bbox":[x,y,w,h],"ll":[x,y],"rl":[x,y],"act":"Walk"}
//! ```
//!
//! `ll`/`rl` (left/right leg keypoints) and `act` may be `null` or absent.
//! Unknown fields are ignored; unknown activity strings map to
//! [`Activity::None`].

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Corners, Point2};
use crate::heatmap::GridSpec;
use crate::projection::Homography;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("line {line}: malformed record: {msg}")]
    Malformed { line: usize, msg: String },
    #[error("line {line}: schema error: {msg}")]
    Schema { line: usize, msg: String },
    #[error("line {line}: frame index {got} for person {person_id} does not follow {prev}")]
    Ordering { line: usize, person_id: i64, prev: u64, got: u64 },
    #[error("line {line}: invalid observation: {msg}")]
    Invalid { line: usize, msg: String },
    #[error("invalid scene configuration: {0}")]
    Config(String),
    #[error("labels: {0}")]
    Labels(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

pub fn read_file(path: &Path) -> Result<String, IngestError> {
    std::fs::read_to_string(path)
        .map_err(|source| IngestError::Io { path: path.display().to_string(), source })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum Activity {
    LookTunnel,
    Walk,
    Stand,
    #[default]
    None,
}

impl Activity {
    pub fn from_label(s: Option<&str>) -> Activity {
        match s {
            Some("LookTunnel") => Activity::LookTunnel,
            Some("Walk") => Activity::Walk,
            Some("Stand") => Activity::Stand,
            _ => Activity::None,
        }
    }

    pub fn as_label(self) -> Option<&'static str> {
        match self {
            Activity::LookTunnel => Some("LookTunnel"),
            Activity::Walk => Some("Walk"),
            Activity::Stand => Some("Stand"),
            Activity::None => None,
        }
    }
}

/// Ground-truth class of a person.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    Control,
    AtRisk,
}

impl Label {
    pub fn as_f64(self) -> f64 {
        match self {
            Label::Control => 0.0,
            Label::AtRisk => 1.0,
        }
    }

    pub fn from_bool(at_risk: bool) -> Label {
        if at_risk {
            Label::AtRisk
        } else {
            Label::Control
        }
    }

    pub fn is_at_risk(self) -> bool {
        self == Label::AtRisk
    }
}

/// Image rectangle `[x, y, w, h]`, `(x, y)` the top-left corner.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl From<[f64; 4]> for BBox {
    fn from(a: [f64; 4]) -> Self {
        BBox { x: a[0], y: a[1], w: a[2], h: a[3] }
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        [b.x, b.y, b.w, b.h]
    }
}

impl BBox {
    pub fn bottom_center(&self) -> Point2 {
        Point2::new(self.x + 0.5 * self.w, self.y + self.h)
    }

    /// Inclusive containment in the box scaled by `factor` about its center.
    pub fn contains_scaled(&self, p: Point2, factor: f64) -> bool {
        let cx = self.x + 0.5 * self.w;
        let cy = self.y + 0.5 * self.h;
        (p.x - cx).abs() <= 0.5 * factor * self.w && (p.y - cy).abs() <= 0.5 * factor * self.h
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameObservation {
    pub frame_index: u64,
    pub person_id: i64,
    pub bbox: BBox,
    pub left_leg: Option<Point2>,
    pub right_leg: Option<Point2>,
    pub activity: Activity,
}

impl FrameObservation {
    fn validate(&self) -> Result<(), String> {
        let b = self.bbox;
        if ![b.x, b.y, b.w, b.h].iter().all(|v| v.is_finite()) || b.w < 0.0 || b.h < 0.0 {
            return Err(format!("bad bbox {:?}", [b.x, b.y, b.w, b.h]));
        }
        for (name, leg) in [("ll", self.left_leg), ("rl", self.right_leg)] {
            if let Some(k) = leg {
                if !k.is_finite() || !b.contains_scaled(k, 1.5) {
                    return Err(format!("{name} keypoint ({}, {}) outside the expanded bbox", k.x, k.y));
                }
            }
        }
        Ok(())
    }
}

/// Ground-contact point: ankle midpoint, the single present leg, or the
/// bottom-center of the box.
pub fn derive_foot_point(obs: &FrameObservation) -> Point2 {
    match (obs.left_leg, obs.right_leg) {
        (Some(l), Some(r)) => l.midpoint(r),
        (Some(k), None) | (None, Some(k)) => k,
        (None, None) => obs.bbox.bottom_center(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PersonTimeline {
    pub person_id: i64,
    pub video_id: String,
    pub label: Option<Label>,
    pub samples: Vec<FrameObservation>,
    pub foot_points: Vec<Point2>,
}

impl PersonTimeline {
    /// Samples must already be sorted by frame index without duplicates.
    pub fn new(person_id: i64, video_id: impl Into<String>, samples: Vec<FrameObservation>) -> Self {
        debug_assert!(samples.windows(2).all(|w| w[0].frame_index < w[1].frame_index));
        let foot_points = samples.iter().map(derive_foot_point).collect();
        PersonTimeline { person_id, video_id: video_id.into(), label: None, samples, foot_points }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn first_frame(&self) -> Option<u64> {
        self.samples.first().map(|s| s.frame_index)
    }

    pub fn last_frame(&self) -> Option<u64> {
        self.samples.last().map(|s| s.frame_index)
    }

    /// Index range of samples whose frame lies in `[start, end]`.
    pub fn sample_range(&self, start: u64, end: u64) -> std::ops::Range<usize> {
        let lo = self.samples.partition_point(|s| s.frame_index < start);
        let hi = self.samples.partition_point(|s| s.frame_index <= end);
        lo..hi.max(lo)
    }

    /// Copy of the samples with frames in `[start, end]`.
    pub fn slice_frames(&self, start: u64, end: u64) -> PersonTimeline {
        let r = self.sample_range(start, end);
        PersonTimeline {
            person_id: self.person_id,
            video_id: self.video_id.clone(),
            label: self.label,
            samples: self.samples[r.clone()].to_vec(),
            foot_points: self.foot_points[r].to_vec(),
        }
    }
}

#[derive(Deserialize, Serialize)]
struct Record {
    f: u64,
    id: i64,
    bbox: [f64; 4],
    #[serde(default)]
    ll: Option<[f64; 2]>,
    #[serde(default)]
    rl: Option<[f64; 2]>,
    #[serde(default)]
    act: Option<String>,
}

/// Parse a perception stream into one timeline per person, ordered by id.
pub fn parse_stream(text: &str, video_id: &str) -> Result<Vec<PersonTimeline>, IngestError> {
    let mut people: BTreeMap<i64, Vec<FrameObservation>> = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(raw).map_err(|e| {
            use serde_json::error::Category;
            match e.classify() {
                Category::Data => IngestError::Schema { line, msg: e.to_string() },
                _ => IngestError::Malformed { line, msg: e.to_string() },
            }
        })?;
        let obs = FrameObservation {
            frame_index: rec.f,
            person_id: rec.id,
            bbox: rec.bbox.into(),
            left_leg: rec.ll.map(Point2::from),
            right_leg: rec.rl.map(Point2::from),
            activity: Activity::from_label(rec.act.as_deref()),
        };
        obs.validate().map_err(|msg| IngestError::Invalid { line, msg })?;
        let track = people.entry(rec.id).or_default();
        if let Some(prev) = track.last() {
            if obs.frame_index <= prev.frame_index {
                return Err(IngestError::Ordering {
                    line,
                    person_id: rec.id,
                    prev: prev.frame_index,
                    got: obs.frame_index,
                });
            }
        }
        track.push(obs);
    }
    Ok(people.into_iter().map(|(id, samples)| PersonTimeline::new(id, video_id, samples)).collect())
}

/// Write timelines as a perception stream, records ordered by (frame, id).
pub fn serialize_stream(timelines: &[PersonTimeline]) -> String {
    let mut all: Vec<&FrameObservation> = timelines.iter().flat_map(|t| t.samples.iter()).collect();
    all.sort_by_key(|o| (o.frame_index, o.person_id));
    let mut out = String::new();
    for o in all {
        let rec = Record {
            f: o.frame_index,
            id: o.person_id,
            bbox: o.bbox.into(),
            ll: o.left_leg.map(Into::into),
            rl: o.right_leg.map(Into::into),
            act: o.activity.as_label().map(str::to_owned),
        };
        // Record serialization cannot fail: plain numbers and strings only.
        let _ = writeln!(out, "{}", serde_json::to_string(&rec).expect("record serializes"));
    }
    out
}

fn default_alpha() -> f64 {
    0.2
}

fn default_beta() -> f64 {
    1.0 / 7.0
}

/// Camera to platform calibration for one scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub corners: Corners,
    /// Image to platform-referenced (meters) homography, row-major.
    pub homography: [[f64; 3]; 3],
    /// Depth of the far-end band, measured in image units along the top
    /// edge normal.
    pub offset_d: f64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_beta")]
    pub beta: f64,
    pub fps: f64,
    pub grid: GridSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub yellow_boundary_override: Option<Vec<Point2>>,
}

impl SceneConfig {
    pub fn from_json(text: &str) -> Result<SceneConfig, IngestError> {
        let cfg: SceneConfig =
            serde_json::from_str(text).map_err(|e| IngestError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<SceneConfig, IngestError> {
        Self::from_json(&read_file(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scene config serializes")
    }

    pub fn homography(&self) -> Result<Homography, IngestError> {
        Homography::from_rows(self.homography).map_err(|e| IngestError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<(), IngestError> {
        let bad = |m: String| Err(IngestError::Config(m));
        if !self.corners.is_simple() {
            return bad("corners do not form a simple quadrilateral".into());
        }
        if !(self.alpha > 0.0 && self.alpha < 0.5) {
            return bad(format!("alpha must be in (0, 1/2), got {}", self.alpha));
        }
        if !(self.beta > 0.0 && self.beta < 0.5) {
            return bad(format!("beta must be in (0, 1/2), got {}", self.beta));
        }
        if !(self.offset_d > 0.0 && self.offset_d.is_finite()) {
            return bad(format!("offset_d must be > 0, got {}", self.offset_d));
        }
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return bad(format!("fps must be > 0, got {}", self.fps));
        }
        self.grid.validate().map_err(|e| IngestError::Config(e.to_string()))?;
        self.homography()?;
        Ok(())
    }

    /// Unit-square platform with identity homography; handy for tests and
    /// examples.
    pub fn example_unit_square() -> SceneConfig {
        SceneConfig {
            corners: Corners {
                tl: Point2::new(0.0, 0.0),
                tr: Point2::new(1.0, 0.0),
                bl: Point2::new(0.0, 1.0),
                br: Point2::new(1.0, 1.0),
            },
            homography: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            offset_d: 0.1,
            alpha: default_alpha(),
            beta: default_beta(),
            fps: 10.0,
            grid: GridSpec { min_x: 0.0, min_y: 0.0, max_x: 1.0, max_y: 1.0, cell: 0.1 },
            yellow_boundary_override: None,
        }
    }
}

/// Labels CSV: `video_id,person_id,label` with label 0 (control) or 1 (at risk).
pub fn parse_labels(text: &str) -> Result<BTreeMap<(String, i64), Label>, IngestError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let mut out = BTreeMap::new();
    for row in rdr.records() {
        let row = row.map_err(|e| IngestError::Labels(e.to_string()))?;
        if row.len() < 3 {
            return Err(IngestError::Labels(format!("expected 3 columns, got {}", row.len())));
        }
        let pid: i64 = row[1].parse().map_err(|_| IngestError::Labels(format!("bad person id {:?}", &row[1])))?;
        let label = match &row[2] {
            "0" => Label::Control,
            "1" => Label::AtRisk,
            other => return Err(IngestError::Labels(format!("bad label {other:?}"))),
        };
        out.insert((row[0].to_string(), pid), label);
    }
    Ok(out)
}

pub fn write_labels<'a>(rows: impl IntoIterator<Item = (&'a str, i64, Label)>) -> String {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    wtr.write_record(["video_id", "person_id", "label"]).expect("in-memory write");
    for (vid, pid, label) in rows {
        let l = if label.is_at_risk() { "1" } else { "0" };
        wtr.write_record([vid, &pid.to_string(), l]).expect("in-memory write");
    }
    String::from_utf8(wtr.into_inner().expect("flush")).expect("utf8")
}
