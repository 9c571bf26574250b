//! Seeded synthetic platform scenarios.
//!
//! Agents follow scripted waypoint paths in platform coordinates (meters,
//! `x` from the wall to the yellow line, `y` from the far end toward the
//! camera). Paths are mapped into the image through the inverse calibration
//! homography, then observed with optional jitter, dropout and activity
//! label flips. Truth is recorded before any noise is applied, using
//! closed-form zone tests in platform coordinates.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Corners, Point2};
use crate::heatmap::{GridSpec, DEFAULT_CELL_M};
use crate::indicators::{count_back_and_forth, BehaviorSummary, IndicatorParams, Visit, Zone};
use crate::ingest::{Activity, BBox, FrameObservation, Label, PersonTimeline, SceneConfig};
use crate::projection::{estimate, image_offset_for_depth, Homography, ProjectionError};

const WALK_MPS: f64 = 1.2;
const LEG_HALF_SPREAD_M: f64 = 0.12;
const YELLOW_STEP_M: f64 = 0.3;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("platform layout too small: {0}")]
    Layout(String),
    #[error("scripts for {video_id} need {needed} frames but only {available} are available")]
    Duration { video_id: String, needed: usize, available: usize },
    #[error(transparent)]
    Projection(#[from] ProjectionError),
}

/// Physical platform and the camera view of it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlatformLayout {
    pub width_m: f64,
    pub length_m: f64,
    /// Depth of the far-end zone.
    pub far_depth_m: f64,
    /// Image corners of the platform rectangle; must be a trapezoid
    /// symmetric about a vertical axis, top edge horizontal.
    pub image_corners: Corners,
    pub fps: f64,
}

impl Default for PlatformLayout {
    fn default() -> Self {
        PlatformLayout {
            width_m: 4.0,
            length_m: 40.0,
            far_depth_m: 2.0,
            image_corners: Corners {
                tl: Point2::new(560.0, 120.0),
                tr: Point2::new(720.0, 120.0),
                bl: Point2::new(140.0, 700.0),
                br: Point2::new(1140.0, 700.0),
            },
            fps: 10.0,
        }
    }
}

impl PlatformLayout {
    fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |m: &str| Err(ScenarioError::Layout(m.to_string()));
        if !(self.width_m >= 2.5) {
            return bad("width must be at least 2.5 m");
        }
        if !(self.length_m >= 20.0) {
            return bad("length must be at least 20 m");
        }
        if !(self.far_depth_m >= 1.0 && self.far_depth_m <= self.length_m / 5.0) {
            return bad("far-end depth must be in [1 m, length / 5]");
        }
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return bad("fps must be > 0");
        }
        let c = self.image_corners;
        let symmetric = (c.tl.y - c.tr.y).abs() < 1e-9
            && (c.bl.y - c.br.y).abs() < 1e-9
            && ((c.tl.x + c.tr.x) - (c.bl.x + c.br.x)).abs() < 1e-9;
        if !symmetric || !c.is_simple() {
            return bad("image corners must form a symmetric trapezoid");
        }
        Ok(())
    }

    fn platform_corners(&self) -> Corners {
        Corners {
            tl: Point2::new(0.0, 0.0),
            tr: Point2::new(self.width_m, 0.0),
            bl: Point2::new(0.0, self.length_m),
            br: Point2::new(self.width_m, self.length_m),
        }
    }

    /// Scene calibration for this layout.
    pub fn scene(&self) -> Result<SceneConfig, ScenarioError> {
        self.validate()?;
        let img = self.image_corners;
        let plat = self.platform_corners();
        let pairs = [(img.tl, plat.tl), (img.tr, plat.tr), (img.bl, plat.bl), (img.br, plat.br)];
        let m = estimate(&pairs)?.homography;
        let offset_d = image_offset_for_depth(&m, &img, self.far_depth_m)?;
        let cfg = SceneConfig {
            corners: img,
            homography: m.rows(),
            offset_d,
            alpha: 0.2,
            beta: 1.0 / 7.0,
            fps: self.fps,
            grid: GridSpec {
                min_x: -0.5,
                min_y: 0.0,
                max_x: self.width_m + 1.0,
                max_y: self.length_m,
                cell: DEFAULT_CELL_M,
            },
            yellow_boundary_override: None,
        };
        cfg.validate().map_err(|e| ScenarioError::Invalid(e.to_string()))?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// Gaussian sigma on every image coordinate, pixels.
    pub pos_jitter_px: f64,
    pub dropout_prob: f64,
    /// Chance that a frame's activity label is replaced by another one.
    pub label_flip_prob: f64,
}

impl NoiseSpec {
    pub fn none() -> NoiseSpec {
        NoiseSpec { pos_jitter_px: 0.0, dropout_prob: 0.0, label_flip_prob: 0.0 }
    }

    pub fn moderate() -> NoiseSpec {
        NoiseSpec { pos_jitter_px: 1.5, dropout_prob: 0.03, label_flip_prob: 0.002 }
    }

    pub fn is_none(&self) -> bool {
        self.pos_jitter_px == 0.0 && self.dropout_prob == 0.0 && self.label_flip_prob == 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Behavior {
    Pacing,
    YellowDwell,
    LookTunnel,
    FarEnd,
}

/// Behavior intensities. At-risk agents draw around these values; an empty
/// `at_risk_behaviors` means each agent draws a random non-empty subset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BehaviorSpec {
    pub pacing_cycles: u32,
    pub yellow_dwell_s: f64,
    pub look_tunnel_events: u32,
    pub far_end_prob: f64,
    /// Randomize intensities per agent; off gives exactly the values above.
    pub vary: bool,
    pub at_risk_behaviors: Vec<Behavior>,
    /// Chance that a control agent glances at the tunnel once.
    pub control_look_prob: f64,
    /// Chance that an at-risk agent only gazes at the tunnel.
    pub subtle_prob: f64,
    /// Chance that a control agent steps onto the yellow line once.
    pub control_yellow_prob: f64,
    /// Chance that a control agent crosses to the other side and back.
    pub control_switch_prob: f64,
}

impl Default for BehaviorSpec {
    fn default() -> Self {
        BehaviorSpec {
            pacing_cycles: 3,
            yellow_dwell_s: 6.0,
            look_tunnel_events: 3,
            far_end_prob: 0.5,
            vary: true,
            at_risk_behaviors: Vec::new(),
            control_look_prob: 0.3,
            subtle_prob: 0.1,
            control_yellow_prob: 0.2,
            control_switch_prob: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub video_id: String,
    pub layout: PlatformLayout,
    pub n_control: usize,
    pub n_at_risk: usize,
    pub duration_s: f64,
    pub noise: NoiseSpec,
    pub behavior: BehaviorSpec,
    pub seed: u64,
}

impl ScenarioSpec {
    pub fn new(video_id: impl Into<String>, n_control: usize, n_at_risk: usize, seed: u64) -> ScenarioSpec {
        ScenarioSpec {
            video_id: video_id.into(),
            layout: PlatformLayout::default(),
            n_control,
            n_at_risk,
            duration_s: 300.0,
            noise: NoiseSpec::moderate(),
            behavior: BehaviorSpec::default(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |m: &str| Err(ScenarioError::Invalid(m.to_string()));
        let prob = |p: f64| (0.0..=1.0).contains(&p);
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return bad("duration_s must be > 0");
        }
        let n = &self.noise;
        if !(n.pos_jitter_px >= 0.0 && n.pos_jitter_px.is_finite()) {
            return bad("pos_jitter_px must be >= 0");
        }
        if !prob(n.dropout_prob) || n.dropout_prob == 1.0 || !prob(n.label_flip_prob) {
            return bad("noise probabilities must be in [0, 1) for dropout and [0, 1] for label flips");
        }
        let b = &self.behavior;
        if ![b.far_end_prob, b.subtle_prob, b.control_look_prob, b.control_yellow_prob, b.control_switch_prob].into_iter().all(prob) {
            return bad("behavior probabilities must be in [0, 1]");
        }
        if !(b.yellow_dwell_s >= 1.0 && b.yellow_dwell_s.is_finite()) {
            return bad("yellow_dwell_s must be >= 1");
        }
        self.layout.validate()
    }
}

/// Per-frame truth, logged before noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruthFrame {
    pub frame: u64,
    pub zone: Zone,
    pub yellow: bool,
    pub in_c: bool,
    pub activity: Activity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonTruth {
    pub person_id: i64,
    pub label: Label,
    pub behaviors: Vec<Behavior>,
    pub frames: Vec<TruthFrame>,
    /// Indicators expected on the noise-free stream (all but `pr`).
    pub expected: BehaviorSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthLog {
    pub video_id: String,
    pub fps: f64,
    pub params: IndicatorParams,
    pub persons: Vec<PersonTruth>,
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub video_id: String,
    pub scene: SceneConfig,
    /// Observed (noisy) timelines, labeled.
    pub timelines: Vec<PersonTimeline>,
    /// The same timelines before noise.
    pub clean: Vec<PersonTimeline>,
    pub truth: TruthLog,
}

impl Scenario {
    pub fn labels(&self) -> Vec<(&str, i64, Label)> {
        self.timelines
            .iter()
            .map(|t| (self.video_id.as_str(), t.person_id, t.label.expect("simulated timelines are labeled")))
            .collect()
    }
}

/// Platform-frame waypoints and zone tests for one layout.
struct Geometry {
    w: f64,
    l: f64,
    depth: f64,
    alpha: f64,
    beta: f64,
    to_image: Homography,
}

impl Geometry {
    fn a_edge(&self, y: f64) -> f64 {
        self.w * (self.alpha + (self.beta - self.alpha) * y / self.l)
    }

    fn b_edge(&self, y: f64) -> f64 {
        self.w - self.a_edge(y)
    }

    fn inside(&self, p: Point2) -> bool {
        (0.0..=self.w).contains(&p.x) && (0.0..=self.l).contains(&p.y)
    }

    fn zone(&self, p: Point2) -> Zone {
        if self.inside(p) && p.x <= self.a_edge(p.y) {
            Zone::A
        } else if self.inside(p) && p.x >= self.b_edge(p.y) {
            Zone::B
        } else {
            Zone::Other
        }
    }

    fn in_c(&self, p: Point2) -> bool {
        self.inside(p) && p.y <= self.depth
    }

    fn legs(&self, p: Point2) -> [Point2; 2] {
        [Point2::new(p.x - LEG_HALF_SPREAD_M, p.y), Point2::new(p.x + LEG_HALF_SPREAD_M, p.y)]
    }

    fn yellow(&self, p: Point2) -> bool {
        self.legs(p).iter().any(|k| k.x > self.w)
    }

    fn spot_x(&self, zone: Zone) -> f64 {
        let inset = 0.5 * self.alpha.min(self.beta) * self.w;
        match zone {
            Zone::A => inset,
            Zone::B => self.w - inset,
            Zone::Other => 0.5 * self.w,
        }
    }
}

/// A scripted path: one platform position and activity per frame.
struct Path {
    frames: Vec<(Point2, Activity)>,
    fps: f64,
    min_frames: usize,
}

impl Path {
    fn start(at: Point2, activity: Activity, fps: f64, min_frames: usize) -> Path {
        Path { frames: vec![(at, activity)], fps, min_frames }
    }

    fn pos(&self) -> Point2 {
        self.frames.last().expect("path starts with a frame").0
    }

    fn walk_to(&mut self, to: Point2) {
        let from = self.pos();
        let step = WALK_MPS / self.fps;
        let n = ((from.distance(to) / step).ceil() as usize).max(self.min_frames);
        for i in 1..=n {
            self.frames.push((from.lerp(to, i as f64 / n as f64), Activity::Walk));
        }
    }

    fn hold(&mut self, secs: f64, activity: Activity) {
        let n = ((secs * self.fps).round() as usize).max(self.min_frames);
        let at = self.pos();
        self.frames.extend(std::iter::repeat_n((at, activity), n));
    }
}

struct AgentPlan {
    behaviors: Vec<Behavior>,
    wait: Point2,
}

fn plan_behaviors(label: Label, spec: &BehaviorSpec, rng: &mut ChaCha8Rng) -> Vec<Behavior> {
    if !label.is_at_risk() {
        return Vec::new();
    }
    if !spec.at_risk_behaviors.is_empty() {
        return spec.at_risk_behaviors.clone();
    }
    if rng.random_bool(spec.subtle_prob) {
        return vec![Behavior::LookTunnel];
    }
    let mut picked = Vec::new();
    if rng.random_bool(0.6) {
        picked.push(Behavior::Pacing);
    }
    if rng.random_bool(0.6) {
        picked.push(Behavior::YellowDwell);
    }
    if rng.random_bool(0.5) {
        picked.push(Behavior::LookTunnel);
    }
    if rng.random_bool(spec.far_end_prob) {
        picked.push(Behavior::FarEnd);
    }
    if !picked.iter().any(|b| *b != Behavior::LookTunnel) {
        let strong = [Behavior::Pacing, Behavior::YellowDwell, Behavior::FarEnd];
        picked.push(strong[rng.random_range(0..strong.len())]);
    }
    picked.sort();
    picked.shuffle(rng);
    picked
}

fn vary_u32(base: u32, vary: bool, rng: &mut ChaCha8Rng) -> u32 {
    if vary && base > 1 {
        rng.random_range(base - 1..=base + 1)
    } else {
        base.max(1)
    }
}

fn vary_secs(base: f64, vary: bool, rng: &mut ChaCha8Rng) -> f64 {
    if vary {
        base * rng.random_range(0.6..1.6)
    } else {
        base
    }
}

/// Behavior segment that starts and ends at the wait spot.
fn script_behavior(path: &mut Path, b: Behavior, g: &Geometry, spec: &BehaviorSpec, rng: &mut ChaCha8Rng) {
    let home = path.pos();
    match b {
        Behavior::Pacing => {
            let here = g.zone(home);
            let there = if here == Zone::A { Zone::B } else { Zone::A };
            let cycles = vary_u32(spec.pacing_cycles, spec.vary, rng);
            for _ in 0..cycles {
                let y = (home.y + rng.random_range(-1.0..1.0)).clamp(g.depth + 2.0, g.l - 2.0);
                path.walk_to(Point2::new(g.spot_x(there), y));
                path.hold(rng.random_range(1.5..3.5), Activity::Stand);
                path.walk_to(home);
                path.hold(rng.random_range(1.5..3.5), Activity::Stand);
            }
        }
        Behavior::YellowDwell => {
            let visits = if spec.vary { rng.random_range(1..=3) } else { 1 };
            for _ in 0..visits {
                path.walk_to(Point2::new(g.w + YELLOW_STEP_M, home.y));
                path.hold(vary_secs(spec.yellow_dwell_s, spec.vary, rng), Activity::Stand);
                path.walk_to(home);
                path.hold(rng.random_range(2.0..4.0), Activity::Stand);
            }
        }
        Behavior::LookTunnel => {
            let events = vary_u32(spec.look_tunnel_events, spec.vary, rng);
            for _ in 0..events {
                path.hold(rng.random_range(2.0..5.0), Activity::LookTunnel);
                path.hold(rng.random_range(2.0..4.0), Activity::Stand);
            }
        }
        Behavior::FarEnd => {
            path.walk_to(Point2::new(0.5 * g.w, 0.5 * g.depth));
            path.hold(rng.random_range(2.0..4.0), Activity::Stand);
            path.walk_to(home);
            path.hold(2.0, Activity::Stand);
        }
    }
}

/// Full script: arrive, wait, behave, wait, depart. Waiting fills the frames
/// left over after the scripted parts.
fn script_agent(
    label: Label,
    plan: &AgentPlan,
    g: &Geometry,
    spec: &ScenarioSpec,
    min_frames: usize,
    available: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<(Point2, Activity)>, ScenarioError> {
    let fps = spec.layout.fps;
    let entry = Point2::new(0.5 * g.w + rng.random_range(-0.3..0.3), g.l - 0.5);
    let mut arrive = Path::start(entry, Activity::Walk, fps, min_frames);
    arrive.walk_to(plan.wait);
    arrive.hold(2.0, Activity::Stand);

    let mut middle = Path::start(plan.wait, Activity::Stand, fps, min_frames);
    for &b in &plan.behaviors {
        script_behavior(&mut middle, b, g, &spec.behavior, rng);
    }
    if !label.is_at_risk() {
        let b = &spec.behavior;
        if rng.random_bool(b.control_look_prob) {
            middle.hold(rng.random_range(1.5..3.0), Activity::LookTunnel);
            middle.hold(2.0, Activity::Stand);
        }
        if rng.random_bool(b.control_yellow_prob) {
            middle.walk_to(Point2::new(g.w + YELLOW_STEP_M, plan.wait.y));
            middle.hold(rng.random_range(0.5..2.5), Activity::Stand);
            middle.walk_to(plan.wait);
            middle.hold(2.0, Activity::Stand);
        }
        if rng.random_bool(b.control_switch_prob) {
            let other = if g.zone(plan.wait) == Zone::A { Zone::B } else { Zone::A };
            middle.walk_to(Point2::new(g.spot_x(other), plan.wait.y));
            middle.hold(rng.random_range(5.0..30.0), Activity::Stand);
            middle.walk_to(plan.wait);
            middle.hold(2.0, Activity::Stand);
        }
    }

    let exit = Point2::new(0.5 * g.w + rng.random_range(-0.3..0.3), g.l - 0.5);
    let mut depart = Path::start(plan.wait, Activity::Stand, fps, min_frames);
    depart.walk_to(exit);

    let needed = arrive.frames.len() + middle.frames.len() + depart.frames.len() + 2 * min_frames;
    if needed > available {
        return Err(ScenarioError::Duration { video_id: spec.video_id.clone(), needed, available });
    }
    let spare = available - needed;
    let wait_total = spare - rng.random_range(0..=spare / 4);
    let before = min_frames + rng.random_range(0..=wait_total);
    let after = min_frames + (wait_total - (before - min_frames));

    let mut out = arrive.frames;
    out.extend(std::iter::repeat_n((plan.wait, Activity::Stand), before));
    out.extend(middle.frames);
    out.extend(std::iter::repeat_n((plan.wait, Activity::Stand), after));
    out.extend(depart.frames);
    Ok(out)
}

/// Closed-form indicator values from raw truth, valid when every zone and
/// yellow-line run lasts at least `h` frames and the timeline ends off the
/// yellow line.
fn truth_summary(frames: &[TruthFrame], fps: f64, params: &IndicatorParams) -> BehaviorSummary {
    let mut s = BehaviorSummary::default();
    let (mut on, mut run, mut longest, mut prev) = (0usize, 0usize, 0usize, false);
    let mut lt_runs = 0usize;
    let mut prev_look = false;
    let mut visits: Vec<Visit> = Vec::new();
    for f in frames {
        if f.yellow {
            on += 1;
            run += 1;
            longest = longest.max(run);
            if !prev {
                s.ncr += 1;
            }
            if matches!(f.activity, Activity::Walk | Activity::Stand) {
                s.cr = true;
            }
        } else {
            run = 0;
        }
        prev = f.yellow;
        let look = f.activity == Activity::LookTunnel;
        if look && !prev_look {
            lt_runs += 1;
        }
        prev_look = look;
        s.e |= f.in_c;
        if visits.last().map(|v| v.zone) != Some(f.zone) {
            visits.push(Visit { zone: f.zone, enter_frame: f.frame, exit_frame: f.frame });
        }
    }
    s.ty = on as f64 / fps;
    s.ly = longest as f64 / fps;
    s.bf = count_back_and_forth(&visits);
    s.lt = lt_runs >= params.lt_min_events.max(1);
    s
}

/// Shortest run of equal zone or yellow values.
pub fn shortest_truth_run(frames: &[TruthFrame]) -> usize {
    let mut best = usize::MAX;
    for key in [0u8, 1u8] {
        let mut run = 0usize;
        for (i, f) in frames.iter().enumerate() {
            let same = i > 0 && {
                let p = &frames[i - 1];
                if key == 0 {
                    p.zone == f.zone
                } else {
                    p.yellow == f.yellow
                }
            };
            if same {
                run += 1;
            } else {
                if i > 0 {
                    best = best.min(run);
                }
                run = 1;
            }
        }
        if !frames.is_empty() {
            best = best.min(run);
        }
    }
    best
}

fn observe(
    pos: Point2,
    activity: Activity,
    frame: u64,
    person_id: i64,
    g: &Geometry,
) -> Result<FrameObservation, ScenarioError> {
    let foot = g.to_image.apply(pos)?;
    let [l, r] = g.legs(pos);
    let left = g.to_image.apply(l)?;
    let right = g.to_image.apply(r)?;
    let px_per_m = left.distance(right) / (2.0 * LEG_HALF_SPREAD_M);
    let (w, h) = (0.6 * px_per_m, 1.7 * px_per_m);
    let bbox = BBox { x: foot.x - 0.5 * w, y: foot.y + 0.05 * px_per_m - h, w, h };
    Ok(FrameObservation { frame_index: frame, person_id, bbox, left_leg: Some(left), right_leg: Some(right), activity })
}

fn apply_noise(obs: &[FrameObservation], noise: &NoiseSpec, rng: &mut ChaCha8Rng) -> Vec<FrameObservation> {
    let jitter = (noise.pos_jitter_px > 0.0).then(|| Normal::new(0.0, noise.pos_jitter_px).expect("sigma validated"));
    let acts = [Activity::LookTunnel, Activity::Walk, Activity::Stand];
    let mut out = Vec::with_capacity(obs.len());
    for o in obs {
        let mut o = o.clone();
        if let Some(n) = &jitter {
            let mut d = || Point2::new(n.sample(rng), n.sample(rng));
            let shift = d();
            o.bbox.x += shift.x;
            o.bbox.y += shift.y;
            o.left_leg = o.left_leg.map(|k| k + d());
            o.right_leg = o.right_leg.map(|k| k + d());
        }
        if noise.label_flip_prob > 0.0 && rng.random_bool(noise.label_flip_prob) {
            let others: Vec<Activity> = acts.iter().copied().filter(|a| *a != o.activity).collect();
            o.activity = others[rng.random_range(0..others.len())];
        }
        // draw the dropout coin last so jitter streams do not depend on it
        if noise.dropout_prob > 0.0 && rng.random_bool(noise.dropout_prob) {
            continue;
        }
        out.push(o);
    }
    out
}

pub fn generate(spec: &ScenarioSpec) -> Result<Scenario, ScenarioError> {
    spec.validate()?;
    let scene = spec.layout.scene()?;
    let to_platform = scene.homography().map_err(|e| ScenarioError::Invalid(e.to_string()))?;
    let g = Geometry {
        w: spec.layout.width_m,
        l: spec.layout.length_m,
        depth: spec.layout.far_depth_m,
        alpha: scene.alpha,
        beta: scene.beta,
        to_image: to_platform.invert()?,
    };
    let params = IndicatorParams::default();
    let fps = spec.layout.fps;
    let total_frames = (spec.duration_s * fps).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let mut labels: Vec<Label> =
        std::iter::repeat_n(Label::Control, spec.n_control).chain(std::iter::repeat_n(Label::AtRisk, spec.n_at_risk)).collect();
    labels.shuffle(&mut rng);

    let mut clean = Vec::with_capacity(labels.len());
    let mut noisy = Vec::with_capacity(labels.len());
    let mut persons = Vec::with_capacity(labels.len());
    for (k, &label) in labels.iter().enumerate() {
        let person_id = k as i64 + 1;
        let behaviors = plan_behaviors(label, &spec.behavior, &mut rng);
        let zone = if rng.random_bool(0.5) { Zone::A } else { Zone::B };
        let wait_y = rng.random_range((g.depth + 4.0)..(g.l - 6.0));
        let plan = AgentPlan { behaviors, wait: Point2::new(g.spot_x(zone), wait_y) };
        let start = rng.random_range(0..=total_frames / 20);
        let script = script_agent(label, &plan, &g, spec, params.hysteresis_frames, total_frames - start, &mut rng)?;

        let mut obs = Vec::with_capacity(script.len());
        let mut frames = Vec::with_capacity(script.len());
        for (i, &(pos, activity)) in script.iter().enumerate() {
            let frame = (start + i) as u64;
            obs.push(observe(pos, activity, frame, person_id, &g)?);
            frames.push(TruthFrame { frame, zone: g.zone(pos), yellow: g.yellow(pos), in_c: g.in_c(pos), activity });
        }
        let expected = truth_summary(&frames, fps, &params);
        let noisy_obs = apply_noise(&obs, &spec.noise, &mut rng);

        let mut t = PersonTimeline::new(person_id, spec.video_id.clone(), obs);
        t.label = Some(label);
        let mut n = PersonTimeline::new(person_id, spec.video_id.clone(), noisy_obs);
        n.label = Some(label);
        clean.push(t);
        noisy.push(n);
        persons.push(PersonTruth { person_id, label, behaviors: plan.behaviors, frames, expected });
    }
    Ok(Scenario {
        video_id: spec.video_id.clone(),
        scene,
        timelines: noisy,
        clean,
        truth: TruthLog { video_id: spec.video_id.clone(), fps, params, persons },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Profile {
    Smoke,
    FullScale,
}

impl std::str::FromStr for Profile {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "smoke" => Ok(Profile::Smoke),
            "paper-shaped" => Ok(Profile::FullScale),
            other => Err(format!("unknown profile '{other}' (expected smoke or paper-shaped)")),
        }
    }
}

impl Profile {
    pub fn name(self) -> &'static str {
        match self {
            Profile::Smoke => "smoke",
            Profile::FullScale => "paper-shaped",
        }
    }
}

pub const FULL_VIDEOS: usize = 122;
pub const FULL_CONTROLS: usize = 190;
pub const FULL_AT_RISK: usize = 66;

fn scenario_seed(seed: u64, index: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);
    rng.random()
}

/// Scenario specs for a profile. `paper-shaped` has one at-risk person in
/// each of 66 videos and 190 controls spread one or two per video.
pub fn benchmark_corpus(profile: Profile, seed: u64) -> Vec<ScenarioSpec> {
    let counts: Vec<(usize, usize)> = match profile {
        Profile::Smoke => (0..8).map(|i| (1 + i % 2, usize::from(i % 2 == 0))).collect(),
        Profile::FullScale => {
            let doubles = FULL_CONTROLS - FULL_VIDEOS;
            let mut two_controls: Vec<bool> = (0..FULL_VIDEOS).map(|i| i < doubles).collect();
            two_controls.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            (0..FULL_VIDEOS).map(|i| (1 + usize::from(two_controls[i]), usize::from(i < FULL_AT_RISK))).collect()
        }
    };
    counts
        .into_iter()
        .enumerate()
        .map(|(i, (c, r))| ScenarioSpec::new(format!("{}-{:03}", profile.name(), i), c, r, scenario_seed(seed, i)))
        .collect()
}

pub fn generate_all(specs: &[ScenarioSpec]) -> Result<Vec<Scenario>, ScenarioError> {
    specs.par_iter().map(generate).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::serialize_stream;

    fn quiet(n_control: usize, n_at_risk: usize, seed: u64) -> ScenarioSpec {
        ScenarioSpec { noise: NoiseSpec::none(), ..ScenarioSpec::new("t", n_control, n_at_risk, seed) }
    }

    #[test]
    fn deterministic_per_seed() {
        let s = ScenarioSpec::new("v", 2, 1, 11);
        let a = generate(&s).unwrap();
        let b = generate(&s).unwrap();
        assert_eq!(serialize_stream(&a.timelines), serialize_stream(&b.timelines));
        assert_eq!(a.truth, b.truth);
        let c = generate(&ScenarioSpec { seed: 12, ..s }).unwrap();
        assert_ne!(serialize_stream(&a.timelines), serialize_stream(&c.timelines));
    }

    #[test]
    fn pacing_three_cycles_gives_five_triples() {
        let mut s = quiet(0, 1, 3);
        s.behavior.at_risk_behaviors = vec![Behavior::Pacing];
        s.behavior.vary = false;
        let sc = generate(&s).unwrap();
        assert_eq!(sc.truth.persons[0].expected.bf, 5);
    }

    #[test]
    fn quiet_controls_are_calm() {
        for seed in 0..5 {
            let mut s = quiet(3, 0, seed);
            s.behavior.control_look_prob = 0.0;
            s.behavior.control_yellow_prob = 0.0;
            s.behavior.control_switch_prob = 0.0;
            for p in generate(&s).unwrap().truth.persons {
                let e = p.expected;
                assert_eq!((e.ncr, e.ty, e.bf, e.e), (0, 0.0, 0, false));
            }
        }
    }

    #[test]
    fn runs_respect_hysteresis() {
        for seed in 0..10 {
            let sc = generate(&quiet(2, 2, seed)).unwrap();
            for p in &sc.truth.persons {
                assert!(shortest_truth_run(&p.frames) >= 3, "seed {seed} person {}", p.person_id);
                assert!(!p.frames.last().unwrap().yellow);
            }
        }
    }

    #[test]
    fn full_scale_counts() {
        let specs = benchmark_corpus(Profile::FullScale, 5);
        assert_eq!(specs.len(), FULL_VIDEOS);
        assert_eq!(specs.iter().map(|s| s.n_control).sum::<usize>(), FULL_CONTROLS);
        assert_eq!(specs.iter().map(|s| s.n_at_risk).sum::<usize>(), FULL_AT_RISK);
        let smoke = benchmark_corpus(Profile::Smoke, 5);
        assert_eq!(smoke.len(), 8);
        assert!("nope".parse::<Profile>().is_err());
    }

    #[test]
    fn too_short_duration_fails() {
        let s = ScenarioSpec { duration_s: 5.0, ..quiet(1, 1, 0) };
        assert!(matches!(generate(&s), Err(ScenarioError::Duration { .. })));
    }

    #[test]
    fn layout_checks() {
        let mut s = quiet(1, 0, 0);
        s.layout.width_m = 1.0;
        assert!(matches!(generate(&s), Err(ScenarioError::Layout(_))));
        let mut s = quiet(1, 0, 0);
        s.noise.dropout_prob = 1.5;
        assert!(matches!(generate(&s), Err(ScenarioError::Invalid(_))));
    }
}
