//! Glue between the stages: calibrated scenes, per-person preprocessing,
//! risk-map construction and the boosted-tree fold pipeline.

use rayon::prelude::*;
use thiserror::Error;

use crate::evaluation::{FoldPipeline, ItemKey};
use crate::geometry::{build_zone_partition, GeometryError, Point2, ZonePartition};
use crate::heatmap::{accumulate, aggregate, normalize, smooth, HeatmapError, HeatmapGrid, DEFAULT_SIGMA_M};
use crate::indicators::{
    frame_facts, position_risk_of, summarize_behavior, BehaviorSummary, FrameFacts, IndicatorError,
    IndicatorParams, IndicatorVector, WindowSpec, FEATURE_COUNT,
};
use crate::ingest::{IngestError, Label, PersonTimeline, SceneConfig};
use crate::projection::Homography;
use crate::riskmodel::{train, BoostParams, ModelError, TreeEnsemble};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Indicator(#[from] IndicatorError),
    #[error(transparent)]
    Heatmap(#[from] HeatmapError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("no label for video {video_id} person {person_id}")]
    MissingLabel { video_id: String, person_id: i64 },
    #[error("risk map draws on {0}, which is not in the training set")]
    Leak(String),
}

/// A validated scene configuration with its derived geometry.
#[derive(Debug, Clone)]
pub struct Scene {
    pub config: SceneConfig,
    pub partition: ZonePartition,
    pub to_platform: Homography,
}

impl Scene {
    pub fn new(config: SceneConfig) -> Result<Scene, PipelineError> {
        config.validate()?;
        let partition = build_zone_partition(&config)?;
        let to_platform = config.homography()?;
        Ok(Scene { config, partition, to_platform })
    }
}

pub fn source_tag(video_id: &str, person_id: i64) -> String {
    format!("{video_id}#{person_id}")
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrepareOptions {
    pub params: IndicatorParams,
    pub sigma_m: f64,
    pub window: WindowSpec,
}

impl Default for PrepareOptions {
    fn default() -> Self {
        PrepareOptions { params: IndicatorParams::default(), sigma_m: DEFAULT_SIGMA_M, window: WindowSpec::whole() }
    }
}

/// Everything about one person that does not depend on other people.
#[derive(Debug, Clone)]
pub struct PersonRecord {
    pub video_id: String,
    pub person_id: i64,
    pub label: Option<Label>,
    pub facts: Vec<FrameFacts>,
    pub behavior: BehaviorSummary,
    /// Smoothed trajectory density, tagged with this person's source tag.
    pub trajectory_map: HeatmapGrid,
    pub out_of_extent: usize,
}

impl PersonRecord {
    pub fn tag(&self) -> String {
        source_tag(&self.video_id, self.person_id)
    }

    pub fn indicators(&self, risk_map: Option<&HeatmapGrid>) -> IndicatorVector {
        self.behavior.with_pr(position_risk_of(&self.facts, risk_map))
    }

    pub fn label(&self) -> Result<Label, PipelineError> {
        self.label.ok_or_else(|| PipelineError::MissingLabel { video_id: self.video_id.clone(), person_id: self.person_id })
    }
}

fn windowed(facts: Vec<FrameFacts>, window: WindowSpec) -> Vec<FrameFacts> {
    match (window.tau, facts.last()) {
        (0, _) | (_, None) => facts,
        (tau, Some(last)) => {
            let start = (last.frame + 1).saturating_sub(tau);
            facts.into_iter().filter(|f| f.frame >= start).collect()
        }
    }
}

pub fn prepare_person(scene: &Scene, timeline: &PersonTimeline, opts: &PrepareOptions) -> Result<PersonRecord, PipelineError> {
    let facts = windowed(frame_facts(timeline, &scene.partition, &scene.to_platform), opts.window);
    let behavior = summarize_behavior(&facts, scene.config.fps, &opts.params)?;
    let points: Vec<Point2> = facts.iter().filter_map(|f| f.platform).collect();
    let acc = accumulate(&points, scene.config.grid);
    let trajectory_map = smooth(&acc.grid, opts.sigma_m)?.with_source(source_tag(&timeline.video_id, timeline.person_id));
    Ok(PersonRecord {
        video_id: timeline.video_id.clone(),
        person_id: timeline.person_id,
        label: timeline.label,
        facts,
        behavior,
        trajectory_map,
        out_of_extent: acc.out_of_extent,
    })
}

/// Preprocesses every timeline of one scene in parallel, preserving order.
pub fn prepare_video(
    scene: &Scene,
    timelines: &[PersonTimeline],
    opts: &PrepareOptions,
) -> Result<Vec<PersonRecord>, PipelineError> {
    timelines.par_iter().map(|t| prepare_person(scene, t, opts)).collect()
}

/// Normalized mean of the at-risk records' trajectory maps; `None` when no
/// record is at risk.
pub fn build_risk_map(records: &[&PersonRecord]) -> Result<Option<HeatmapGrid>, PipelineError> {
    let maps: Vec<&HeatmapGrid> =
        records.iter().filter(|r| r.label.is_some_and(Label::is_at_risk)).map(|r| &r.trajectory_map).collect();
    if maps.is_empty() {
        return Ok(None);
    }
    Ok(Some(normalize(&aggregate(&maps)?)))
}

pub fn feature_rows(records: &[&PersonRecord], risk_map: Option<&HeatmapGrid>) -> Vec<[f64; FEATURE_COUNT]> {
    records.iter().map(|r| r.indicators(risk_map).to_features()).collect()
}

pub fn item_keys(records: &[PersonRecord]) -> Result<Vec<ItemKey>, PipelineError> {
    records.iter().map(|r| Ok(ItemKey { video_id: r.video_id.clone(), label: r.label()? })).collect()
}

/// Trains on the given records: risk map from the at-risk ones, then the
/// ensemble on their indicators.
pub fn fit(records: &[&PersonRecord], params: &BoostParams) -> Result<(TreeEnsemble, Option<HeatmapGrid>), PipelineError> {
    let map = build_risk_map(records)?;
    let x = feature_rows(records, map.as_ref());
    let y = records.iter().map(|r| r.label()).collect::<Result<Vec<_>, _>>()?;
    Ok((train(&x, &y, params)?, map))
}

/// Per fold: rebuild the risk map from training individuals only, recompute
/// `pr` on both sides, train, and score the test side.
pub struct BoostFoldPipeline<'a> {
    pub records: &'a [PersonRecord],
    pub params: BoostParams,
}

impl BoostFoldPipeline<'_> {
    pub fn run(&self, train_idx: &[usize], test_idx: &[usize], seed: u64) -> Result<Vec<f64>, PipelineError> {
        let train_recs: Vec<&PersonRecord> = train_idx.iter().map(|&i| &self.records[i]).collect();
        let params = BoostParams { seed, ..self.params };
        let (model, map) = fit(&train_recs, &params)?;
        if let Some(m) = &map {
            let allowed: std::collections::BTreeSet<String> = train_recs.iter().map(|r| r.tag()).collect();
            if let Some(bad) = m.sources.iter().find(|s| !allowed.contains(*s)) {
                return Err(PipelineError::Leak(bad.clone()));
            }
        }
        let test_recs: Vec<&PersonRecord> = test_idx.iter().map(|&i| &self.records[i]).collect();
        Ok(feature_rows(&test_recs, map.as_ref()).iter().map(|x| model.predict(x)).collect())
    }
}

impl FoldPipeline for BoostFoldPipeline<'_> {
    fn score_fold(&self, train: &[usize], test: &[usize], seed: u64) -> Result<Vec<f64>, String> {
        self.run(train, test, seed).map_err(|e| e.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{Activity, BBox, FrameObservation};

    fn person(id: i64, video: &str, label: Label, xs: &[f64]) -> PersonTimeline {
        let samples = xs
            .iter()
            .enumerate()
            .map(|(i, &x)| FrameObservation {
                frame_index: i as u64,
                person_id: id,
                bbox: BBox { x: x - 0.01, y: 0.46, w: 0.02, h: 0.04 },
                left_leg: None,
                right_leg: None,
                activity: Activity::Stand,
            })
            .collect();
        let mut t = PersonTimeline::new(id, video, samples);
        t.label = Some(label);
        t
    }

    #[test]
    fn risk_map_uses_at_risk_only() {
        let scene = Scene::new(SceneConfig::example_unit_square()).unwrap();
        let tls = vec![
            person(1, "v", Label::AtRisk, &[0.9; 20]),
            person(2, "v", Label::Control, &[0.1; 20]),
        ];
        let recs = prepare_video(&scene, &tls, &PrepareOptions { sigma_m: 0.1, ..Default::default() }).unwrap();
        let refs: Vec<&PersonRecord> = recs.iter().collect();
        let map = build_risk_map(&refs).unwrap().unwrap();
        assert_eq!(map.sources, vec!["v#1".to_string()]);
        assert_eq!(map.max(), 1.0);
        let at_risk = recs[0].indicators(Some(&map)).pr;
        let control = recs[1].indicators(Some(&map)).pr;
        assert!(at_risk > control, "{at_risk} vs {control}");
        assert_eq!(recs[1].indicators(None).pr, 0.0);
    }

    #[test]
    fn tail_window_limits_facts() {
        let scene = Scene::new(SceneConfig::example_unit_square()).unwrap();
        let t = person(1, "v", Label::AtRisk, &[0.5; 50]);
        let opts = PrepareOptions { window: WindowSpec { tau: 10, stride: 1 }, ..Default::default() };
        let r = prepare_person(&scene, &t, &opts).unwrap();
        assert_eq!(r.facts.len(), 10);
        assert_eq!(r.facts[0].frame, 40);
    }
}
