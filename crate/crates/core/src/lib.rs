//! Per-person risk scoring for metro platform surveillance.
//!
//! The pipeline consumes tracked-person perception streams (one JSON record per
//! frame and person), places every person on a calibrated platform split into
//! three zones, accumulates eight behavioral indicators per person and scores
//! them with a gradient-boosted tree ensemble whose decisions can be explained
//! with split counts and exact Shapley attributions.
//!
//! Modules follow the data flow:
//!
//! - [`ingest`]: stream and scene parsing, per-person timelines.
//! - [`geometry`]: zone construction and point/segment queries.
//! - [`projection`]: image to platform homographies.
//! - [`heatmap`]: trajectory density maps and the position risk map.
//! - [`indicators`]: the per-person event engine.
//! - [`riskmodel`]: boosting, prediction, importance and Shapley values.
//! - [`evaluation`]: metrics, grouped splits and cross-validation.
//! - [`simulator`]: seeded synthetic scenarios with truth logs.
//! - [`cli`]: the `platform-risk` command line front end.

pub mod cli;
pub mod evaluation;
pub mod geometry;
pub mod heatmap;
pub mod indicators;
pub mod ingest;
pub mod pipeline;
pub mod projection;
pub mod riskmodel;
pub mod simulator;

pub use geometry::{Point2, ZoneMembership, ZonePartition};
pub use heatmap::{GridSpec, HeatmapGrid};
pub use indicators::{IndicatorParams, IndicatorVector, WindowSpec};
pub use ingest::{Activity, FrameObservation, Label, PersonTimeline, SceneConfig};
pub use projection::Homography;
pub use riskmodel::{BoostParams, TreeEnsemble};
