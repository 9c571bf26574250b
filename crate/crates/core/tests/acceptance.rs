//! Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any
//! criterion fails.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use platform_risk::evaluation::{
    assign_folds, confusion_at, cross_validate, grouped_stratified_split, roc_auc, EvalError, ItemKey, DEFAULT_THRESHOLD,
};
use platform_risk::geometry::{build_zone_partition, Corners, Point2, ZonePartition};
use platform_risk::heatmap::{aggregate, normalize, smooth, GridSpec, HeatmapGrid};
use platform_risk::indicators::{
    compute_indicators, count_back_and_forth, IndicatorContext, IndicatorParams, IndicatorVector, Visit, WindowSpec,
    Zone, FEATURE_COUNT,
};
use platform_risk::ingest::{Label, SceneConfig};
use platform_risk::pipeline::{item_keys, prepare_video, BoostFoldPipeline, Scene};
use platform_risk::projection::{estimate, Homography};
use platform_risk::riskmodel::{train, train_traced, BoostParams, TreeEnsemble};
use platform_risk::simulator::{benchmark_corpus, generate_all, NoiseSpec, Profile};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::*;

type Check = fn() -> Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

// 1. End-to-end benchmark on the full-scale synthetic corpus.
const AUC_FLOOR: f64 = 0.90;
const BENCH_SEEDS: u64 = 5;
const BENCH_BUDGET: Duration = Duration::from_secs(60);

fn benchmark() -> Result<String, String> {
    let start = Instant::now();
    let mut aucs = Vec::new();
    for seed in 0..BENCH_SEEDS {
        let scenarios = generate_all(&benchmark_corpus(Profile::FullScale, seed)).map_err(|e| e.to_string())?;
        let mut records = Vec::new();
        for sc in &scenarios {
            let scene = Scene::new(sc.scene.clone()).map_err(|e| e.to_string())?;
            records.extend(prepare_video(&scene, &sc.timelines, &Default::default()).map_err(|e| e.to_string())?);
        }
        let items = item_keys(&records).map_err(|e| e.to_string())?;
        let pipe = BoostFoldPipeline { records: &records, params: BoostParams::default() };
        let report = cross_validate(&items, 10, &pipe, seed, DEFAULT_THRESHOLD).map_err(|e| e.to_string())?;
        aucs.push(report.mean.roc_auc);
    }
    let elapsed = start.elapsed();
    let shown: Vec<String> = aucs.iter().map(|a| format!("{a:.3}")).collect();
    let overall = aucs.iter().sum::<f64>() / aucs.len() as f64;
    let detail = format!("mean AUC per seed [{}], overall {overall:.3}, {:.1}s", shown.join(", "), elapsed.as_secs_f64());
    ensure(aucs.iter().all(|&a| a >= AUC_FLOOR), || format!("{detail}; a seed is below {AUC_FLOOR}"))?;
    ensure(elapsed < BENCH_BUDGET, || format!("{detail}; over the {}s budget", BENCH_BUDGET.as_secs()))?;
    Ok(detail)
}

// 2. Zone geometry.
const GEOM_TOL: f64 = 1e-9;

fn close(a: Point2, b: Point2, tol: f64) -> bool {
    (a.x - b.x).abs() <= tol && (a.y - b.y).abs() <= tol
}

fn polys_close(a: &[Point2], b: &[Point2], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(p, q)| close(*p, *q, tol))
}

#[derive(Clone, Copy)]
struct Affine {
    m: [[f64; 2]; 2],
    t: Point2,
}

impl Affine {
    fn apply(&self, p: Point2) -> Point2 {
        Point2::new(self.m[0][0] * p.x + self.m[0][1] * p.y + self.t.x, self.m[1][0] * p.x + self.m[1][1] * p.y + self.t.y)
    }

    fn linear(&self, v: Point2) -> Point2 {
        Point2::new(self.m[0][0] * v.x + self.m[0][1] * v.y, self.m[1][0] * v.x + self.m[1][1] * v.y)
    }

    fn det(&self) -> f64 {
        self.m[0][0] * self.m[1][1] - self.m[0][1] * self.m[1][0]
    }
}

fn random_affine(rng: &mut impl Rng) -> Affine {
    loop {
        let a = Affine {
            m: [[rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)], [
                rng.random_range(-3.0..3.0),
                rng.random_range(-3.0..3.0),
            ]],
            t: Point2::new(rng.random_range(-100.0..100.0), rng.random_range(-100.0..100.0)),
        };
        if a.det().abs() > 0.5 {
            return a;
        }
    }
}

pub fn random_scene(rng: &mut impl Rng) -> SceneConfig {
    let mut cfg = SceneConfig::example_unit_square();
    cfg.corners = Corners {
        tl: Point2::new(rng.random_range(0.0..0.3), rng.random_range(0.0..0.2)),
        tr: Point2::new(rng.random_range(0.7..1.0), rng.random_range(0.0..0.2)),
        bl: Point2::new(rng.random_range(-0.2..0.3), rng.random_range(0.8..1.2)),
        br: Point2::new(rng.random_range(0.7..1.2), rng.random_range(0.8..1.2)),
    };
    cfg.offset_d = rng.random_range(0.01..0.3);
    cfg.alpha = rng.random_range(0.05..0.45);
    cfg.beta = rng.random_range(0.05..0.45);
    cfg
}

fn zones_match(a: &ZonePartition, b: &ZonePartition, tol: f64) -> bool {
    polys_close(&a.zone_a, &b.zone_a, tol)
        && polys_close(&a.zone_b, &b.zone_b, tol)
        && polys_close(&a.zone_c, &b.zone_c, tol)
        && close(a.s_d.a, b.s_d.a, tol)
        && close(a.s_d.b, b.s_d.b, tol)
}

fn geometry() -> Result<String, String> {
    let start = Instant::now();
    let cfg = SceneConfig::example_unit_square();
    let z = build_zone_partition(&cfg).map_err(|e| e.to_string())?;
    let (a, b, d) = (cfg.alpha, cfg.beta, cfg.offset_d);
    let p = Point2::new;
    ensure(polys_close(&z.zone_a, &[p(0., 0.), p(a, 0.), p(b, 1.), p(0., 1.)], GEOM_TOL), || "zone A".into())?;
    ensure(polys_close(&z.zone_b, &[p(1. - a, 0.), p(1., 0.), p(1., 1.), p(1. - b, 1.)], GEOM_TOL), || "zone B".into())?;
    ensure(polys_close(&z.zone_c, &[p(0., 0.), p(1., 0.), p(1., d), p(0., d)], GEOM_TOL), || "zone C".into())?;

    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for case in 0..1000 {
        let cfg = random_scene(&mut rng);
        let t = random_affine(&mut rng);
        let base = build_zone_partition(&cfg).map_err(|e| format!("quad {case}: {e}"))?;
        let mut moved = cfg.clone();
        moved.corners = cfg.corners.map(|q| t.apply(q));
        // Perpendicular distances to the top edge scale by |det| |u| / |A u|.
        let top = cfg.corners.tr - cfg.corners.tl;
        moved.offset_d = cfg.offset_d * t.det().abs() * top.norm() / t.linear(top).norm();
        let image = build_zone_partition(&moved).map_err(|e| format!("quad {case} mapped: {e}"))?;
        let mapped = ZonePartition {
            zone_a: base.zone_a.iter().map(|&q| t.apply(q)).collect(),
            zone_b: base.zone_b.iter().map(|&q| t.apply(q)).collect(),
            zone_c: base.zone_c.iter().map(|&q| t.apply(q)).collect(),
            s_d: platform_risk::geometry::Segment::new(t.apply(base.s_d.a), t.apply(base.s_d.b)),
            ..image.clone()
        };
        ensure(zones_match(&image, &mapped, GEOM_TOL), || format!("quad {case} is not affine equivariant"))?;
        for _ in 0..10 {
            let q = Point2::new(rng.random_range(-0.3..1.3), rng.random_range(-0.3..1.3));
            ensure(base.locate(q) == image.locate(t.apply(q)), || format!("quad {case}: membership of {q:?} changed"))?;
        }
    }
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(1), || format!("took {elapsed:?}"))?;
    Ok(format!("unit square exact, 1000 affine quads, {:.0} ms", elapsed.as_secs_f64() * 1e3))
}

// 3. Homography estimation.
fn normalized(h: &Homography) -> [f64; 9] {
    let r = h.rows();
    let flat: Vec<f64> = r.iter().flatten().copied().collect();
    let norm = flat.iter().map(|v| v * v).sum::<f64>().sqrt();
    let sign = if flat[8] < 0.0 { -1.0 } else { 1.0 };
    std::array::from_fn(|i| sign * flat[i] / norm)
}

pub fn random_homography(rng: &mut impl Rng) -> Homography {
    Homography::from_rows([
        [rng.random_range(0.5..2.0), rng.random_range(-0.3..0.3), rng.random_range(-50.0..50.0)],
        [rng.random_range(-0.3..0.3), rng.random_range(0.5..2.0), rng.random_range(-50.0..50.0)],
        [rng.random_range(-1e-4..1e-4), rng.random_range(-1e-4..1e-4), 1.0],
    ])
    .expect("well conditioned")
}

fn homography() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for case in 0..100 {
        let h = random_homography(&mut rng);
        let n = rng.random_range(4..=20);
        let pairs: Vec<(Point2, Point2)> = (0..n)
            .map(|_| {
                let s = Point2::new(rng.random_range(0.0..1000.0), rng.random_range(0.0..1000.0));
                (s, h.apply(s).expect("finite"))
            })
            .collect();
        let est = estimate(&pairs).map_err(|e| format!("case {case}: {e}"))?;
        let (a, b) = (normalized(&h), normalized(&est.homography));
        let err = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        worst = worst.max(err);
        ensure(err <= 1e-6, || format!("case {case}: entry error {err:e}"))?;
    }
    let h = random_homography(&mut rng);
    let inv = h.invert().map_err(|e| e.to_string())?;
    let mut round = 0.0f64;
    for _ in 0..1000 {
        let p = Point2::new(rng.random_range(0.0..1000.0), rng.random_range(0.0..1000.0));
        let back = inv.apply(h.apply(p).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
        round = round.max(p.distance(back));
    }
    ensure(round < 1e-9, || format!("round trip error {round:e}"))?;
    Ok(format!("100 recovered (worst {worst:.1e}), round trip {round:.1e}"))
}

// 4. Heatmaps.
fn random_grid(rng: &mut impl Rng) -> HeatmapGrid {
    let nx = rng.random_range(1..60usize);
    let ny = rng.random_range(1..60usize);
    let cell = 0.1;
    let spec = GridSpec { min_x: 0.0, min_y: 0.0, max_x: nx as f64 * cell, max_y: ny as f64 * cell, cell };
    let mut g = HeatmapGrid::zeros(spec);
    let (nx, ny) = (g.nx, g.ny);
    for _ in 0..rng.random_range(0..20) {
        let i = rng.random_range(0..g.values.len());
        g.values[i] += rng.random_range(0.0..10.0);
    }
    // Impulses on the corners and edges.
    for idx in [0, nx - 1, (ny - 1) * nx, ny * nx - 1, rng.random_range(0..nx), (ny - 1) * nx + rng.random_range(0..nx)] {
        if rng.random_bool(0.7) {
            g.values[idx] += rng.random_range(1.0..5.0);
        }
    }
    g
}

fn heatmap() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst_mass = 0.0f64;
    let mut worst_agg = 0.0f64;
    for case in 0..100 {
        let g = random_grid(&mut rng);
        let sigma = rng.random_range(0.05..1.0);
        let s = smooth(&g, sigma).map_err(|e| e.to_string())?;
        let (m0, m1) = (g.mass(), s.mass());
        if m0 > 0.0 {
            let rel = (m1 - m0).abs() / m0;
            worst_mass = worst_mass.max(rel);
            ensure(rel <= 1e-6, || format!("grid {case}: mass {m0} -> {m1}"))?;
            ensure(normalize(&s).max() == 1.0, || format!("grid {case}: normalized max {}", normalize(&s).max()))?;
        } else {
            ensure(m1 == 0.0, || format!("grid {case}: heat from nothing"))?;
        }

        let k = rng.random_range(1..6);
        let maps: Vec<HeatmapGrid> = (0..k)
            .map(|_| {
                let mut m = HeatmapGrid::zeros(g.spec);
                for v in &mut m.values {
                    *v = rng.random_range(0.0..1.0);
                }
                m
            })
            .collect();
        let refs: Vec<&HeatmapGrid> = maps.iter().collect();
        let agg = aggregate(&refs).map_err(|e| e.to_string())?;
        for c in 0..g.values.len() {
            let mut sum = 0.0;
            for m in &maps {
                sum += m.values[c];
            }
            let diff = (agg.values[c] - sum / k as f64).abs();
            worst_agg = worst_agg.max(diff);
            ensure(diff <= 1e-12, || format!("grid {case} cell {c}: aggregate off by {diff:e}"))?;
        }
    }
    Ok(format!("mass error {worst_mass:.1e}, aggregate error {worst_agg:.1e}"))
}

// 5. Indicators against the brute-force oracle.
fn indicators() -> Result<String, String> {
    let cfg = SceneConfig::example_unit_square();
    let scene = Scene::new(cfg.clone()).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut random_checked = 0;
    let mut busy = 0;
    for case in 0..1000 {
        let t = random_timeline(&mut rng, case, 300);
        let params = IndicatorParams {
            hysteresis_frames: rng.random_range(1..=5),
            lt_min_events: rng.random_range(1..=3),
        };
        let tau = if rng.random_bool(0.3) { rng.random_range(1..200u64) } else { 0 };
        let ctx = IndicatorContext {
            partition: &scene.partition,
            to_platform: &scene.to_platform,
            risk_map: None,
            fps: cfg.fps,
            params,
        };
        let got = compute_indicators(&t, &ctx, WindowSpec { tau, stride: 1 }).map_err(|e| e.to_string())?;
        let last = t.last_frame().expect("non-empty");
        let raw: Vec<RawFrame> = t
            .samples
            .iter()
            .filter(|o| tau == 0 || o.frame_index + tau > last)
            .map(|o| unit_square_raw(o, &cfg))
            .collect();
        let want = oracle_summary(&raw, cfg.fps, &params).with_pr(0.0);
        ensure(got == want, || format!("timeline {case} (tau {tau}): {got:?} vs oracle {want:?}"))?;
        random_checked += 1;
        busy += usize::from(want.bf > 0 && want.ncr > 0 && want.lt);
    }

    let mut truth_checked = 0;
    for (profile, seeds) in [(Profile::Smoke, 0..3u64), (Profile::FullScale, 0..5u64)] {
        for seed in seeds {
            let mut specs = benchmark_corpus(profile, seed);
            for s in &mut specs {
                s.noise = NoiseSpec::none();
            }
            for sc in generate_all(&specs).map_err(|e| e.to_string())? {
                let scene = Scene::new(sc.scene.clone()).map_err(|e| e.to_string())?;
                let ctx = IndicatorContext {
                    partition: &scene.partition,
                    to_platform: &scene.to_platform,
                    risk_map: None,
                    fps: sc.truth.fps,
                    params: sc.truth.params,
                };
                for (t, p) in sc.clean.iter().zip(&sc.truth.persons) {
                    let got = compute_indicators(t, &ctx, WindowSpec::whole()).map_err(|e| e.to_string())?;
                    let raw: Vec<RawFrame> = p
                        .frames
                        .iter()
                        .map(|f| RawFrame { zone: f.zone, yellow: f.yellow, in_c: f.in_c, activity: f.activity })
                        .collect();
                    let oracle = oracle_summary(&raw, sc.truth.fps, &sc.truth.params);
                    let who = format!("{} person {}", sc.video_id, p.person_id);
                    ensure(got == p.expected.with_pr(0.0), || format!("{who}: {got:?} vs truth {:?}", p.expected))?;
                    ensure(oracle == p.expected, || format!("{who}: oracle {oracle:?} vs truth {:?}", p.expected))?;
                    truth_checked += 1;
                }
            }
        }
    }

    let visit = |zone, f| Visit { zone, enter_frame: f, exit_frame: f };
    let abab = [visit(Zone::A, 0), visit(Zone::B, 1), visit(Zone::A, 2), visit(Zone::B, 3)];
    ensure(count_back_and_forth(&abab) == 2, || "ABAB".into())?;
    let frames: Vec<RawFrame> = [Zone::A, Zone::B, Zone::A, Zone::B]
        .iter()
        .flat_map(|&zone| std::iter::repeat_n(RawFrame { zone, yellow: false, in_c: false, activity: Default::default() }, 3))
        .collect();
    let bf = oracle_summary(&frames, 10.0, &IndicatorParams::default()).bf;
    ensure(bf == 2, || format!("oracle ABAB gave {bf}"))?;
    ensure(busy >= 100, || format!("only {busy} random timelines exercise bf, ncr and lt together"))?;
    Ok(format!(
        "{random_checked} random ({busy} with bf, ncr and lt set) and {truth_checked} simulated timelines, 0 mismatches, ABAB -> 2"
    ))
}

// 6. Risk model.
fn toy_set() -> (Vec<[f64; FEATURE_COUNT]>, Vec<Label>) {
    let mut rng = ChaCha8Rng::seed_from_u64(60);
    (0..40)
        .map(|i| {
            let mut v = IndicatorVector {
                pr: rng.random_range(0.0..1.0),
                ncr: (i % 5) as u32,
                ty: rng.random_range(0.0..30.0),
                bf: rng.random_range(0..4),
                ..Default::default()
            };
            v.cr = v.ncr > 0;
            (v.to_features(), Label::from_bool(v.ncr >= 2))
        })
        .unzip()
}

fn risk_model() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (x, y) = random_training_set(&mut rng, 200);
    let model = train(&x, &y, &BoostParams::default()).map_err(|e| e.to_string())?;
    ensure(model.trees.len() == 300, || format!("{} trees", model.trees.len()))?;
    ensure(model.max_depth() <= 4, || format!("depth {}", model.max_depth()))?;

    let full = BoostParams { row_subsample: 1.0, feature_subsample: 1.0, ..Default::default() };
    let traced = train_traced(&x, &y, &full).map_err(|e| e.to_string())?;
    ensure(traced.loss_trace.len() == 300, || "trace length".into())?;
    for (i, w) in traced.loss_trace.windows(2).enumerate() {
        ensure(w[1] <= w[0], || format!("loss rose at round {}: {} -> {}", i + 1, w[0], w[1]))?;
    }

    let (tx, ty) = toy_set();
    let toy = train(&tx, &ty, &BoostParams { rounds: 200, ..full }).map_err(|e| e.to_string())?;
    let scores: Vec<f64> = tx.iter().map(|r| toy.predict(r)).collect();
    let auc = roc_auc(&scores, &ty).map_err(|e| e.to_string())?;
    ensure(auc == 1.0, || format!("toy training AUC {auc}"))?;

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("model.json");
    model.save(&path).map_err(|e| e.to_string())?;
    let loaded = TreeEnsemble::load(&path).map_err(|e| e.to_string())?;
    for r in x.iter().chain(&tx) {
        ensure(model.predict(r).to_bits() == loaded.predict(r).to_bits(), || "save/load changed a prediction".into())?;
    }
    let first = traced.loss_trace[0];
    let last = *traced.loss_trace.last().expect("trace");
    Ok(format!("depth {} <= 4, loss {first:.4} -> {last:.4} monotone, toy AUC 1, bitwise reload", model.max_depth()))
}

// 7. Explanations.
fn explanations() -> Result<String, String> {
    let mut worst = 0.0f64;
    for e in 0..3u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(70 + e);
        let (x, y) = random_training_set(&mut rng, 150);
        let params = BoostParams { rounds: [300, 100, 50][e as usize], max_depth: [4, 3, 2][e as usize], seed: e, ..Default::default() };
        let m = train(&x, &y, &params).map_err(|e| e.to_string())?;
        let background: Vec<_> = x.iter().step_by(3).copied().collect();
        for (i, xi) in x.iter().take(25).enumerate() {
            let s = m.shapley(xi, &background).map_err(|e| e.to_string())?;
            let err = (s.phi.iter().sum::<f64>() + s.base - m.margin(xi)).abs();
            worst = worst.max(err);
            ensure(err <= 1e-6, || format!("ensemble {e} instance {i}: efficiency gap {err:e}"))?;
        }
        let total: f64 = m.feature_importance().iter().sum();
        ensure(total == m.internal_node_count() as f64, || format!("ensemble {e}: importance {total} vs nodes"))?;
    }
    Ok(format!("efficiency gap {worst:.1e} over 75 instances, importance = split count"))
}

// 8. Evaluation protocol.
fn random_items(rng: &mut impl Rng) -> Vec<ItemKey> {
    let videos = rng.random_range(4..30);
    let mut items = Vec::new();
    for v in 0..videos {
        for _ in 0..rng.random_range(1..=6) {
            items.push(ItemKey { video_id: format!("v{v}"), label: Label::from_bool(rng.random_bool(0.3)) });
        }
    }
    if !items.iter().any(|i| i.label.is_at_risk()) {
        items[0].label = Label::AtRisk;
    }
    if items.iter().all(|i| i.label.is_at_risk()) {
        items[0].label = Label::Control;
    }
    items
}

fn evaluation() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for corpus in 0..1000u64 {
        let items = random_items(&mut rng);
        let n_videos = items.iter().map(|i| &i.video_id).collect::<std::collections::BTreeSet<_>>().len();
        let k = rng.random_range(2..=n_videos.min(10));
        let folds = assign_folds(&items, k, corpus).map_err(|e| e.to_string())?;
        for (a, b) in items.iter().zip(&folds) {
            for (c, d) in items.iter().zip(&folds) {
                ensure(a.video_id != c.video_id || b == d, || format!("corpus {corpus}: video {} split", a.video_id))?;
            }
        }
        let scorer = |train: &[usize], test: &[usize], seed: u64| -> Result<Vec<f64>, String> {
            let train_videos: std::collections::BTreeSet<&str> = train.iter().map(|&i| items[i].video_id.as_str()).collect();
            if let Some(&i) = test.iter().find(|&&i| train_videos.contains(items[i].video_id.as_str())) {
                return Err(format!("video {} on both sides", items[i].video_id));
            }
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            Ok(test.iter().map(|_| r.random_range(0.0..1.0)).collect())
        };
        match cross_validate(&items, k, &scorer, corpus, DEFAULT_THRESHOLD) {
            Ok(report) => {
                let m = report.mean;
                ensure(m.sensitivity == 1.0 - m.fnr && m.specificity == 1.0 - m.fpr, || {
                    format!("corpus {corpus}: mean identities")
                })?;
            }
            // Every test fold held one class; nothing to average.
            Err(EvalError::SingleClass { .. }) => {}
            Err(e) => return Err(format!("corpus {corpus}: {e}")),
        }
        let split = grouped_stratified_split(&items, 0.8, corpus).map_err(|e| e.to_string())?;
        for &i in &split.train {
            ensure(split.test.iter().all(|&j| items[j].video_id != items[i].video_id), || {
                format!("corpus {corpus}: split leaks {}", items[i].video_id)
            })?;
        }
    }

    for case in 0..100 {
        let n = rng.random_range(2..200);
        let mut labels: Vec<Label> = (0..n).map(|_| Label::from_bool(rng.random_bool(0.4))).collect();
        labels[0] = Label::AtRisk;
        labels[1] = Label::Control;
        let coarse = rng.random_bool(0.5);
        let scores: Vec<f64> = (0..n)
            .map(|_| {
                let s: f64 = rng.random_range(0.0..1.0);
                if coarse { (s * 10.0).round() / 10.0 } else { s }
            })
            .collect();
        let got = roc_auc(&scores, &labels).map_err(|e| e.to_string())?;
        let want = auc_pairs(&scores, &labels);
        ensure(got == want, || format!("set {case}: AUC {got} vs pairs {want}"))?;
        let c = confusion_at(&scores, &labels, DEFAULT_THRESHOLD).map_err(|e| e.to_string())?;
        ensure(c.sensitivity == 1.0 - c.fnr && c.specificity == 1.0 - c.fpr, || format!("set {case}: identities"))?;
    }
    Ok("1000 corpora without leakage, identities exact, AUC equals pair counting on 100 sets".into())
}

// 9. CLI determinism.
fn run_cli(args: &[&str]) -> Result<(), String> {
    let out = std::process::Command::new(env!("CARGO_BIN_EXE_platform-risk"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    match out.status.code() {
        Some(0) => Ok(()),
        code => Err(format!("`{}` exited {code:?}: {}", args.join(" "), String::from_utf8_lossy(&out.stderr))),
    }
}

fn output_digests(manifest: &Path) -> Result<Vec<(String, String)>, String> {
    let text = std::fs::read_to_string(manifest).map_err(|e| format!("{}: {e}", manifest.display()))?;
    let v: serde_json::Value = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    Ok(v["outputs"]
        .as_array()
        .ok_or("manifest without outputs")?
        .iter()
        .map(|o| (o["path"].as_str().unwrap_or("").to_string(), o["sha256"].as_str().unwrap_or("").to_string()))
        .collect())
}

fn determinism() -> Result<String, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let d = |name: &str| dir.path().join(name).display().to_string();
    let sim = d("sim");
    let streams: Vec<String> = (0..8).map(|i| format!("{sim}/smoke-{i:03}.jsonl")).collect();
    let pairs = d("pairs.csv");
    std::fs::write(&pairs, "src_x,src_y,dst_x,dst_y\n0,0,0,0\n1,0,4,0\n1,1,4,40\n0,1,0,40\n0.5,0.3,2,12\n")
        .map_err(|e| e.to_string())?;

    let mut commands: Vec<(Vec<String>, String)> = Vec::new();
    let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>();
    commands.push((s(&["simulate", "--profile", "smoke", "--seed", "3", "--out", &sim]), format!("{sim}/manifest.json")));
    let scene = format!("{sim}/smoke-000.scene.json");
    commands.push((s(&["calibrate", "--in", &pairs, "--config", &scene, "--out", &d("cal.json")]), d("cal.json.manifest.json")));
    commands.push((s(&["zones", "--config", &scene, "--out", &d("z.json"), "--overlay", &d("z.pgm")]), d("z.json.manifest.json")));
    let labels = format!("{sim}/labels.csv");
    let mut hm = s(&["heatmap", "--labels", &labels, "--out", &d("map.csv"), "--overlay", &d("map.pgm"), "--in"]);
    hm.extend(streams.iter().cloned());
    commands.push((hm, d("map.csv.manifest.json")));
    let mut ind = s(&["indicators", "--labels", &labels, "--heatmap", &d("map.csv"), "--out", &d("ind.csv"), "--in"]);
    ind.extend(streams.iter().cloned());
    commands.push((ind, d("ind.csv.manifest.json")));
    commands.push((s(&["train", "--in", &d("ind.csv"), "--out", &d("model.json"), "--seed", "1"]), d("model.json.manifest.json")));
    commands.push((
        s(&["score", "--model", &d("model.json"), "--in", &d("ind.csv"), "--out", &d("scores.csv"), "--explain"]),
        d("scores.csv.manifest.json"),
    ));
    commands.push((s(&["explain", "--model", &d("model.json"), "--in", &d("ind.csv"), "--out", &d("exp.json")]), d("exp.json.manifest.json")));
    commands.push((
        s(&["evaluate", "--profile", "paper-shaped", "--seed", "7", "--out", &d("report.json")]),
        d("report.json.manifest.json"),
    ));
    commands.push((s(&["--jobs", "2", "evaluate", "--in", &d("ind.csv"), "--folds", "4", "--out", &d("r2.json")]), d("r2.json.manifest.json")));

    let mut files = 0;
    for (args, manifest) in &commands {
        let argv: Vec<&str> = args.iter().map(String::as_str).collect();
        run_cli(&argv)?;
        let first = output_digests(Path::new(manifest))?;
        run_cli(&argv)?;
        let second = output_digests(Path::new(manifest))?;
        ensure(!first.is_empty() && first == second, || format!("`{}` is not reproducible", args[0]))?;
        for (path, digest) in &second {
            let bytes = std::fs::read(path).map_err(|e| e.to_string())?;
            ensure(&platform_risk_digest(&bytes) == digest, || format!("{path} differs from its manifest"))?;
        }
        files += first.len();
    }
    Ok(format!("{} commands rerun, {files} output files byte-identical", commands.len()))
}

fn platform_risk_digest(bytes: &[u8]) -> String {
    use sha2::Digest;
    hex::encode(sha2::Sha256::digest(bytes))
}

fn main() {
    let criteria: [(&str, Check); 9] = [
        ("synthetic benchmark", benchmark),
        ("zone geometry", geometry),
        ("homography", homography),
        ("heatmap", heatmap),
        ("indicator oracle", indicators),
        ("risk model", risk_model),
        ("explanations", explanations),
        ("evaluation protocol", evaluation),
        ("CLI determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or(p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {} {name}: PASS ({detail}) [{secs:.2}s]", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {} {name}: FAIL ({why}) [{secs:.2}s]", i + 1);
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
