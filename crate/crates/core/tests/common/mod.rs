//! Independent oracles and generators shared by the integration tests.
#![allow(dead_code)]

use platform_risk::geometry::Point2;
use platform_risk::indicators::{BehaviorSummary, IndicatorParams, Zone, FEATURE_COUNT};
use platform_risk::ingest::{Activity, BBox, FrameObservation, Label, PersonTimeline, SceneConfig};
use platform_risk::riskmodel::{BoostParams, TreeEnsemble};
use rand::Rng;

/// Debounced states by look-back: the state becomes `v` at sample `i` when
/// the last `h` raw samples all equal `v` and `v` differs from the state.
pub fn debounce_lookback<T: Copy + PartialEq>(raw: &[T], init: T, h: usize) -> Vec<T> {
    let h = h.max(1);
    let mut cur = init;
    let mut out = Vec::with_capacity(raw.len());
    for i in 0..raw.len() {
        if i + 1 >= h {
            let v = raw[i];
            if v != cur && raw[i + 1 - h..=i].iter().all(|&r| r == v) {
                cur = v;
            }
        }
        out.push(cur);
    }
    out
}

/// One sample as the oracle sees it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawFrame {
    pub zone: Zone,
    pub yellow: bool,
    pub in_c: bool,
    pub activity: Activity,
}

/// Brute-force per-frame behavior summary.
pub fn oracle_summary(frames: &[RawFrame], fps: f64, params: &IndicatorParams) -> BehaviorSummary {
    let h = params.hysteresis_frames;
    let yellow = debounce_lookback(&frames.iter().map(|f| f.yellow).collect::<Vec<_>>(), false, h);
    let zones = debounce_lookback(&frames.iter().map(|f| Some(f.zone)).collect::<Vec<_>>(), None, h);

    let mut s = BehaviorSummary::default();
    let mut prev = false;
    let (mut on, mut run, mut longest) = (0usize, 0usize, 0usize);
    for (f, &y) in frames.iter().zip(&yellow) {
        if y && !prev {
            s.ncr += 1;
        }
        if y {
            on += 1;
            run += 1;
            longest = longest.max(run);
            if matches!(f.activity, Activity::Walk | Activity::Stand) {
                s.cr = true;
            }
        } else {
            run = 0;
        }
        prev = y;
    }
    s.ty = on as f64 / fps;
    s.ly = longest as f64 / fps;

    let mut letters: Vec<Zone> = Vec::new();
    for z in zones.into_iter().flatten() {
        if z != Zone::Other && letters.last() != Some(&z) {
            letters.push(z);
        }
    }
    s.bf = (0..letters.len().saturating_sub(2)).filter(|&i| letters[i] == letters[i + 2]).count() as u32;

    let mut look_runs = 0;
    for (i, f) in frames.iter().enumerate() {
        let look = f.activity == Activity::LookTunnel;
        if look && (i == 0 || frames[i - 1].activity != Activity::LookTunnel) {
            look_runs += 1;
        }
    }
    s.lt = look_runs >= params.lt_min_events.max(1);
    s.e = frames.iter().any(|f| f.in_c);
    s
}

/// Closed-form zone facts of one observation on [`SceneConfig::example_unit_square`].
pub fn unit_square_raw(obs: &FrameObservation, cfg: &SceneConfig) -> RawFrame {
    let foot = match (obs.left_leg, obs.right_leg) {
        (Some(l), Some(r)) => Point2::new(0.5 * (l.x + r.x), 0.5 * (l.y + r.y)),
        (Some(k), None) | (None, Some(k)) => k,
        (None, None) => Point2::new(obs.bbox.x + 0.5 * obs.bbox.w, obs.bbox.y + obs.bbox.h),
    };
    let (a, b) = (cfg.alpha, cfg.beta);
    let inside = (0.0..=1.0).contains(&foot.x) && (0.0..=1.0).contains(&foot.y);
    let zone = if inside && foot.x <= a + (b - a) * foot.y {
        Zone::A
    } else if inside && foot.x >= 1.0 - a - (b - a) * foot.y {
        Zone::B
    } else {
        Zone::Other
    };
    let yellow = match (obs.left_leg, obs.right_leg) {
        (None, None) => foot.x > 1.0,
        (l, r) => l.is_some_and(|k| k.x > 1.0) || r.is_some_and(|k| k.x > 1.0),
    };
    RawFrame { zone, yellow, in_c: inside && foot.y <= cfg.offset_d, activity: obs.activity }
}

const ACTIVITIES: [Activity; 4] = [Activity::Walk, Activity::Stand, Activity::LookTunnel, Activity::None];

/// Sticky random walk over the unit square and a margin around it, with
/// occasional leg keypoints and irregular frame gaps.
pub fn random_timeline(rng: &mut impl Rng, person_id: i64, max_len: usize) -> PersonTimeline {
    let n = rng.random_range(1..=max_len);
    let mut frame = rng.random_range(0..5u64);
    let mut p = Point2::new(rng.random_range(-0.1..1.2), rng.random_range(-0.1..1.1));
    let mut act = ACTIVITIES[rng.random_range(0..ACTIVITIES.len())];
    let mut samples = Vec::with_capacity(n);
    for _ in 0..n {
        if rng.random_bool(0.15) {
            p = Point2::new(rng.random_range(-0.1..1.2), rng.random_range(-0.1..1.1));
        } else {
            p = Point2::new(p.x + rng.random_range(-0.03..0.03), p.y + rng.random_range(-0.03..0.03));
        }
        if rng.random_bool(0.2) {
            act = ACTIVITIES[rng.random_range(0..ACTIVITIES.len())];
        }
        let bbox = BBox { x: p.x - 0.05, y: p.y - 0.2, w: 0.1, h: 0.2 };
        let mode = rng.random_range(0..4);
        let mut leg = || Some(Point2::new(p.x + rng.random_range(-0.04..0.04), p.y + rng.random_range(-0.05..0.0)));
        let (left_leg, right_leg) = match mode {
            0 => (leg(), leg()),
            1 => (leg(), None),
            2 => (None, leg()),
            _ => (None, None),
        };
        samples.push(FrameObservation { frame_index: frame, person_id, bbox, left_leg, right_leg, activity: act });
        frame += rng.random_range(1..=3u64);
    }
    PersonTimeline::new(person_id, "random", samples)
}

/// Mann-Whitney AUC by explicit pair counting, in half-pair units.
pub fn auc_pairs(scores: &[f64], labels: &[Label]) -> f64 {
    let mut half_wins = 0u64;
    let (mut p, mut n) = (0u64, 0u64);
    for (i, li) in labels.iter().enumerate() {
        if !li.is_at_risk() {
            n += 1;
            continue;
        }
        p += 1;
        for (j, lj) in labels.iter().enumerate() {
            if !lj.is_at_risk() {
                half_wins += match scores[i].partial_cmp(&scores[j]).expect("finite scores") {
                    std::cmp::Ordering::Greater => 2,
                    std::cmp::Ordering::Equal => 1,
                    std::cmp::Ordering::Less => 0,
                };
            }
        }
    }
    half_wins as f64 / (2 * p * n) as f64
}

/// Margin by walking each tree's node array directly.
pub fn margin_by_path_walk(m: &TreeEnsemble, x: &[f64; FEATURE_COUNT]) -> f64 {
    let mut total = m.base_logit;
    for t in &m.trees {
        let mut node = t.nodes[0];
        while let Some(f) = node.feature {
            let next = if x[f].is_nan() {
                if node.default_left { node.left } else { node.right }
            } else if x[f] < node.threshold {
                node.left
            } else {
                node.right
            };
            node = t.nodes[next];
        }
        total += node.leaf_weight;
    }
    total
}

/// Shapley values by averaging marginal contributions over all 8!
/// feature orderings.
pub fn shapley_by_permutations(
    m: &TreeEnsemble,
    x: &[f64; FEATURE_COUNT],
    background: &[[f64; FEATURE_COUNT]],
) -> [f64; FEATURE_COUNT] {
    let value = |mask: usize| -> f64 {
        background
            .iter()
            .map(|b| {
                let mut z = *b;
                for i in 0..FEATURE_COUNT {
                    if mask >> i & 1 == 1 {
                        z[i] = x[i];
                    }
                }
                m.margin(&z)
            })
            .sum::<f64>()
            / background.len() as f64
    };
    let table: Vec<f64> = (0..1usize << FEATURE_COUNT).map(value).collect();
    let mut phi = [0.0; FEATURE_COUNT];
    let mut perm: Vec<usize> = (0..FEATURE_COUNT).collect();
    let mut count = 0usize;
    permute(&mut perm, 0, &mut |order| {
        let mut mask = 0usize;
        for &i in order {
            phi[i] += table[mask | 1 << i] - table[mask];
            mask |= 1 << i;
        }
        count += 1;
    });
    phi.map(|p| p / count as f64)
}

fn permute(v: &mut Vec<usize>, k: usize, f: &mut dyn FnMut(&[usize])) {
    if k == v.len() {
        f(v);
        return;
    }
    for i in k..v.len() {
        v.swap(k, i);
        permute(v, k + 1, f);
        v.swap(k, i);
    }
}

/// Random labeled rows where feature 0 and 5 carry most of the signal.
pub fn random_training_set(rng: &mut impl Rng, n: usize) -> (Vec<[f64; FEATURE_COUNT]>, Vec<Label>) {
    let mut x = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let at_risk = i % 3 == 0;
        let shift = if at_risk { 0.4 } else { 0.0 };
        let mut row = [0.0; FEATURE_COUNT];
        row[0] = (rng.random_range(0.0..0.6f64) + shift).min(1.0);
        row[1] = f64::from(rng.random_bool(if at_risk { 0.7 } else { 0.3 }) as u8);
        row[2] = rng.random_range(0..4) as f64;
        row[3] = rng.random_range(0.0..20.0);
        row[4] = rng.random_range(0.0..10.0);
        row[5] = (rng.random_range(0..3) + if at_risk { 2 } else { 0 }) as f64;
        row[6] = f64::from(rng.random_bool(0.4) as u8);
        row[7] = f64::from(rng.random_bool(if at_risk { 0.6 } else { 0.4 }) as u8);
        x.push(row);
        y.push(Label::from_bool(at_risk));
    }
    (x, y)
}

pub fn small_params(seed: u64, rounds: usize) -> BoostParams {
    BoostParams { rounds, seed, ..Default::default() }
}
