//! Random search over rule parameters and the statistics used to classify
//! the resulting patterns.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{Mode, Stepper};
use crate::error::{Error, Result};
use crate::field::{total_mass, Field, MultiField};
use crate::rules::{expand_adjacency, rasterize_kernel, FlowParams, GrowthSpec, KernelPair, KernelSpec, RuleSet, RINGS};
use crate::scalar::Scalar;

/// Closed intervals the sampler draws from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerRanges {
    pub radius: (u32, u32),
    pub r: (f64, f64),
    pub mu: (f64, f64),
    pub sigma: (f64, f64),
    pub h: (f64, f64),
    pub a: (f64, f64),
    pub b: (f64, f64),
    pub w: (f64, f64),
}

impl Default for SamplerRanges {
    fn default() -> Self {
        Self {
            radius: (2, 25),
            r: (0.2, 1.0),
            mu: (0.05, 0.5),
            sigma: (0.001, 0.2),
            h: (0.0, 1.0),
            a: (0.0, 1.0),
            b: (0.0, 1.0),
            w: (0.01, 0.5),
        }
    }
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.gen_range(lo..=hi)
    } else {
        lo
    }
}

/// Draws one kernel/growth pair, rejecting kernels whose raster is empty.
fn sample_pair<R: Rng + ?Sized>(rng: &mut R, ranges: &SamplerRanges, radius: u32, source: usize, target: usize) -> KernelPair {
    let side = 2 * radius as usize + 2;
    loop {
        let r = uniform(rng, ranges.r);
        let mut kernel = KernelSpec {
            r,
            a: [0.0; RINGS],
            b: [0.0; RINGS],
            w: [0.0; RINGS],
        };
        for v in kernel.a.iter_mut() {
            *v = uniform(rng, ranges.a);
        }
        for v in kernel.b.iter_mut() {
            *v = uniform(rng, ranges.b);
        }
        for v in kernel.w.iter_mut() {
            *v = uniform(rng, ranges.w);
        }
        let growth = GrowthSpec {
            mu: uniform(rng, ranges.mu),
            sigma: uniform(rng, ranges.sigma),
        };
        let h = uniform(rng, ranges.h);
        if rasterize_kernel::<f64>(&kernel, radius, side, side).is_ok() {
            return KernelPair {
                source,
                target,
                kernel,
                growth,
                h,
            };
        }
    }
}

/// Samples a rule set with wiring `adjacency` over `channels` matter channels
/// (rows beyond `channels` are read-only sensed layers).
pub fn sample_ruleset<R: Rng + ?Sized>(rng: &mut R, channels: usize, adjacency: &[Vec<u32>], ranges: &SamplerRanges) -> Result<RuleSet> {
    if channels == 0 || adjacency.len() < channels {
        return Err(Error::Config("adjacency must cover every matter channel".into()));
    }
    let wiring = expand_adjacency(adjacency);
    if wiring.is_empty() {
        return Err(Error::Config("adjacency declares no kernels".into()));
    }
    let radius = rng.gen_range(ranges.radius.0..=ranges.radius.1);
    let pairs = wiring
        .into_iter()
        .map(|(src, tgt)| sample_pair(rng, ranges, radius, src, tgt))
        .collect();
    let rules = RuleSet {
        radius,
        channels,
        static_channels: adjacency.len() - channels,
        adjacency: adjacency.to_vec(),
        pairs,
    };
    rules.validate()?;
    Ok(rules)
}

/// Default side of the initial random patch.
pub const DEFAULT_PATCH_SIDE: usize = 40;

/// A centred `side × side` patch of i.i.d. uniform matter per channel.
pub fn init_patch<T: Scalar, R: Rng + ?Sized>(rng: &mut R, width: usize, height: usize, side: usize, channels: usize) -> Result<MultiField<T>> {
    if side > width.min(height) {
        return Err(Error::Config(format!("patch side {side} exceeds the {width}x{height} grid")));
    }
    let (x0, y0) = ((width - side) / 2, (height - side) / 2);
    let mut out = MultiField::zeros(width, height, channels)?;
    for c in 0..channels {
        let field = out.channel_mut(c);
        for y in y0..y0 + side {
            for x in x0..x0 + side {
                field.set(x, y, T::of(rng.gen::<f64>()));
            }
        }
    }
    Ok(out)
}

/// Circular mean of positions `0..n` weighted by `marginal`, in cells.
fn circular_mean(marginal: &[f64]) -> f64 {
    let n = marginal.len() as f64;
    let (mut s, mut c) = (0.0, 0.0);
    for (i, &m) in marginal.iter().enumerate() {
        let t = std::f64::consts::TAU * i as f64 / n;
        s += m * t.sin();
        c += m * t.cos();
    }
    s.atan2(c).rem_euclid(std::f64::consts::TAU) * n / std::f64::consts::TAU
}

fn marginals<T: Scalar>(a: &MultiField<T>) -> (Vec<f64>, Vec<f64>) {
    let (w, h) = a.dims();
    let mut mx = vec![0.0; w];
    let mut my = vec![0.0; h];
    for ch in a.channels() {
        for y in 0..h {
            for x in 0..w {
                let v = ch.get(x, y).as_f64();
                mx[x] += v;
                my[y] += v;
            }
        }
    }
    (mx, my)
}

/// Wraps a normalized coordinate difference into `[−0.5, 0.5)`.
pub fn wrap_unit(d: f64) -> f64 {
    (d + 0.5).rem_euclid(1.0) - 0.5
}

/// Toroidal centre of mass in normalized coordinates, origin at the grid centre.
/// `None` when the state holds no mass.
pub fn center_of_mass<T: Scalar>(a: &MultiField<T>) -> Option<[f64; 2]> {
    let (mx, my) = marginals(a);
    let total: f64 = mx.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return None;
    }
    let (w, h) = a.dims();
    let x = circular_mean(&mx) / w as f64 - 0.5;
    let y = circular_mean(&my) / h as f64 - 0.5;
    Some([wrap_unit(x), wrap_unit(y)])
}

/// Toroidal distance between two normalized positions.
pub fn torus_distance(p: [f64; 2], q: [f64; 2]) -> f64 {
    wrap_unit(q[0] - p[0]).hypot(wrap_unit(q[1] - p[1]))
}

/// Shortest circular window `(start, len)` holding at least `fraction` of the marginal's mass.
fn tightest_window(marginal: &[f64], fraction: f64) -> (usize, usize) {
    let n = marginal.len();
    let total: f64 = marginal.iter().sum();
    let need = fraction * total;
    let mut best = (0, n);
    let mut end = 0;
    let mut acc = 0.0;
    for start in 0..n {
        while end < start + n && acc < need {
            acc += marginal[end % n];
            end += 1;
        }
        if acc >= need && end - start < best.1 {
            best = (start, end - start);
        }
        acc -= marginal[start];
    }
    best
}

/// Per-axis share of the marginal the bounding box must hold.
pub const AXIS_WINDOW_FRACTION: f64 = 0.995;

/// Thresholds of the spatially-localized-pattern criterion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlpCriterion {
    /// Minimum share of the mass inside the box.
    pub mass_fraction: f64,
    /// Maximum share of the grid area the box may cover.
    pub max_area: f64,
    /// Final mass at or below this share of the initial mass counts as vanished.
    pub vanish_fraction: f64,
}

impl Default for SlpCriterion {
    fn default() -> Self {
        Self {
            mass_fraction: 0.99,
            max_area: 0.25,
            vanish_fraction: 0.01,
        }
    }
}

/// Toroidal bounding box of a state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
    /// Share of the mass inside the box.
    pub mass_fraction: f64,
    /// Share of the grid area covered by the box.
    pub occupancy: f64,
}

/// Per axis, the shortest circular window holding [`AXIS_WINDOW_FRACTION`] of the marginal.
pub fn bounding_box<T: Scalar>(a: &MultiField<T>) -> Option<BoundingBox> {
    let (mx, my) = marginals(a);
    let total: f64 = mx.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return None;
    }
    let (w, h) = a.dims();
    let (x0, lx) = tightest_window(&mx, AXIS_WINDOW_FRACTION);
    let (y0, ly) = tightest_window(&my, AXIS_WINDOW_FRACTION);
    let mut inside = 0.0;
    for ch in a.channels() {
        for dy in 0..ly {
            let y = (y0 + dy) % h;
            for dx in 0..lx {
                inside += ch.get((x0 + dx) % w, y).as_f64();
            }
        }
    }
    Some(BoundingBox {
        x: x0,
        y: y0,
        width: lx,
        height: ly,
        mass_fraction: inside / total,
        occupancy: (lx * ly) as f64 / (w * h) as f64,
    })
}

/// Summary of one rollout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternStats {
    pub initial_mass: Vec<f64>,
    pub total_mass: Vec<f64>,
    /// Centre of mass every `stride` steps, starting at step 0 (`None` once empty).
    pub trajectory: Vec<Option<[f64; 2]>>,
    pub stride: usize,
    pub bounding_box: Option<BoundingBox>,
    /// Mean centre-of-mass travel per step, in cells.
    pub mean_speed: f64,
    pub vanished: bool,
    pub finite: bool,
    pub localized: bool,
}

/// Accumulates [`PatternStats`] from successive states.
#[derive(Debug, Clone)]
pub struct StatsRecorder {
    stride: usize,
    criterion: SlpCriterion,
    initial_mass: Vec<f64>,
    trajectory: Vec<Option<[f64; 2]>>,
    last: Option<[f64; 2]>,
    travel: f64,
    steps: usize,
    finite: bool,
}

impl StatsRecorder {
    pub fn new<T: Scalar>(initial: &MultiField<T>, stride: usize, criterion: SlpCriterion) -> Self {
        let com = center_of_mass(initial);
        Self {
            stride: stride.max(1),
            criterion,
            initial_mass: total_mass(initial).iter().map(|v| v.as_f64()).collect(),
            trajectory: vec![com],
            last: com,
            travel: 0.0,
            steps: 0,
            finite: initial.all_finite(),
        }
    }

    pub fn record<T: Scalar>(&mut self, a: &MultiField<T>) {
        self.steps += 1;
        self.finite &= a.all_finite();
        let com = center_of_mass(a);
        if let (Some(p), Some(q)) = (self.last, com) {
            let (w, h) = a.dims();
            self.travel += (wrap_unit(q[0] - p[0]) * w as f64).hypot(wrap_unit(q[1] - p[1]) * h as f64);
        }
        self.last = com;
        if self.steps.is_multiple_of(self.stride) {
            self.trajectory.push(com);
        }
    }

    pub fn finish<T: Scalar>(self, last: &MultiField<T>) -> PatternStats {
        let total: Vec<f64> = total_mass(last).iter().map(|v| v.as_f64()).collect();
        let m0: f64 = self.initial_mass.iter().sum();
        let m1: f64 = total.iter().sum();
        let vanished = !(m1 > self.criterion.vanish_fraction * m0);
        let bbox = if self.finite { bounding_box(last) } else { None };
        let localized = self.finite
            && !vanished
            && bbox.is_some_and(|b| b.mass_fraction >= self.criterion.mass_fraction && b.occupancy <= self.criterion.max_area);
        PatternStats {
            initial_mass: self.initial_mass,
            total_mass: total,
            trajectory: self.trajectory,
            stride: self.stride,
            bounding_box: bbox,
            mean_speed: if self.steps > 0 { self.travel / self.steps as f64 } else { 0.0 },
            vanished,
            finite: self.finite,
            localized,
        }
    }
}

/// Settings shared by every sample of a random search; missing JSON fields take their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchConfig {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub adjacency: Vec<Vec<u32>>,
    pub steps: usize,
    pub patch_side: usize,
    pub mode: Mode,
    pub flow: FlowParams,
    pub ranges: SamplerRanges,
    pub criterion: SlpCriterion,
    pub stats_stride: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            width: 128,
            height: 128,
            channels: 1,
            adjacency: vec![vec![10]],
            steps: 1000,
            patch_side: DEFAULT_PATCH_SIDE,
            mode: Mode::Flow,
            flow: FlowParams::default(),
            ranges: SamplerRanges::default(),
            criterion: SlpCriterion::default(),
            stats_stride: 10,
        }
    }
}

/// One line of a search report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchRecord {
    pub seed: u64,
    pub index: usize,
    pub mode: Mode,
    pub rules: Option<RuleSet>,
    pub stats: Option<PatternStats>,
    pub error: Option<String>,
}

/// Generator for sample `index` of a search seeded with `seed`.
pub fn sample_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Rule set and initial state of one search sample.
pub fn search_sample<T: Scalar>(seed: u64, index: usize, cfg: &SearchConfig) -> Result<(RuleSet, MultiField<T>)> {
    let mut rng = sample_rng(seed, index);
    let rules = sample_ruleset(&mut rng, cfg.channels, &cfg.adjacency, &cfg.ranges)?;
    let a0 = init_patch(&mut rng, cfg.width, cfg.height, cfg.patch_side, cfg.channels)?;
    Ok((rules, a0))
}

/// Rolls out `rules` from `a0` for `steps` steps and summarizes the trajectory.
pub fn rollout_stats<T: Scalar>(
    rules: &RuleSet,
    a0: &MultiField<T>,
    statics: &[Field<T>],
    mode: Mode,
    flow: FlowParams,
    steps: usize,
    stride: usize,
    criterion: SlpCriterion,
) -> Result<PatternStats> {
    let (w, h) = a0.dims();
    let stepper = Stepper::<T>::new(rules, w, h, mode, flow)?;
    let mut rec = StatsRecorder::new(a0, stride, criterion);
    let mut a = a0.clone();
    for _ in 0..steps {
        a = stepper.step(&a, statics)?.0;
        rec.record(&a);
    }
    Ok(rec.finish(&a))
}

fn run_one<T: Scalar>(seed: u64, index: usize, cfg: &SearchConfig, mode: Mode) -> SearchRecord {
    let mut record = SearchRecord {
        seed,
        index,
        mode,
        rules: None,
        stats: None,
        error: None,
    };
    match search_sample::<T>(seed, index, cfg) {
        Ok((rules, a0)) => {
            match rollout_stats(&rules, &a0, &[], mode, cfg.flow, cfg.steps, cfg.stats_stride, cfg.criterion) {
                Ok(stats) => record.stats = Some(stats),
                Err(e) => record.error = Some(e.to_string()),
            }
            record.rules = Some(rules);
        }
        Err(e) => record.error = Some(e.to_string()),
    }
    record
}

/// Samples `count` rule sets and rolls each out; failures are recorded per sample.
/// Records come back in sample order regardless of scheduling.
pub fn run_random_search<T: Scalar>(seed: u64, count: usize, cfg: &SearchConfig) -> Vec<SearchRecord> {
    run_random_search_with_mode::<T>(seed, count, cfg, cfg.mode)
}

/// [`run_random_search`] with the update rule overridden; the sampled rules are identical across modes.
pub fn run_random_search_with_mode<T: Scalar>(seed: u64, count: usize, cfg: &SearchConfig, mode: Mode) -> Vec<SearchRecord> {
    (0..count)
        .into_par_iter()
        .map(|i| run_one::<T>(seed, i, cfg, mode))
        .collect()
}
