//! Per-cell rule parameters that travel with matter.
//!
//! Each cell carries one weight per kernel pair. The weights replace the
//! rule set's global `h` in the affinity computation and are mixed at every
//! step from the parameter vectors of the mass that arrives in the cell.

use rand::Rng;
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{Field, MultiField};
use crate::rules::KernelCache;
use crate::scalar::Scalar;
use crate::transport::{incoming_transfers, Displacement, Transfer};

/// Inflow below which a cell keeps its previous parameters.
pub const EPS_MASS: f64 = 1e-10;

/// A parameter vector of fixed dimension per cell, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamMap<T> {
    width: usize,
    height: usize,
    dim: usize,
    values: Vec<T>,
}

impl<T: Scalar> ParamMap<T> {
    pub fn uniform(width: usize, height: usize, vector: &[f64]) -> Self {
        let values = (0..width * height)
            .flat_map(|_| vector.iter().map(|&v| T::of(v)))
            .collect();
        Self {
            width,
            height,
            dim: vector.len(),
            values,
        }
    }

    pub fn from_vec(width: usize, height: usize, dim: usize, values: Vec<T>) -> Result<Self> {
        if values.len() != width * height * dim {
            return Err(Error::Dimension(format!(
                "{} values for a {width}x{height} map of dimension {dim}",
                values.len()
            )));
        }
        Ok(Self {
            width,
            height,
            dim,
            values,
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    #[inline]
    pub fn cell(&self, i: usize) -> &[T] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    #[inline]
    pub fn cell_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.values[i * self.dim..(i + 1) * self.dim]
    }

    /// Sets every cell of an axis-aligned rectangle (wrapping) to `vector`.
    pub fn fill_rect(&mut self, x0: isize, y0: isize, w: usize, h: usize, vector: &[f64]) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::Dimension(format!("parameter vector of length {} for dimension {}", vector.len(), self.dim)));
        }
        for dy in 0..h as isize {
            for dx in 0..w as isize {
                let x = (x0 + dx).rem_euclid(self.width as isize) as usize;
                let y = (y0 + dy).rem_euclid(self.height as isize) as usize;
                let i = y * self.width + x;
                for (slot, &v) in self.cell_mut(i).iter_mut().zip(vector) {
                    *slot = T::of(v.clamp(0.0, 1.0));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MixingMode {
    Average,
    #[default]
    SoftmaxSample,
}

/// How parameter vectors arriving in one cell are combined.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MixingPolicy {
    pub mode: MixingMode,
    /// Key of the counter-based generator used by softmax sampling.
    pub rng_seed: u64,
    /// Sample each component independently instead of copying whole vectors.
    #[serde(default)]
    pub crossover: bool,
}

/// Affinity with the per-cell weights of `params` in place of the global `h`.
pub fn embedded_affinity<T: Scalar>(
    a: &MultiField<T>,
    statics: &[Field<T>],
    params: &ParamMap<T>,
    cache: &KernelCache<T>,
) -> Result<MultiField<T>> {
    if params.dim() != cache.pair_count() {
        return Err(Error::Config(format!(
            "parameter map has dimension {} but the rule set has {} pairs",
            params.dim(),
            cache.pair_count()
        )));
    }
    if params.dims() != a.dims() {
        return Err(Error::Dimension("parameter map and state differ in size".into()));
    }
    let dim = params.dim();
    let values = params.values();
    cache.affinity_with(a, statics, |k, cell| values[cell * dim + k].as_f64())
}

fn check_mix_inputs<T: Scalar>(params: &ParamMap<T>, a: &MultiField<T>, disps: &[Displacement<T>]) -> Result<()> {
    if params.dims() != a.dims() || disps.len() != a.channel_count() {
        return Err(Error::Dimension("parameter map, state and displacements disagree".into()));
    }
    Ok(())
}

fn transfers<T: Scalar>(a: &MultiField<T>, disps: &[Displacement<T>], s: f64) -> Vec<Transfer<T>> {
    let channels: Vec<&[T]> = a.channels().iter().map(Field::values).collect();
    incoming_transfers(&channels, disps, a.width(), a.height(), T::of(s))
}

fn groups<T>(transfers: &[Transfer<T>]) -> impl Iterator<Item = &[Transfer<T>]> {
    transfers.chunk_by(|x, y| x.target == y.target)
}

/// Mass-weighted average of incoming parameter vectors.
pub fn mix_average<T: Scalar>(params: &ParamMap<T>, a: &MultiField<T>, disps: &[Displacement<T>], s: f64) -> Result<ParamMap<T>> {
    check_mix_inputs(params, a, disps)?;
    let mut out = params.clone();
    let dim = params.dim();
    let mut acc = vec![T::zero(); dim];
    for group in groups(&transfers(a, disps, s)) {
        let total = group.iter().fold(T::zero(), |s, t| s + t.mass);
        if total.as_f64() < EPS_MASS {
            continue;
        }
        acc.iter_mut().for_each(|v| *v = T::zero());
        for t in group {
            for (slot, &p) in acc.iter_mut().zip(params.cell(t.source)) {
                *slot = *slot + t.mass * p;
            }
        }
        for (slot, &v) in out.cell_mut(group[0].target).iter_mut().zip(&acc) {
            *slot = (v / total).max(T::zero()).min(T::one());
        }
    }
    Ok(out)
}

/// Counter-based generator for one cell of one step.
fn cell_rng(seed: u64, step: u64, cell: usize, draws_per_cell: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(step);
    // each f64 draw consumes two 32-bit words
    rng.set_word_pos(cell as u128 * 2 * draws_per_cell as u128);
    rng
}

fn uniform(rng: &mut ChaCha8Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Index drawn with probability `exp(m_i) / Σ_j exp(m_j)`.
fn softmax_pick<T: Scalar>(group: &[Transfer<T>], u: f64) -> usize {
    let max = group.iter().map(|t| t.mass.as_f64()).fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = group.iter().map(|t| (t.mass.as_f64() - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    let target = u * total;
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if target < acc {
            return i;
        }
    }
    group.len() - 1
}

/// Samples one incoming parameter vector per cell from the softmax of incoming masses.
///
/// Randomness is keyed by `(policy.rng_seed, step, cell)`, so results do not
/// depend on evaluation order.
pub fn mix_softmax<T: Scalar>(
    params: &ParamMap<T>,
    a: &MultiField<T>,
    disps: &[Displacement<T>],
    s: f64,
    policy: &MixingPolicy,
    step: u64,
) -> Result<ParamMap<T>> {
    check_mix_inputs(params, a, disps)?;
    let mut out = params.clone();
    let dim = params.dim();
    let draws = dim + 1;
    for group in groups(&transfers(a, disps, s)) {
        let total = group.iter().fold(0.0, |s, t| s + t.mass.as_f64());
        if total < EPS_MASS {
            continue;
        }
        let target = group[0].target;
        let mut rng = cell_rng(policy.rng_seed, step, target, draws);
        if policy.crossover {
            for k in 0..dim {
                let pick = group[softmax_pick(group, uniform(&mut rng))].source;
                out.cell_mut(target)[k] = params.cell(pick)[k];
            }
        } else {
            let pick = group[softmax_pick(group, uniform(&mut rng))].source;
            let chosen = params.cell(pick).to_vec();
            out.cell_mut(target).copy_from_slice(&chosen);
        }
    }
    Ok(out)
}

/// Dispatches on the policy's mixing mode.
pub fn mix<T: Scalar>(
    params: &ParamMap<T>,
    a: &MultiField<T>,
    disps: &[Displacement<T>],
    s: f64,
    policy: &MixingPolicy,
    step: u64,
) -> Result<ParamMap<T>> {
    match policy.mode {
        MixingMode::Average => mix_average(params, a, disps, s),
        MixingMode::SoftmaxSample => mix_softmax(params, a, disps, s, policy, step),
    }
}

/// Adds Gaussian noise to every parameter inside a disc at a uniformly drawn
/// centre, then clips to `[0, 1]`. Cells at toroidal distance `< radius` are affected.
pub fn mutate_zone<T: Scalar, R: Rng + ?Sized>(params: &mut ParamMap<T>, rng: &mut R, radius: f64, sigma: f64) -> Result<()> {
    if !(sigma >= 0.0) || !(radius >= 0.0) {
        return Err(Error::Config(format!("mutation needs radius ≥ 0 and sigma ≥ 0, got {radius}, {sigma}")));
    }
    let (w, h) = params.dims();
    let cx = rng.gen_range(0..w);
    let cy = rng.gen_range(0..h);
    if sigma == 0.0 || radius == 0.0 {
        return Ok(());
    }
    let noise = Normal::new(0.0, sigma).expect("sigma is finite and positive");
    for y in 0..h {
        let dy = torus_delta(y, cy, h);
        for x in 0..w {
            let dx = torus_delta(x, cx, w);
            if dx * dx + dy * dy < radius * radius {
                for v in params.cell_mut(y * w + x) {
                    *v = T::of((v.as_f64() + noise.sample(rng)).clamp(0.0, 1.0));
                }
            }
        }
    }
    Ok(())
}

fn torus_delta(a: usize, b: usize, n: usize) -> f64 {
    let d = a.abs_diff(b);
    d.min(n - d) as f64
}

/// Seed of the fixed projection from parameter vectors to display colours.
pub const SPECIES_PROJECTION_SEED: u64 = 0x5eed_c010;

/// Fixed random projection of a parameter vector to RGB.
///
/// Row `c` of the projection holds `dim` standard normal draws from a ChaCha8
/// generator seeded with [`SPECIES_PROJECTION_SEED`]; the channel value is
/// `255 · (½ + ½·tanh(2 · Σ_k W[c][k] · (p_k − ½)))`.
pub fn species_color(vector: &[f64]) -> [u8; 3] {
    let mut rng = ChaCha8Rng::seed_from_u64(SPECIES_PROJECTION_SEED);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut rgb = [0u8; 3];
    for slot in rgb.iter_mut() {
        let proj: f64 = vector.iter().map(|&p| normal.sample(&mut rng) * (p - 0.5)).sum();
        *slot = (255.0 * (0.5 + 0.5 * (2.0 * proj).tanh())).round() as u8;
    }
    rgb
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rules::tests::single_pair_rules;
    use crate::rules::KernelPair;
    use proptest::prelude::*;
    use rand::Rng;

    fn still(w: usize, h: usize, c: usize) -> Vec<Displacement<f64>> {
        vec![
            Displacement {
                x: vec![0.0; w * h],
                y: vec![0.0; w * h],
            };
            c
        ]
    }

    fn blob(w: usize, h: usize, cx: usize, cy: usize) -> MultiField<f64> {
        let f = Field::from_fn(w, h, |x, y| {
            let d2 = (x as f64 - cx as f64).powi(2) + (y as f64 - cy as f64).powi(2);
            (-d2 / 8.0).exp()
        })
        .unwrap();
        MultiField::new(vec![f]).unwrap()
    }

    fn three_pairs() -> crate::rules::RuleSet {
        let mut rules = single_pair_rules(0.2, 0.06, 0.5);
        rules.adjacency = vec![vec![3]];
        let p = rules.pairs[0].clone();
        rules.pairs = vec![
            p.clone(),
            KernelPair {
                h: 0.2,
                growth: crate::GrowthSpec { mu: 0.1, sigma: 0.03 },
                ..p.clone()
            },
            KernelPair { h: 0.9, ..p },
        ];
        rules
    }

    #[test]
    fn constant_params_reproduce_plain_affinity() {
        let rules = three_pairs();
        let cache = KernelCache::<f64>::new(&rules, 24, 24).unwrap();
        let a = blob(24, 24, 10, 12);
        let p = ParamMap::uniform(24, 24, &rules.h());
        let plain = cache.affinity_map(&a, &[]).unwrap();
        let embedded = embedded_affinity(&a, &[], &p, &cache).unwrap();
        for (x, y) in plain.channel(0).values().iter().zip(embedded.channel(0).values()) {
            assert!((x - y).abs() <= 1e-12);
        }
        let zeros = ParamMap::uniform(24, 24, &[0.0; 3]);
        let u = embedded_affinity(&a, &[], &zeros, &cache).unwrap();
        assert!(u.channel(0).values().iter().all(|&v| v == 0.0));
        let wrong = ParamMap::uniform(24, 24, &[0.0; 2]);
        assert!(matches!(embedded_affinity(&a, &[], &wrong, &cache), Err(Error::Config(_))));
    }

    #[test]
    fn half_plane_params_match_constant_runs_away_from_the_seam() {
        let rules = three_pairs();
        let (w, h) = (64, 32);
        let cache = KernelCache::<f64>::new(&rules, w, h).unwrap();
        let mut a = blob(w, h, 16, 16);
        let right = blob(w, h, 48, 16);
        for (v, r) in a.channel_mut(0).values_mut().iter_mut().zip(right.channel(0).values()) {
            *v += r;
        }
        let left_vec = [0.9, 0.1, 0.4];
        let right_vec = [0.2, 0.8, 0.6];
        let mut p = ParamMap::uniform(w, h, &left_vec);
        p.fill_rect(32, 0, 32, h, &right_vec).unwrap();
        let mixed = embedded_affinity(&a, &[], &p, &cache).unwrap();
        let u_left = embedded_affinity(&a, &[], &ParamMap::uniform(w, h, &left_vec), &cache).unwrap();
        let u_right = embedded_affinity(&a, &[], &ParamMap::uniform(w, h, &right_vec), &cache).unwrap();
        for y in 0..h {
            for x in 8..24 {
                let i = y * w + x;
                assert!((mixed.channel(0).values()[i] - u_left.channel(0).values()[i]).abs() < 1e-12);
                let j = i + 32;
                assert!((mixed.channel(0).values()[j] - u_right.channel(0).values()[j]).abs() < 1e-12);
            }
        }
    }

    /// Two sources of masses 3 and 1 landing exactly on one empty cell.
    fn converging_pair(m_left: f64, m_right: f64) -> (MultiField<f64>, Vec<Displacement<f64>>) {
        let (w, h) = (8, 4);
        let mut f = Field::zeros(w, h).unwrap();
        f.set(2, 1, m_left);
        f.set(4, 1, m_right);
        let mut d = still(w, h, 1);
        d[0].x[w + 2] = 1.0;
        d[0].x[w + 4] = -1.0;
        (MultiField::new(vec![f]).unwrap(), d)
    }

    #[test]
    fn average_weights_by_incoming_mass() {
        let (a, d) = converging_pair(3.0, 1.0);
        let mut p = ParamMap::uniform(8, 4, &[0.5]);
        p.cell_mut(8 + 2)[0] = 0.0;
        p.cell_mut(8 + 4)[0] = 1.0;
        let out = mix_average(&p, &a, &d, 0.5).unwrap();
        assert!((out.cell(8 + 3)[0] - 0.25).abs() < 1e-15);
        // the sources sent all their mass away; they keep their stale values
        assert_eq!(out.cell(8 + 2)[0], 0.0);
        assert_eq!(out.cell(0)[0], 0.5);
    }

    #[test]
    fn uniform_params_are_a_fixed_point_of_averaging() {
        let a = blob(16, 16, 8, 8);
        let mut d = still(16, 16, 1);
        d[0].x.iter_mut().enumerate().for_each(|(i, v)| *v = ((i % 7) as f64 - 3.0) * 0.3);
        let p = ParamMap::uniform(16, 16, &[0.3, 0.6]);
        let out = mix_average(&p, &a, &d, 0.65).unwrap();
        for (x, y) in out.values().iter().zip(p.values()) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_single_source_is_deterministic() {
        let (a, d) = converging_pair(2.0, 0.0);
        let mut p = ParamMap::uniform(8, 4, &[0.5, 0.5]);
        p.cell_mut(8 + 2).copy_from_slice(&[0.1, 0.9]);
        for seed in 0..50 {
            let policy = MixingPolicy {
                rng_seed: seed,
                ..Default::default()
            };
            let out = mix_softmax(&p, &a, &d, 0.5, &policy, seed).unwrap();
            assert_eq!(out.cell(8 + 3), &[0.1, 0.9]);
            // empty cells with no inflow keep their parameters
            assert_eq!(out.cell(0), &[0.5, 0.5]);
        }
    }

    #[test]
    fn softmax_equal_sources_split_evenly() {
        let (a, d) = converging_pair(1.0, 1.0);
        let mut p = ParamMap::uniform(8, 4, &[0.5]);
        p.cell_mut(8 + 2)[0] = 0.0;
        p.cell_mut(8 + 4)[0] = 1.0;
        let trials = 10_000;
        let mut ones = 0;
        for step in 0..trials {
            let out = mix_softmax(&p, &a, &d, 0.5, &MixingPolicy::default(), step).unwrap();
            ones += (out.cell(8 + 3)[0] == 1.0) as usize;
        }
        let freq = ones as f64 / trials as f64;
        assert!((freq - 0.5).abs() <= 0.02, "frequency {freq}");
    }

    #[test]
    fn softmax_is_reproducible_and_crossover_stays_in_the_incoming_set() {
        let a = blob(16, 16, 8, 8);
        let mut d = still(16, 16, 1);
        d[0].y.iter_mut().enumerate().for_each(|(i, v)| *v = ((i % 5) as f64 - 2.0) * 0.4);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let vals: Vec<f64> = (0..256 * 3).map(|_| rng.gen()).collect();
        let p = ParamMap::from_vec(16, 16, 3, vals).unwrap();
        let policy = MixingPolicy {
            crossover: true,
            ..Default::default()
        };
        let x = mix_softmax(&p, &a, &d, 0.65, &policy, 3).unwrap();
        let y = mix_softmax(&p, &a, &d, 0.65, &policy, 3).unwrap();
        assert_eq!(x, y);
        for i in 0..256 {
            for k in 0..3 {
                let v = x.cell(i)[k];
                assert!((0..256).any(|j| p.cell(j)[k] == v));
            }
        }
    }

    #[test]
    fn mutation_edge_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let base = ParamMap::<f64>::uniform(12, 12, &[0.3, 0.7]);
        let mut p = base.clone();
        mutate_zone(&mut p, &mut rng, 4.0, 0.0).unwrap();
        assert_eq!(p, base);
        mutate_zone(&mut p, &mut rng, 0.0, 0.5).unwrap();
        assert_eq!(p, base);
        mutate_zone(&mut p, &mut rng, 100.0, 10.0).unwrap();
        assert!(p.values().iter().all(|&v| (0.0..=1.0).contains(&v)));
        let at_bounds = p.values().iter().filter(|&&v| v == 0.0 || v == 1.0).count();
        assert!(at_bounds as f64 > 0.9 * p.values().len() as f64);
        assert!(mutate_zone(&mut p, &mut rng, 1.0, -1.0).is_err());
    }

    #[test]
    fn mutation_only_touches_the_disc() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let base = ParamMap::<f64>::uniform(32, 32, &[0.5]);
        let mut p = base.clone();
        mutate_zone(&mut p, &mut rng, 3.0, 0.1).unwrap();
        let changed = (0..1024).filter(|&i| p.cell(i) != base.cell(i)).count();
        // a radius-3 disc holds 29 lattice points strictly inside it
        assert!(changed > 0 && changed <= 29);
    }

    #[test]
    fn species_colors_are_fixed_and_distinguish_vectors() {
        let a = species_color(&[0.1, 0.9, 0.3]);
        assert_eq!(a, species_color(&[0.1, 0.9, 0.3]));
        assert_ne!(a, species_color(&[0.9, 0.1, 0.7]));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn averaging_stays_in_the_convex_hull(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = MultiField::new(vec![Field::from_fn(12, 12, |_, _| rng.gen::<f64>()).unwrap()]).unwrap();
            let mut d = still(12, 12, 1);
            let d0 = &mut d[0];
            for v in d0.x.iter_mut().chain(d0.y.iter_mut()) {
                *v = rng.gen_range(-2.0..2.0);
            }
            let vals: Vec<f64> = (0..144).map(|_| rng.gen()).collect();
            let p = ParamMap::from_vec(12, 12, 1, vals).unwrap();
            let out = mix_average(&p, &a, &d, 0.65).unwrap();
            let lo = p.values().iter().cloned().fold(f64::MAX, f64::min);
            let hi = p.values().iter().cloned().fold(f64::MIN, f64::max);
            prop_assert!(out.values().iter().all(|&v| v >= lo - 1e-12 && v <= hi + 1e-12));
        }
    }
}
