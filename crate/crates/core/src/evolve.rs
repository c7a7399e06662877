//! Evolution strategies over rule parameters and the initial patch.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ecology::{sample_chem_field, sample_wall_forest, wall_flow, ChemGeometry, WallForest, DEFAULT_WALL_STRENGTH};
use crate::engine::{Mode, Stepper};
use crate::error::{Error, Result};
use crate::explore::{center_of_mass, torus_distance, wrap_unit, SamplerRanges};
use crate::field::{channel_sum, Field, MultiField};
use crate::rules::{expand_adjacency, FlowParams, GrowthSpec, KernelPair, KernelSpec, RuleSet, RINGS};
use crate::scalar::{Precision, Scalar};

/// `r, a₀..₂, b₀..₂, w₀..₂, h, μ, σ`.
pub const GENES_PER_PAIR: usize = 4 + 3 * RINGS;

/// Shape of a genotype: wiring, neighbourhood radius, grid and patch size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Template {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    /// `(C + S) × (C + S)`; rows past `channels` are sensed layers.
    pub adjacency: Vec<Vec<u32>>,
    pub radius: u32,
    pub patch_side: usize,
    #[serde(default)]
    pub ranges: SamplerRanges,
}

fn to_range(g: f64, (lo, hi): (f64, f64)) -> f64 {
    lo + g.clamp(0.0, 1.0) * (hi - lo)
}

fn from_range(v: f64, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        ((v - lo) / (hi - lo)).clamp(0.0, 1.0)
    } else {
        0.0
    }
}

impl Template {
    pub fn static_channels(&self) -> usize {
        self.adjacency.len().saturating_sub(self.channels)
    }

    pub fn pair_count(&self) -> usize {
        expand_adjacency(&self.adjacency).len()
    }

    pub fn genome_len(&self) -> usize {
        self.pair_count() * GENES_PER_PAIR + self.patch_side * self.patch_side * self.channels
    }

    pub fn validate(&self) -> Result<()> {
        if self.patch_side > self.width.min(self.height) {
            return Err(Error::Config(format!("patch side {} exceeds the grid", self.patch_side)));
        }
        if self.channels == 0 || self.adjacency.len() < self.channels || self.pair_count() == 0 {
            return Err(Error::Config("template needs matter channels and at least one kernel".into()));
        }
        Ok(())
    }

    /// Maps genes affinely from `[0, 1]` (after clipping) onto the sampler ranges.
    pub fn decode<T: Scalar>(&self, genes: &[f64]) -> Result<(RuleSet, MultiField<T>)> {
        if genes.len() != self.genome_len() {
            return Err(Error::Config(format!(
                "genotype has {} genes, template expects {}",
                genes.len(),
                self.genome_len()
            )));
        }
        let rg = &self.ranges;
        let pairs = expand_adjacency(&self.adjacency)
            .into_iter()
            .zip(genes.chunks(GENES_PER_PAIR))
            .map(|((source, target), g)| {
                let ring = |off: usize, range| {
                    let mut out = [0.0; RINGS];
                    for (j, slot) in out.iter_mut().enumerate() {
                        *slot = to_range(g[off + j], range);
                    }
                    out
                };
                KernelPair {
                    source,
                    target,
                    kernel: KernelSpec {
                        r: to_range(g[0], rg.r),
                        a: ring(1, rg.a),
                        b: ring(1 + RINGS, rg.b),
                        w: ring(1 + 2 * RINGS, rg.w),
                    },
                    h: to_range(g[1 + 3 * RINGS], rg.h),
                    growth: GrowthSpec {
                        mu: to_range(g[2 + 3 * RINGS], rg.mu),
                        sigma: to_range(g[3 + 3 * RINGS], rg.sigma),
                    },
                }
            })
            .collect();
        let rules = RuleSet {
            radius: self.radius,
            channels: self.channels,
            static_channels: self.static_channels(),
            adjacency: self.adjacency.clone(),
            pairs,
        };
        let patch = &genes[self.pair_count() * GENES_PER_PAIR..];
        let side = self.patch_side;
        let (x0, y0) = ((self.width - side) / 2, (self.height - side) / 2);
        let mut a = MultiField::zeros(self.width, self.height, self.channels)?;
        for (c, plane) in patch.chunks(side * side.max(1)).enumerate().take(self.channels) {
            for (i, &v) in plane.iter().enumerate() {
                a.channel_mut(c).set(x0 + i % side, y0 + i / side, T::of(v.clamp(0.0, 1.0)));
            }
        }
        Ok((rules, a))
    }

    /// Inverse of [`Template::decode`] up to rounding of the affine maps.
    pub fn encode<T: Scalar>(&self, rules: &RuleSet, a0: &MultiField<T>) -> Result<Vec<f64>> {
        if rules.pairs.len() != self.pair_count() || a0.channel_count() != self.channels {
            return Err(Error::Config("rules or state do not fit the template".into()));
        }
        let rg = &self.ranges;
        let mut out = Vec::with_capacity(self.genome_len());
        for p in &rules.pairs {
            let k = &p.kernel;
            out.push(from_range(k.r, rg.r));
            out.extend(k.a.iter().map(|&v| from_range(v, rg.a)));
            out.extend(k.b.iter().map(|&v| from_range(v, rg.b)));
            out.extend(k.w.iter().map(|&v| from_range(v, rg.w)));
            out.push(from_range(p.h, rg.h));
            out.push(from_range(p.growth.mu, rg.mu));
            out.push(from_range(p.growth.sigma, rg.sigma));
        }
        let side = self.patch_side;
        let (x0, y0) = ((self.width - side) / 2, (self.height - side) / 2);
        for c in a0.channels() {
            for i in 0..side * side {
                out.push(c.get(x0 + i % side, y0 + i / side).as_f64().clamp(0.0, 1.0));
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    DirectedMotion,
    AngularMotion,
    Obstacles,
    Chemotaxis,
}

/// Step at which motion tasks read the final centre of mass.
pub const MOTION_HORIZON: usize = 400;
/// Intermediate step of the angular task.
pub const TURN_STEP: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task: Task,
    /// Rollout length `T`.
    pub steps: usize,
    pub template: Template,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default)]
    pub flow: FlowParams,
    #[serde(default)]
    pub precision: Precision,
    #[serde(default = "default_threshold")]
    pub angular_threshold: f64,
    #[serde(default)]
    pub walls: WallForest,
    #[serde(default = "default_wall_strength")]
    pub wall_strength: f64,
    #[serde(default)]
    pub chem: ChemGeometry,
}

fn default_threshold() -> f64 {
    0.05
}

fn default_wall_strength() -> f64 {
    DEFAULT_WALL_STRENGTH
}

impl TaskSpec {
    pub fn new(task: Task, template: Template) -> Self {
        Self {
            task,
            steps: 500,
            template,
            mode: Mode::Flow,
            flow: FlowParams::default(),
            precision: Precision::Double,
            angular_threshold: default_threshold(),
            walls: WallForest::default(),
            wall_strength: DEFAULT_WALL_STRENGTH,
            chem: ChemGeometry::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.template.validate()?;
        self.flow.validate()?;
        let needed = match self.task {
            Task::Chemotaxis => 1,
            _ => MOTION_HORIZON,
        };
        if self.steps < needed {
            return Err(Error::Config(format!("{:?} needs at least {needed} steps", self.task)));
        }
        let sensed = self.template.static_channels();
        let allowed = matches!(self.task, Task::Obstacles | Task::Chemotaxis);
        if sensed > 1 || (sensed == 1 && !allowed) {
            return Err(Error::Config(format!("{:?} cannot sense {sensed} layers", self.task)));
        }
        Ok(())
    }

    /// Steps actually simulated: motion fitness never looks past step 400.
    pub fn rollout_steps(&self) -> usize {
        match self.task {
            Task::Chemotaxis => self.steps,
            _ => MOTION_HORIZON,
        }
    }
}

/// Distance between the centres of mass at steps 0 and 400; 0 if either is undefined.
pub fn fitness_directed(trajectory: &[Option<[f64; 2]>]) -> f64 {
    match (trajectory.first().copied().flatten(), trajectory.get(MOTION_HORIZON).copied().flatten()) {
        (Some(p), Some(q)) => torus_distance(p, q),
        _ => 0.0,
    }
}

/// `d₁ + d₂ + θ` over the legs 0→200 and 200→400, with `θ = 0` when either leg is shorter than `threshold`.
pub fn fitness_angular(trajectory: &[Option<[f64; 2]>], threshold: f64) -> f64 {
    let at = |t: usize| trajectory.get(t).copied().flatten();
    let (Some(p0), Some(p1), Some(p2)) = (at(0), at(TURN_STEP), at(MOTION_HORIZON)) else {
        return 0.0;
    };
    let u = [wrap_unit(p1[0] - p0[0]), wrap_unit(p1[1] - p0[1])];
    let v = [wrap_unit(p2[0] - p1[0]), wrap_unit(p2[1] - p1[1])];
    let d1 = u[0].hypot(u[1]);
    let d2 = v[0].hypot(v[1]);
    let angle = if d1 < threshold || d2 < threshold {
        0.0
    } else {
        ((u[0] * v[0] + u[1] * v[1]) / (d1 * d2)).clamp(-1.0, 1.0).acos()
    };
    d1 + d2 + angle
}

/// Mass-weighted mean of `Γ`; 0 for an empty state.
pub fn fitness_chemotaxis<T: Scalar>(state: &MultiField<T>, chem: &Field<T>) -> f64 {
    let sum = channel_sum(state);
    let (mut num, mut den) = (0.0, 0.0);
    for (&m, &g) in sum.values().iter().zip(chem.values()) {
        num += m.as_f64() * g.as_f64();
        den += m.as_f64();
    }
    if den > 0.0 && den.is_finite() {
        num / den
    } else {
        0.0
    }
}

/// Why an evaluation scored 0 regardless of behaviour.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalFlag {
    /// The rollout produced non-finite values.
    BlowUp,
    /// A decoded kernel rasterized to all zeros.
    DegenerateKernel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub fitness: f64,
    pub flag: Option<EvalFlag>,
}

impl Evaluation {
    fn flagged(flag: EvalFlag) -> Self {
        Self {
            fitness: 0.0,
            flag: Some(flag),
        }
    }
}

/// Task geometry of one episode.
#[derive(Debug, Clone)]
pub struct Episode<T> {
    pub walls: Option<Field<T>>,
    pub chem: Option<Field<T>>,
}

impl<T: Scalar> Episode<T> {
    pub fn sample(spec: &TaskSpec, episode_seed: u64) -> Result<Self> {
        let t = &spec.template;
        let center = (t.width as f64 / 2.0, t.height as f64 / 2.0);
        let mut rng = ChaCha8Rng::seed_from_u64(episode_seed);
        Ok(match spec.task {
            Task::Obstacles => Self {
                walls: Some(sample_wall_forest(&mut rng, t.width, t.height, center, &spec.walls)?),
                chem: None,
            },
            Task::Chemotaxis => Self {
                walls: None,
                chem: Some(sample_chem_field(&mut rng, t.width, t.height, center, &spec.chem)?.0),
            },
            _ => Self { walls: None, chem: None },
        })
    }
}

/// Rolls out decoded rules from `a0` in a given episode and scores the result.
pub fn evaluate_decoded<T: Scalar>(rules: &RuleSet, a0: &MultiField<T>, spec: &TaskSpec, episode: &Episode<T>) -> Result<Evaluation> {
    let t = &spec.template;
    let mut stepper = match Stepper::<T>::new(rules, t.width, t.height, spec.mode, spec.flow) {
        Err(Error::DegenerateKernel(_)) => return Ok(Evaluation::flagged(EvalFlag::DegenerateKernel)),
        other => other?,
    };
    if let Some(w) = &episode.walls {
        stepper = stepper.with_extra_flow(wall_flow(w, spec.wall_strength));
    }
    let statics: Vec<Field<T>> = match (t.static_channels(), &episode.walls, &episode.chem) {
        (0, _, _) => Vec::new(),
        (_, Some(w), _) => vec![w.clone()],
        (_, _, Some(c)) => vec![c.clone()],
        _ => return Err(Error::Config("sensed layer missing from the episode".into())),
    };
    let mut a = a0.clone();
    let mut trajectory = vec![center_of_mass(&a)];
    for _ in 0..spec.rollout_steps() {
        a = stepper.step(&a, &statics)?.0;
        if !a.all_finite() {
            return Ok(Evaluation::flagged(EvalFlag::BlowUp));
        }
        trajectory.push(center_of_mass(&a));
    }
    let fitness = match spec.task {
        Task::DirectedMotion | Task::Obstacles => fitness_directed(&trajectory),
        Task::AngularMotion => fitness_angular(&trajectory, spec.angular_threshold),
        Task::Chemotaxis => fitness_chemotaxis(&a, episode.chem.as_ref().expect("chemotaxis episodes carry Γ")),
    };
    Ok(Evaluation { fitness, flag: None })
}

/// Decodes `genes`, builds the episode from `episode_seed`, rolls out and scores.
pub fn evaluate<T: Scalar>(genes: &[f64], spec: &TaskSpec, episode_seed: u64) -> Result<Evaluation> {
    let (rules, a0) = spec.template.decode::<T>(genes)?;
    let episode = Episode::sample(spec, episode_seed)?;
    evaluate_decoded(&rules, &a0, spec, &episode)
}

/// [`evaluate`] at the spec's precision; genotypes that cannot be evaluated score 0.
pub fn evaluate_fitness(genes: &[f64], spec: &TaskSpec, episode_seed: u64) -> f64 {
    let result = match spec.precision {
        Precision::Single => evaluate::<f32>(genes, spec, episode_seed),
        Precision::Double => evaluate::<f64>(genes, spec, episode_seed),
    };
    result.map_or(0.0, |e| e.fitness)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shaping {
    #[default]
    CenteredRank,
    Raw,
}

/// OpenES settings; missing JSON fields take their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EsConfig {
    pub population: usize,
    pub sigma: f64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub generations: u64,
    pub antithetic: bool,
    #[serde(default)]
    pub shaping: Shaping,
}

impl Default for EsConfig {
    fn default() -> Self {
        Self {
            population: 16,
            sigma: 0.05,
            learning_rate: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            generations: 100,
            antithetic: true,
            shaping: Shaping::CenteredRank,
        }
    }
}

impl EsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.population < 2 || (self.antithetic && !self.population.is_multiple_of(2)) {
            return Err(Error::Config(format!(
                "population {} must be at least 2 and even when antithetic",
                self.population
            )));
        }
        if !(self.sigma > 0.0) || !(self.learning_rate >= 0.0) {
            return Err(Error::Config("sigma must be positive and the learning rate non-negative".into()));
        }
        Ok(())
    }
}

/// Ranks mapped to `[−½, ½]`; NaN ranks lowest, ties broken by index.
pub fn centered_ranks(fitness: &[f64]) -> Vec<f64> {
    let n = fitness.len();
    let key = |i: usize| if fitness[i].is_nan() { f64::NEG_INFINITY } else { fitness[i] };
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| key(i).total_cmp(&key(j)).then(i.cmp(&j)));
    let mut out = vec![0.0; n];
    let denom = (n.max(2) - 1) as f64;
    for (rank, &i) in order.iter().enumerate() {
        out[i] = rank as f64 / denom - 0.5;
    }
    out
}

/// OpenES search distribution with an Adam-updated mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpenEs {
    pub config: EsConfig,
    pub seed: u64,
    /// Completed generations.
    pub generation: u64,
    pub mean: Vec<f64>,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

impl OpenEs {
    pub fn new(config: EsConfig, mean: Vec<f64>, seed: u64) -> Result<Self> {
        config.validate()?;
        let n = mean.len();
        Ok(Self {
            config,
            seed,
            generation: 0,
            mean,
            m: vec![0.0; n],
            v: vec![0.0; n],
        })
    }

    /// Mean drawn uniformly from `[0, 1]^dim`.
    pub fn random_mean(dim: usize, seed: u64) -> Vec<f64> {
        let mut rng = stream_rng(seed, 0);
        (0..dim).map(|_| rand::Rng::gen::<f64>(&mut rng)).collect()
    }

    /// Unit-variance noise of the current generation; antithetic pairs are `(ε, −ε)`
    /// with the first half positive.
    pub fn noise(&self) -> Vec<Vec<f64>> {
        let mut rng = stream_rng(self.seed, self.generation + 1);
        let pop = self.config.population;
        let fresh = if self.config.antithetic { pop / 2 } else { pop };
        let mut eps: Vec<Vec<f64>> = (0..fresh)
            .map(|_| (0..self.mean.len()).map(|_| StandardNormal.sample(&mut rng)).collect())
            .collect();
        if self.config.antithetic {
            let mirrored: Vec<Vec<f64>> = eps.iter().map(|e| e.iter().map(|v| -v).collect()).collect();
            eps.extend(mirrored);
        }
        eps
    }

    /// Candidate genotypes `mean + σ·ε`.
    pub fn ask(&self) -> Vec<Vec<f64>> {
        let s = self.config.sigma;
        self.noise()
            .into_iter()
            .map(|e| self.mean.iter().zip(e).map(|(m, z)| m + s * z).collect())
            .collect()
    }

    /// Ascent direction `Σ fᵢ εᵢ / (N σ)` from shaped fitness.
    pub fn gradient(&self, fitness: &[f64]) -> Vec<f64> {
        let shaped = match self.config.shaping {
            Shaping::CenteredRank => centered_ranks(fitness),
            Shaping::Raw => fitness.iter().map(|&f| if f.is_nan() { 0.0 } else { f }).collect(),
        };
        let noise = self.noise();
        let scale = 1.0 / (noise.len() as f64 * self.config.sigma);
        let mut grad = vec![0.0; self.mean.len()];
        for (f, e) in shaped.iter().zip(&noise) {
            for (g, z) in grad.iter_mut().zip(e) {
                *g += f * z;
            }
        }
        grad.iter_mut().for_each(|g| *g *= scale);
        grad
    }

    /// Adam ascent step on the mean from the fitness of [`OpenEs::ask`]'s candidates.
    pub fn tell(&mut self, fitness: &[f64]) -> Result<()> {
        if fitness.len() != self.config.population {
            return Err(Error::Config(format!("expected {} fitness values", self.config.population)));
        }
        let grad = self.gradient(fitness);
        let c = &self.config;
        let t = (self.generation + 1) as i32;
        let bias1 = 1.0 - c.beta1.powi(t);
        let bias2 = 1.0 - c.beta2.powi(t);
        for i in 0..self.mean.len() {
            self.m[i] = c.beta1 * self.m[i] + (1.0 - c.beta1) * grad[i];
            self.v[i] = c.beta2 * self.v[i] + (1.0 - c.beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / bias1;
            let v_hat = self.v[i] / bias2;
            self.mean[i] += c.learning_rate * m_hat / (v_hat.sqrt() + c.epsilon);
        }
        self.generation += 1;
        Ok(())
    }
}

/// One line of training history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub generation: u64,
    pub best_fitness: f64,
    pub mean_fitness: f64,
    /// Best fitness seen in this or any earlier generation.
    pub best_ever: f64,
    pub episode_seed: u64,
    pub best_genotype: Vec<f64>,
}

/// Optimizer state plus the best genotype found so far; enough to resume a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EsRun {
    pub es: OpenEs,
    pub best_fitness: f64,
    pub best_genotype: Vec<f64>,
}

/// Episode geometry shared by the whole population of one generation.
pub fn episode_seed(seed: u64, generation: u64) -> u64 {
    let mut rng = stream_rng(seed ^ 0x9e37_79b9_7f4a_7c15, generation);
    rand::RngCore::next_u64(&mut rng)
}

impl EsRun {
    pub fn new(es: OpenEs) -> Self {
        let best_genotype = es.mean.clone();
        Self {
            es,
            best_fitness: f64::NEG_INFINITY,
            best_genotype,
        }
    }

    /// Evaluates one generation in parallel (results kept in population order) and updates the mean.
    pub fn step(&mut self, fitness: impl Fn(&[f64], u64) -> f64 + Sync) -> Result<GenerationRecord> {
        let generation = self.es.generation;
        let seed = episode_seed(self.es.seed, generation);
        let candidates = self.es.ask();
        let scores: Vec<f64> = candidates.par_iter().map(|g| fitness(g, seed)).collect();
        let finite: Vec<f64> = scores.iter().copied().filter(|f| f.is_finite()).collect();
        let (best_i, best) = scores
            .iter()
            .enumerate()
            .filter(|(_, f)| !f.is_nan())
            .fold((0, f64::NEG_INFINITY), |acc, (i, &f)| if f > acc.1 { (i, f) } else { acc });
        if best > self.best_fitness {
            self.best_fitness = best;
            self.best_genotype = candidates[best_i].clone();
        }
        self.es.tell(&scores)?;
        Ok(GenerationRecord {
            generation,
            best_fitness: best,
            mean_fitness: if finite.is_empty() { f64::NAN } else { finite.iter().sum::<f64>() / finite.len() as f64 },
            best_ever: self.best_fitness,
            episode_seed: seed,
            best_genotype: candidates[best_i].clone(),
        })
    }
}

/// Runs generations until `generations` have completed in total, reporting each one.
pub fn open_es_run(
    run: &mut EsRun,
    generations: u64,
    fitness: impl Fn(&[f64], u64) -> f64 + Sync,
    mut on_generation: impl FnMut(&EsRun, &GenerationRecord) -> Result<()>,
) -> Result<Vec<GenerationRecord>> {
    let mut history = Vec::new();
    while run.es.generation < generations {
        let record = run.step(&fitness)?;
        on_generation(run, &record)?;
        history.push(record);
    }
    Ok(history)
}
