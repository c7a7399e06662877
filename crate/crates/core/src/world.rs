//! A running simulation: matter, rules, optional parameter map and ecology,
//! plus the generator that drives mutations.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{EcologyConfig, Layer, RuleSource, SimConfig};
use crate::ecology::{food_decay_update, sample_chem_field, sample_wall_forest, wall_flow, EcologyState};
use crate::embedding::{embedded_affinity, mix, mutate_zone, ParamMap};
use crate::engine::{flow_state, lenia_update, reintegrate, Mode, StepReport, Stepper};
use crate::error::{check_range, Error, Result};
use crate::explore::{init_patch, sample_ruleset};
use crate::field::{total_mass, Field, MultiField};
use crate::rules::RuleSet;
use crate::scalar::Scalar;

/// Axis-aligned rectangle of cells; wraps around the torus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub x: isize,
    pub y: isize,
    pub width: usize,
    pub height: usize,
}

impl Rect {
    /// Wrapped cell indices covered by the rectangle, each once.
    pub fn cells(&self, grid_w: usize, grid_h: usize) -> Vec<usize> {
        let (w, h) = (self.width.min(grid_w), self.height.min(grid_h));
        let mut out = Vec::with_capacity(w * h);
        for dy in 0..h {
            let y = (self.y + dy as isize).rem_euclid(grid_h as isize) as usize;
            for dx in 0..w {
                let x = (self.x + dx as isize).rem_euclid(grid_w as isize) as usize;
                out.push(y * grid_w + x);
            }
        }
        out
    }
}

/// What a brush writes into.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "layer")]
pub enum BrushTarget {
    Matter { channel: usize },
    /// Every matter channel.
    Erase,
    Food,
    Walls,
}

/// A running world of precision `T`.
#[derive(Debug)]
pub struct World<T: Scalar> {
    pub(crate) config: SimConfig,
    pub(crate) rules: RuleSet,
    pub(crate) stepper: Stepper<T>,
    pub(crate) state: MultiField<T>,
    pub(crate) params: Option<ParamMap<T>>,
    pub(crate) ecology: Option<EcologyState<T>>,
    pub(crate) step: u64,
    pub(crate) rng: ChaCha8Rng,
}

/// Resolves the rule source of a configuration.
pub fn resolve_rules(config: &SimConfig) -> Result<RuleSet> {
    match &config.rules {
        RuleSource::Explicit(rules) => Ok(rules.clone()),
        RuleSource::Sampled { seed, ranges } => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            sample_ruleset(&mut rng, config.channels, &config.adjacency, ranges)
        }
    }
}

impl<T: Scalar> World<T> {
    /// Builds the initial world. The generator seeded with `config.seed` draws,
    /// in order, the matter patch, the wall forest and the chemical peak.
    pub fn new(config: SimConfig) -> Result<Self> {
        config.validate()?;
        let rules = resolve_rules(&config)?;
        let mut config = config;
        config.rules = RuleSource::Explicit(rules.clone());
        let (w, h) = (config.width, config.height);
        let stepper = Stepper::new(&rules, w, h, config.mode, config.flow)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let state = if config.patch_side > 0 {
            init_patch(&mut rng, w, h, config.patch_side, config.channels)?
        } else {
            MultiField::zeros(w, h, config.channels)?
        };
        let center = (w as f64 / 2.0, h as f64 / 2.0);
        let ecology = match &config.ecology {
            Some(e) => {
                let mut eco = EcologyState::empty(w, h)?;
                eco.food = Field::filled(w, h, T::of(e.food))?;
                eco.rho_decay = e.rho_decay;
                eco.rho_digest = e.rho_digest;
                if let Some(forest) = &e.walls {
                    eco.walls = sample_wall_forest(&mut rng, w, h, center, forest)?;
                }
                if let Some(geometry) = &e.chem {
                    eco.chem = sample_chem_field(&mut rng, w, h, center, geometry)?.0;
                }
                Some(eco)
            }
            None => None,
        };
        let params = match &config.embedding {
            Some(e) => {
                let vector = e.initial.clone().unwrap_or_else(|| rules.h());
                if vector.len() != rules.pairs.len() {
                    return Err(Error::Config(format!(
                        "initial parameter vector has {} entries for {} kernels",
                        vector.len(),
                        rules.pairs.len()
                    )));
                }
                Some(ParamMap::uniform(w, h, &vector))
            }
            None => None,
        };
        let mut world = Self {
            config,
            rules,
            stepper,
            state,
            params,
            ecology,
            step: 0,
            rng,
        };
        world.refresh_wall_flow();
        Ok(world)
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn rules(&self) -> &RuleSet {
        &self.rules
    }

    pub fn state(&self) -> &MultiField<T> {
        &self.state
    }

    /// Replaces the matter state; dimensions and channel count must match.
    pub fn set_state(&mut self, state: MultiField<T>) -> Result<()> {
        if state.dims() != self.state.dims() || state.channel_count() != self.state.channel_count() {
            return Err(Error::Dimension("replacement state has the wrong shape".into()));
        }
        self.state = state;
        Ok(())
    }

    pub fn params(&self) -> Option<&ParamMap<T>> {
        self.params.as_ref()
    }

    pub fn ecology(&self) -> Option<&EcologyState<T>> {
        self.ecology.as_ref()
    }

    /// Number of completed steps.
    pub fn step_index(&self) -> u64 {
        self.step
    }

    pub fn total_mass(&self) -> Vec<f64> {
        total_mass(&self.state).iter().map(|v| v.as_f64()).collect()
    }

    pub(crate) fn refresh_wall_flow(&mut self) {
        let strength = self.config.ecology.as_ref().map_or(0.0, |e| e.wall_strength);
        self.stepper.extra_flow = match &self.ecology {
            Some(eco) if strength > 0.0 && eco.walls.values().iter().any(|&v| v != T::zero()) => {
                Some(wall_flow(&eco.walls, strength))
            }
            _ => None,
        };
    }

    fn statics(&self) -> Vec<Field<T>> {
        let (Some(cfg), Some(eco)) = (&self.config.ecology, &self.ecology) else {
            return Vec::new();
        };
        cfg.sensed
            .iter()
            .map(|layer| match layer {
                Layer::Food => eco.food.clone(),
                Layer::Walls => eco.walls.clone(),
                Layer::Chem => eco.chem.clone(),
            })
            .collect()
    }

    /// Advances one step: affinity, transport (or the Lenia update), parameter
    /// mixing, food and decay, then any scheduled mutation.
    ///
    /// The report's masses bracket the transport step only.
    pub fn step(&mut self) -> Result<StepReport> {
        let statics = self.statics();
        let a = &self.state;
        let cache = &self.stepper.cache;
        let flow = self.config.flow;
        let affinity = match &self.params {
            Some(p) => embedded_affinity(a, &statics, p, cache)?,
            None => cache.affinity_map(a, &statics)?,
        };
        let (next, max_displacement, clamped_fraction) = match self.config.mode {
            Mode::Flow => {
                let fs = flow_state(a, affinity, &flow, self.stepper.extra_flow.as_ref())?;
                let disps = fs.displacements(&flow);
                let next = reintegrate(a, &disps, &flow);
                if let (Some(p), Some(e)) = (&self.params, &self.config.embedding) {
                    self.params = Some(mix(p, a, &disps, flow.s, &e.mixing, self.step)?);
                }
                (next, fs.max_displacement, fs.clamped_fraction)
            }
            Mode::Lenia => (lenia_update(a, &affinity, flow.dt), 0.0, 0.0),
        };
        let report = StepReport {
            step: self.step + 1,
            pre_mass: self.total_mass(),
            post_mass: total_mass(&next).iter().map(|v| v.as_f64()).collect(),
            max_displacement,
            clamped_fraction,
        };
        self.state = match &self.ecology {
            Some(eco) if eco.rho_decay > 0.0 || eco.rho_digest > 0.0 => {
                let (next, eco) = food_decay_update(&next, eco)?;
                self.ecology = Some(eco);
                next
            }
            _ => next,
        };
        self.step += 1;
        if let (Some(p), Some(e)) = (&mut self.params, &self.config.embedding) {
            if e.mutation_every > 0 && self.step.is_multiple_of(e.mutation_every) {
                mutate_zone(p, &mut self.rng, e.mutation_radius, e.mutation_sigma)?;
            }
        }
        Ok(report)
    }

    /// Runs `steps` steps, handing each report to `observe`.
    pub fn run(&mut self, steps: u64, mut observe: impl FnMut(&Self, &StepReport) -> Result<()>) -> Result<()> {
        for _ in 0..steps {
            let report = self.step()?;
            observe(self, &report)?;
        }
        Ok(())
    }

    /// Current value of a named scalar (see [`World::set_scalar`]).
    pub fn scalar(&self, key: &str) -> Result<f64> {
        let f = &self.config.flow;
        let eco = self.config.ecology.clone().unwrap_or_default();
        Ok(match parse_key(key)? {
            Key::S => f.s,
            Key::Dt => f.dt,
            Key::ThetaA => f.theta_a,
            Key::N => f.n,
            Key::DMax => f.d_max,
            Key::H(k) => self.pair(key, k)?.h,
            Key::Mu(k) => self.pair(key, k)?.growth.mu,
            Key::Sigma(k) => self.pair(key, k)?.growth.sigma,
            Key::RhoDecay => eco.rho_decay,
            Key::RhoDigest => eco.rho_digest,
            Key::WallStrength => eco.wall_strength,
        })
    }

    fn pair(&self, key: &str, k: usize) -> Result<&crate::rules::KernelPair> {
        self.rules
            .pairs
            .get(k)
            .ok_or_else(|| Error::Config(format!("{key}: the rule set has {} kernels", self.rules.pairs.len())))
    }

    /// Sets a named scalar: `s`, `dt`, `theta_a`, `n`, `d_max`, `h.K`, `mu.K`,
    /// `sigma.K` (kernel `K`), `rho_decay`, `rho_digest` or `wall_strength`.
    /// Values outside the sanctioned range are rejected and leave the world unchanged.
    pub fn set_scalar(&mut self, key: &str, value: f64) -> Result<()> {
        let parsed = parse_key(key)?;
        let (lo, hi) = parsed.range();
        check_range(key, value, lo, hi)?;
        match parsed {
            Key::S | Key::Dt | Key::ThetaA | Key::N | Key::DMax => {
                let mut flow = self.config.flow;
                match parsed {
                    Key::S => flow.s = value,
                    Key::Dt => flow.dt = value,
                    Key::ThetaA => flow.theta_a = value,
                    Key::N => flow.n = value,
                    _ => flow.d_max = value,
                }
                flow.validate()?;
                self.config.flow = flow;
                self.stepper.params = flow;
            }
            Key::H(k) | Key::Mu(k) | Key::Sigma(k) => {
                self.pair(key, k)?;
                let pair = &mut self.rules.pairs[k];
                match parsed {
                    Key::H(_) => pair.h = value,
                    Key::Mu(_) => pair.growth.mu = value,
                    _ => pair.growth.sigma = value,
                }
                self.stepper.cache.refresh_scalars(&self.rules);
                self.config.rules = RuleSource::Explicit(self.rules.clone());
            }
            Key::RhoDecay | Key::RhoDigest | Key::WallStrength => {
                self.ensure_ecology()?;
                let cfg = self.config.ecology.as_mut().expect("just ensured");
                let eco = self.ecology.as_mut().expect("just ensured");
                match parsed {
                    Key::RhoDecay => {
                        cfg.rho_decay = value;
                        eco.rho_decay = value;
                    }
                    Key::RhoDigest => {
                        cfg.rho_digest = value;
                        eco.rho_digest = value;
                    }
                    _ => cfg.wall_strength = value,
                }
                self.refresh_wall_flow();
            }
        }
        Ok(())
    }

    fn ensure_ecology(&mut self) -> Result<()> {
        if self.ecology.is_none() {
            if self.config.static_channels() > 0 {
                return Err(Error::Config("sensed layers require an ecology section".into()));
            }
            self.config.ecology = Some(EcologyConfig::default());
            self.ecology = Some(EcologyState::empty(self.config.width, self.config.height)?);
        }
        Ok(())
    }

    /// Sets every cell of `rect` in the target layer to `value`.
    pub fn paint(&mut self, target: BrushTarget, rect: Rect, value: f64) -> Result<()> {
        let (w, h) = self.state.dims();
        let cells = rect.cells(w, h);
        let v = T::of(value);
        match target {
            BrushTarget::Matter { channel } => {
                if channel >= self.state.channel_count() {
                    return Err(Error::Config(format!("no matter channel {channel}")));
                }
                check_range("value", value, 0.0, 1e6)?;
                let field = self.state.channel_mut(channel).values_mut();
                cells.iter().for_each(|&i| field[i] = v);
            }
            BrushTarget::Erase => {
                for c in 0..self.state.channel_count() {
                    let field = self.state.channel_mut(c).values_mut();
                    cells.iter().for_each(|&i| field[i] = T::zero());
                }
            }
            BrushTarget::Food => {
                check_range("value", value, 0.0, 1e6)?;
                self.ensure_ecology()?;
                let food = self.ecology.as_mut().expect("just ensured").food.values_mut();
                cells.iter().for_each(|&i| food[i] = v);
            }
            BrushTarget::Walls => {
                check_range("value", value, 0.0, 1.0)?;
                self.ensure_ecology()?;
                let walls = self.ecology.as_mut().expect("just ensured").walls.values_mut();
                cells.iter().for_each(|&i| walls[i] = v);
                self.refresh_wall_flow();
            }
        }
        Ok(())
    }

    /// Fills `rect` with uniform random matter in every channel and sets its
    /// parameter vectors to `vector`. Requires parameter embedding.
    pub fn inject_species(&mut self, rect: Rect, vector: &[f64]) -> Result<()> {
        let Some(params) = &mut self.params else {
            return Err(Error::Config("species injection needs parameter embedding".into()));
        };
        if vector.len() != params.dim() {
            return Err(Error::Config(format!("species vector needs {} entries", params.dim())));
        }
        for (k, &v) in vector.iter().enumerate() {
            check_range(&format!("vector[{k}]"), v, 0.0, 1.0)?;
        }
        let (w, h) = self.state.dims();
        for i in rect.cells(w, h) {
            for c in 0..self.state.channel_count() {
                self.state.channel_mut(c).values_mut()[i] = T::of(self.rng.gen::<f64>());
            }
            for (slot, &v) in params.cell_mut(i).iter_mut().zip(vector) {
                *slot = T::of(v);
            }
        }
        Ok(())
    }

    /// One zone mutation with the configured radius and noise.
    pub fn mutate(&mut self) -> Result<()> {
        let (Some(p), Some(e)) = (&mut self.params, &self.config.embedding) else {
            return Err(Error::Config("mutation needs parameter embedding".into()));
        };
        mutate_zone(p, &mut self.rng, e.mutation_radius, e.mutation_sigma)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Key {
    S,
    Dt,
    ThetaA,
    N,
    DMax,
    H(usize),
    Mu(usize),
    Sigma(usize),
    RhoDecay,
    RhoDigest,
    WallStrength,
}

impl Key {
    fn range(self) -> (f64, f64) {
        match self {
            Key::S => (1e-3, 4.0),
            Key::Dt => (1e-6, 1.0),
            Key::ThetaA => (1e-6, 1e6),
            Key::N => (1.0, 16.0),
            Key::DMax => (0.0, 32.0),
            Key::H(_) => (0.0, 1.0),
            Key::Mu(_) => (0.0, 1.0),
            Key::Sigma(_) => (1e-4, 1.0),
            Key::RhoDecay | Key::RhoDigest => (0.0, 1.0),
            Key::WallStrength => (0.0, 1e3),
        }
    }
}

fn parse_key(key: &str) -> Result<Key> {
    let indexed = |prefix: &str| -> Option<usize> { key.strip_prefix(prefix)?.parse().ok() };
    Ok(match key {
        "s" => Key::S,
        "dt" => Key::Dt,
        "theta_a" => Key::ThetaA,
        "n" => Key::N,
        "d_max" => Key::DMax,
        "rho_decay" => Key::RhoDecay,
        "rho_digest" => Key::RhoDigest,
        "wall_strength" => Key::WallStrength,
        _ => {
            if let Some(k) = indexed("h.") {
                Key::H(k)
            } else if let Some(k) = indexed("mu.") {
                Key::Mu(k)
            } else if let Some(k) = indexed("sigma.") {
                Key::Sigma(k)
            } else {
                return Err(Error::Config(format!("unknown parameter `{key}`")));
            }
        }
    })
}
