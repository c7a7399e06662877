//! Environmental layers: food that decays into matter, repelling walls, and
//! static chemical gradients.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{sobel_gradient, Field, MultiField, VectorField};
use crate::rules::KernelCache;
use crate::scalar::Scalar;

/// Default repulsion strength of walls.
pub const DEFAULT_WALL_STRENGTH: f64 = 10.0;
/// Radius (cells) of the Gaussian blur applied to walls before taking their gradient.
pub const WALL_BLUR_RADIUS: usize = 2;

/// Food, walls, chemicals and the food/decay rates.
#[derive(Debug, Clone, PartialEq)]
pub struct EcologyState<T> {
    /// Ψ ≥ 0, consumed by matter.
    pub food: Field<T>,
    /// W in `[0, 1]`, static during a rollout.
    pub walls: Field<T>,
    /// Γ ≥ 0, static during a rollout.
    pub chem: Field<T>,
    pub rho_decay: f64,
    pub rho_digest: f64,
}

impl<T: Scalar> EcologyState<T> {
    pub fn empty(width: usize, height: usize) -> Result<Self> {
        let zero = Field::zeros(width, height)?;
        Ok(Self {
            food: zero.clone(),
            walls: zero.clone(),
            chem: zero,
            rho_decay: 0.0,
            rho_digest: 0.0,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.rho_decay) || !(0.0..=1.0).contains(&self.rho_digest) {
            return Err(Error::Config(format!(
                "food rates must lie in [0, 1], got decay {} and digest {}",
                self.rho_decay, self.rho_digest
            )));
        }
        Ok(())
    }
}

/// Digestion then decay, applied after the transport step:
///
/// `d = clip(A_Σ·ρ_digest, 0, Ψ)`, credited to channels in proportion to their
/// local mass and removed from Ψ; then every channel loses the fraction `ρ_decay`.
pub fn food_decay_update<T: Scalar>(a: &MultiField<T>, eco: &EcologyState<T>) -> Result<(MultiField<T>, EcologyState<T>)> {
    eco.validate()?;
    if eco.food.dims() != a.dims() {
        return Err(Error::Dimension("food map and state differ in size".into()));
    }
    let mut a = a.clone();
    let mut eco = eco.clone();
    let digest = T::of(eco.rho_digest);
    let keep = T::one() - T::of(eco.rho_decay);
    let c = a.channel_count();
    for i in 0..eco.food.len() {
        let sum = (0..c).fold(T::zero(), |s, ch| s + a.channel(ch).values()[i]);
        let food = eco.food.values()[i];
        let d = (sum * digest).max(T::zero()).min(food);
        if d > T::zero() && sum > T::zero() {
            for ch in 0..c {
                let v = &mut a.channel_mut(ch).values_mut()[i];
                *v = *v + d * (*v / sum);
            }
            eco.food.values_mut()[i] = food - d;
        }
        if eco.rho_decay > 0.0 {
            for ch in 0..c {
                let v = &mut a.channel_mut(ch).values_mut()[i];
                *v = *v * keep;
            }
        }
    }
    Ok((a, eco))
}

fn blur<T: Scalar>(field: &Field<T>) -> Field<T> {
    let r = WALL_BLUR_RADIUS as isize;
    let mut taps = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            let d2 = (dx * dx + dy * dy) as f64;
            if d2 <= (r * r) as f64 {
                taps.push((dx, dy, (-d2 / 2.0).exp()));
            }
        }
    }
    let norm: f64 = taps.iter().map(|t| t.2).sum();
    let taps: Vec<(isize, isize, T)> = taps.into_iter().map(|(x, y, w)| (x, y, T::of(w / norm))).collect();
    Field::from_fn(field.width(), field.height(), |x, y| {
        taps.iter().fold(T::zero(), |acc, &(dx, dy, w)| {
            acc + w * field.get_wrapped(x as isize + dx, y as isize + dy)
        })
    })
    .expect("same dims as the input")
}

/// `−strength · ∇(blur(W))`: points from wall centres outwards.
pub fn wall_flow<T: Scalar>(walls: &Field<T>, strength: f64) -> VectorField<T> {
    sobel_gradient(&blur(walls)).scaled(T::of(-strength))
}

/// Nearest-image distance between two positions on a ring of length `n`.
pub fn torus_delta(a: f64, b: f64, n: f64) -> f64 {
    let d = (a - b).rem_euclid(n);
    d.min(n - d)
}

/// `Γ(x) = exp(−dist_torus(x, centre)² / 2σ²)`, peaking at 1.
pub fn make_chem_field<T: Scalar>(width: usize, height: usize, center: (f64, f64), sigma: f64) -> Result<Field<T>> {
    if !(sigma > 0.0) {
        return Err(Error::Config(format!("chemical sigma must be positive, got {sigma}")));
    }
    Field::from_fn(width, height, |x, y| {
        let dx = torus_delta(x as f64, center.0, width as f64);
        let dy = torus_delta(y as f64, center.1, height as f64);
        T::of((-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp())
    })
}

/// Affinity including pairs sourced from read-only layers (walls, chemicals, food).
pub fn sense_channels<T: Scalar>(a: &MultiField<T>, extra: &[Field<T>], cache: &KernelCache<T>) -> Result<MultiField<T>> {
    cache.affinity_map(a, extra)
}

/// Geometry of the obstacle "forest".
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WallForest {
    pub count: usize,
    /// Disc radius in cells.
    pub radius: f64,
    /// Radius of the circle, around the start position, on which disc centres are drawn.
    pub ring: f64,
}

impl Default for WallForest {
    fn default() -> Self {
        Self {
            count: 8,
            radius: 5.0,
            ring: 40.0,
        }
    }
}

/// A disc with value 1 inside radius `r` (toroidal distance ≤ r).
pub fn paint_disc<T: Scalar>(field: &mut Field<T>, center: (f64, f64), r: f64) {
    let (w, h) = field.dims();
    for y in 0..h {
        for x in 0..w {
            let dx = torus_delta(x as f64, center.0, w as f64);
            let dy = torus_delta(y as f64, center.1, h as f64);
            if dx * dx + dy * dy <= r * r {
                field.set(x, y, T::one());
            }
        }
    }
}

/// Wall discs at uniformly random angles on a circle around `center`.
pub fn sample_wall_forest<T: Scalar, R: Rng + ?Sized>(
    rng: &mut R,
    width: usize,
    height: usize,
    center: (f64, f64),
    forest: &WallForest,
) -> Result<Field<T>> {
    let mut walls = Field::zeros(width, height)?;
    for _ in 0..forest.count {
        let angle = rng.gen_range(0.0..std::f64::consts::TAU);
        let c = (center.0 + forest.ring * angle.cos(), center.1 + forest.ring * angle.sin());
        paint_disc(&mut walls, c, forest.radius);
    }
    Ok(walls)
}

/// Geometry of the chemotaxis gradient.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChemGeometry {
    /// Radius of the circle around the grid centre on which the peak is drawn.
    pub ring: f64,
    pub sigma: f64,
}

impl Default for ChemGeometry {
    fn default() -> Self {
        Self { ring: 60.0, sigma: 30.0 }
    }
}

/// Γ centred at a uniformly random point on a circle around `center`.
pub fn sample_chem_field<T: Scalar, R: Rng + ?Sized>(
    rng: &mut R,
    width: usize,
    height: usize,
    center: (f64, f64),
    geometry: &ChemGeometry,
) -> Result<(Field<T>, (f64, f64))> {
    let angle = rng.gen_range(0.0..std::f64::consts::TAU);
    let peak = (
        (center.0 + geometry.ring * angle.cos()).rem_euclid(width as f64),
        (center.1 + geometry.ring * angle.sin()).rem_euclid(height as f64),
    );
    Ok((make_chem_field(width, height, peak, geometry.sigma)?, peak))
}
