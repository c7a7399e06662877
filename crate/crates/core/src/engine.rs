//! The classic Lenia stepper and the mass-conservative flow stepper.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{channel_sum, sobel_gradient, total_mass, Field, MultiField, VectorField};
use crate::rules::{FlowParams, KernelCache, RuleSet};
use crate::scalar::Scalar;
use crate::transport::{scatter_channel, Displacement};

/// Everything derived from the pre-step state that drives transport.
#[derive(Debug, Clone)]
pub struct FlowState<T> {
    /// Affinity per channel.
    pub affinity: MultiField<T>,
    pub alpha: Field<T>,
    /// Flow per channel, after clamping `dt·F` to `±d_max`.
    pub flow: Vec<VectorField<T>>,
    pub max_displacement: f64,
    pub clamped_fraction: f64,
}

impl<T: Scalar> FlowState<T> {
    /// Clamped per-channel displacements `dt·F`.
    pub fn displacements(&self, params: &FlowParams) -> Vec<Displacement<T>> {
        displacements(&self.flow, params)
    }
}

/// Conservation and clamp telemetry for one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub step: u64,
    pub pre_mass: Vec<f64>,
    pub post_mass: Vec<f64>,
    /// Largest per-axis displacement magnitude, in cells.
    pub max_displacement: f64,
    /// Fraction of (cell, channel) displacements that hit the clamp.
    pub clamped_fraction: f64,
}

impl StepReport {
    /// Largest per-channel `|post − pre| / max(pre, ε)`.
    pub fn max_relative_drift(&self) -> f64 {
        self.pre_mass
            .iter()
            .zip(&self.post_mass)
            .map(|(&a, &b)| (b - a).abs() / a.abs().max(f64::MIN_POSITIVE))
            .fold(0.0, f64::max)
    }
}

/// `α(p) = clip((A_Σ(p) / θ_A)^n, 0, 1)`.
pub fn alpha_map<T: Scalar>(a_sum: &Field<T>, theta_a: f64, n: f64) -> Result<Field<T>> {
    if !(theta_a > 0.0) {
        return Err(Error::Config(format!("theta_a must be positive, got {theta_a}")));
    }
    let inv = T::of(1.0 / theta_a);
    let n = T::of(n);
    Ok(a_sum.map(|v| (v.max(T::zero()) * inv).powf(n).min(T::one())))
}

/// `F_i = (1 − α)∇U_i − α∇A_Σ (+ extra)`, with `dt·F_i` clamped per axis to `±d_max`.
///
/// Returns the clamped flows, the largest displacement magnitude and the clamped fraction.
pub fn flow_field<T: Scalar>(
    affinity: &MultiField<T>,
    alpha: &Field<T>,
    a: &MultiField<T>,
    params: &FlowParams,
    extra: Option<&VectorField<T>>,
) -> Result<(Vec<VectorField<T>>, f64, f64)> {
    if affinity.dims() != a.dims() || alpha.dims() != a.dims() || affinity.channel_count() != a.channel_count() {
        return Err(Error::Dimension("affinity, alpha and state must share dimensions".into()));
    }
    let diffusion = sobel_gradient(&channel_sum(a));
    let dt = T::of(params.dt);
    let d_max = T::of(params.d_max);
    let inv_dt = T::one() / dt;
    let mut max_disp = T::zero();
    let mut clamped = 0usize;
    let mut flows = Vec::with_capacity(a.channel_count());
    for u in affinity.channels() {
        let grad = sobel_gradient(u);
        let mut f = VectorField::zeros(a.width(), a.height());
        for i in 0..alpha.len() {
            let al = alpha.values()[i];
            let mut fx = (T::one() - al) * grad.x[i] - al * diffusion.x[i];
            let mut fy = (T::one() - al) * grad.y[i] - al * diffusion.y[i];
            if let Some(e) = extra {
                fx = fx + e.x[i];
                fy = fy + e.y[i];
            }
            let (dx, dy) = (fx * dt, fy * dt);
            let (cx, cy) = (dx.max(-d_max).min(d_max), dy.max(-d_max).min(d_max));
            if cx != dx || cy != dy {
                clamped += 1;
                fx = cx * inv_dt;
                fy = cy * inv_dt;
            }
            max_disp = max_disp.max(cx.abs()).max(cy.abs());
            f.x[i] = fx;
            f.y[i] = fy;
        }
        flows.push(f);
    }
    let entries = (alpha.len() * a.channel_count()) as f64;
    Ok((flows, max_disp.as_f64(), clamped as f64 / entries))
}

pub(crate) fn displacements<T: Scalar>(flows: &[VectorField<T>], params: &FlowParams) -> Vec<Displacement<T>> {
    let dt = T::of(params.dt);
    let d_max = T::of(params.d_max);
    let clamp = |v: T| (v * dt).max(-d_max).min(d_max);
    flows
        .iter()
        .map(|f| Displacement {
            x: f.x.iter().map(|&v| clamp(v)).collect(),
            y: f.y.iter().map(|&v| clamp(v)).collect(),
        })
        .collect()
}

/// Moves every channel's mass along its flow. Per-channel total mass is preserved.
pub fn reintegration_step<T: Scalar>(a: &MultiField<T>, flows: &[VectorField<T>], params: &FlowParams) -> Result<MultiField<T>> {
    if flows.len() != a.channel_count() || flows.iter().any(|f| f.dims() != a.dims()) {
        return Err(Error::Dimension("one flow field per channel is required".into()));
    }
    Ok(reintegrate(a, &displacements(flows, params), params))
}

pub(crate) fn reintegrate<T: Scalar>(a: &MultiField<T>, disps: &[Displacement<T>], params: &FlowParams) -> MultiField<T> {
    let (w, h) = a.dims();
    let halo = params.scatter_radius();
    let s = T::of(params.s);
    let channels = a
        .channels()
        .iter()
        .zip(disps)
        .map(|(c, d)| {
            Field::from_vec(w, h, scatter_channel(c.values(), d, w, h, s, halo)).expect("same dims as the input")
        })
        .collect();
    MultiField::new(channels).expect("same channel layout as the input")
}

/// Computes affinity, alpha and clamped flows from the pre-step state.
pub fn flow_state<T: Scalar>(
    a: &MultiField<T>,
    affinity: MultiField<T>,
    params: &FlowParams,
    extra: Option<&VectorField<T>>,
) -> Result<FlowState<T>> {
    let alpha = alpha_map(&channel_sum(a), params.theta_a, params.n)?;
    let (flow, max_displacement, clamped_fraction) = flow_field(&affinity, &alpha, a, params, extra)?;
    Ok(FlowState {
        affinity,
        alpha,
        flow,
        max_displacement,
        clamped_fraction,
    })
}

/// One mass-conservative step: affinity → alpha → flow → reintegration.
pub fn flow_lenia_step<T: Scalar>(
    a: &MultiField<T>,
    statics: &[Field<T>],
    cache: &KernelCache<T>,
    params: &FlowParams,
) -> Result<(MultiField<T>, StepReport)> {
    let affinity = cache.affinity_map(a, statics)?;
    let state = flow_state(a, affinity, params, None)?;
    let next = reintegrate(a, &state.displacements(params), params);
    let report = StepReport {
        step: 0,
        pre_mass: total_mass(a).iter().map(|v| v.as_f64()).collect(),
        post_mass: total_mass(&next).iter().map(|v| v.as_f64()).collect(),
        max_displacement: state.max_displacement,
        clamped_fraction: state.clamped_fraction,
    };
    Ok((next, report))
}

/// Which update rule drives a world.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Lenia,
    #[default]
    Flow,
}

/// Kernel spectra, mode and hyperparameters for repeated stepping on one grid.
#[derive(Debug)]
pub struct Stepper<T: Scalar> {
    pub cache: KernelCache<T>,
    pub mode: Mode,
    pub params: FlowParams,
    /// Added to every channel's flow before clamping (walls).
    pub extra_flow: Option<VectorField<T>>,
}

impl<T: Scalar> Stepper<T> {
    pub fn new(rules: &RuleSet, width: usize, height: usize, mode: Mode, params: FlowParams) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            cache: KernelCache::new(rules, width, height)?,
            mode,
            params,
            extra_flow: None,
        })
    }

    pub fn with_extra_flow(mut self, flow: VectorField<T>) -> Self {
        self.extra_flow = Some(flow);
        self
    }

    pub fn step(&self, a: &MultiField<T>, statics: &[Field<T>]) -> Result<(MultiField<T>, StepReport)> {
        let pre_mass = total_mass(a).iter().map(|v| v.as_f64()).collect();
        let (next, max_displacement, clamped_fraction) = match self.mode {
            Mode::Lenia => (lenia_step(a, statics, &self.cache, self.params.dt)?, 0.0, 0.0),
            Mode::Flow => {
                let affinity = self.cache.affinity_map(a, statics)?;
                let state = flow_state(a, affinity, &self.params, self.extra_flow.as_ref())?;
                let next = reintegrate(a, &state.displacements(&self.params), &self.params);
                (next, state.max_displacement, state.clamped_fraction)
            }
        };
        let report = StepReport {
            step: 0,
            pre_mass,
            post_mass: total_mass(&next).iter().map(|v| v.as_f64()).collect(),
            max_displacement,
            clamped_fraction,
        };
        Ok((next, report))
    }
}

/// Classic Lenia: `A' = clip(A + dt·U, 0, 1)`.
pub fn lenia_step<T: Scalar>(a: &MultiField<T>, statics: &[Field<T>], cache: &KernelCache<T>, dt: f64) -> Result<MultiField<T>> {
    let u = cache.affinity_map(a, statics)?;
    Ok(lenia_update(a, &u, dt))
}

pub(crate) fn lenia_update<T: Scalar>(a: &MultiField<T>, u: &MultiField<T>, dt: f64) -> MultiField<T> {
    let dt = T::of(dt);
    let channels = a
        .channels()
        .iter()
        .zip(u.channels())
        .map(|(c, g)| {
            let mut out = c.clone();
            for (o, &d) in out.values_mut().iter_mut().zip(g.values()) {
                *o = (*o + dt * d).max(T::zero()).min(T::one());
            }
            out
        })
        .collect();
    MultiField::new(channels).expect("same layout")
}
