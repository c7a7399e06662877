//! The update-rule genome: ring kernels, growth functions, channel wiring and
//! the affinity map they produce.

use rustfft::num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{check_range, Error, Result};
use crate::fft::{Convolver, Spectrum};
use crate::field::{Field, MultiField};
use crate::scalar::{compensated_sum, Scalar};

/// Number of concentric rings per kernel.
pub const RINGS: usize = 3;

/// Rasters whose unnormalized sum falls below this are rejected.
pub const DEGENERATE_KERNEL_SUM: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    /// Radius relative to the rule set's neighbourhood radius.
    pub r: f64,
    /// Ring centres, as a fraction of the kernel radius.
    pub a: [f64; RINGS],
    /// Ring heights.
    pub b: [f64; RINGS],
    /// Ring widths.
    pub w: [f64; RINGS],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrowthSpec {
    pub mu: f64,
    pub sigma: f64,
}

impl GrowthSpec {
    /// `2·exp(−(μ − x)² / 2σ²) − 1`, in `[−1, 1]`.
    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        growth(self, x)
    }
}

pub fn growth(g: &GrowthSpec, x: f64) -> f64 {
    let d = g.mu - x;
    2.0 * (-(d * d) / (2.0 * g.sigma * g.sigma)).exp() - 1.0
}

/// One kernel/growth pair with its channel wiring and weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelPair {
    pub source: usize,
    pub target: usize,
    pub kernel: KernelSpec,
    pub growth: GrowthSpec,
    pub h: f64,
}

/// Transport hyperparameters of the mass-conservative stepper (and `dt` for both steppers).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowParams {
    /// Half-side of the reintegration square ("temperature").
    pub s: f64,
    /// Exponent of the alpha map.
    pub n: f64,
    /// Critical mass at which diffusion takes over.
    pub theta_a: f64,
    pub dt: f64,
    /// Per-axis cap on the displacement `dt·F`, in cells.
    pub d_max: f64,
}

impl Default for FlowParams {
    fn default() -> Self {
        Self {
            s: 0.65,
            n: 2.0,
            theta_a: 1.0,
            dt: 0.2,
            d_max: 5.0,
        }
    }
}

impl FlowParams {
    pub const S_RANGE: (f64, f64) = (1e-3, 4.0);
    pub const N_RANGE: (f64, f64) = (1.0, 16.0);
    pub const THETA_RANGE: (f64, f64) = (1e-6, 1e6);
    pub const DT_RANGE: (f64, f64) = (1e-6, 1.0);
    pub const D_MAX_RANGE: (f64, f64) = (0.0, 32.0);

    pub fn validate(&self) -> Result<()> {
        check_range("s", self.s, Self::S_RANGE.0, Self::S_RANGE.1)?;
        check_range("n", self.n, Self::N_RANGE.0, Self::N_RANGE.1)?;
        check_range("theta_a", self.theta_a, Self::THETA_RANGE.0, Self::THETA_RANGE.1)?;
        check_range("dt", self.dt, Self::DT_RANGE.0, Self::DT_RANGE.1)?;
        check_range("d_max", self.d_max, Self::D_MAX_RANGE.0, Self::D_MAX_RANGE.1)
    }

    /// Chebyshev radius outside which reintegration weights vanish.
    pub fn scatter_radius(&self) -> usize {
        (self.d_max + self.s).ceil() as usize + 1
    }
}

/// Kernels, growth functions and wiring of one update rule.
///
/// Channels `0..channels` hold matter; channels `channels..channels + static_channels`
/// are read-only layers (walls, chemicals, food) that may be sensed but never written.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleSet {
    /// Maximum neighbourhood radius in cells.
    pub radius: u32,
    pub channels: usize,
    #[serde(default)]
    pub static_channels: usize,
    /// `adjacency[i][j]` kernels sense channel `i` and update channel `j`.
    pub adjacency: Vec<Vec<u32>>,
    pub pairs: Vec<KernelPair>,
}

/// Expands an adjacency matrix into the canonical `(source, target)` pair order:
/// row-major over `(source, target)`, then pair index.
pub fn expand_adjacency(adjacency: &[Vec<u32>]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for (i, row) in adjacency.iter().enumerate() {
        for (j, &m) in row.iter().enumerate() {
            out.extend(std::iter::repeat((i, j)).take(m as usize));
        }
    }
    out
}

impl RuleSet {
    pub fn total_channels(&self) -> usize {
        self.channels + self.static_channels
    }

    pub fn h(&self) -> Vec<f64> {
        self.pairs.iter().map(|p| p.h).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 {
            return Err(Error::Config("at least one matter channel is required".into()));
        }
        if !(1..=64).contains(&self.radius) {
            return Err(Error::Config(format!("neighbourhood radius {} out of range", self.radius)));
        }
        let n = self.total_channels();
        if self.adjacency.len() != n || self.adjacency.iter().any(|r| r.len() != n) {
            return Err(Error::Config(format!("adjacency must be {n}x{n}")));
        }
        for row in &self.adjacency {
            if row[self.channels..].iter().any(|&m| m > 0) {
                return Err(Error::Config("wiring writes into a static channel".into()));
            }
        }
        let expected = expand_adjacency(&self.adjacency);
        if expected.len() != self.pairs.len() {
            return Err(Error::Config(format!(
                "adjacency declares {} kernels but {} pairs are given",
                expected.len(),
                self.pairs.len()
            )));
        }
        for (k, (pair, &(src, tgt))) in self.pairs.iter().zip(&expected).enumerate() {
            if pair.source != src || pair.target != tgt {
                return Err(Error::Config(format!(
                    "pair {k} wired {}→{} but canonical order expects {src}→{tgt}",
                    pair.source, pair.target
                )));
            }
            let kn = &pair.kernel;
            check_range(&format!("pairs[{k}].r"), kn.r, 1e-6, 1.0)?;
            for j in 0..RINGS {
                check_range(&format!("pairs[{k}].a[{j}]"), kn.a[j], 0.0, 1.0)?;
                check_range(&format!("pairs[{k}].b[{j}]"), kn.b[j], 0.0, 1.0)?;
                check_range(&format!("pairs[{k}].w[{j}]"), kn.w[j], 1e-6, 1.0)?;
            }
            check_range(&format!("pairs[{k}].mu"), pair.growth.mu, -1e6, 1e6)?;
            check_range(&format!("pairs[{k}].sigma"), pair.growth.sigma, 1e-9, 1e6)?;
            check_range(&format!("pairs[{k}].h"), pair.h, -1e6, 1e6)?;
        }
        Ok(())
    }
}

/// Rasterizes a ring kernel onto a full `width × height` grid with its centre at
/// the origin, using nearest-image toroidal distances, then normalizes it to sum 1.
pub fn rasterize_kernel<T: Scalar>(spec: &KernelSpec, radius: u32, width: usize, height: usize) -> Result<Field<T>> {
    let extent = spec.r * radius as f64;
    let mut raw = vec![0.0f64; width * height];
    for y in 0..height {
        let dy = y.min(height - y) as f64;
        for x in 0..width {
            let dx = x.min(width - x) as f64;
            let d = (dx * dx + dy * dy).sqrt();
            if d <= extent {
                let rho = d / extent;
                raw[y * width + x] = (0..RINGS)
                    .map(|j| {
                        let t = rho - spec.a[j];
                        spec.b[j] * (-(t * t) / (2.0 * spec.w[j] * spec.w[j])).exp()
                    })
                    .sum();
            }
        }
    }
    let total = compensated_sum(raw.iter().copied());
    if !(total >= DEGENERATE_KERNEL_SUM) {
        return Err(Error::DegenerateKernel(format!("raster sum {total:e} for {spec:?} at R={radius}")));
    }
    Field::from_vec(width, height, raw.into_iter().map(|v| T::of(v / total)).collect())
}

/// Rasterized kernel spectra for a rule set on one grid size.
#[derive(Debug)]
pub struct KernelCache<T: Scalar> {
    conv: Convolver<T>,
    spectra: Vec<Spectrum<T>>,
    pairs: Vec<KernelPair>,
    channels: usize,
    static_channels: usize,
}

impl<T: Scalar> KernelCache<T> {
    pub fn new(rules: &RuleSet, width: usize, height: usize) -> Result<Self> {
        rules.validate()?;
        let conv = Convolver::new(width, height);
        let spectra = rules
            .pairs
            .iter()
            .map(|p| rasterize_kernel::<T>(&p.kernel, rules.radius, width, height).map(|k| conv.spectrum(&k)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            conv,
            spectra,
            pairs: rules.pairs.clone(),
            channels: rules.channels,
            static_channels: rules.static_channels,
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        self.conv.dims()
    }

    pub fn pair_count(&self) -> usize {
        self.pairs.len()
    }

    /// Replaces growth parameters and weights without re-rasterizing kernels.
    /// Kernel geometry and wiring must be unchanged.
    pub fn refresh_scalars(&mut self, rules: &RuleSet) {
        for (mine, theirs) in self.pairs.iter_mut().zip(&rules.pairs) {
            mine.growth = theirs.growth;
            mine.h = theirs.h;
        }
    }

    fn check_inputs(&self, a: &MultiField<T>, statics: &[Field<T>]) -> Result<()> {
        if a.dims() != self.dims() || statics.iter().any(|s| s.dims() != self.dims()) {
            return Err(Error::Dimension("state does not match the kernel cache grid".into()));
        }
        if a.channel_count() != self.channels || statics.len() != self.static_channels {
            return Err(Error::Dimension(format!(
                "expected {}+{} channels, got {}+{}",
                self.channels,
                self.static_channels,
                a.channel_count(),
                statics.len()
            )));
        }
        Ok(())
    }

    /// `U_j = Σ_k h_k · G_k(K_k ∗ A_{source_k})` over pairs targeting `j`.
    pub fn affinity_map(&self, a: &MultiField<T>, statics: &[Field<T>]) -> Result<MultiField<T>> {
        self.affinity_with(a, statics, |k, _| self.pairs[k].h)
    }

    /// Affinity with a per-pair, per-cell weight `weight(pair, cell)` in place of `h`.
    pub fn affinity_with(
        &self,
        a: &MultiField<T>,
        statics: &[Field<T>],
        weight: impl Fn(usize, usize) -> f64,
    ) -> Result<MultiField<T>> {
        self.check_inputs(a, statics)?;
        let (w, h) = self.dims();
        let n = w * h;
        let source = |i: usize| -> &Field<T> {
            if i < self.channels {
                a.channel(i)
            } else {
                &statics[i - self.channels]
            }
        };
        let mut source_spectra: Vec<Option<Spectrum<T>>> = vec![None; self.channels + self.static_channels];
        for p in &self.pairs {
            if source_spectra[p.source].is_none() {
                source_spectra[p.source] = Some(self.conv.spectrum(source(p.source)));
            }
        }
        let mut u = vec![vec![T::zero(); n]; self.channels];
        let mut work: Vec<Complex<T>> = Vec::new();
        let mut potential = vec![T::zero(); n];
        for (k, p) in self.pairs.iter().enumerate() {
            let src = source_spectra[p.source].as_ref().expect("computed above");
            self.conv.product_inverse_into(src, &self.spectra[k], &mut work, &mut potential);
            let mu = T::of(p.growth.mu);
            let inv = T::of(-1.0 / (2.0 * p.growth.sigma * p.growth.sigma));
            let two = T::of(2.0);
            let target = &mut u[p.target];
            for (cell, (out, &x)) in target.iter_mut().zip(&potential).enumerate() {
                let wgt = weight(k, cell);
                if wgt != 0.0 {
                    let d = mu - x;
                    let g = two * (d * d * inv).exp() - T::one();
                    *out = *out + T::of(wgt) * g;
                }
            }
        }
        MultiField::new(
            u.into_iter()
                .map(|v| Field::from_vec(w, h, v))
                .collect::<Result<Vec<_>>>()?,
        )
    }
}

/// Free-function form of [`KernelCache::affinity_map`].
pub fn affinity_map<T: Scalar>(a: &MultiField<T>, statics: &[Field<T>], cache: &KernelCache<T>) -> Result<MultiField<T>> {
    cache.affinity_map(a, statics)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn ring(r: f64, a: f64, w: f64) -> KernelSpec {
        KernelSpec {
            r,
            a: [a, 0.0, 0.0],
            b: [1.0, 0.0, 0.0],
            w: [w, 0.1, 0.1],
        }
    }

    pub(crate) fn single_pair_rules(mu: f64, sigma: f64, h: f64) -> RuleSet {
        RuleSet {
            radius: 5,
            channels: 1,
            static_channels: 0,
            adjacency: vec![vec![1]],
            pairs: vec![KernelPair {
                source: 0,
                target: 0,
                kernel: ring(1.0, 0.5, 0.15),
                growth: GrowthSpec { mu, sigma },
                h,
            }],
        }
    }

    #[test]
    fn growth_examples() {
        let g = GrowthSpec { mu: 0.3, sigma: 0.05 };
        assert_eq!(growth(&g, 0.3), 1.0);
        let off = g.sigma * (2.0 * 2f64.ln()).sqrt();
        assert!(growth(&g, 0.3 + off).abs() < 1e-12);
        assert!(growth(&g, 0.3 - off).abs() < 1e-12);
        assert!(growth(&g, 0.3 + 10.0 * g.sigma) < -0.99);
    }

    #[test]
    fn centered_gaussian_peaks_at_origin_and_sums_to_one() {
        let spec = KernelSpec {
            r: 1.0,
            a: [0.0, 0.3, 0.6],
            b: [1.0, 0.0, 0.0],
            w: [0.3, 0.1, 0.1],
        };
        let k = rasterize_kernel::<f64>(&spec, 8, 32, 32).unwrap();
        let max = k.values().iter().cloned().fold(f64::MIN, f64::max);
        assert_eq!(k.get(0, 0), max);
        assert!((k.sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ring_kernel_maximum_sits_at_half_radius() {
        let k = rasterize_kernel::<f64>(&ring(1.0, 0.5, 0.1), 10, 40, 40).unwrap();
        // radial profile oracle: mean value per integer radius bin
        let mut bins = vec![(0.0, 0usize); 12];
        for y in 0..40usize {
            for x in 0..40usize {
                let dx = x.min(40 - x) as f64;
                let dy = y.min(40 - y) as f64;
                let d = (dx * dx + dy * dy).sqrt().round() as usize;
                if d < bins.len() {
                    bins[d].0 += k.get(x, y);
                    bins[d].1 += 1;
                }
            }
        }
        let argmax = (0..bins.len())
            .max_by(|&i, &j| (bins[i].0 / bins[i].1 as f64).total_cmp(&(bins[j].0 / bins[j].1 as f64)))
            .unwrap();
        assert_eq!(argmax, 5);
    }

    #[test]
    fn kernel_support_is_truncated_and_radial() {
        let k = rasterize_kernel::<f64>(&ring(0.5, 0.5, 0.3), 10, 32, 32).unwrap();
        assert_eq!(k.get(6, 0), 0.0);
        assert!(k.get(5, 0) > 0.0);
        assert_eq!(k.get(3, 4), k.get(4, 3));
        assert_eq!(k.get(3, 4), k.get(32 - 3, 32 - 4));
        assert!(k.values().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn degenerate_kernel_is_rejected() {
        let zero_b = KernelSpec {
            r: 1.0,
            a: [0.5; 3],
            b: [0.0; 3],
            w: [0.1; 3],
        };
        assert!(matches!(
            rasterize_kernel::<f64>(&zero_b, 10, 32, 32),
            Err(Error::DegenerateKernel(_))
        ));
        // a ring so thin it falls between every lattice distance
        let thin = ring(0.2, 0.25, 0.01);
        assert!(rasterize_kernel::<f64>(&thin, 10, 32, 32).is_err());
    }

    #[test]
    fn affinity_of_empty_world_matches_closed_form() {
        let rules = single_pair_rules(0.3, 0.1, 0.7);
        let cache = KernelCache::<f64>::new(&rules, 16, 16).unwrap();
        let a = MultiField::zeros(16, 16, 1).unwrap();
        let u = cache.affinity_map(&a, &[]).unwrap();
        let expected = 0.7 * (2.0 * (-0.09f64 / (2.0 * 0.01)).exp() - 1.0);
        for &v in u.channel(0).values() {
            assert!((v - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_weights_and_untargeted_channels_give_zero() {
        let mut rules = single_pair_rules(0.3, 0.1, 0.0);
        let cache = KernelCache::<f64>::new(&rules, 8, 8).unwrap();
        let a = MultiField::new(vec![Field::filled(8, 8, 0.4).unwrap()]).unwrap();
        assert!(cache.affinity_map(&a, &[]).unwrap().channel(0).values().iter().all(|&v| v == 0.0));

        rules.channels = 2;
        rules.adjacency = vec![vec![2, 0], vec![0, 0]];
        let p = rules.pairs[0].clone();
        rules.pairs = vec![KernelPair { h: 1.0, ..p.clone() }, KernelPair { h: 0.5, ..p }];
        let cache = KernelCache::<f64>::new(&rules, 8, 8).unwrap();
        let a = MultiField::zeros(8, 8, 2).unwrap();
        let u = cache.affinity_map(&a, &[]).unwrap();
        assert!(u.channel(1).values().iter().all(|&v| v == 0.0));
        assert!(u.channel(0).values().iter().all(|&v| v != 0.0));
    }

    #[test]
    fn invalid_wiring_is_a_configuration_error() {
        let mut rules = single_pair_rules(0.3, 0.1, 1.0);
        rules.pairs[0].source = 1;
        assert!(matches!(rules.validate(), Err(Error::Config(_))));

        let mut into_static = single_pair_rules(0.3, 0.1, 1.0);
        into_static.static_channels = 1;
        into_static.adjacency = vec![vec![0, 1], vec![0, 0]];
        into_static.pairs[0].target = 1;
        assert!(matches!(into_static.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn affinity_is_translation_equivariant() {
        let mut rules = single_pair_rules(0.2, 0.05, 1.0);
        rules.radius = 4;
        let cache = KernelCache::<f64>::new(&rules, 20, 18).unwrap();
        let a = Field::from_fn(20, 18, |x, y| ((x * 7 + y * 3) % 11) as f64 / 11.0).unwrap();
        let a = MultiField::new(vec![a]).unwrap();
        let u = cache.affinity_map(&a, &[]).unwrap();
        let ut = cache.affinity_map(&a.translated(3, -5), &[]).unwrap();
        let shifted = u.translated(3, -5);
        for (x, y) in ut.channel(0).values().iter().zip(shifted.channel(0).values()) {
            assert!((x - y).abs() < 1e-8);
        }
    }

    #[test]
    fn affinity_is_bounded_by_weight_sum() {
        let mut rules = single_pair_rules(0.2, 0.05, -0.8);
        rules.adjacency = vec![vec![2]];
        let p = rules.pairs[0].clone();
        rules.pairs = vec![p.clone(), KernelPair { h: 0.3, ..p }];
        let cache = KernelCache::<f64>::new(&rules, 16, 16).unwrap();
        let a = Field::from_fn(16, 16, |x, y| ((x ^ y) % 5) as f64 / 4.0).unwrap();
        let u = cache.affinity_map(&MultiField::new(vec![a]).unwrap(), &[]).unwrap();
        assert!(u.channel(0).values().iter().all(|v| v.abs() <= 1.1 + 1e-12));
    }
}
