//! Real-input 2D FFT used for circular convolution on the torus.
//!
//! Spectra are stored column-major over the half-spectrum: column `kx`
//! (for `kx ≤ width / 2`) is a contiguous run of `height` complex bins, so the
//! column transforms run as one batched call.

use std::sync::Arc;

use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::field::Field;
use crate::scalar::Scalar;

/// Half-spectrum of a real field.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum<T> {
    pub(crate) bins: Vec<Complex<T>>,
}

/// Cached FFT plans for one grid size.
pub struct Convolver<T: Scalar> {
    width: usize,
    height: usize,
    half: usize,
    r2c: Arc<dyn RealToComplex<T>>,
    c2r: Arc<dyn ComplexToReal<T>>,
    col_fwd: Arc<dyn Fft<T>>,
    col_inv: Arc<dyn Fft<T>>,
}

impl<T: Scalar> std::fmt::Debug for Convolver<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Convolver")
            .field("width", &self.width)
            .field("height", &self.height)
            .finish()
    }
}

impl<T: Scalar> Convolver<T> {
    pub fn new(width: usize, height: usize) -> Self {
        let mut real = RealFftPlanner::<T>::new();
        let mut complex = FftPlanner::<T>::new();
        Self {
            width,
            height,
            half: width / 2 + 1,
            r2c: real.plan_fft_forward(width),
            c2r: real.plan_fft_inverse(width),
            col_fwd: complex.plan_fft_forward(height),
            col_inv: complex.plan_fft_inverse(height),
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn spectrum(&self, field: &Field<T>) -> Spectrum<T> {
        self.spectrum_of(field.values())
    }

    pub fn spectrum_of(&self, values: &[T]) -> Spectrum<T> {
        debug_assert_eq!(values.len(), self.width * self.height);
        let (w, h) = (self.width, self.height);
        let mut bins = vec![Complex::new(T::zero(), T::zero()); self.half * h];
        let mut row = self.r2c.make_input_vec();
        let mut row_out = self.r2c.make_output_vec();
        let mut scratch = self.r2c.make_scratch_vec();
        for y in 0..h {
            row.copy_from_slice(&values[y * w..(y + 1) * w]);
            self.r2c
                .process_with_scratch(&mut row, &mut row_out, &mut scratch)
                .expect("buffer sizes come from the plan");
            for (kx, &c) in row_out.iter().enumerate() {
                bins[kx * h + y] = c;
            }
        }
        self.col_fwd.process(&mut bins);
        Spectrum { bins }
    }

    /// Inverse transform of `a · b`, written into `out` (row-major, length `width · height`).
    pub fn product_inverse_into(&self, a: &Spectrum<T>, b: &Spectrum<T>, work: &mut Vec<Complex<T>>, out: &mut [T]) {
        work.clear();
        work.extend(a.bins.iter().zip(&b.bins).map(|(x, y)| x * y));
        self.inverse_in_place(work, out);
    }

    fn inverse_in_place(&self, bins: &mut [Complex<T>], out: &mut [T]) {
        let (w, h) = (self.width, self.height);
        self.col_inv.process(bins);
        let scale = T::one() / T::from_usize(w * h).expect("grid size fits the scalar");
        let mut row = self.c2r.make_input_vec();
        let mut row_out = self.c2r.make_output_vec();
        let mut scratch = self.c2r.make_scratch_vec();
        for y in 0..h {
            for (kx, r) in row.iter_mut().enumerate() {
                *r = bins[kx * h + y];
            }
            // the input is real so these bins are real up to rounding; c2r requires exact zeros
            row[0].im = T::zero();
            if w % 2 == 0 {
                row[self.half - 1].im = T::zero();
            }
            self.c2r
                .process_with_scratch(&mut row, &mut row_out, &mut scratch)
                .expect("buffer sizes come from the plan");
            for (o, &v) in out[y * w..(y + 1) * w].iter_mut().zip(&row_out) {
                *o = v * scale;
            }
        }
    }

    pub fn apply(&self, a: &Spectrum<T>, b: &Spectrum<T>) -> Field<T> {
        let mut out = vec![T::zero(); self.width * self.height];
        let mut work = Vec::with_capacity(a.bins.len());
        self.product_inverse_into(a, b, &mut work, &mut out);
        Field::from_vec(self.width, self.height, out).expect("dims come from the plan")
    }
}
