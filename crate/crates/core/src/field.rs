//! Toroidal grids and the primitives the rest of the crate is built on.

use crate::error::{Error, Result};
use crate::fft::Convolver;
use crate::scalar::{compensated_sum, Scalar};

/// Smallest side length accepted for a grid; the Sobel stencil needs a 3×3 neighbourhood.
pub const MIN_SIDE: usize = 3;

/// A scalar value per cell on a `width × height` torus, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Field<T> {
    width: usize,
    height: usize,
    values: Vec<T>,
}

impl<T: Scalar> Field<T> {
    pub fn zeros(width: usize, height: usize) -> Result<Self> {
        Self::filled(width, height, T::zero())
    }

    pub fn filled(width: usize, height: usize, value: T) -> Result<Self> {
        check_dims(width, height)?;
        Ok(Self {
            width,
            height,
            values: vec![value; width * height],
        })
    }

    pub fn from_vec(width: usize, height: usize, values: Vec<T>) -> Result<Self> {
        check_dims(width, height)?;
        if values.len() != width * height {
            return Err(Error::Dimension(format!(
                "{} values for a {width}x{height} grid",
                values.len()
            )));
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    /// Builds a field by evaluating `f(x, y)` at every cell.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> T) -> Result<Self> {
        check_dims(width, height)?;
        let mut values = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                values.push(f(x, y));
            }
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    /// Convenience used by small test kernels: accepts any side ≥ 1.
    pub fn small_kernel(width: usize, height: usize, values: Vec<T>) -> Result<Self> {
        if width == 0 || height == 0 || values.len() != width * height {
            return Err(Error::Dimension("kernel shape does not match its values".into()));
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn values(&self) -> &[T] {
        &self.values
    }

    #[inline]
    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> T {
        self.values[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: T) {
        self.values[y * self.width + x] = v;
    }

    /// Reads with toroidal wrap for any signed coordinate.
    #[inline]
    pub fn get_wrapped(&self, x: isize, y: isize) -> T {
        let xi = x.rem_euclid(self.width as isize) as usize;
        let yi = y.rem_euclid(self.height as isize) as usize;
        self.values[yi * self.width + xi]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            width: self.width,
            height: self.height,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn sum(&self) -> T {
        compensated_sum(self.values.iter().copied())
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Toroidal translation: the value at `(x, y)` moves to `(x + dx, y + dy)`.
    pub fn translated(&self, dx: isize, dy: isize) -> Self {
        let mut out = self.clone();
        for y in 0..self.height {
            for x in 0..self.width {
                out.values[self.index(x, y)] = self.get_wrapped(x as isize - dx, y as isize - dy);
            }
        }
        out
    }

    pub fn transposed(&self) -> Self {
        let mut values = Vec::with_capacity(self.len());
        for x in 0..self.width {
            for y in 0..self.height {
                values.push(self.get(x, y));
            }
        }
        Self {
            width: self.height,
            height: self.width,
            values,
        }
    }

    pub fn cast<U: Scalar>(&self) -> Field<U> {
        Field {
            width: self.width,
            height: self.height,
            values: self.values.iter().map(|v| U::of(v.as_f64())).collect(),
        }
    }

    /// Places an odd-sided kernel, centred on its middle cell, onto a full
    /// `width × height` grid with its centre at the origin.
    pub fn embed_centered(&self, width: usize, height: usize) -> Result<Self> {
        if self.width > width || self.height > height {
            return Err(Error::Dimension(format!(
                "{}x{} kernel larger than {width}x{height} grid",
                self.width, self.height
            )));
        }
        if self.width == width && self.height == height {
            return Ok(self.clone());
        }
        if self.width.is_multiple_of(2) || self.height.is_multiple_of(2) {
            return Err(Error::Dimension("a sub-grid kernel must have odd sides".into()));
        }
        let (cx, cy) = ((self.width / 2) as isize, (self.height / 2) as isize);
        let mut out = Field::zeros(width, height)?;
        for ky in 0..self.height {
            for kx in 0..self.width {
                let x = (kx as isize - cx).rem_euclid(width as isize) as usize;
                let y = (ky as isize - cy).rem_euclid(height as isize) as usize;
                let i = out.index(x, y);
                out.values[i] = out.values[i] + self.get(kx, ky);
            }
        }
        Ok(out)
    }
}

fn check_dims(width: usize, height: usize) -> Result<()> {
    if width < MIN_SIDE || height < MIN_SIDE {
        return Err(Error::Dimension(format!(
            "grid {width}x{height} is smaller than {MIN_SIDE}x{MIN_SIDE}"
        )));
    }
    Ok(())
}

/// One field per channel, all with the same dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiField<T> {
    channels: Vec<Field<T>>,
}

impl<T: Scalar> MultiField<T> {
    pub fn new(channels: Vec<Field<T>>) -> Result<Self> {
        let first = channels
            .first()
            .ok_or_else(|| Error::Dimension("a multi-field needs at least one channel".into()))?;
        let dims = first.dims();
        if channels.iter().any(|c| c.dims() != dims) {
            return Err(Error::Dimension("channels differ in size".into()));
        }
        Ok(Self { channels })
    }

    pub fn zeros(width: usize, height: usize, channels: usize) -> Result<Self> {
        let field = Field::zeros(width, height)?;
        Self::new(vec![field; channels])
    }

    #[inline]
    pub fn channel_count(&self) -> usize {
        self.channels.len()
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.channels[0].width()
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.channels[0].height()
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        self.channels[0].dims()
    }

    #[inline]
    pub fn channel(&self, i: usize) -> &Field<T> {
        &self.channels[i]
    }

    #[inline]
    pub fn channel_mut(&mut self, i: usize) -> &mut Field<T> {
        &mut self.channels[i]
    }

    pub fn channels(&self) -> &[Field<T>] {
        &self.channels
    }

    pub fn into_channels(self) -> Vec<Field<T>> {
        self.channels
    }

    pub fn all_finite(&self) -> bool {
        self.channels.iter().all(Field::all_finite)
    }

    pub fn translated(&self, dx: isize, dy: isize) -> Self {
        Self {
            channels: self.channels.iter().map(|c| c.translated(dx, dy)).collect(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> MultiField<U> {
        MultiField {
            channels: self.channels.iter().map(Field::cast).collect(),
        }
    }
}

/// A 2D vector per cell, in cells per unit time.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField<T> {
    width: usize,
    height: usize,
    pub x: Vec<T>,
    pub y: Vec<T>,
}

impl<T: Scalar> VectorField<T> {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            x: vec![T::zero(); width * height],
            y: vec![T::zero(); width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn scaled(&self, k: T) -> Self {
        Self {
            width: self.width,
            height: self.height,
            x: self.x.iter().map(|&v| v * k).collect(),
            y: self.y.iter().map(|&v| v * k).collect(),
        }
    }
}

/// Circular convolution `out(p) = Σ_q kernel(q) · field(p − q)` via FFT.
///
/// The kernel is either a full-grid raster with its origin at cell `(0, 0)`
/// or an odd-sided stencil centred on its middle cell.
pub fn convolve_circular<T: Scalar>(field: &Field<T>, kernel: &Field<T>) -> Result<Field<T>> {
    let (w, h) = field.dims();
    let kernel = kernel.embed_centered(w, h)?;
    let conv = Convolver::new(w, h);
    let ks = conv.spectrum(&kernel);
    let fs = conv.spectrum(field);
    Ok(conv.apply(&fs, &ks))
}

/// Direct sliding-window circular convolution; O(N·K) and kept as a test oracle.
pub fn convolve_direct<T: Scalar>(field: &Field<T>, kernel: &Field<T>) -> Result<Field<T>> {
    let (w, h) = field.dims();
    let kernel = kernel.embed_centered(w, h)?;
    let taps: Vec<(isize, isize, T)> = (0..h)
        .flat_map(|qy| (0..w).map(move |qx| (qx, qy)))
        .filter_map(|(qx, qy)| {
            let k = kernel.get(qx, qy);
            (k != T::zero()).then_some((qx as isize, qy as isize, k))
        })
        .collect();
    Field::from_fn(w, h, |x, y| {
        taps.iter().fold(T::zero(), |acc, &(qx, qy, k)| {
            acc + k * field.get_wrapped(x as isize - qx, y as isize - qy)
        })
    })
}

/// 3×3 Sobel gradient with toroidal wrap, scaled by 1/8 so a unit ramp has unit slope.
pub fn sobel_gradient<T: Scalar>(field: &Field<T>) -> VectorField<T> {
    let (w, h) = field.dims();
    let mut out = VectorField::zeros(w, h);
    let v = field.values();
    let eighth = T::of(0.125);
    let two = T::of(2.0);
    for y in 0..h {
        let ym = if y == 0 { h - 1 } else { y - 1 } * w;
        let y0 = y * w;
        let yp = if y + 1 == h { 0 } else { y + 1 } * w;
        for x in 0..w {
            let xm = if x == 0 { w - 1 } else { x - 1 };
            let xp = if x + 1 == w { 0 } else { x + 1 };
            let gx = (v[ym + xp] + two * v[y0 + xp] + v[yp + xp]) - (v[ym + xm] + two * v[y0 + xm] + v[yp + xm]);
            let gy = (v[yp + xm] + two * v[yp + x] + v[yp + xp]) - (v[ym + xm] + two * v[ym + x] + v[ym + xp]);
            out.x[y0 + x] = gx * eighth;
            out.y[y0 + x] = gy * eighth;
        }
    }
    out
}

/// Per-channel total mass with compensated summation.
pub fn total_mass<T: Scalar>(mf: &MultiField<T>) -> Vec<T> {
    mf.channels().iter().map(Field::sum).collect()
}

/// `A_Σ(p) = Σ_i A_i(p)`.
pub fn channel_sum<T: Scalar>(mf: &MultiField<T>) -> Field<T> {
    let mut out = mf.channel(0).clone();
    for c in &mf.channels()[1..] {
        for (o, &v) in out.values_mut().iter_mut().zip(c.values()) {
            *o = *o + v;
        }
    }
    out
}
