//! Reintegration tracking: each cell's mass is spread as a uniform square of
//! side `2s` centred on its displaced position, and every cell collects the
//! overlap of those squares with its own unit domain.
//!
//! The scatter runs over fixed bands of source rows, each into a private
//! buffer that is merged back in band order, so results do not depend on the
//! number of worker threads.

use rayon::prelude::*;

use crate::scalar::Scalar;

/// Most cells one axis of a square can touch (`s ≤ 4`).
const MAX_SPAN: usize = 12;
const BAND_ROWS: usize = 16;

/// Overlap fractions of `[c − s, c + s]` with consecutive unit cells starting at `start`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct AxisWeights<T> {
    pub start: isize,
    pub len: usize,
    pub w: [T; MAX_SPAN],
}

impl<T: Scalar> AxisWeights<T> {
    pub fn iter(&self) -> impl Iterator<Item = (isize, T)> + '_ {
        self.w[..self.len].iter().enumerate().map(move |(j, &w)| (self.start + j as isize, w))
    }
}

/// Cell `j` spans `[j − ½, j + ½]`. Weights sum to one: the last one takes the remainder.
#[inline]
pub(crate) fn axis_weights<T: Scalar>(center: T, s: T) -> AxisWeights<T> {
    let half = T::of(0.5);
    let lo = center - s;
    let hi = center + s;
    let first = (lo + half).floor();
    let mut last = (hi + half).floor();
    if last - half >= hi {
        last = last - T::one();
    }
    let inv_side = T::one() / (s + s);
    let start = first.to_isize().expect("finite position");
    let len = ((last - first).to_usize().unwrap_or(0) + 1).min(MAX_SPAN);
    let mut w = [T::zero(); MAX_SPAN];
    if len == 1 {
        w[0] = T::one();
    } else {
        w[0] = (first + half - lo) * inv_side;
        let mut partial = w[0];
        for slot in w.iter_mut().take(len - 1).skip(1) {
            *slot = inv_side;
            partial = partial + inv_side;
        }
        w[len - 1] = (T::one() - partial).max(T::zero());
    }
    AxisWeights { start, len, w }
}

/// `t mod n` for `t` within one period of `[0, n)`, falling back to a division otherwise.
#[inline]
fn wrap(t: isize, n: usize) -> usize {
    let n = n as isize;
    let v = if t < 0 {
        t + n
    } else if t >= n {
        t - n
    } else {
        t
    };
    if (0..n).contains(&v) {
        v as usize
    } else {
        t.rem_euclid(n) as usize
    }
}

/// Displacements `dt·F` for one channel, clamped per axis.
#[derive(Debug, Clone, PartialEq)]
pub struct Displacement<T> {
    pub x: Vec<T>,
    pub y: Vec<T>,
}

/// Scatters one channel of mass by its displacement field.
pub(crate) fn scatter_channel<T: Scalar>(
    mass: &[T],
    disp: &Displacement<T>,
    width: usize,
    height: usize,
    s: T,
    halo: usize,
) -> Vec<T> {
    let bands = height.div_ceil(BAND_ROWS);
    let partials: Vec<(usize, usize, Vec<T>)> = (0..bands)
        .into_par_iter()
        .map(|b| {
            let y0 = b * BAND_ROWS;
            let y1 = (y0 + BAND_ROWS).min(height);
            let rows = (y1 - y0 + 2 * halo).min(height);
            let base = if rows == height { 0 } else { (y0 + height - halo) % height };
            let mut buf = vec![T::zero(); rows * width];
            for y in y0..y1 {
                for x in 0..width {
                    let i = y * width + x;
                    let m = mass[i];
                    if m == T::zero() {
                        continue;
                    }
                    let wx = axis_weights(T::of(x as f64) + disp.x[i], s);
                    let wy = axis_weights(T::of(y as f64) + disp.y[i], s);
                    for (ty, fy) in wy.iter() {
                        let gy = wrap(ty, height);
                        let ly = wrap(gy as isize - base as isize, height);
                        debug_assert!(ly < rows, "displacement exceeded the scatter halo");
                        let row = &mut buf[ly * width..(ly + 1) * width];
                        let my = m * fy;
                        for (tx, fx) in wx.iter() {
                            let gx = wrap(tx, width);
                            row[gx] = row[gx] + my * fx;
                        }
                    }
                }
            }
            (base, rows, buf)
        })
        .collect();

    let mut out = vec![T::zero(); width * height];
    for (base, rows, buf) in partials {
        for ly in 0..rows {
            let gy = wrap((base + ly) as isize, height);
            let dst = &mut out[gy * width..(gy + 1) * width];
            for (d, &v) in dst.iter_mut().zip(&buf[ly * width..(ly + 1) * width]) {
                *d = *d + v;
            }
        }
    }
    out
}

/// Mass moved from `source` to `target`, summed over channels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Transfer<T> {
    pub target: usize,
    pub source: usize,
    pub mass: T,
}

/// All positive source→target transfers, summed over channels and sorted by `(target, source)`.
pub(crate) fn incoming_transfers<T: Scalar>(
    channels: &[&[T]],
    disps: &[Displacement<T>],
    width: usize,
    height: usize,
    s: T,
) -> Vec<Transfer<T>> {
    let mut out = Vec::new();
    for (mass, disp) in channels.iter().zip(disps) {
        for y in 0..height {
            for x in 0..width {
                let i = y * width + x;
                let m = mass[i];
                if m == T::zero() {
                    continue;
                }
                let wx = axis_weights(T::of(x as f64) + disp.x[i], s);
                let wy = axis_weights(T::of(y as f64) + disp.y[i], s);
                for (ty, fy) in wy.iter() {
                    let gy = wrap(ty, height);
                    for (tx, fx) in wx.iter() {
                        let gx = wrap(tx, width);
                        out.push(Transfer {
                            target: gy * width + gx,
                            source: i,
                            mass: m * fy * fx,
                        });
                    }
                }
            }
        }
    }
    out.sort_by_key(|t| (t.target, t.source));
    out.dedup_by(|next, kept| {
        if next.target == kept.target && next.source == kept.source {
            kept.mass = kept.mass + next.mass;
            true
        } else {
            false
        }
    });
    out.retain(|t| t.mass > T::zero());
    out
}
