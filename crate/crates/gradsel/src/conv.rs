//! Linear convolution of gridded data with separable kernel rings via FFT.
//!
//! A ring of length `2m` holds kernel samples at node offsets
//! `0, 1, ..., m-1, -m, ..., -1` (wrap-around order). Zero-padding the data
//! line to `2m` makes the circular convolution agree with the linear one on
//! the first `m` outputs.

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use std::sync::Arc;

pub(crate) struct AxisFft {
    len: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl AxisFft {
    pub fn new(len: usize) -> Self {
        let mut planner = FftPlanner::new();
        AxisFft {
            len,
            fwd: planner.plan_fft_forward(len),
            inv: planner.plan_fft_inverse(len),
        }
    }

    fn spectrum(&self, ring: &[f64]) -> Vec<Complex<f64>> {
        assert_eq!(ring.len(), self.len);
        let mut buf: Vec<Complex<f64>> =
            ring.iter().map(|&v| Complex::new(v, 0.0)).collect();
        self.fwd.process(&mut buf);
        buf
    }
}

/// Builds a ring of length `2m` from kernel samples indexed by signed node
/// offset: `sample(o)` for `o in -m..m`.
pub(crate) fn build_ring<F: Fn(i64) -> f64>(m: usize, sample: F) -> Vec<f64> {
    let l = 2 * m;
    let mut ring = vec![0.0; l];
    for (j, r) in ring.iter_mut().enumerate() {
        let o = if j < m { j as i64 } else { j as i64 - l as i64 };
        *r = sample(o);
    }
    ring
}

/// In-place linear convolution of every axis-`axis` line of a row-major
/// `dims`-shaped array with the given ring (`ring.len() == 2 * dims[axis]`).
pub(crate) fn convolve_axis(
    values: &mut [f64],
    dims: &[usize],
    axis: usize,
    ring: &[f64],
    fft: &AxisFft,
) {
    let m = dims[axis];
    let l = 2 * m;
    assert_eq!(ring.len(), l);
    assert_eq!(fft.len, l);
    let total: usize = dims.iter().product();
    assert_eq!(values.len(), total);
    let spectrum = fft.spectrum(ring);

    // stride between consecutive elements along `axis`, and the number of
    // independent lines
    let stride: usize = dims[axis + 1..].iter().product();
    let outer: usize = dims[..axis].iter().product();
    let inner = stride;
    let mut buf = vec![Complex::new(0.0, 0.0); l];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * m * stride + i;
            for j in 0..m {
                buf[j] = Complex::new(values[base + j * stride], 0.0);
            }
            for b in buf.iter_mut().skip(m) {
                *b = Complex::new(0.0, 0.0);
            }
            fft.fwd.process(&mut buf);
            for (b, s) in buf.iter_mut().zip(&spectrum) {
                *b *= s;
            }
            fft.inv.process(&mut buf);
            let scale = 1.0 / l as f64;
            for j in 0..m {
                values[base + j * stride] = buf[j].re * scale;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn direct_conv(data: &[f64], kernel: &dyn Fn(i64) -> f64) -> Vec<f64> {
        let m = data.len();
        (0..m)
            .map(|x| {
                (0..m)
                    .map(|y| data[y] * kernel(x as i64 - y as i64))
                    .sum()
            })
            .collect()
    }

    #[test]
    fn fft_conv_matches_direct_1d() {
        let m = 32;
        let data: Vec<f64> = (0..m).map(|i| ((i * 7 + 3) % 11) as f64 * 0.1).collect();
        let kernel = |o: i64| (-0.1 * (o * o) as f64).exp();
        let ring = build_ring(m, kernel);
        let fft = AxisFft::new(2 * m);
        let mut out = data.clone();
        convolve_axis(&mut out, &[m], 0, &ring, &fft);
        let expect = direct_conv(&data, &kernel);
        for i in 0..m {
            assert!((out[i] - expect[i]).abs() < 1e-10, "i={i}");
        }
    }

    #[test]
    fn fft_conv_matches_direct_2d_separable() {
        let (m0, m1) = (16, 16);
        let mut data = vec![0.0; m0 * m1];
        for (i, v) in data.iter_mut().enumerate() {
            *v = ((i * 13 + 5) % 17) as f64 * 0.05;
        }
        let k0 = |o: i64| if o.abs() <= 2 { 1.0 - o.abs() as f64 * 0.3 } else { 0.0 };
        let k1 = |o: i64| (-0.2 * (o * o) as f64).exp();
        let mut out = data.clone();
        let fft0 = AxisFft::new(2 * m0);
        let fft1 = AxisFft::new(2 * m1);
        convolve_axis(&mut out, &[m0, m1], 0, &build_ring(m0, k0), &fft0);
        convolve_axis(&mut out, &[m0, m1], 1, &build_ring(m1, k1), &fft1);
        // direct double sum with the separable kernel
        for x0 in 0..m0 {
            for x1 in 0..m1 {
                let mut acc = 0.0;
                for y0 in 0..m0 {
                    for y1 in 0..m1 {
                        acc += data[y0 * m1 + y1]
                            * k0(x0 as i64 - y0 as i64)
                            * k1(x1 as i64 - y1 as i64);
                    }
                }
                let got = out[x0 * m1 + x1];
                assert!((got - acc).abs() < 1e-9, "({x0},{x1}): {got} vs {acc}");
            }
        }
    }
}
