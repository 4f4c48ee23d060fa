//! Type-I discrete sine transform on images.
//!
//! `dst(x)[k] = sum_j x[j] sin(pi (j+1) (k+1) / (n+1))`, computed through a
//! real FFT of the odd extension of length `2 (n + 1)`.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::image::Grid;

struct Dst1 {
    n: usize,
    fft: Arc<dyn Fft<f64>>,
}

impl Dst1 {
    fn new(planner: &mut FftPlanner<f64>, n: usize) -> Self {
        Self {
            n,
            fft: planner.plan_fft_forward(2 * (n + 1)),
        }
    }

    /// Transforms `n` values spaced `stride` apart in `data`, in place.
    fn apply(&self, data: &mut [f64], offset: usize, stride: usize, buf: &mut Vec<Complex<f64>>) {
        let n = self.n;
        buf.clear();
        buf.resize(2 * (n + 1), Complex::new(0.0, 0.0));
        for j in 0..n {
            let v = data[offset + j * stride];
            buf[j + 1].re = v;
            buf[2 * (n + 1) - 1 - j].re = -v;
        }
        self.fft.process(buf);
        for k in 0..n {
            data[offset + k * stride] = -0.5 * buf[k + 1].im;
        }
    }
}

fn check_dims(field: &Grid<f64>) -> Result<()> {
    let (w, h) = field.dims();
    if w < 2 || h < 2 {
        return Err(Error::Argument(format!("DST needs at least 2x2 values, got {w}x{h}")));
    }
    Ok(())
}

fn transform(field: &Grid<f64>, scale: f64) -> Grid<f64> {
    let (w, h) = field.dims();
    let mut planner = FftPlanner::new();
    let rows = Dst1::new(&mut planner, w);
    let cols = Dst1::new(&mut planner, h);
    let mut out = field.clone();
    let data = out.as_mut_slice();
    let mut buf = Vec::new();
    for y in 0..h {
        rows.apply(data, y * w, 1, &mut buf);
    }
    for x in 0..w {
        cols.apply(data, x, w, &mut buf);
    }
    if scale != 1.0 {
        data.iter_mut().for_each(|v| *v *= scale);
    }
    out
}

/// Separable 2-D DST-I along rows, then columns.
pub fn dst2(field: &Grid<f64>) -> Result<Grid<f64>> {
    check_dims(field)?;
    Ok(transform(field, 1.0))
}

/// Exact inverse of [`dst2`].
pub fn idst2(coeffs: &Grid<f64>) -> Result<Grid<f64>> {
    check_dims(coeffs)?;
    let (w, h) = coeffs.dims();
    Ok(transform(coeffs, 4.0 / ((w + 1) as f64 * (h + 1) as f64)))
}
