//! Minimal 2D FFT on top of `rustfft`, used for large-kernel convolution.
//!
//! Spectra are kept in transposed layout (`u * ny + v`), which saves one
//! transpose per transform; callers only multiply spectra pointwise.
//! Transforms work in caller-owned buffers and skip rows known to be zero
//! (forward) or not needed (inverse).

use std::ops::Range;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

/// Smallest length `>= n` with no prime factor above 7.
pub(crate) fn smooth_len(n: usize) -> usize {
    (n.max(1)..)
        .find(|&m| {
            let mut k = m;
            for p in [2, 3, 5, 7] {
                while k % p == 0 {
                    k /= p;
                }
            }
            k == 1
        })
        .unwrap()
}

/// `dst[c * dst_stride + r] = src[r * src_stride + c]` for `r in rows`,
/// `c in cols`.
fn transpose(
    src: &[Complex64],
    src_stride: usize,
    dst: &mut [Complex64],
    dst_stride: usize,
    rows: Range<usize>,
    cols: Range<usize>,
) {
    const B: usize = 16;
    for rb in rows.clone().step_by(B) {
        let re = (rb + B).min(rows.end);
        for cb in cols.clone().step_by(B) {
            let ce = (cb + B).min(cols.end);
            for r in rb..re {
                let s = &src[r * src_stride + cb..r * src_stride + ce];
                for (k, v) in s.iter().enumerate() {
                    dst[(cb + k) * dst_stride + r] = *v;
                }
            }
        }
    }
}

pub(crate) struct Fft2 {
    pub nx: usize,
    pub ny: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

/// Scratch space for one thread of transforms.
pub(crate) struct Scratch(Vec<Complex64>);

impl Fft2 {
    pub fn new(nx: usize, ny: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            nx,
            ny,
            row_fwd: planner.plan_fft_forward(nx),
            row_inv: planner.plan_fft_inverse(nx),
            col_fwd: planner.plan_fft_forward(ny),
            col_inv: planner.plan_fft_inverse(ny),
        }
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn scratch(&self) -> Scratch {
        let n = [&self.row_fwd, &self.row_inv, &self.col_fwd, &self.col_inv]
            .iter()
            .map(|p| p.get_inplace_scratch_len())
            .max()
            .unwrap_or(0);
        Scratch(vec![Complex64::default(); n])
    }

    /// Row-major `ny x nx` input to transposed spectrum in `out`.
    ///
    /// Rows of `data` outside `live` must be zero; they are not transformed.
    /// `data` is overwritten.
    pub fn forward(
        &self,
        data: &mut [Complex64],
        live: impl IntoIterator<Item = Range<usize>>,
        out: &mut [Complex64],
        s: &mut Scratch,
    ) {
        let (nx, ny) = (self.nx, self.ny);
        out.fill(Complex64::default());
        for rows in live {
            let block = &mut data[rows.start * nx..rows.end * nx];
            if !block.is_empty() {
                self.row_fwd.process_with_scratch(block, &mut s.0);
            }
            transpose(data, nx, out, ny, rows, 0..nx);
        }
        self.col_fwd.process_with_scratch(out, &mut s.0);
    }

    /// Transposed spectrum back to row-major rows `rows` of `out`, without
    /// the `1 / len` scale. Other rows of `out` are left untouched and
    /// `spectrum` is overwritten.
    pub fn inverse(&self, spectrum: &mut [Complex64], rows: Range<usize>, out: &mut [Complex64], s: &mut Scratch) {
        let (nx, ny) = (self.nx, self.ny);
        self.col_inv.process_with_scratch(spectrum, &mut s.0);
        transpose(spectrum, ny, out, nx, 0..nx, rows.clone());
        self.row_inv
            .process_with_scratch(&mut out[rows.start * nx..rows.end * nx], &mut s.0);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smooth_lengths() {
        assert_eq!(smooth_len(1), 1);
        assert_eq!(smooth_len(11), 12);
        assert_eq!(smooth_len(664), 672);
    }

    #[test]
    fn circular_convolution_matches_direct() {
        let (nx, ny) = (6, 5);
        let fft = Fft2::new(nx, ny);
        let mut s = fft.scratch();
        let a: Vec<Complex64> = (0..nx * ny)
            .map(|i| Complex64::new(((i * 7) % 11) as f64, (i % 3) as f64))
            .collect();
        // Only rows 0 and 4 are nonzero.
        let b: Vec<Complex64> = (0..nx * ny)
            .map(|i| {
                let y = i / nx;
                if y == 0 || y == 4 {
                    Complex64::new(((i * 3) % 5) as f64 - 2.0, 0.5)
                } else {
                    Complex64::default()
                }
            })
            .collect();
        let (mut fa, mut fb) = (vec![Complex64::default(); nx * ny], vec![Complex64::default(); nx * ny]);
        fft.forward(&mut a.clone(), std::iter::once(0..ny), &mut fa, &mut s);
        fft.forward(&mut b.clone(), [0..1, 4..5], &mut fb, &mut s);
        let mut prod: Vec<Complex64> = fa.iter().zip(&fb).map(|(x, y)| x * y).collect();
        let mut out = vec![Complex64::default(); nx * ny];
        fft.inverse(&mut prod, 1..4, &mut out, &mut s);
        for y in 0..ny {
            for x in 0..nx {
                if !(1..4).contains(&y) {
                    assert_eq!(out[y * nx + x], Complex64::default());
                    continue;
                }
                let mut acc = Complex64::default();
                for sy in 0..ny {
                    for sx in 0..nx {
                        let kx = (x + nx - sx) % nx;
                        let ky = (y + ny - sy) % ny;
                        acc += a[sy * nx + sx] * b[ky * nx + kx];
                    }
                }
                assert!((out[y * nx + x] / (nx * ny) as f64 - acc).norm() < 1e-9);
            }
        }
    }
}
