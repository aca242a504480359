//! Two-dimensional real-to-complex FFTs on row-major buffers.

use num_complex::Complex64;
use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};
use rustfft::{Fft, FftPlanner};
use std::sync::Arc;

/// Smallest `m ≥ n` whose prime factors are all in {2, 3, 5, 7}.
pub fn fast_len(n: usize) -> usize {
    let mut m = n.max(1);
    loop {
        let mut k = m;
        for p in [2, 3, 5, 7] {
            while k.is_multiple_of(p) {
                k /= p;
            }
        }
        if k == 1 {
            return m;
        }
        m += 1;
    }
}

pub struct Fft2 {
    pub nx: usize,
    pub ny: usize,
    /// Number of retained x-frequencies, `nx/2 + 1`.
    pub kx: usize,
    r2c: Arc<dyn RealToComplex<f64>>,
    c2r: Arc<dyn ComplexToReal<f64>>,
    fwd_y: Arc<dyn Fft<f64>>,
    inv_y: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Fft2 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Fft2({}x{})", self.nx, self.ny)
    }
}

fn transpose<T: Copy + Default>(src: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut dst = vec![T::default(); src.len()];
    const B: usize = 32;
    for r0 in (0..rows).step_by(B) {
        for c0 in (0..cols).step_by(B) {
            for r in r0..(r0 + B).min(rows) {
                for c in c0..(c0 + B).min(cols) {
                    dst[c * rows + r] = src[r * cols + c];
                }
            }
        }
    }
    dst
}

impl Fft2 {
    pub fn new(nx: usize, ny: usize) -> Self {
        let mut real = RealFftPlanner::<f64>::new();
        let mut cplx = FftPlanner::new();
        Fft2 {
            nx,
            ny,
            kx: nx / 2 + 1,
            r2c: real.plan_fft_forward(nx),
            c2r: real.plan_fft_inverse(nx),
            fwd_y: cplx.plan_fft_forward(ny),
            inv_y: cplx.plan_fft_inverse(ny),
        }
    }

    /// Forward transform of a real row-major `ny × nx` buffer. Only the
    /// non-negative x-frequencies are kept; the spectrum is laid out
    /// `kx × ny` (x-frequency major), which is what [`Fft2::inverse`] expects.
    pub fn forward(&self, mut data: Vec<f64>) -> Vec<Complex64> {
        let mut half = vec![Complex64::new(0.0, 0.0); self.ny * self.kx];
        let mut scratch = self.r2c.make_scratch_vec();
        for (row, out) in data.chunks_exact_mut(self.nx).zip(half.chunks_exact_mut(self.kx)) {
            self.r2c
                .process_with_scratch(row, out, &mut scratch)
                .expect("buffer sizes match the plan");
        }
        let mut t = transpose(&half, self.ny, self.kx);
        self.fwd_y.process(&mut t);
        t
    }

    /// Unnormalized inverse of [`Fft2::forward`] for spectra of real data.
    pub fn inverse(&self, mut spec: Vec<Complex64>) -> Vec<f64> {
        self.inv_y.process(&mut spec);
        let mut half = transpose(&spec, self.kx, self.ny);
        let mut out = vec![0.0; self.nx * self.ny];
        let mut scratch = self.c2r.make_scratch_vec();
        for (row, dst) in half.chunks_exact_mut(self.kx).zip(out.chunks_exact_mut(self.nx)) {
            // These are real for real data up to rounding.
            row[0].im = 0.0;
            if self.nx.is_multiple_of(2) {
                row[self.kx - 1].im = 0.0;
            }
            self.c2r
                .process_with_scratch(row, dst, &mut scratch)
                .expect("buffer sizes match the plan");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fast_lengths() {
        assert_eq!(fast_len(11), 12);
        assert_eq!(fast_len(97), 98);
        assert_eq!(fast_len(128), 128);
    }

    #[test]
    fn cyclic_convolution_matches_direct() {
        for (nx, ny) in [(12, 10), (9, 7)] {
            let a: Vec<f64> = (0..nx * ny).map(|k| ((k * 7919) % 13) as f64 - 6.0).collect();
            let b: Vec<f64> = (0..nx * ny).map(|k| ((k * 104729) % 11) as f64 * 0.1).collect();
            let f = Fft2::new(nx, ny);
            let sa = f.forward(a.clone());
            let sb = f.forward(b.clone());
            let prod: Vec<Complex64> = sa.iter().zip(&sb).map(|(x, y)| x * y).collect();
            let c = f.inverse(prod);
            for y in 0..ny {
                for x in 0..nx {
                    let mut d = 0.0;
                    for qy in 0..ny {
                        for qx in 0..nx {
                            d += a[qy * nx + qx] * b[((y + ny - qy) % ny) * nx + (x + nx - qx) % nx];
                        }
                    }
                    let v = c[y * nx + x] / (nx * ny) as f64;
                    assert!((v - d).abs() < 1e-10);
                }
            }
        }
    }
}
