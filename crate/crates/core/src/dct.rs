//! Orthonormal DCT-II and its inverse on top of a complex FFT (Makhoul's
//! even/odd reordering), for arbitrary lengths.

use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

#[derive(Clone)]
pub struct Dct {
    len: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    // e^{-i pi k / (2N)}
    twiddles: Vec<Complex64>,
}

impl std::fmt::Debug for Dct {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Dct").field("len", &self.len).finish()
    }
}

impl Dct {
    pub fn new(len: usize) -> Self {
        assert!(len > 0, "DCT length must be positive");
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(len);
        let inverse = planner.plan_fft_inverse(len);
        let twiddles = (0..len)
            .map(|k| {
                Complex64::from_polar(1.0, -std::f64::consts::PI * k as f64 / (2.0 * len as f64))
            })
            .collect();
        Self {
            len,
            forward,
            inverse,
            twiddles,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    fn scale(&self, k: usize) -> f64 {
        let n = self.len as f64;
        if k == 0 {
            (1.0 / n).sqrt()
        } else {
            (2.0 / n).sqrt()
        }
    }

    /// `X_k = s_k sum_j x_j cos(pi k (2j + 1) / (2N))` with orthonormal `s_k`.
    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let n = self.len;
        assert_eq!(x.len(), n);
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        let half = n.div_ceil(2);
        for k in 0..half {
            buf[k].re = x[2 * k];
        }
        for k in 0..n / 2 {
            buf[n - 1 - k].re = x[2 * k + 1];
        }
        self.forward.process(&mut buf);
        (0..n)
            .map(|k| (self.twiddles[k] * buf[k]).re * self.scale(k))
            .collect()
    }

    /// Inverse (= transpose) of [`Dct::forward`].
    pub fn inverse(&self, coeffs: &[f64]) -> Vec<f64> {
        let n = self.len;
        assert_eq!(coeffs.len(), n);
        let y: Vec<f64> = coeffs
            .iter()
            .enumerate()
            .map(|(k, c)| c / self.scale(k))
            .collect();
        let mut buf: Vec<Complex64> = (0..n)
            .map(|k| {
                let tail = if k == 0 { 0.0 } else { y[n - k] };
                self.twiddles[k].conj() * Complex64::new(y[k], -tail)
            })
            .collect();
        self.inverse.process(&mut buf);
        let inv_n = 1.0 / n as f64;
        let mut x = vec![0.0; n];
        let half = n.div_ceil(2);
        for k in 0..half {
            x[2 * k] = buf[k].re * inv_n;
        }
        for k in 0..n / 2 {
            x[2 * k + 1] = buf[n - 1 - k].re * inv_n;
        }
        x
    }
}
