//! Right orthogonally invariant design operators `A = U S V^T`.
//!
//! Every operator exposes its action and adjoint, its singular values
//! `s_i = sqrt(N/n) S_i`, and the factor rotations needed to solve the LMMSE
//! system diagonally in the `V` basis. Dense operators are meant for desk
//! scale; the subsampled DCT operator never materializes the matrix.

use std::sync::{Arc, OnceLock};

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dct::Dct;
use crate::error::{invalid, Error, Result};
use crate::spectra::SpectrumModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnsembleKind {
    Gaussian,
    DctRowOrthogonal,
    SyntheticSpectrum,
}

#[derive(Debug, Clone)]
enum Factors {
    /// `v_thin` holds the first `n` columns of `V`; the full basis is
    /// completed on demand.
    Dense {
        a: DMatrix<f64>,
        u: DMatrix<f64>,
        v_thin: DMatrix<f64>,
        v_full: Arc<OnceLock<DMatrix<f64>>>,
    },
    /// `A = sqrt(N/n) R C D`: random signs `D`, orthonormal DCT `C`, row
    /// selection `R`. `U = I`, and `V^T = Pi C D` with `Pi` moving the selected
    /// rows to the front.
    Dct {
        dct: Dct,
        signs: Vec<f64>,
        perm: Vec<usize>,
    },
}

#[derive(Debug, Clone)]
pub struct DesignOperator {
    n: usize,
    big_n: usize,
    kind: EnsembleKind,
    seed: u64,
    singulars: Vec<f64>,
    /// `(1/n) sum S_i^2` before the rescale that enforces `E[S^2] = 1`.
    raw_second_moment: f64,
    factors: Factors,
}

fn check_dims(n: usize, big_n: usize) -> Result<()> {
    if n == 0 || big_n == 0 {
        return invalid("operator dimensions must be positive");
    }
    if n > big_n {
        return invalid(format!("need n <= N, got n = {n}, N = {big_n}"));
    }
    Ok(())
}

fn gaussian_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Haar-distributed orthogonal matrix: QR of an iid Gaussian matrix with the
/// signs of `R`'s diagonal moved into `Q`.
pub fn haar_orthogonal(dim: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let g = gaussian_matrix(dim, dim, rng);
    let qr = g.qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..dim {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

// Extends orthonormal columns to a full orthonormal basis of R^rows.
fn complete_basis(thin: &DMatrix<f64>, seed: u64) -> DMatrix<f64> {
    let (rows, k) = thin.shape();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut m = gaussian_matrix(rows, rows, &mut rng);
    m.columns_mut(0, k).copy_from(thin);
    let mut q = m.qr().q();
    // the first k columns span the same space; restore them exactly
    q.columns_mut(0, k).copy_from(thin);
    q
}

impl DesignOperator {
    /// iid `N(0, 1/n)` entries, rescaled so that `||A||_F^2 = N`.
    pub fn gaussian(n: usize, big_n: usize, seed: u64) -> Result<Self> {
        check_dims(n, big_n)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut a = gaussian_matrix(n, big_n, &mut rng) / (n as f64).sqrt();
        let fro2 = a.norm_squared();
        let raw_second_moment = fro2 / big_n as f64;
        a *= (big_n as f64 / fro2).sqrt();
        let svd = a.clone().svd(true, true);
        let u = svd
            .u
            .ok_or_else(|| Error::Singular("SVD did not return U".into()))?;
        let v_t = svd
            .v_t
            .ok_or_else(|| Error::Singular("SVD did not return V".into()))?;
        let singulars: Vec<f64> = svd.singular_values.iter().cloned().collect();
        Ok(Self {
            n,
            big_n,
            kind: EnsembleKind::Gaussian,
            seed,
            singulars,
            raw_second_moment,
            factors: Factors::Dense {
                a,
                u,
                v_thin: v_t.transpose(),
                v_full: Arc::new(OnceLock::new()),
            },
        })
    }

    /// Randomly subsampled, sign-randomized orthonormal DCT scaled so that
    /// `A A^T = (N/n) I`.
    pub fn dct_row_orthogonal(n: usize, big_n: usize, seed: u64) -> Result<Self> {
        Self::dct_with_plan(Dct::new(big_n), n, seed)
    }

    /// As [`DesignOperator::dct_row_orthogonal`], reusing an existing FFT plan.
    pub fn dct_with_plan(dct: Dct, n: usize, seed: u64) -> Result<Self> {
        let big_n = dct.len();
        check_dims(n, big_n)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let signs: Vec<f64> = (0..big_n)
            .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
            .collect();
        let mut selected = index::sample(&mut rng, big_n, n).into_vec();
        selected.sort_unstable();
        let mut chosen = vec![false; big_n];
        for &r in &selected {
            chosen[r] = true;
        }
        let mut perm = selected;
        perm.extend((0..big_n).filter(|&i| !chosen[i]));
        let s = (big_n as f64 / n as f64).sqrt();
        Ok(Self {
            n,
            big_n,
            kind: EnsembleKind::DctRowOrthogonal,
            seed,
            singulars: vec![s; n],
            raw_second_moment: 1.0,
            factors: Factors::Dct { dct, signs, perm },
        })
    }

    /// `A = U diag(s) V^T` with Haar `U`, `V` and `s_i = sqrt(N/n) S_i` for the
    /// given spectrum (rescaled to mean square one).
    pub fn synthetic_spectrum(spectrum: &[f64], n: usize, big_n: usize, seed: u64) -> Result<Self> {
        check_dims(n, big_n)?;
        if spectrum.len() != n {
            return Err(Error::DimensionMismatch {
                what: "planted spectrum length",
                expected: n,
                actual: spectrum.len(),
            });
        }
        if spectrum.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return invalid("planted singular values must be positive and finite");
        }
        let raw_second_moment = spectrum.iter().map(|s| s * s).sum::<f64>() / n as f64;
        let scale = (big_n as f64 / n as f64 / raw_second_moment).sqrt();
        let singulars: Vec<f64> = spectrum.iter().map(|s| s * scale).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = haar_orthogonal(n, &mut rng);
        let v = haar_orthogonal(big_n, &mut rng);
        let v_thin = v.columns(0, n).into_owned();
        let a =
            &u * DMatrix::from_diagonal(&DVector::from_vec(singulars.clone())) * v_thin.transpose();
        let v_full = OnceLock::new();
        let _ = v_full.set(v);
        Ok(Self {
            n,
            big_n,
            kind: EnsembleKind::SyntheticSpectrum,
            seed,
            singulars,
            raw_second_moment,
            factors: Factors::Dense {
                a,
                u,
                v_thin,
                v_full: Arc::new(v_full),
            },
        })
    }

    pub fn rows(&self) -> usize {
        self.n
    }

    pub fn cols(&self) -> usize {
        self.big_n
    }

    pub fn kind(&self) -> EnsembleKind {
        self.kind
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn alpha(&self) -> f64 {
        self.n as f64 / self.big_n as f64
    }

    /// Singular values `s_i`, length `n`.
    pub fn singulars(&self) -> &[f64] {
        &self.singulars
    }

    pub fn raw_second_moment(&self) -> f64 {
        self.raw_second_moment
    }

    /// Spectrum of `S_i = s_i sqrt(n/N)`.
    pub fn spectrum(&self) -> SpectrumModel {
        match self.kind {
            EnsembleKind::DctRowOrthogonal => SpectrumModel::unit(),
            _ => {
                let scale = self.alpha().sqrt();
                let s: Vec<f64> = self.singulars.iter().map(|v| v * scale).collect();
                SpectrumModel::from_singular_values(&s).expect("operator spectrum is valid")
            }
        }
    }

    fn check_len(&self, v: &[f64], expected: usize, what: &'static str) -> Result<()> {
        if v.len() != expected {
            return Err(Error::DimensionMismatch {
                what,
                expected,
                actual: v.len(),
            });
        }
        Ok(())
    }

    /// `A x`.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_len(x, self.big_n, "operator input")?;
        Ok(match &self.factors {
            Factors::Dense { a, .. } => (a * DVector::from_column_slice(x)).as_slice().to_vec(),
            Factors::Dct { .. } => {
                let c = self.range_coords(x)?;
                c.iter().zip(&self.singulars).map(|(c, s)| c * s).collect()
            }
        })
    }

    /// `A^T y`.
    pub fn adjoint(&self, y: &[f64]) -> Result<Vec<f64>> {
        self.check_len(y, self.n, "adjoint input")?;
        Ok(match &self.factors {
            Factors::Dense { a, .. } => (a.tr_mul(&DVector::from_column_slice(y)))
                .as_slice()
                .to_vec(),
            Factors::Dct { .. } => {
                let c: Vec<f64> = y.iter().zip(&self.singulars).map(|(y, s)| y * s).collect();
                self.from_range_coords(&c)?
            }
        })
    }

    /// `U^T y` (length `n`).
    pub fn u_t(&self, y: &[f64]) -> Result<Vec<f64>> {
        self.check_len(y, self.n, "U^T input")?;
        Ok(match &self.factors {
            Factors::Dense { u, .. } => {
                u.tr_mul(&DVector::from_column_slice(y)).as_slice().to_vec()
            }
            Factors::Dct { .. } => y.to_vec(),
        })
    }

    /// `U c` (length `n`).
    pub fn u(&self, c: &[f64]) -> Result<Vec<f64>> {
        self.check_len(c, self.n, "U input")?;
        Ok(match &self.factors {
            Factors::Dense { u, .. } => (u * DVector::from_column_slice(c)).as_slice().to_vec(),
            Factors::Dct { .. } => c.to_vec(),
        })
    }

    /// Coordinates of `x` along the first `n` right singular vectors: `V_1^T x`.
    pub fn range_coords(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_len(x, self.big_n, "range input")?;
        Ok(match &self.factors {
            Factors::Dense { v_thin, .. } => v_thin
                .tr_mul(&DVector::from_column_slice(x))
                .as_slice()
                .to_vec(),
            Factors::Dct { dct, signs, perm } => {
                let signed: Vec<f64> = x.iter().zip(signs).map(|(x, s)| x * s).collect();
                let full = dct.forward(&signed);
                perm[..self.n].iter().map(|&i| full[i]).collect()
            }
        })
    }

    /// `V_1 c` for `c` of length `n`.
    pub fn from_range_coords(&self, c: &[f64]) -> Result<Vec<f64>> {
        self.check_len(c, self.n, "range coordinates")?;
        Ok(match &self.factors {
            Factors::Dense { v_thin, .. } => {
                (v_thin * DVector::from_column_slice(c)).as_slice().to_vec()
            }
            Factors::Dct { dct, signs, perm } => {
                let mut full = vec![0.0; self.big_n];
                for (&i, &v) in perm[..self.n].iter().zip(c) {
                    full[i] = v;
                }
                let x = dct.inverse(&full);
                x.iter().zip(signs).map(|(x, s)| x * s).collect()
            }
        })
    }

    fn dense_v(&self) -> Option<&DMatrix<f64>> {
        match &self.factors {
            Factors::Dense { v_thin, v_full, .. } => {
                Some(v_full.get_or_init(|| complete_basis(v_thin, self.seed)))
            }
            Factors::Dct { .. } => None,
        }
    }

    /// `V^T x` in the full basis (length `N`).
    pub fn v_t(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_len(x, self.big_n, "V^T input")?;
        if let Some(v) = self.dense_v() {
            return Ok(v.tr_mul(&DVector::from_column_slice(x)).as_slice().to_vec());
        }
        let Factors::Dct { dct, signs, perm } = &self.factors else {
            unreachable!()
        };
        let signed: Vec<f64> = x.iter().zip(signs).map(|(x, s)| x * s).collect();
        let full = dct.forward(&signed);
        Ok(perm.iter().map(|&i| full[i]).collect())
    }

    /// `V c` in the full basis.
    pub fn v(&self, c: &[f64]) -> Result<Vec<f64>> {
        self.check_len(c, self.big_n, "V input")?;
        if let Some(v) = self.dense_v() {
            return Ok((v * DVector::from_column_slice(c)).as_slice().to_vec());
        }
        let Factors::Dct { dct, signs, perm } = &self.factors else {
            unreachable!()
        };
        let mut full = vec![0.0; self.big_n];
        for (&i, &v) in perm.iter().zip(c) {
            full[i] = v;
        }
        let x = dct.inverse(&full);
        Ok(x.iter().zip(signs).map(|(x, s)| x * s).collect())
    }

    /// Dense `n x N` matrix; intended for small instances and tests.
    pub fn materialize(&self) -> DMatrix<f64> {
        match &self.factors {
            Factors::Dense { a, .. } => a.clone(),
            Factors::Dct { .. } => {
                let mut m = DMatrix::zeros(self.n, self.big_n);
                let mut e = vec![0.0; self.big_n];
                for j in 0..self.big_n {
                    e[j] = 1.0;
                    let col = self.apply(&e).expect("length checked");
                    m.column_mut(j).copy_from_slice(&col);
                    e[j] = 0.0;
                }
                m
            }
        }
    }

    /// Rough resident size of the operator in bytes.
    pub fn memory_bytes(&self) -> usize {
        let f = std::mem::size_of::<f64>();
        match &self.factors {
            Factors::Dense { .. } => {
                f * (2 * self.n * self.big_n + self.n * self.n + self.big_n * self.big_n)
            }
            Factors::Dct { .. } => f * 6 * self.big_n,
        }
    }
}
