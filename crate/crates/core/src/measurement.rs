//! Linear measurement operators `A: R^{n1 x n2} -> R^m` and their adjoints.
//!
//! Three ensembles are provided: dense Gaussian (`<A_j, X>_F`), Gaussian
//! rank-one (`a_j^T X b_j`), and Fourier rank-one (`(FA)_j^T X (FB)_j` with the
//! DFT matrix `F`). Complex Fourier measurements are flattened to real values:
//! the real parts of all `m` measurements, then the imaginary parts.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{generate_ground_truth, DenseMatrix};
use crate::rng::{derive_seed, normal, normal_matrix, rng_from_seed};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MeasurementKind {
    DenseGaussian,
    RankOneGaussian,
    FourierRankOne,
}

impl std::fmt::Display for MeasurementKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            MeasurementKind::DenseGaussian => "dense-gaussian",
            MeasurementKind::RankOneGaussian => "rank-one-gaussian",
            MeasurementKind::FourierRankOne => "fourier-rank-one",
        })
    }
}

/// Everything needed to regenerate a random operator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnsembleDescriptor {
    pub kind: MeasurementKind,
    pub n1: usize,
    pub n2: usize,
    pub m: usize,
    pub seed: u64,
}

impl EnsembleDescriptor {
    pub fn build(&self) -> Result<MeasurementOperator> {
        match self.kind {
            MeasurementKind::DenseGaussian => gaussian_dense(self.n1, self.n2, self.m, self.seed),
            MeasurementKind::RankOneGaussian => gaussian_rank_one(self.n1, self.n2, self.m, self.seed),
            MeasurementKind::FourierRankOne => fourier_rank_one(self.n1, self.n2, self.m, self.seed),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Part {
    Re,
    Im,
}

#[derive(Debug, Clone)]
enum Ensemble {
    /// `m x n1*n2`; row `j` is `A_j` flattened column-major.
    Dense { mat: DMatrix<f64> },
    /// Rows of `a` and `b` are `a_j^T` and `b_j^T`.
    RankOne { a: DMatrix<f64>, b: DMatrix<f64> },
    /// Real and imaginary parts of `F A` and `F B`, plus the list of real
    /// outputs `(j, part)` in emission order.
    Fourier {
        fa_re: DMatrix<f64>,
        fa_im: DMatrix<f64>,
        fb_re: DMatrix<f64>,
        fb_im: DMatrix<f64>,
        rows: Vec<(usize, Part)>,
    },
}

/// Linear map from `n1 x n2` matrices to real measurement vectors.
#[derive(Debug, Clone)]
pub struct MeasurementOperator {
    n1: usize,
    n2: usize,
    kind: MeasurementKind,
    ensemble: Ensemble,
    gain: f64,
}

fn check_dims(n1: usize, n2: usize, m: usize) -> Result<()> {
    if n1 == 0 || n2 == 0 || m == 0 {
        return Err(Error::InvalidDimension(format!("n1={n1}, n2={n2}, m={m} must all be positive")));
    }
    Ok(())
}

/// Dense Gaussian ensemble: `A(X)_j = <A_j, X>_F`, `A_j` i.i.d. standard normal.
///
/// `A_1, ..., A_m` are drawn in order, each row-major.
pub fn gaussian_dense(n1: usize, n2: usize, m: usize, seed: u64) -> Result<MeasurementOperator> {
    check_dims(n1, n2, m)?;
    let mut rng = rng_from_seed(seed);
    let mut mat = DMatrix::zeros(m, n1 * n2);
    for j in 0..m {
        for i in 0..n1 {
            for k in 0..n2 {
                mat[(j, i + k * n1)] = normal(&mut rng);
            }
        }
    }
    Ok(MeasurementOperator::build(n1, n2, MeasurementKind::DenseGaussian, Ensemble::Dense { mat }))
}

/// Gaussian rank-one ensemble: `A(X)_j = a_j^T X b_j`.
///
/// Draws all `a_j` (as an `m x n1` row-major matrix), then all `b_j`.
pub fn gaussian_rank_one(n1: usize, n2: usize, m: usize, seed: u64) -> Result<MeasurementOperator> {
    check_dims(n1, n2, m)?;
    let mut rng = rng_from_seed(seed);
    let a = normal_matrix(&mut rng, m, n1);
    let b = normal_matrix(&mut rng, m, n2);
    Ok(MeasurementOperator::build(n1, n2, MeasurementKind::RankOneGaussian, Ensemble::RankOne { a, b }))
}

/// Fourier rank-one ensemble from blind deconvolution: `y_j = (FA)_j^T X (FB)_j`
/// with Gaussian `A` (`m x n1`) and `B` (`m x n2`), flattened to `2m` reals.
pub fn fourier_rank_one(n1: usize, n2: usize, m: usize, seed: u64) -> Result<MeasurementOperator> {
    check_dims(n1, n2, m)?;
    let mut rng = rng_from_seed(seed);
    let a = normal_matrix(&mut rng, m, n1);
    let b = normal_matrix(&mut rng, m, n2);
    fourier_from_factors(&a, &b)
}

/// Fourier ensemble with caller-supplied `A` and `B`.
pub fn fourier_from_factors(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<MeasurementOperator> {
    let m = a.nrows();
    check_dims(a.ncols(), b.ncols(), m)?;
    if b.nrows() != m {
        return Err(Error::DimensionMismatch {
            expected: format!("B with {m} rows"),
            found: format!("{} rows", b.nrows()),
        });
    }
    let (fa_re, fa_im) = dft_rows(a);
    let (fb_re, fb_im) = dft_rows(b);
    let rows = (0..m).map(|j| (j, Part::Re)).chain((0..m).map(|j| (j, Part::Im))).collect();
    Ok(MeasurementOperator::build(
        a.ncols(),
        b.ncols(),
        MeasurementKind::FourierRankOne,
        Ensemble::Fourier { fa_re, fa_im, fb_re, fb_im, rows },
    ))
}

/// Direct DFT along the rows: `F M` with `F_{jt} = exp(-2 pi i j t / m)`.
fn dft_rows(mat: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let m = mat.nrows();
    let (cos, sin): (Vec<f64>, Vec<f64>) = (0..m)
        .map(|a| {
            let theta = -2.0 * std::f64::consts::PI * a as f64 / m as f64;
            (theta.cos(), theta.sin())
        })
        .unzip();
    let f_re = DMatrix::from_fn(m, m, |j, t| cos[(j * t) % m]);
    let f_im = DMatrix::from_fn(m, m, |j, t| sin[(j * t) % m]);
    (&f_re * mat, &f_im * mat)
}

impl MeasurementOperator {
    fn build(n1: usize, n2: usize, kind: MeasurementKind, ensemble: Ensemble) -> Self {
        let mut op = MeasurementOperator { n1, n2, kind, ensemble, gain: 1.0 };
        let total: f64 = (0..op.len()).map(|q| op.row_matrix(q).norm_squared()).sum();
        op.gain = total / (n1 * n2) as f64;
        op
    }

    /// Operator with an explicit `m x n1*n2` matrix whose row `j` is `A_j`
    /// flattened column-major (`index = i + k * n1`).
    pub fn from_dense(mat: DMatrix<f64>, n1: usize, n2: usize) -> Result<Self> {
        check_dims(n1, n2, mat.nrows())?;
        if mat.ncols() != n1 * n2 {
            return Err(Error::DimensionMismatch {
                expected: format!("{} columns", n1 * n2),
                found: format!("{} columns", mat.ncols()),
            });
        }
        Ok(Self::build(n1, n2, MeasurementKind::DenseGaussian, Ensemble::Dense { mat }))
    }

    /// Rank-one operator with caller-supplied `a_j` (rows of `a`) and `b_j`.
    pub fn from_rank_one(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self> {
        check_dims(a.ncols(), b.ncols(), a.nrows())?;
        if a.nrows() != b.nrows() {
            return Err(Error::DimensionMismatch {
                expected: format!("{} rows", a.nrows()),
                found: format!("{} rows", b.nrows()),
            });
        }
        let (n1, n2) = (a.ncols(), b.ncols());
        Ok(Self::build(n1, n2, MeasurementKind::RankOneGaussian, Ensemble::RankOne { a, b }))
    }

    pub fn kind(&self) -> MeasurementKind {
        self.kind
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.n1, self.n2)
    }

    /// Length of the real measurement vector.
    pub fn len(&self) -> usize {
        match &self.ensemble {
            Ensemble::Dense { mat } => mat.nrows(),
            Ensemble::RankOne { a, .. } => a.nrows(),
            Ensemble::Fourier { rows, .. } => rows.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Average gain `trace(A* A) / (n1 n2)`: the value of `||A(Z)||^2 / ||Z||^2`
    /// averaged over directions `Z`.
    pub fn mean_gain(&self) -> f64 {
        self.gain
    }

    fn check_input(&self, x: &DenseMatrix) -> Result<()> {
        if x.shape() != (self.n1, self.n2) {
            return Err(Error::DimensionMismatch {
                expected: format!("{}x{}", self.n1, self.n2),
                found: format!("{}x{}", x.nrows(), x.ncols()),
            });
        }
        Ok(())
    }

    /// `A(X)`.
    pub fn apply(&self, x: &DenseMatrix) -> Result<DVector<f64>> {
        self.check_input(x)?;
        Ok(self.apply_unchecked(x))
    }

    pub(crate) fn apply_unchecked(&self, x: &DenseMatrix) -> DVector<f64> {
        match &self.ensemble {
            Ensemble::Dense { mat } => mat * DVector::from_column_slice(x.as_slice()),
            Ensemble::RankOne { a, b } => {
                let ax = a * x;
                DVector::from_iterator(a.nrows(), (0..a.nrows()).map(|j| ax.row(j).dot(&b.row(j))))
            }
            Ensemble::Fourier { fa_re, fa_im, fb_re, fb_im, rows } => {
                let p_re = fa_re * x;
                let p_im = fa_im * x;
                DVector::from_iterator(
                    rows.len(),
                    rows.iter().map(|&(j, part)| match part {
                        Part::Re => p_re.row(j).dot(&fb_re.row(j)) - p_im.row(j).dot(&fb_im.row(j)),
                        Part::Im => p_re.row(j).dot(&fb_im.row(j)) + p_im.row(j).dot(&fb_re.row(j)),
                    }),
                )
            }
        }
    }

    /// `A*(w)`.
    pub fn adjoint(&self, w: &DVector<f64>) -> Result<DenseMatrix> {
        if w.len() != self.len() {
            return Err(Error::DimensionMismatch {
                expected: format!("{} measurements", self.len()),
                found: format!("{}", w.len()),
            });
        }
        Ok(self.adjoint_unchecked(w))
    }

    pub(crate) fn adjoint_unchecked(&self, w: &DVector<f64>) -> DenseMatrix {
        match &self.ensemble {
            Ensemble::Dense { mat } => {
                let v = mat.tr_mul(w);
                DMatrix::from_column_slice(self.n1, self.n2, v.as_slice())
            }
            Ensemble::RankOne { a, b } => {
                let mut bw = b.clone();
                for (j, mut row) in bw.row_iter_mut().enumerate() {
                    row *= w[j];
                }
                a.tr_mul(&bw)
            }
            Ensemble::Fourier { fa_re, fa_im, fb_re, fb_im, rows } => {
                let m = fa_re.nrows();
                let mut wr = vec![0.0; m];
                let mut wi = vec![0.0; m];
                for (&(j, part), &val) in rows.iter().zip(w.iter()) {
                    match part {
                        Part::Re => wr[j] += val,
                        Part::Im => wi[j] += val,
                    }
                }
                // conj(c_j) (FB)_j with c_j = wr_j + i wi_j
                let mut t_re = fb_re.clone();
                let mut t_im = fb_im.clone();
                for j in 0..m {
                    for k in 0..self.n2 {
                        let (br, bi) = (fb_re[(j, k)], fb_im[(j, k)]);
                        t_re[(j, k)] = wr[j] * br + wi[j] * bi;
                        t_im[(j, k)] = wr[j] * bi - wi[j] * br;
                    }
                }
                fa_re.tr_mul(&t_re) - fa_im.tr_mul(&t_im)
            }
        }
    }

    /// `A*(e_q)`: the matrix `A_q` with `A(X)_q = <A_q, X>_F`.
    pub fn row_matrix(&self, q: usize) -> DenseMatrix {
        match &self.ensemble {
            Ensemble::Dense { mat } => {
                DMatrix::from_iterator(self.n1, self.n2, mat.row(q).iter().copied())
            }
            Ensemble::RankOne { a, b } => a.row(q).transpose() * b.row(q),
            Ensemble::Fourier { fa_re, fa_im, fb_re, fb_im, rows } => {
                let (j, part) = rows[q];
                let (ar, ai) = (fa_re.row(j).transpose(), fa_im.row(j).transpose());
                let (br, bi) = (fb_re.row(j), fb_im.row(j));
                match part {
                    Part::Re => &ar * br - &ai * bi,
                    Part::Im => &ar * bi + &ai * br,
                }
            }
        }
    }

    /// `m x n1*n2` matrix of the operator in the column-major flattening.
    pub fn materialize(&self) -> DMatrix<f64> {
        if let Ensemble::Dense { mat } = &self.ensemble {
            return mat.clone();
        }
        let n = self.n1 * self.n2;
        let mut out = DMatrix::zeros(self.len(), n);
        for q in 0..self.len() {
            let rm = self.row_matrix(q);
            for (c, v) in rm.as_slice().iter().enumerate() {
                out[(q, c)] = *v;
            }
        }
        out
    }

    /// Borrow the stored matrix of a dense operator.
    pub fn dense_matrix(&self) -> Option<&DMatrix<f64>> {
        match &self.ensemble {
            Ensemble::Dense { mat } => Some(mat),
            _ => None,
        }
    }

    /// Drops measurements that are exact linear copies of others.
    ///
    /// For real `A` and `B` the Fourier rows satisfy `(FA)_{m-j} = conj((FA)_j)`,
    /// so for real `X` only `m` of the `2m` flattened values are independent:
    /// real parts for `j = 0..=m/2` and imaginary parts for `0 < j < m/2`.
    /// Returns the reduced operator and the kept indices into the full
    /// measurement vector, or `None` when nothing is redundant.
    pub fn independent_rows(&self) -> Option<(MeasurementOperator, Vec<usize>)> {
        let Ensemble::Fourier { fa_re, fa_im, fb_re, fb_im, rows } = &self.ensemble else {
            return None;
        };
        let m = fa_re.nrows();
        let keep: Vec<usize> = rows
            .iter()
            .enumerate()
            .filter(|(_, &(j, part))| match part {
                Part::Re => j <= m / 2,
                Part::Im => j >= 1 && 2 * j < m,
            })
            .map(|(q, _)| q)
            .collect();
        if keep.len() == rows.len() {
            return None;
        }
        let reduced = MeasurementOperator::build(
            self.n1,
            self.n2,
            self.kind,
            Ensemble::Fourier {
                fa_re: fa_re.clone(),
                fa_im: fa_im.clone(),
                fb_re: fb_re.clone(),
                fb_im: fb_im.clone(),
                rows: keep.iter().map(|&q| rows[q]).collect(),
            },
        );
        Some((reduced, keep))
    }
}

/// Empirical lower bound on the `(r, s)`-RIP constant.
///
/// Draws `trials` random simultaneously rank-`r`, `s`-row-sparse `Z` and
/// returns `max |‖A(Z)‖² / (g ‖Z‖²) − 1|` where `g` is the operator's
/// [`mean_gain`](MeasurementOperator::mean_gain), so unnormalized ensembles
/// are compared at their natural scale.
pub fn rip_probe(op: &MeasurementOperator, r: usize, s: usize, trials: usize, seed: u64) -> Result<f64> {
    if trials == 0 {
        return Err(Error::InvalidParameter("rip_probe needs at least one trial".into()));
    }
    let (n1, n2) = op.dims();
    let mut worst: f64 = 0.0;
    for t in 0..trials {
        let z = generate_ground_truth(n1, n2, r, s, derive_seed(seed, &[t as u64]))?.x;
        let ratio = op.apply_unchecked(&z).norm_squared() / (op.mean_gain() * z.norm_squared());
        worst = worst.max((ratio - 1.0).abs());
    }
    Ok(worst)
}
