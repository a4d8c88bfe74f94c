//! The IRLS weight operator `W(Z) = W_lr(Z) + W_sp Z`.
//!
//! With `d_i = min(eps / sigma_i, 1)` for the `r_k` singular values above `eps`,
//! the rank part acts as
//!
//! ```text
//! W_lr(Z) = (I + U (D - I) U^T) Z (I + V (D - I) V^T)
//! ```
//!
//! which equals the full-basis form without ever building `U_perp`, `V_perp`.
//! The sparsity part scales row `i` by `min(delta^2 / ||X_i||^2, 1)`.
//!
//! ## Inverse
//!
//! Write `P1 = I + U (D - I) U^T`. Since the right factor is diagonal in the
//! basis `[V V_perp]`, the inverse splits into left solves:
//!
//! ```text
//! W^{-1}(Z) = sum_j M_j^{-1} Z v_j v_j^T + M_0^{-1} Z (I - V V^T),
//! M_j = d_j P1 + W_sp,   M_0 = P1 + W_sp.
//! ```
//!
//! Each `M_j` is diagonal plus a rank-`r_k` term, inverted with the
//! Sherman-Morrison-Woodbury identity.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::matrix::{inner, row_norms, DenseMatrix, SvdFactors};

/// Relative margin under which a value is counted as not exceeding its threshold.
const STRICT_MARGIN: f64 = 1e-12;

/// Frozen weight operator data for one IRLS iteration.
#[derive(Debug, Clone)]
pub struct WeightState {
    n1: usize,
    n2: usize,
    /// `n1 x r_k` leading left singular vectors.
    pub u: DMatrix<f64>,
    /// `n2 x r_k` leading right singular vectors.
    pub v: DMatrix<f64>,
    /// The `r_k` singular values above `epsilon`.
    pub sigma: Vec<f64>,
    pub epsilon: f64,
    pub delta: f64,
    pub r_k: usize,
    pub s_k: usize,
    pub row_norms: Vec<f64>,
    /// Diagonal of `W_sp`; entries in `(0, 1]`, or all zero for the initial
    /// identity weight.
    pub sp_diag: Vec<f64>,
    /// `d_i = eps / sigma_i` for the stored triplets.
    pub lr_diag: Vec<f64>,
    /// Positive factor applied to the whole operator; 1 unless [`WeightState::scaled`].
    scale: f64,
}

fn check_param(name: &str, value: f64) -> Result<()> {
    if value > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{name} must be positive, got {value}")))
    }
}

impl WeightState {
    /// `W = Id`, the weight used before the first iteration.
    pub fn identity(n1: usize, n2: usize) -> Self {
        WeightState {
            n1,
            n2,
            u: DMatrix::zeros(n1, 0),
            v: DMatrix::zeros(n2, 0),
            sigma: Vec::new(),
            epsilon: f64::INFINITY,
            delta: f64::INFINITY,
            r_k: 0,
            s_k: 0,
            row_norms: vec![0.0; n1],
            sp_diag: vec![0.0; n1],
            lr_diag: Vec::new(),
            scale: 1.0,
        }
    }

    /// Weight operator of `x` at smoothing `(epsilon, delta)`; infinite values
    /// are allowed and give identity parts.
    pub fn build(x: &DenseMatrix, epsilon: f64, delta: f64) -> Result<Self> {
        check_param("epsilon", epsilon)?;
        check_param("delta", delta)?;
        let svd = SvdFactors::compute(x);
        Ok(Self::from_parts(&svd, row_norms(x), epsilon, delta))
    }

    pub(crate) fn from_parts(svd: &SvdFactors, row_norms: Vec<f64>, epsilon: f64, delta: f64) -> Self {
        let (n1, n2) = (svd.u.nrows(), svd.v.nrows());
        let exceeds = |value: f64, threshold: f64| value > threshold * (1.0 + STRICT_MARGIN);
        let r_k = svd.sigma.iter().filter(|&&s| exceeds(s, epsilon)).count();
        let lead = svd.truncated(r_k);
        let sigma: Vec<f64> = lead.sigma.iter().copied().collect();
        let lr_diag = sigma.iter().map(|&s| epsilon / s).collect();
        let mut s_k = 0;
        let sp_diag = row_norms
            .iter()
            .map(|&n| {
                if exceeds(n, delta) {
                    s_k += 1;
                    (delta / n) * (delta / n)
                } else {
                    1.0
                }
            })
            .collect();
        WeightState {
            n1,
            n2,
            u: lead.u,
            v: lead.v,
            sigma,
            epsilon,
            delta,
            r_k,
            s_k,
            row_norms,
            sp_diag,
            lr_diag,
            scale: 1.0,
        }
    }

    /// The operator `c W` for `c > 0`. `apply_lr` and `apply_sp` stay unscaled.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        check_param("scale", c)?;
        Ok(WeightState { scale: self.scale * c, ..self.clone() })
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.n1, self.n2)
    }

    fn check(&self, z: &DenseMatrix) {
        assert_eq!(z.shape(), (self.n1, self.n2), "weight operator dimension mismatch");
    }

    /// `W_lr(Z)`.
    pub fn apply_lr(&self, z: &DenseMatrix) -> DenseMatrix {
        self.check(z);
        if self.r_k == 0 {
            return z.clone();
        }
        let shrink = DVector::from_iterator(self.r_k, self.lr_diag.iter().map(|d| d - 1.0));
        let mut utz = self.u.tr_mul(z);
        for (j, mut row) in utz.row_iter_mut().enumerate() {
            row *= shrink[j];
        }
        let left = z + &self.u * utz;
        let mut zv = &left * &self.v;
        for (j, mut col) in zv.column_iter_mut().enumerate() {
            col *= shrink[j];
        }
        left + zv * self.v.transpose()
    }

    /// `W_sp Z` (row scaling).
    pub fn apply_sp(&self, z: &DenseMatrix) -> DenseMatrix {
        self.check(z);
        let mut out = z.clone();
        for (i, mut row) in out.row_iter_mut().enumerate() {
            row *= self.sp_diag[i];
        }
        out
    }

    /// `W(Z) = W_lr(Z) + W_sp Z`.
    pub fn apply(&self, z: &DenseMatrix) -> DenseMatrix {
        let mut out = self.apply_lr(z);
        for i in 0..self.n1 {
            let w = self.sp_diag[i];
            if w != 0.0 {
                for k in 0..self.n2 {
                    out[(i, k)] += w * z[(i, k)];
                }
            }
        }
        if self.scale != 1.0 {
            out *= self.scale;
        }
        out
    }

    /// Factorizations for repeated exact inversion.
    pub fn inverse(&self) -> WeightInverse {
        WeightInverse::new(self)
    }

    /// `W^{-1}(Z)` with `||W(X) - Z||_F <= tol ||Z||_F`.
    ///
    /// Uses the structured inverse and refines it with preconditioned
    /// conjugate gradients whenever rounding leaves the residual above `tol`.
    pub fn apply_inv(&self, z: &DenseMatrix, tol: f64) -> Result<DenseMatrix> {
        let inv = self.inverse();
        let x0 = inv.apply(z);
        pcg(self, z, x0, tol, self.cg_cap(), |r| inv.apply(r))
    }

    /// `W^{-1}(Z)` by conjugate gradients preconditioned with the entrywise
    /// diagonal of `W`, without the structured inverse.
    pub fn apply_inv_cg(&self, z: &DenseMatrix, tol: f64) -> Result<DenseMatrix> {
        let diag = self.diagonal();
        let x0 = DMatrix::zeros(self.n1, self.n2);
        pcg(self, z, x0, tol, self.cg_cap(), |r| r.component_div(&diag))
    }

    fn cg_cap(&self) -> usize {
        10 * (self.n1 + self.n2)
    }

    /// Entrywise diagonal of `W` in the standard basis.
    pub fn diagonal(&self) -> DenseMatrix {
        let p1: Vec<f64> = (0..self.n1)
            .map(|i| 1.0 + (0..self.r_k).map(|j| (self.lr_diag[j] - 1.0) * self.u[(i, j)].powi(2)).sum::<f64>())
            .collect();
        let p2: Vec<f64> = (0..self.n2)
            .map(|k| 1.0 + (0..self.r_k).map(|j| (self.lr_diag[j] - 1.0) * self.v[(k, j)].powi(2)).sum::<f64>())
            .collect();
        DMatrix::from_fn(self.n1, self.n2, |i, k| self.scale * (p1[i] * p2[k] + self.sp_diag[i]))
    }
}

fn pcg<P>(
    ws: &WeightState,
    b: &DenseMatrix,
    mut x: DenseMatrix,
    tol: f64,
    cap: usize,
    precond: P,
) -> Result<DenseMatrix>
where
    P: Fn(&DenseMatrix) -> DenseMatrix,
{
    if tol <= 0.0 {
        return Err(Error::InvalidParameter(format!("tolerance must be positive, got {tol}")));
    }
    let b_norm = b.norm();
    if b_norm == 0.0 {
        return Ok(DMatrix::zeros(b.nrows(), b.ncols()));
    }
    let mut r = b - ws.apply(&x);
    if r.norm() <= tol * b_norm {
        return Ok(x);
    }
    let mut zr = precond(&r);
    let mut p = zr.clone();
    let mut rz = inner(&r, &zr);
    for _ in 0..cap {
        let wp = ws.apply(&p);
        let alpha = rz / inner(&p, &wp);
        x += alpha * &p;
        r -= alpha * &wp;
        if r.norm() <= tol * b_norm {
            // recompute to guard against drift of the recursive residual
            let true_res = (b - ws.apply(&x)).norm();
            if true_res <= tol * b_norm {
                return Ok(x);
            }
            r = b - ws.apply(&x);
        }
        zr = precond(&r);
        let rz_next = inner(&r, &zr);
        p = &zr + (rz_next / rz) * p;
        rz = rz_next;
    }
    Err(Error::IterationLimit { iterations: cap, residual: (b - ws.apply(&x)).norm() / b_norm })
}

/// One diagonal-plus-low-rank block `diag(b) + U C U^T` with `C` negative
/// definite, stored for Woodbury solves.
#[derive(Debug, Clone)]
struct WoodburyBlock {
    inv_diag: DVector<f64>,
    /// `B^{-1} U`
    binv_u: DMatrix<f64>,
    /// Cholesky factor of `-(C^{-1} + U^T B^{-1} U)`; absent when `r_k = 0`.
    neg_capacitance: Option<Cholesky<f64, Dyn>>,
}

impl WoodburyBlock {
    fn new(scale: f64, ws: &WeightState) -> Self {
        let inv_diag = DVector::from_iterator(ws.n1, ws.sp_diag.iter().map(|&w| 1.0 / (scale + w)));
        let mut binv_u = ws.u.clone();
        for (i, mut row) in binv_u.row_iter_mut().enumerate() {
            row *= inv_diag[i];
        }
        let neg_capacitance = if ws.r_k == 0 {
            None
        } else {
            // -(C^{-1} + U^T B^{-1} U) with C = scale * diag(d - 1). Expanding
            // 1 / (scale + w) = 1 / scale - w / (scale (scale + w)) and using
            // U^T U = I turns it into a sum of two PSD terms:
            //   (1 / scale) [diag(d / (1 - d)) + U^T diag(w / (scale + w)) U]
            // which avoids cancelling two huge terms once scale and w are tiny.
            let mut weighted_u = ws.u.clone();
            for (i, mut row) in weighted_u.row_iter_mut().enumerate() {
                let w = ws.sp_diag[i];
                row *= w / (scale + w);
            }
            let mut k = ws.u.tr_mul(&weighted_u);
            for l in 0..ws.r_k {
                let d = ws.lr_diag[l];
                k[(l, l)] += d / (1.0 - d);
            }
            k /= scale;
            Some(Cholesky::new_with_substitute(k, f64::MIN_POSITIVE).expect("capacitance is positive definite"))
        };
        WoodburyBlock { inv_diag, binv_u, neg_capacitance }
    }

    /// Solves for all columns of `rhs`.
    fn solve(&self, rhs: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = rhs.clone();
        for (i, mut row) in out.row_iter_mut().enumerate() {
            row *= self.inv_diag[i];
        }
        if let Some(chol) = &self.neg_capacitance {
            // B^{-1} - B^{-1} U K^{-1} U^T B^{-1} with K = -(neg capacitance)
            let t = chol.solve(&self.binv_u.tr_mul(rhs));
            out += &self.binv_u * t;
        }
        out
    }
}

/// Exact structured inverse of a [`WeightState`].
#[derive(Debug, Clone)]
pub struct WeightInverse {
    v: DMatrix<f64>,
    /// One block per stored right singular vector.
    spectral: Vec<WoodburyBlock>,
    /// The block acting on the complement of `V`.
    complement: WoodburyBlock,
    scale: f64,
}

impl WeightInverse {
    pub fn new(ws: &WeightState) -> Self {
        WeightInverse {
            v: ws.v.clone(),
            spectral: ws.lr_diag.iter().map(|&d| WoodburyBlock::new(d, ws)).collect(),
            complement: WoodburyBlock::new(1.0, ws),
            scale: ws.scale,
        }
    }

    /// `W^{-1}(Z)` up to rounding.
    pub fn apply(&self, z: &DenseMatrix) -> DenseMatrix {
        if self.spectral.is_empty() {
            return self.complement.solve(z) / self.scale;
        }
        let zv = z * &self.v;
        let rest = z - &zv * self.v.transpose();
        let mut out = self.complement.solve(&rest);
        let mut cols = DMatrix::zeros(z.nrows(), self.spectral.len());
        for (j, block) in self.spectral.iter().enumerate() {
            cols.set_column(j, &block.solve(&zv.columns(j, 1).into_owned()).column(0));
        }
        out += cols * self.v.transpose();
        if self.scale != 1.0 {
            out /= self.scale;
        }
        out
    }
}
