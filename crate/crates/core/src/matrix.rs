//! Dense matrix helpers, ground-truth generation and the projections onto
//! low-rank, row-sparse and tangent sets.

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;

use crate::error::{Error, Result};
use crate::rng::{normal_matrix, normal_vector, rng_from_seed};

/// Real `n1 x n2` matrix. All iterates, ground truths and residuals use it.
pub type DenseMatrix = DMatrix<f64>;

/// Thin SVD `U diag(sigma) V^T` with singular values sorted nonincreasing.
#[derive(Debug, Clone)]
pub struct SvdFactors {
    pub u: DMatrix<f64>,
    pub sigma: DVector<f64>,
    pub v: DMatrix<f64>,
}

impl SvdFactors {
    /// Full thin SVD with `min(n1, n2)` triplets.
    ///
    /// Computed with faer: nalgebra's bidiagonal SVD can return factors with
    /// large backward error on exactly rank-deficient input, which `H_s`
    /// outputs routinely are.
    ///
    /// Equal singular values keep the order returned by the decomposition
    /// (stable sort), which realizes the smallest-index tie convention.
    pub fn compute(x: &DenseMatrix) -> Self {
        let (n1, n2) = x.shape();
        let k = n1.min(n2);
        if k == 0 {
            return SvdFactors { u: DMatrix::zeros(n1, 0), sigma: DVector::zeros(0), v: DMatrix::zeros(n2, 0) };
        }
        let mat = faer::Mat::<f64>::from_fn(n1, n2, |i, j| x[(i, j)]);
        let Ok(svd) = mat.thin_svd() else {
            // non-finite input; NaN factors propagate to the caller's checks
            return SvdFactors {
                u: DMatrix::from_element(n1, k, f64::NAN),
                sigma: DVector::from_element(k, f64::NAN),
                v: DMatrix::from_element(n2, k, f64::NAN),
            };
        };
        let (u_f, s_f, v_f) = (svd.U(), svd.S().column_vector(), svd.V());
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&a, &b| s_f[b].partial_cmp(&s_f[a]).unwrap_or(std::cmp::Ordering::Equal));
        let u = DMatrix::from_fn(n1, k, |i, j| u_f[(i, order[j])]);
        let v = DMatrix::from_fn(n2, k, |i, j| v_f[(i, order[j])]);
        let sigma = DVector::from_iterator(k, order.iter().map(|&j| s_f[j]));
        SvdFactors { u, sigma, v }
    }

    pub fn len(&self) -> usize {
        self.sigma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sigma.is_empty()
    }

    /// Leading `k` triplets.
    pub fn truncated(&self, k: usize) -> SvdFactors {
        let k = k.min(self.len());
        SvdFactors {
            u: self.u.columns(0, k).into_owned(),
            sigma: self.sigma.rows(0, k).into_owned(),
            v: self.v.columns(0, k).into_owned(),
        }
    }

    /// `U diag(sigma) V^T`.
    pub fn reconstruct(&self) -> DenseMatrix {
        let mut us = self.u.clone();
        for (j, s) in self.sigma.iter().enumerate() {
            us.column_mut(j).scale_mut(*s);
        }
        us * self.v.transpose()
    }

    /// Number of singular values above `rel_tol * sigma_1`.
    pub fn numeric_rank(&self, rel_tol: f64) -> usize {
        match self.sigma.iter().next() {
            Some(&s1) if s1 > 0.0 => self.sigma.iter().filter(|&&s| s > rel_tol * s1).count(),
            _ => 0,
        }
    }
}

/// Simultaneously rank-`r` and `s`-row-sparse matrix of unit Frobenius norm.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub x: DenseMatrix,
    /// Sorted zero-based indices of the nonzero rows.
    pub support: Vec<usize>,
    pub rank: usize,
    pub row_sparsity: usize,
}

/// Draws `X = U diag(d) V^T / ||U diag(d) V^T||_F` where `U` has `s` nonzero
/// rows at uniformly random positions and `U`, `d`, `V` are standard normal.
///
/// Draw order from the seeded stream: support indices, `U` restricted to the
/// support (row-major), `d`, then `V` (row-major). Degenerate draws (rank or
/// support loss, a probability-zero event) are redrawn from the same stream.
pub fn generate_ground_truth(n1: usize, n2: usize, r: usize, s: usize, seed: u64) -> Result<GroundTruth> {
    if n1 == 0 || n2 == 0 || r == 0 || r > s.min(n2) || s > n1 {
        return Err(Error::InvalidDimension(format!(
            "need 1 <= r <= min(s, n2) and r <= s <= n1, got n1={n1}, n2={n2}, r={r}, s={s}"
        )));
    }
    let mut rng = rng_from_seed(seed);
    loop {
        let mut support = sample(&mut rng, n1, s).into_vec();
        support.sort_unstable();
        let u_rows = normal_matrix(&mut rng, s, r);
        let d = normal_vector(&mut rng, r);
        let v = normal_matrix(&mut rng, n2, r);

        let mut u = DMatrix::zeros(n1, r);
        for (k, &row) in support.iter().enumerate() {
            for j in 0..r {
                u[(row, j)] = u_rows[(k, j)] * d[j];
            }
        }
        let mut x = u * v.transpose();
        let norm = x.norm();
        if norm == 0.0 || !norm.is_finite() {
            continue;
        }
        x /= norm;

        let norms = row_norms(&x);
        let nonzero = support.iter().all(|&i| norms[i] > 0.0);
        if !nonzero || SvdFactors::compute(&x).numeric_rank(1e-12) != r {
            continue;
        }
        return Ok(GroundTruth { x, support, rank: r, row_sparsity: s });
    }
}

/// Frobenius inner product `<A, B>`.
pub fn inner(a: &DenseMatrix, b: &DenseMatrix) -> f64 {
    a.dot(b)
}

/// Euclidean norms of the rows.
pub fn row_norms(x: &DenseMatrix) -> Vec<f64> {
    x.row_iter().map(|row| row.norm()).collect()
}

/// Row indices sorted by nonincreasing row norm, ties by smaller index first.
pub fn rows_by_norm(norms: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..norms.len()).collect();
    order.sort_by(|&a, &b| norms[b].partial_cmp(&norms[a]).unwrap_or(std::cmp::Ordering::Equal));
    order
}

/// `rho_i(X)`: the `i`-th largest row norm, one-based.
pub fn rho(x: &DenseMatrix, i: usize) -> Result<f64> {
    let n1 = x.nrows();
    if i == 0 || i > n1 {
        return Err(Error::IndexOutOfRange { index: i, len: n1 });
    }
    let norms = row_norms(x);
    let order = rows_by_norm(&norms);
    Ok(norms[order[i - 1]])
}

/// `H_s`: keeps the `s` rows of largest norm and zeroes the rest.
pub fn hard_threshold_rows(x: &DenseMatrix, s: usize) -> DenseMatrix {
    let order = rows_by_norm(&row_norms(x));
    let mut out = x.clone();
    for &i in order.iter().skip(s) {
        out.row_mut(i).fill(0.0);
    }
    out
}

/// Indices of the `s` rows of largest norm, sorted ascending.
pub fn top_rows(x: &DenseMatrix, s: usize) -> Vec<usize> {
    let mut rows: Vec<usize> = rows_by_norm(&row_norms(x)).into_iter().take(s).collect();
    rows.sort_unstable();
    rows
}

/// `T_r`: best rank-`r` approximation in Frobenius norm.
pub fn truncate_rank(x: &DenseMatrix, r: usize) -> DenseMatrix {
    if r >= x.nrows().min(x.ncols()) {
        return x.clone();
    }
    if r == 0 {
        return DMatrix::zeros(x.nrows(), x.ncols());
    }
    SvdFactors::compute(x).truncated(r).reconstruct()
}

pub(crate) fn gram_deviation(q: &DMatrix<f64>) -> f64 {
    let g = q.transpose() * q;
    let mut dev: f64 = 0.0;
    for i in 0..g.nrows() {
        for j in 0..g.ncols() {
            let target = if i == j { 1.0 } else { 0.0 };
            dev = dev.max((g[(i, j)] - target).abs());
        }
    }
    dev
}

/// Orthogonal projection onto the tangent space `T_{U,V}` or, with a row set,
/// onto `T_{U,V,S}`:
///
/// `U U^T Z + P_S Z V V^T - U U^T Z V V^T`.
pub fn project_tangent(
    z: &DenseMatrix,
    u: &DMatrix<f64>,
    v: &DMatrix<f64>,
    support: Option<&[usize]>,
) -> Result<DenseMatrix> {
    let (n1, n2) = z.shape();
    if u.nrows() != n1 || v.nrows() != n2 || u.ncols() != v.ncols() {
        return Err(Error::DimensionMismatch {
            expected: format!("U: {n1}xr, V: {n2}xr"),
            found: format!("U: {}x{}, V: {}x{}", u.nrows(), u.ncols(), v.nrows(), v.ncols()),
        });
    }
    let dev = gram_deviation(u).max(gram_deviation(v));
    if dev > 1e-8 {
        return Err(Error::NonOrthonormal(dev));
    }
    let ut_z = u.transpose() * z;
    let uut_z = u * &ut_z;
    let zv = z * v;
    let mut zvvt = &zv * v.transpose();
    if let Some(rows) = support {
        let mut keep = vec![false; n1];
        for &i in rows {
            if i >= n1 {
                return Err(Error::IndexOutOfRange { index: i + 1, len: n1 });
            }
            keep[i] = true;
        }
        for (i, k) in keep.iter().enumerate() {
            if !k {
                zvvt.row_mut(i).fill(0.0);
            }
        }
    }
    let uut_zvvt = u * (ut_z * v) * v.transpose();
    Ok(uut_z + zvvt - uut_zvvt)
}

/// `||X - X_ref||_F / ||X_ref||_F`.
pub fn rel_frobenius_error(x: &DenseMatrix, x_ref: &DenseMatrix) -> Result<f64> {
    if x.shape() != x_ref.shape() {
        return Err(Error::DimensionMismatch {
            expected: format!("{:?}", x_ref.shape()),
            found: format!("{:?}", x.shape()),
        });
    }
    let denom = x_ref.norm();
    if denom == 0.0 {
        return Err(Error::ZeroReference);
    }
    Ok((x - x_ref).norm() / denom)
}

/// Rows whose norm exceeds `rel_tol` times the largest row norm.
pub fn row_support(x: &DenseMatrix, rel_tol: f64) -> Vec<usize> {
    let norms = row_norms(x);
    let max = norms.iter().copied().fold(0.0, f64::max);
    if max == 0.0 {
        return Vec::new();
    }
    (0..norms.len()).filter(|&i| norms[i] > rel_tol * max).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    #[test]
    fn svd_is_accurate_on_rank_deficient_input() {
        use crate::rng::{normal_matrix, rng_from_seed};
        for seed in 0..200u64 {
            let mut rng = rng_from_seed(seed);
            let (n1, n2) = (8 + (seed % 20) as usize, 4 + (seed % 7) as usize);
            let x = normal_matrix(&mut rng, n1, 2) * normal_matrix(&mut rng, 2, n2);
            let f = SvdFactors::compute(&x);
            assert!((f.reconstruct() - &x).norm() <= 1e-13 * x.norm(), "seed {seed}");
            assert_eq!(f.numeric_rank(1e-12), 2);
        }
    }

    #[test]
    fn ground_truth_shape_and_norm() {
        let gt = generate_ground_truth(256, 40, 5, 20, 7).unwrap();
        assert_eq!(gt.support.len(), 20);
        assert!((gt.x.norm() - 1.0).abs() < 1e-12);
        assert_eq!(SvdFactors::compute(&gt.x).numeric_rank(1e-12), 5);
        let norms = row_norms(&gt.x);
        for (i, n) in norms.iter().enumerate() {
            assert_eq!(*n > 0.0, gt.support.contains(&i), "row {i}");
        }
    }

    #[test]
    fn minimal_ground_truth() {
        let gt = generate_ground_truth(4, 4, 1, 1, 99).unwrap();
        assert_eq!(row_support(&gt.x, 0.0).len(), 1);
        assert_eq!(SvdFactors::compute(&gt.x).numeric_rank(1e-12), 1);
    }

    #[test]
    fn ground_truth_is_deterministic() {
        let a = generate_ground_truth(30, 8, 2, 5, 1234).unwrap();
        let b = generate_ground_truth(30, 8, 2, 5, 1234).unwrap();
        assert_eq!(a.x, b.x);
        assert_eq!(a.support, b.support);
    }

    #[test]
    fn ground_truth_rejects_bad_orders() {
        assert!(generate_ground_truth(10, 4, 5, 5, 0).is_err());
        assert!(generate_ground_truth(10, 4, 3, 2, 0).is_err());
        assert!(generate_ground_truth(10, 4, 1, 11, 0).is_err());
        assert!(generate_ground_truth(10, 4, 0, 2, 0).is_err());
    }

    #[test]
    fn rho_examples() {
        let eye = DMatrix::<f64>::identity(3, 3);
        assert_eq!(rho(&eye, 1).unwrap(), 1.0);
        assert_eq!(rho(&eye, 3).unwrap(), 1.0);
        let x = dmatrix![3.0, 0.0; 1.0, 0.0; 0.0, 2.0];
        assert_eq!(rho(&x, 2).unwrap(), 2.0);
        assert!(matches!(rho(&x, 0), Err(Error::IndexOutOfRange { .. })));
        assert!(matches!(rho(&x, 4), Err(Error::IndexOutOfRange { .. })));
    }

    #[test]
    fn hard_threshold_extremes_and_ties() {
        let x = dmatrix![1.0, 0.0; 0.0, 2.0; 2.0, 0.0; 0.5, 0.5];
        assert_eq!(hard_threshold_rows(&x, 4), x);
        assert_eq!(hard_threshold_rows(&x, 0), DMatrix::zeros(4, 2));
        // rows 2 and 3 (one-based) tie; the smaller index wins
        let kept = hard_threshold_rows(&x, 1);
        assert_eq!(kept.row(1).norm(), 2.0);
        assert_eq!(kept.row(2).norm(), 0.0);
    }

    #[test]
    fn truncate_rank_diagonal() {
        let x = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 2.0, 1.0]));
        let t = truncate_rank(&x, 2);
        let expected = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 2.0, 0.0]));
        assert!((t - expected).norm() < 1e-12);
        assert!((truncate_rank(&x, 3) - &x).norm() < 1e-12);
    }

    #[test]
    fn tangent_rejects_non_orthonormal() {
        let z = DMatrix::zeros(3, 3);
        let u = dmatrix![1.0; 1.0; 0.0];
        let v = dmatrix![1.0; 0.0; 0.0];
        assert!(matches!(project_tangent(&z, &u, &v, None), Err(Error::NonOrthonormal(_))));
    }

    #[test]
    fn rel_error_examples() {
        let x = dmatrix![1.0, 2.0; 3.0, 4.0];
        assert_eq!(rel_frobenius_error(&x, &x).unwrap(), 0.0);
        assert!((rel_frobenius_error(&(2.0 * &x), &x).unwrap() - 1.0).abs() < 1e-15);
        assert!((rel_frobenius_error(&DMatrix::zeros(2, 2), &x).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(rel_frobenius_error(&x, &DMatrix::zeros(2, 2)), Err(Error::ZeroReference));
    }
}
