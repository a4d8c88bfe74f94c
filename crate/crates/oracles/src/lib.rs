//! Brute-force reference computations used to cross-check `irls-core`.
//!
//! Everything here works on explicit dense representations (full bases,
//! assembled operators, full SVDs) and is only meant for small problems.

use irls_core::{DenseMatrix, Error, MeasurementOperator, Result, WeightState};
use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Size limits for the dense oracles.
#[derive(Debug, Clone, Copy)]
pub struct OracleBudget {
    /// Largest `n1 * n2`.
    pub max_entries: usize,
    pub max_measurements: usize,
}

impl Default for OracleBudget {
    fn default() -> Self {
        OracleBudget { max_entries: 2500, max_measurements: 5000 }
    }
}

impl OracleBudget {
    pub fn check(&self, n1: usize, n2: usize, m: usize) -> Result<()> {
        if n1 * n2 > self.max_entries {
            return Err(Error::BudgetExceeded(format!("{n1}x{n2} exceeds {} entries", self.max_entries)));
        }
        if m > self.max_measurements {
            return Err(Error::BudgetExceeded(format!("{m} measurements exceed {}", self.max_measurements)));
        }
        Ok(())
    }
}

/// Unit matrix `E_{ij}`.
fn unit(n1: usize, n2: usize, i: usize, j: usize) -> DenseMatrix {
    let mut e = DMatrix::zeros(n1, n2);
    e[(i, j)] = 1.0;
    e
}

/// Matrix of `A` acting on column-major vectorizations, built column by
/// column from `A(E_ij)`.
pub fn operator_matrix(op: &MeasurementOperator, budget: &OracleBudget) -> Result<DMatrix<f64>> {
    let (n1, n2) = op.dims();
    budget.check(n1, n2, op.len())?;
    let mut a = DMatrix::zeros(op.len(), n1 * n2);
    for j in 0..n2 {
        for i in 0..n1 {
            a.set_column(i + j * n1, &op.apply(&unit(n1, n2, i, j))?);
        }
    }
    Ok(a)
}

/// Matrix of `W` on column-major vectorizations, from `W(E_ij)`.
pub fn weight_matrix(ws: &WeightState, budget: &OracleBudget) -> Result<DMatrix<f64>> {
    let (n1, n2) = ws.dims();
    budget.check(n1, n2, 0)?;
    let n = n1 * n2;
    let mut w = DMatrix::zeros(n, n);
    for j in 0..n2 {
        for i in 0..n1 {
            let col = ws.apply(&unit(n1, n2, i, j));
            w.set_column(i + j * n1, &DVector::from_column_slice(col.as_slice()));
        }
    }
    Ok(w)
}

/// Central differences with step `h * max(1, |X_ij|)`.
pub fn finite_diff_grad<F: Fn(&DenseMatrix) -> f64>(f: F, x: &DenseMatrix, h: f64) -> DenseMatrix {
    let mut g = DMatrix::zeros(x.nrows(), x.ncols());
    let mut probe = x.clone();
    for j in 0..x.ncols() {
        for i in 0..x.nrows() {
            let step = h * x[(i, j)].abs().max(1.0);
            let orig = probe[(i, j)];
            probe[(i, j)] = orig + step;
            let plus = f(&probe);
            probe[(i, j)] = orig - step;
            let minus = f(&probe);
            probe[(i, j)] = orig;
            g[(i, j)] = (plus - minus) / (2.0 * step);
        }
    }
    g
}

/// Orthonormal basis (as columns) of the complement of the column span of `q`,
/// read off the unit eigenvectors of `I - Q Q^T`.
fn complement(q: &DMatrix<f64>, n: usize) -> DMatrix<f64> {
    let proj = DMatrix::identity(n, n) - q * q.transpose();
    let eig = SymmetricEigen::new(proj);
    let cols: Vec<DVector<f64>> = (0..n)
        .filter(|&i| eig.eigenvalues[i] > 0.5)
        .map(|i| eig.eigenvectors.column(i).into_owned())
        .collect();
    if cols.is_empty() {
        DMatrix::zeros(n, 0)
    } else {
        DMatrix::from_columns(&cols)
    }
}

/// Orthonormal basis of `ker A`, one `n1 x n2` matrix per direction.
pub fn kernel_basis(op: &MeasurementOperator, budget: &OracleBudget) -> Result<Vec<DenseMatrix>> {
    let (n1, n2) = op.dims();
    let a = operator_matrix(op, budget)?;
    let n = n1 * n2;
    // row space from the SVD of A
    let svd = a.clone().svd(false, true);
    let v_t = svd.v_t.expect("requested");
    let s_max = svd.singular_values.max();
    let tol = s_max * 1e-12 * (a.nrows().max(n) as f64);
    let rows: Vec<_> = (0..svd.singular_values.len())
        .filter(|&i| svd.singular_values[i] > tol)
        .map(|i| v_t.row(i).transpose())
        .collect();
    let row_space = if rows.is_empty() { DMatrix::zeros(n, 0) } else { DMatrix::from_columns(&rows) };
    let kernel = complement(&row_space, n);
    Ok(kernel.column_iter().map(|c| DMatrix::from_column_slice(n1, n2, c.as_slice())).collect())
}

/// Full SVD `X = U diag(sigma) V^T` with square orthogonal `U`, `V` and
/// `sigma` padded with zeros.
pub fn full_svd(x: &DenseMatrix) -> (DMatrix<f64>, Vec<f64>, DMatrix<f64>) {
    let (n1, n2) = x.shape();
    let svd = x.clone().svd(true, true);
    let mut idx: Vec<usize> = (0..svd.singular_values.len()).collect();
    idx.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let u_thin = DMatrix::from_columns(&idx.iter().map(|&i| svd.u.as_ref().unwrap().column(i)).collect::<Vec<_>>());
    let v_t = svd.v_t.as_ref().unwrap();
    let v_thin = DMatrix::from_columns(&idx.iter().map(|&i| v_t.row(i).transpose()).collect::<Vec<_>>());
    let mut sigma: Vec<f64> = idx.iter().map(|&i| svd.singular_values[i]).collect();
    let u = extend(&u_thin, n1);
    let v = extend(&v_thin, n2);
    sigma.resize(n1.max(n2), 0.0);
    (u, sigma, v)
}

fn extend(q: &DMatrix<f64>, n: usize) -> DMatrix<f64> {
    let rest = complement(q, n);
    let mut full = DMatrix::zeros(n, n);
    full.columns_mut(0, q.ncols()).copy_from(q);
    full.columns_mut(q.ncols(), rest.ncols()).copy_from(&rest);
    full
}

/// `W_lr(Z) = [U U_perp] (H o ([U U_perp]^T Z [V V_perp])) [V V_perp]^T`
/// with `H_ij = min(eps / sigma_i, 1) min(eps / sigma_j, 1)`, where
/// `sigma_i = 0` beyond the rank.
pub fn hadamard_weight_oracle(x: &DenseMatrix, eps: f64, z: &DenseMatrix) -> DenseMatrix {
    let (n1, n2) = x.shape();
    let (u, sigma, v) = full_svd(x);
    let factor = |i: usize| {
        let s = sigma.get(i).copied().unwrap_or(0.0);
        if s > eps {
            eps / s
        } else {
            1.0
        }
    };
    let mut coeffs = u.transpose() * z * &v;
    for j in 0..n2 {
        for i in 0..n1 {
            coeffs[(i, j)] *= factor(i) * factor(j);
        }
    }
    u * coeffs * v.transpose()
}

/// `W_sp Z` with the diagonal `min(delta^2 / ||X_i||^2, 1)` written out.
pub fn sparsity_weight_oracle(x: &DenseMatrix, delta: f64, z: &DenseMatrix) -> DenseMatrix {
    let mut out = z.clone();
    for i in 0..x.nrows() {
        let n2: f64 = x.row(i).iter().map(|v| v * v).sum();
        let w = if n2 > delta * delta { delta * delta / n2 } else { 1.0 };
        out.row_mut(i).scale_mut(w);
    }
    out
}

/// Solves `[W A^T; A 0] [x; lambda] = [0; y]` densely.
pub fn dense_kkt_solve(
    op: &MeasurementOperator,
    y: &DVector<f64>,
    ws: &WeightState,
    budget: &OracleBudget,
) -> Result<DenseMatrix> {
    let (n1, n2) = op.dims();
    let a = operator_matrix(op, budget)?;
    let w = weight_matrix(ws, budget)?;
    let (m, n) = a.shape();
    let mut kkt = DMatrix::zeros(n + m, n + m);
    kkt.view_mut((0, 0), (n, n)).copy_from(&w);
    kkt.view_mut((0, n), (n, m)).copy_from(&a.transpose());
    kkt.view_mut((n, 0), (m, n)).copy_from(&a);
    let mut rhs = DVector::zeros(n + m);
    rhs.rows_mut(n, m).copy_from(y);
    let sol = kkt
        .full_piv_lu()
        .solve(&rhs)
        .ok_or_else(|| Error::SingularSystem("KKT matrix is singular".into()))?;
    Ok(DMatrix::from_column_slice(n1, n2, sol.rows(0, n).as_slice()))
}

/// `i`-th largest row norm (one-based) by sorting the norms themselves.
pub fn sorted_row_norm(x: &DenseMatrix, i: usize) -> f64 {
    let mut norms: Vec<f64> = x.row_iter().map(|r| r.norm()).collect();
    norms.sort_by(|a, b| b.total_cmp(a));
    norms[i - 1]
}

/// `sum_{i > r} sigma_i^2`, the Eckart-Young truncation error squared.
pub fn eckart_young_tail(x: &DenseMatrix, r: usize) -> f64 {
    let (_, sigma, _) = full_svd(x);
    sigma.iter().skip(r).map(|s| s * s).sum()
}
