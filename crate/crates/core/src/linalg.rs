//! Small dense helpers shared by the filters and samplers.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

/// Relative cutoff below which eigenvalues of a covariance are treated as zero.
pub const EIGEN_REL_TOL: f64 = 1e-10;

pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let a = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = a;
            m[(j, i)] = a;
        }
    }
}

pub fn symmetrized(mut m: DMatrix<f64>) -> DMatrix<f64> {
    symmetrize(&mut m);
    m
}

pub fn is_zero(m: &DMatrix<f64>) -> bool {
    m.iter().all(|&x| x == 0.0)
}

/// Pivoted (rank-revealing) Cholesky factor of a PSD matrix.
///
/// Returns an `n × r` matrix `L` with `L Lᵀ ≈ a`, where `r` is the number of
/// pivots whose residual diagonal exceeds `rel_tol · trace(a)`. The zero
/// matrix yields an `n × 0` factor.
pub fn pivoted_cholesky(a: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    let n = a.nrows();
    let trace: f64 = (0..n).map(|i| a[(i, i)].max(0.0)).sum();
    if trace <= 0.0 {
        return DMatrix::zeros(n, 0);
    }
    let tol = rel_tol * trace;
    let mut residual = a.clone();
    let mut cols: Vec<DVector<f64>> = Vec::with_capacity(n);
    for _ in 0..n {
        let (p, d) = (0..n)
            .map(|i| (i, residual[(i, i)]))
            .fold((0, f64::NEG_INFINITY), |acc, x| if x.1 > acc.1 { x } else { acc });
        if d <= tol {
            break;
        }
        let col = residual.column(p) / d.sqrt();
        residual -= &col * col.transpose();
        cols.push(col);
    }
    if cols.is_empty() {
        return DMatrix::zeros(n, 0);
    }
    DMatrix::from_columns(&cols)
}

/// Factor `R` (n × r) with `R Rᵀ = q Π qᵀ`, keeping only eigenvalues above
/// `rel_tol · λ_max`.
pub fn eigen_factor(a: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    let n = a.nrows();
    if n == 0 || is_zero(a) {
        return DMatrix::zeros(n, 0);
    }
    let eig = SymmetricEigen::new(symmetrized(a.clone()));
    let lmax = eig.eigenvalues.iter().cloned().fold(0.0_f64, f64::max);
    if lmax <= 0.0 {
        return DMatrix::zeros(n, 0);
    }
    let cols: Vec<DVector<f64>> = (0..n)
        .filter(|&i| eig.eigenvalues[i] > rel_tol * lmax)
        .map(|i| eig.eigenvectors.column(i) * eig.eigenvalues[i].sqrt())
        .collect();
    if cols.is_empty() {
        return DMatrix::zeros(n, 0);
    }
    DMatrix::from_columns(&cols)
}

/// Moore-Penrose inverse of a symmetric PSD matrix with relative eigenvalue cutoff.
pub fn pinv_psd(a: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    let n = a.nrows();
    if n == 0 || is_zero(a) {
        return DMatrix::zeros(n, n);
    }
    let eig = SymmetricEigen::new(symmetrized(a.clone()));
    let lmax = eig.eigenvalues.iter().cloned().fold(0.0_f64, f64::max);
    let mut out = DMatrix::zeros(n, n);
    if lmax <= 0.0 {
        return out;
    }
    for i in 0..n {
        let l = eig.eigenvalues[i];
        if l > rel_tol * lmax {
            let q = eig.eigenvectors.column(i);
            out += (&q * q.transpose()) / l;
        }
    }
    out
}

pub fn cholesky(a: &DMatrix<f64>) -> Option<Cholesky<f64, Dyn>> {
    Cholesky::new(a.clone())
}

pub fn chol_logdet(c: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * c.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

/// Cholesky with diagonal jitter escalation from `1e-12·tr` to `1e-6·tr`.
pub fn cholesky_jittered(a: &DMatrix<f64>) -> Option<Cholesky<f64, Dyn>> {
    if let Some(c) = Cholesky::new(a.clone()) {
        return Some(c);
    }
    let n = a.nrows();
    let trace: f64 = a.diagonal().iter().map(|x| x.abs()).sum();
    if trace <= 0.0 {
        return None;
    }
    let mut jitter = 1e-12 * trace;
    while jitter <= 1e-6 * trace * (1.0 + 1e-9) {
        let mut b = a.clone();
        for i in 0..n {
            b[(i, i)] += jitter;
        }
        if let Some(c) = Cholesky::new(b) {
            return Some(c);
        }
        jitter *= 10.0;
    }
    None
}
