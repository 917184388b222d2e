//! Small dense/sparse helpers for the state-space recursions.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};

/// Compressed sparse row matrix, used for the (mostly sparse) transition
/// matrices and covariance factors in the particle loops.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    row_start: Vec<usize>,
    entries: Vec<(usize, f64)>,
    /// `(column, value)` per row when no row has more than one nonzero.
    single: Option<Vec<(usize, f64)>>,
}

impl SparseMatrix {
    pub fn from_dense(m: &DMatrix<f64>) -> Self {
        let mut row_start = Vec::with_capacity(m.nrows() + 1);
        let mut entries = Vec::new();
        row_start.push(0);
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                let v = m[(i, j)];
                if v != 0.0 {
                    entries.push((j, v));
                }
            }
            row_start.push(entries.len());
        }
        let single = row_start.windows(2).all(|w| w[1] - w[0] <= 1).then(|| {
            row_start
                .windows(2)
                .map(|w| if w[1] > w[0] { entries[w[0]] } else { (0, 0.0) })
                .collect()
        });
        Self {
            rows: m.nrows(),
            cols: m.ncols(),
            row_start,
            entries,
            single,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    #[inline]
    fn row_dot(&self, w: &[usize], x: &[f64]) -> f64 {
        self.entries[w[0]..w[1]].iter().map(|&(j, v)| v * x[j]).sum()
    }

    /// `out = self * x`.
    #[inline]
    pub fn mul_into(&self, x: &[f64], out: &mut [f64]) {
        assert!(x.len() == self.cols && out.len() == self.rows);
        if let Some(single) = &self.single {
            for (o, &(j, v)) in out.iter_mut().zip(single) {
                *o = v * x[j];
            }
            return;
        }
        for (o, w) in out.iter_mut().zip(self.row_start.windows(2)) {
            *o = self.row_dot(w, x);
        }
    }

    /// `out += self * x`.
    #[inline]
    pub fn mul_add_into(&self, x: &[f64], out: &mut [f64]) {
        assert!(x.len() == self.cols && out.len() == self.rows);
        for (o, w) in out.iter_mut().zip(self.row_start.windows(2)) {
            *o += self.row_dot(w, x);
        }
    }
}

/// Symmetric part `(m + mᵀ) / 2`.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    symmetrize(m)
        .symmetric_eigenvalues()
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

/// Fail with a named error unless `m` is square, symmetric, and positive definite.
pub fn require_spd(m: &DMatrix<f64>, name: &str) -> Result<()> {
    if !m.is_square() {
        return Err(Error::config(
            name,
            format!("must be square, got {}x{}", m.nrows(), m.ncols()),
        ));
    }
    let scale = m.amax().max(1e-300);
    if (m - m.transpose()).amax() > 1e-10 * scale {
        return Err(Error::config(name, "must be symmetric"));
    }
    let ev = min_eigenvalue(m);
    if !(ev > 0.0) {
        return Err(Error::NotPositiveDefinite {
            matrix: name.to_string(),
            eigenvalue: ev,
        });
    }
    Ok(())
}

/// Like [`require_spd`] but admits zero eigenvalues (up to rounding).
pub fn require_psd(m: &DMatrix<f64>, name: &str) -> Result<()> {
    if !m.is_square() {
        return Err(Error::config(
            name,
            format!("must be square, got {}x{}", m.nrows(), m.ncols()),
        ));
    }
    let scale = m.amax().max(1e-300);
    if (m - m.transpose()).amax() > 1e-10 * scale {
        return Err(Error::config(name, "must be symmetric"));
    }
    let ev = min_eigenvalue(m);
    if ev < -1e-12 * scale {
        return Err(Error::NotPositiveDefinite {
            matrix: name.to_string(),
            eigenvalue: ev,
        });
    }
    Ok(())
}

/// Result of factoring a symmetric PSD matrix as `F Fᵀ`.
pub struct PsdFactor {
    pub factor: DMatrix<f64>,
    /// Most negative eigenvalue that had to be clipped, if any.
    pub clipped: Option<f64>,
}

/// Factor `m = F Fᵀ`: Cholesky when possible, otherwise eigen-decomposition
/// with negative eigenvalues clipped at zero.
pub fn psd_factor(m: &DMatrix<f64>) -> PsdFactor {
    let sym = symmetrize(m);
    if let Some(ch) = sym.clone().cholesky() {
        return PsdFactor {
            factor: ch.l(),
            clipped: None,
        };
    }
    let eig = sym.symmetric_eigen();
    let scale = eig.eigenvalues.amax().max(1e-300);
    let mut clipped = None;
    let roots = DVector::from_iterator(
        eig.eigenvalues.len(),
        eig.eigenvalues.iter().map(|&l| {
            if l < -1e-12 * scale {
                clipped = Some(clipped.map_or(l, |c: f64| c.min(l)));
            }
            l.max(0.0).sqrt()
        }),
    );
    let mut factor = eig.eigenvectors;
    for (j, r) in roots.iter().enumerate() {
        factor.column_mut(j).scale_mut(*r);
    }
    PsdFactor { factor, clipped }
}

/// Project a symmetric matrix onto the PSD cone by clipping eigenvalues.
pub fn clip_psd(m: &DMatrix<f64>) -> (DMatrix<f64>, Option<f64>) {
    let sym = symmetrize(m);
    let eig = sym.clone().symmetric_eigen();
    let scale = eig.eigenvalues.amax().max(1e-300);
    let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if min >= -1e-12 * scale {
        return (sym, None);
    }
    let clipped = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| l.max(0.0)));
    let out = &eig.eigenvectors * clipped * eig.eigenvectors.transpose();
    (symmetrize(&out), Some(min))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sparse_matches_dense() {
        let m = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 2.0, 0.0, 0.0, 0.0, -1.0, 3.0, 0.5]);
        let s = SparseMatrix::from_dense(&m);
        assert_eq!(s.nnz(), 5);
        let x = [0.3, -2.0, 4.0];
        let mut out = [0.0; 3];
        s.mul_into(&x, &mut out);
        let expect = &m * DVector::from_row_slice(&x);
        for i in 0..3 {
            assert!((out[i] - expect[i]).abs() < 1e-15);
        }
        s.mul_add_into(&x, &mut out);
        assert!((out[2] - 2.0 * expect[2]).abs() < 1e-14);
    }

    #[test]
    fn factor_reconstructs_singular_matrix() {
        let v = DVector::from_row_slice(&[1.0, 2.0, -1.0]);
        let m = &v * v.transpose();
        let f = psd_factor(&m);
        assert!(f.clipped.is_none());
        assert!((&f.factor * f.factor.transpose() - &m).amax() < 1e-12);
    }

    #[test]
    fn spd_checks() {
        let good = DMatrix::from_diagonal_element(2, 2, 0.1);
        assert!(require_spd(&good, "W").is_ok());
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        match require_spd(&bad, "W") {
            Err(Error::NotPositiveDefinite { matrix, eigenvalue }) => {
                assert_eq!(matrix, "W");
                assert!((eigenvalue + 1.0).abs() < 1e-12);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(require_psd(&DMatrix::zeros(2, 2), "S0").is_ok());
    }

    #[test]
    fn clip_projects_indefinite() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        let (c, min) = clip_psd(&m);
        assert!((min.unwrap() + 1.0).abs() < 1e-12);
        assert!(min_eigenvalue(&c) > -1e-12);
    }
}
