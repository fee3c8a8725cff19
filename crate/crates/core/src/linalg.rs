use nalgebra::{DMatrix, DVector};

/// Strict-convexity gate: smallest admissible Cholesky pivot.
pub(crate) const PD_PIVOT_TOL: f64 = 1e-10;

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
pub(crate) struct CholeskyFactor {
    l: DMatrix<f64>,
}

/// Plain LL^T factorization with an explicit pivot floor. Returns the
/// offending pivot on failure; non-finite input fails the same way.
pub(crate) fn cholesky(a: &DMatrix<f64>, pivot_tol: f64) -> Result<CholeskyFactor, f64> {
    let n = a.nrows();
    debug_assert_eq!(a.ncols(), n);
    let mut l = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !d.is_finite() || d <= pivot_tol {
            return Err(d);
        }
        let root = d.sqrt();
        l[(j, j)] = root;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            let v = s / root;
            if !v.is_finite() {
                return Err(d);
            }
            l[(i, j)] = v;
        }
    }
    Ok(CholeskyFactor { l })
}

impl CholeskyFactor {
    pub(crate) fn dim(&self) -> usize {
        self.l.nrows()
    }

    pub(crate) fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let n = self.dim();
        let l = &self.l;
        let mut y = DVector::<f64>::zeros(n);
        for i in 0..n {
            let mut s = b[i];
            for k in 0..i {
                s -= l[(i, k)] * y[k];
            }
            y[i] = s / l[(i, i)];
        }
        let mut x = DVector::<f64>::zeros(n);
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in (i + 1)..n {
                s -= l[(k, i)] * x[k];
            }
            x[i] = s / l[(i, i)];
        }
        x
    }

    pub(crate) fn inverse(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut inv = DMatrix::<f64>::zeros(n, n);
        for j in 0..n {
            let e = DVector::from_fn(n, |i, _| if i == j { 1.0 } else { 0.0 });
            inv.set_column(j, &self.solve(&e));
        }
        inv
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn factors_and_solves_spd() {
        let a = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let f = cholesky(&a, PD_PIVOT_TOL).unwrap();
        let b = DVector::from_vec(vec![1.0, 2.0]);
        let x = f.solve(&b);
        let r = &a * &x - &b;
        assert!(r.amax() < 1e-14);
        let id = &a * f.inverse();
        assert!((id - DMatrix::<f64>::identity(2, 2)).amax() < 1e-14);
    }

    #[test]
    fn rejects_indefinite_and_non_finite() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(cholesky(&a, PD_PIVOT_TOL).is_err());
        let b = DMatrix::from_row_slice(1, 1, &[f64::NAN]);
        assert!(cholesky(&b, PD_PIVOT_TOL).is_err());
        let c = DMatrix::from_row_slice(1, 1, &[5e-11]);
        assert!(cholesky(&c, PD_PIVOT_TOL).is_err());
    }
}
