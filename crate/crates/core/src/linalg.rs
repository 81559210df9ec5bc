//! Dense linear-algebra helpers shared by the solvers.

use nalgebra::{DMatrix, DVector};

/// Orthogonal splitting of `ℝⁿ` induced by a full-row-rank equality matrix.
///
/// With `A = Rᵀ Q₁ᵀ` (a thin QR factorization of `Aᵀ`), the columns of `Q₁`
/// span the row space of `A` and the columns of `null` span its null space.
#[derive(Clone, Debug)]
pub struct EqualitySplit {
    pub range: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub null: DMatrix<f64>,
}

impl EqualitySplit {
    /// Returns `None` when the rows of `eq` are (numerically) linearly dependent.
    pub fn new(eq: &DMatrix<f64>) -> Option<Self> {
        let (rows, n) = eq.shape();
        if rows == 0 {
            return Some(Self {
                range: DMatrix::zeros(n, 0),
                r: DMatrix::zeros(0, 0),
                null: DMatrix::identity(n, n),
            });
        }
        if rows > n {
            return None;
        }
        // Pad to a square matrix so the QR factor carries a full orthogonal Q.
        let mut padded = DMatrix::zeros(n, n);
        padded.view_mut((0, 0), (n, rows)).copy_from(&eq.transpose());
        let qr = padded.qr();
        let q = qr.q();
        let r_full = qr.r();
        let r = r_full.view((0, 0), (rows, rows)).into_owned();
        let scale = eq.amax().max(1.0);
        if (0..rows).any(|i| libm::fabs(r[(i, i)]) <= 1e-10 * scale) {
            return None;
        }
        Some(Self {
            range: q.columns(0, rows).into_owned(),
            r,
            null: q.columns(rows, n - rows).into_owned(),
        })
    }

    /// Minimum-norm solution of `A x = b`.
    pub fn particular(&self, b: &DVector<f64>) -> DVector<f64> {
        if b.is_empty() {
            return DVector::zeros(self.null.nrows());
        }
        // A x = Rᵀ Q₁ᵀ x = b  ⇒  x = Q₁ R⁻ᵀ b
        let y = self
            .r
            .transpose()
            .solve_lower_triangular(b)
            .expect("nonsingular by construction");
        &self.range * y
    }

    /// Least-squares multipliers `ν` minimizing `‖r + Aᵀν‖`.
    pub fn multipliers(&self, residual: &DVector<f64>) -> DVector<f64> {
        if self.r.is_empty() {
            return DVector::zeros(0);
        }
        // Aᵀν = Q₁ R ν = −Q₁Q₁ᵀ r  ⇒  ν = −R⁻¹ Q₁ᵀ r
        let rhs = -(self.range.transpose() * residual);
        self.r
            .solve_upper_triangular(&rhs)
            .expect("nonsingular by construction")
    }
}

/// Cholesky factor of a symmetric positive-definite matrix, with solves.
#[derive(Clone, Debug)]
pub struct SpdFactor {
    l: DMatrix<f64>,
}

impl SpdFactor {
    pub fn new(m: DMatrix<f64>) -> Option<Self> {
        let n = m.nrows();
        let mut l = m;
        for j in 0..n {
            let mut d = l[(j, j)];
            for k in 0..j {
                d -= l[(j, k)] * l[(j, k)];
            }
            if !(d > 0.0) {
                return None;
            }
            let d = libm::sqrt(d);
            l[(j, j)] = d;
            for i in (j + 1)..n {
                let mut s = l[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / d;
            }
            for i in 0..j {
                l[(i, j)] = 0.0;
            }
        }
        Some(Self { l })
    }

    pub fn dim(&self) -> usize {
        self.l.nrows()
    }

    /// Smallest pivot of the factor, squared. A cheap conditioning probe.
    pub fn min_pivot_sq(&self) -> f64 {
        (0..self.dim())
            .map(|i| self.l[(i, i)] * self.l[(i, i)])
            .fold(f64::INFINITY, f64::min)
    }

    pub fn solve_in_place(&self, x: &mut [f64]) {
        let n = self.dim();
        debug_assert_eq!(x.len(), n);
        for i in 0..n {
            let mut s = x[i];
            for k in 0..i {
                s -= self.l[(i, k)] * x[k];
            }
            x[i] = s / self.l[(i, i)];
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for k in (i + 1)..n {
                s -= self.l[(k, i)] * x[k];
            }
            x[i] = s / self.l[(i, i)];
        }
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut x = b.clone();
        self.solve_in_place(x.as_mut_slice());
        x
    }
}

/// Solves a small dense square system with partial pivoting.
///
/// Returns `None` if a pivot falls below `rel_tol` times the largest entry.
pub fn solve_dense(m: DMatrix<f64>, b: &DVector<f64>, rel_tol: f64) -> Option<DVector<f64>> {
    let n = m.nrows();
    if n == 0 {
        return Some(DVector::zeros(0));
    }
    let scale = m.amax();
    if scale == 0.0 {
        return None;
    }
    let lu = m.lu();
    let u = lu.u();
    if (0..n).any(|i| !(libm::fabs(u[(i, i)]) > rel_tol * scale)) {
        return None;
    }
    lu.solve(b)
}

pub fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |acc, x| f64::max(acc, libm::fabs(*x)))
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equality_split_spans_null_space() {
        let eq = DMatrix::from_row_slice(2, 4, &[1.0, 2.0, 0.0, -1.0, 0.0, 1.0, 1.0, 3.0]);
        let split = EqualitySplit::new(&eq).unwrap();
        assert_eq!(split.null.shape(), (4, 2));
        assert!((&eq * &split.null).amax() < 1e-12);
        let ztz = split.null.transpose() * &split.null;
        assert!((ztz - DMatrix::identity(2, 2)).amax() < 1e-12);

        let b = DVector::from_vec(alloc::vec![1.0, -2.0]);
        let x = split.particular(&b);
        assert!((&eq * &x - &b).amax() < 1e-12);
    }

    #[test]
    fn dependent_rows_rejected() {
        let eq = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 2.0, 4.0, 6.0]);
        assert!(EqualitySplit::new(&eq).is_none());
    }

    #[test]
    fn cholesky_solves() {
        let m = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0]);
        let f = SpdFactor::new(m.clone()).unwrap();
        let b = DVector::from_vec(alloc::vec![1.0, 2.0, 3.0]);
        let x = f.solve(&b);
        assert!((&m * x - b).amax() < 1e-12);
        assert!(SpdFactor::new(-m).is_none());
    }
}
