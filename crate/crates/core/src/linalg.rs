use faer::linalg::solvers::Solve;
use faer::sparse::{SparseColMat, Triplet};
use faer::Mat;
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Square sparse operator stored row-wise, used for vectorized generators.
#[derive(Debug, Clone)]
pub(crate) struct SparseOperator {
    dim: usize,
    rows: Vec<Vec<(usize, Complex64)>>,
}

impl SparseOperator {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            rows: vec![Vec::new(); dim],
        }
    }

    /// Adds `value` to entry (row, col).
    pub fn add(&mut self, row: usize, col: usize, value: Complex64) {
        if value != Complex64::new(0.0, 0.0) {
            self.rows[row].push((col, value));
        }
    }

    pub fn replace_row(&mut self, row: usize, entries: Vec<(usize, Complex64)>) {
        self.rows[row] = entries;
    }

    #[cfg(test)]
    pub fn nnz(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    pub fn apply(&self, x: &[Complex64]) -> Vec<Complex64> {
        self.rows
            .iter()
            .map(|r| r.iter().map(|&(c, v)| v * x[c]).sum())
            .collect()
    }

    pub fn to_dense(&self) -> Mat<Complex64> {
        let mut m = Mat::<Complex64>::zeros(self.dim, self.dim);
        for (i, r) in self.rows.iter().enumerate() {
            for &(j, v) in r {
                m[(i, j)] += v;
            }
        }
        m
    }

    /// Solves `self · x = rhs` by sparse LU followed by iterative
    /// refinement, with residuals accumulated in double-double precision so
    /// that stiff but nonsingular systems still reach working accuracy.
    pub fn solve(&self, rhs: &[Complex64]) -> Result<Vec<Complex64>> {
        let triplets: Vec<_> = self
            .rows
            .iter()
            .enumerate()
            .flat_map(|(i, r)| r.iter().map(move |&(j, v)| Triplet::new(i, j, v)))
            .collect();
        let a = SparseColMat::<usize, Complex64>::try_new_from_triplets(self.dim, self.dim, &triplets)
            .map_err(|e| Error::NoUniqueSteadyState(format!("sparse assembly failed: {e:?}")))?;
        let lu = a
            .sp_lu()
            .map_err(|e| Error::NoUniqueSteadyState(format!("sparse LU failed: {e:?}")))?;
        let lu_solve = |b: &[Complex64]| -> Vec<Complex64> {
            let b = Mat::<Complex64>::from_fn(self.dim, 1, |i, _| b[i]);
            let x = lu.solve(&b);
            (0..self.dim).map(|i| x[(i, 0)]).collect()
        };

        let mut x = lu_solve(rhs);
        if !all_finite(&x) {
            return Err(Error::NoUniqueSteadyState(
                "linear system is singular".into(),
            ));
        }
        for _ in 0..REFINEMENT_STEPS {
            let r = self.exact_residual(&x, rhs);
            let d = lu_solve(&r);
            if !all_finite(&d) {
                break;
            }
            for (xi, di) in x.iter_mut().zip(&d) {
                *xi += di;
            }
            if norm(&d) <= f64::EPSILON * norm(&x) {
                break;
            }
        }
        Ok(x)
    }

    /// rhs − self · x, accumulated without intermediate rounding and rounded once.
    fn exact_residual(&self, x: &[Complex64], rhs: &[Complex64]) -> Vec<Complex64> {
        self.rows
            .iter()
            .zip(rhs)
            .map(|(row, b)| {
                let mut re = DoubleDouble::from(b.re);
                let mut im = DoubleDouble::from(b.im);
                for &(c, v) in row {
                    let xv = x[c];
                    re.add_product(-v.re, xv.re);
                    re.add_product(v.im, xv.im);
                    im.add_product(-v.re, xv.im);
                    im.add_product(-v.im, xv.re);
                }
                Complex64::new(re.value(), im.value())
            })
            .collect()
    }
}

const REFINEMENT_STEPS: usize = 6;

fn all_finite(x: &[Complex64]) -> bool {
    x.iter().all(|v| v.re.is_finite() && v.im.is_finite())
}

/// Unevaluated sum hi + lo used to accumulate dot products exactly enough.
#[derive(Clone, Copy)]
struct DoubleDouble {
    hi: f64,
    lo: f64,
}

impl From<f64> for DoubleDouble {
    fn from(hi: f64) -> Self {
        Self { hi, lo: 0.0 }
    }
}

impl DoubleDouble {
    fn add(&mut self, y: f64) {
        let s = self.hi + y;
        let bb = s - self.hi;
        let err = (self.hi - (s - bb)) + (y - bb);
        self.hi = s;
        self.lo += err;
    }

    fn add_product(&mut self, a: f64, b: f64) {
        let p = a * b;
        let e = a.mul_add(b, -p);
        self.add(p);
        self.lo += e;
    }

    fn value(self) -> f64 {
        self.hi + self.lo
    }
}

pub(crate) fn norm(x: &[Complex64]) -> f64 {
    x.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
}

pub(crate) fn residual(op: &SparseOperator, x: &[Complex64], rhs: &[Complex64]) -> f64 {
    let ax = op.apply(x);
    norm(&ax.iter().zip(rhs).map(|(a, b)| a - b).collect::<Vec<_>>())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_small_system() {
        let mut op = SparseOperator::new(3);
        op.add(0, 0, Complex64::new(2.0, 0.0));
        op.add(0, 1, Complex64::new(1.0, 0.0));
        op.add(1, 1, Complex64::new(0.0, 3.0));
        op.add(2, 0, Complex64::new(1.0, 0.0));
        op.add(2, 2, Complex64::new(1.0, 0.0));
        op.add(2, 2, Complex64::new(1.0, 0.0));
        let rhs = [Complex64::new(1.0, 0.0), Complex64::new(0.0, 3.0), Complex64::new(1.0, 1.0)];
        let x = op.solve(&rhs).unwrap();
        assert!(residual(&op, &x, &rhs) < 1e-14);
        assert!((x[1] - Complex64::new(1.0, 0.0)).norm() < 1e-15);
        assert_eq!(op.nnz(), 6);
    }

    #[test]
    fn refinement_handles_stiff_system() {
        // [[1, 1], [1, 1 + ε]] with ε = 1e-12; exact solution (1, 1) for rhs (2, 2 + ε).
        let eps = 1e-12;
        let mut op = SparseOperator::new(2);
        op.add(0, 0, Complex64::new(1.0, 0.0));
        op.add(0, 1, Complex64::new(1.0, 0.0));
        op.add(1, 0, Complex64::new(1.0, 0.0));
        op.add(1, 1, Complex64::new(1.0 + eps, 0.0));
        let rhs = [Complex64::new(2.0, 0.0), Complex64::new(2.0 + eps, 0.0)];
        let x = op.solve(&rhs).unwrap();
        // The perturbed rhs entry is itself rounded, so allow its representation error.
        let exact_eps = (2.0 + eps) - 2.0;
        let x1 = (exact_eps - 0.0) / (1.0 + eps - 1.0);
        assert!((x[1].re - x1).abs() < 1e-14);
        assert!((x[0].re - (2.0 - x1)).abs() < 1e-14);
    }

    #[test]
    fn singular_is_reported() {
        let mut op = SparseOperator::new(2);
        op.add(0, 0, Complex64::new(1.0, 0.0));
        op.add(1, 0, Complex64::new(1.0, 0.0));
        let rhs = [Complex64::new(1.0, 0.0), Complex64::new(2.0, 0.0)];
        assert!(op.solve(&rhs).is_err());
    }
}
