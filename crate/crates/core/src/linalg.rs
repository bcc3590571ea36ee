//! Thin wrappers over nalgebra for the small dense systems used everywhere.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};

/// Reciprocal condition threshold below which a Gram matrix is treated as
/// singular.
pub const RCOND_MIN: f64 = 1e-12;

/// Reciprocal condition number from the singular value spectrum.
pub fn rcond(m: &DMatrix<f64>) -> f64 {
    let sv = m.clone().singular_values();
    let max = sv.max();
    let min = sv.min();
    if max <= 0.0 || !max.is_finite() {
        return 0.0;
    }
    min / max
}

/// Residual `b - m x` with error-free products and compensated accumulation.
/// Accurate well past working precision, which is what lets the refinement
/// below recover forward accuracy on Hilbert-like Gram systems.
fn compensated_residual(m: &DMatrix<f64>, x: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
    let n = m.nrows();
    DVector::from_fn(n, |i, _| {
        let mut s = KahanSum::default();
        s.add(b[i]);
        for j in 0..n {
            let p = m[(i, j)] * x[j];
            let e = m[(i, j)].mul_add(x[j], -p);
            s.add(-p);
            s.add(-e);
        }
        s.value()
    })
}

fn refine(m: &DMatrix<f64>, lu: &nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>, x: &mut DVector<f64>, b: &DVector<f64>) {
    for _ in 0..2 {
        let r = compensated_residual(m, x, b);
        match lu.solve(&r) {
            Some(d) if d.iter().all(|v| v.is_finite()) => *x += d,
            _ => break,
        }
    }
}

/// Inverse gated on conditioning; the caller keeps the matrix tiny. Columns
/// are iteratively refined, so entries stay accurate even near the
/// conditioning gate.
pub fn checked_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let rc = rcond(m);
    if !rc.is_finite() || rc < RCOND_MIN {
        return Err(Error::Singular { rcond: rc });
    }
    let lu = m.clone().lu();
    let n = m.nrows();
    let mut out = DMatrix::zeros(n, n);
    for j in 0..n {
        let e = basis(n, j);
        let mut x = lu.solve(&e).ok_or(Error::Singular { rcond: rc })?;
        refine(m, &lu, &mut x, &e);
        out.set_column(j, &x);
    }
    Ok(out)
}

/// Solves `m x = rhs` by LU with the same conditioning gate as
/// [`checked_inverse`], then polishes the solution by iterative refinement.
pub fn checked_solve(m: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    let rc = rcond(m);
    if !rc.is_finite() || rc < RCOND_MIN {
        return Err(Error::Singular { rcond: rc });
    }
    let lu = m.clone().lu();
    let mut x = lu.solve(rhs).ok_or(Error::Singular { rcond: rc })?;
    refine(m, &lu, &mut x, rhs);
    Ok(x)
}

/// Neumaier-compensated accumulator; used where reduction order must not
/// perturb results beyond 1e-13.
#[derive(Debug, Clone, Copy, Default)]
pub struct KahanSum {
    sum: f64,
    comp: f64,
}

impl KahanSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Basis vector of length `len` with a one in slot `idx`.
pub fn basis(len: usize, idx: usize) -> DVector<f64> {
    let mut e = DVector::zeros(len);
    e[idx] = 1.0;
    e
}
