//! Sparse matrices and linear solvers.

mod csr;
mod iterative;
mod lu;
mod ordering;

pub use csr::{CsrMatrix, Triplets};
pub use iterative::bicgstab;
pub use lu::LuFactors;
pub use ordering::nested_dissection;

use std::sync::atomic::{AtomicUsize, Ordering};

use crate::error::{Error, Result};

/// Relative residual bound enforced after every solve.
pub const RESIDUAL_TOLERANCE: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SolverKind {
    Direct,
    BiCgStab { tol: f64, max_iter: usize },
}

impl Default for SolverKind {
    fn default() -> Self {
        SolverKind::Direct
    }
}

/// Hands out prepared systems and counts how many factorizations were made.
#[derive(Debug, Default)]
pub struct SolverFactory {
    kind: SolverKind,
    factorizations: AtomicUsize,
}

impl SolverFactory {
    pub fn new(kind: SolverKind) -> Self {
        Self { kind, factorizations: AtomicUsize::new(0) }
    }

    pub fn kind(&self) -> SolverKind {
        self.kind
    }

    pub fn factorizations(&self) -> usize {
        self.factorizations.load(Ordering::Relaxed)
    }

    pub fn prepare(&self, matrix: CsrMatrix) -> Result<PreparedSystem> {
        self.factorizations.fetch_add(1, Ordering::Relaxed);
        let lu = match self.kind {
            SolverKind::Direct => Some(LuFactors::factor(&matrix)?),
            SolverKind::BiCgStab { .. } => None,
        };
        let frobenius = matrix.frobenius_norm();
        Ok(PreparedSystem { matrix, lu, kind: self.kind, frobenius })
    }
}

/// A matrix ready for repeated solves.
#[derive(Debug)]
pub struct PreparedSystem {
    matrix: CsrMatrix,
    lu: Option<LuFactors>,
    kind: SolverKind,
    frobenius: f64,
}

impl PreparedSystem {
    pub fn matrix(&self) -> &CsrMatrix {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// Solves `A x = b` and checks `‖Ax − b‖ ≤ 1e-10 (‖A‖_F ‖x‖ + ‖b‖)`.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let x = match (&self.lu, self.kind) {
            (Some(lu), _) => lu.solve(b)?,
            (None, SolverKind::BiCgStab { tol, max_iter }) => bicgstab(&self.matrix, b, None, tol, max_iter)?,
            (None, SolverKind::Direct) => unreachable!("direct system without factors"),
        };
        let ax = self.matrix.mul(&x);
        let residual = ax.iter().zip(b).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
        let xn = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let bn = b.iter().map(|v| v * v).sum::<f64>().sqrt();
        let bound = RESIDUAL_TOLERANCE * (self.frobenius * xn + bn);
        if !(residual <= bound) {
            return Err(Error::Residual { residual, bound });
        }
        Ok(x)
    }
}
