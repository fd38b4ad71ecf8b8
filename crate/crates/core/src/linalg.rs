//! Linear solves against the FJ system matrix `L + W`, where `W` holds the
//! self-weights.
//!
//! Small systems are factorized densely (Cholesky); larger ones use
//! Jacobi-preconditioned conjugate gradients on the sparse operator. Pinned
//! nodes are grounded: their rows and columns are dropped, but the edges that
//! touch them still count in their neighbours' diagonal entries.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::graph::GraphView;

/// Systems with at most this many free nodes are solved with a dense
/// Cholesky factorization.
pub const DENSE_LIMIT: usize = 256;

const CG_TOL: f64 = 1e-13;

/// A prepared solver for `(L + W)_{FF} z_F = W_F s_F` over the free set `F`
/// (active, non-pinned nodes). Entries outside `F` come back as zero.
pub struct SystemSolver<'a> {
    view: &'a GraphView<'a>,
    free: Vec<bool>,
    /// Global id -> position in the reduced system.
    order: Vec<usize>,
    diag: Vec<f64>,
    backend: Backend,
}

enum Backend {
    Dense(nalgebra::Cholesky<f64, nalgebra::Dyn>),
    Iterative,
    Empty,
}

impl<'a> SystemSolver<'a> {
    pub fn new(view: &'a GraphView<'a>, pinned: Option<&[bool]>) -> Result<Self> {
        Self::with_dense_limit(view, pinned, DENSE_LIMIT)
    }

    pub fn with_dense_limit(
        view: &'a GraphView<'a>,
        pinned: Option<&[bool]>,
        dense_limit: usize,
    ) -> Result<Self> {
        let g = view.graph();
        let n = g.node_count();
        if let Some(p) = pinned {
            if p.len() != n {
                return Err(Error::InvalidInput(format!(
                    "pinned mask of length {} for {n} nodes",
                    p.len()
                )));
            }
        }
        let free: Vec<bool> = (0..n)
            .map(|i| view.is_active(i) && !pinned.is_some_and(|p| p[i]))
            .collect();
        let order: Vec<usize> = (0..n).filter(|&i| free[i]).collect();
        let mut slot = vec![usize::MAX; n];
        for (k, &i) in order.iter().enumerate() {
            slot[i] = k;
        }
        let diag: Vec<f64> = (0..n)
            .map(|i| {
                if free[i] {
                    g.self_weight(i) + view.weighted_degree(i)
                } else {
                    0.0
                }
            })
            .collect();

        let backend = if order.is_empty() {
            Backend::Empty
        } else if order.len() <= dense_limit {
            let m = order.len();
            let mut a = DMatrix::<f64>::zeros(m, m);
            for (k, &i) in order.iter().enumerate() {
                a[(k, k)] = diag[i];
                for (j, w) in view.neighbors(i) {
                    if free[j] {
                        a[(k, slot[j])] -= w;
                    }
                }
            }
            let chol = a.cholesky().ok_or_else(|| {
                Error::NumericalFailure("system matrix is not positive definite".into())
            })?;
            Backend::Dense(chol)
        } else {
            Backend::Iterative
        };

        Ok(Self {
            view,
            free,
            order,
            diag,
            backend,
        })
    }

    pub fn node_count(&self) -> usize {
        self.free.len()
    }

    /// Solves for settled opinions given internal opinions `s`.
    pub fn solve(&self, s: &[f64]) -> Result<Vec<f64>> {
        let n = self.node_count();
        if s.len() != n {
            return Err(Error::InvalidInput(format!(
                "opinion vector of length {} for {n} nodes",
                s.len()
            )));
        }
        let g = self.view.graph();
        let mut z = vec![0.0; n];
        match &self.backend {
            Backend::Empty => {}
            Backend::Dense(chol) => {
                let b = DVector::from_iterator(
                    self.order.len(),
                    self.order.iter().map(|&i| g.self_weight(i) * s[i]),
                );
                let x = chol.solve(&b);
                for (k, &i) in self.order.iter().enumerate() {
                    z[i] = x[k];
                }
            }
            Backend::Iterative => {
                let b: Vec<f64> = (0..n)
                    .map(|i| if self.free[i] { g.self_weight(i) * s[i] } else { 0.0 })
                    .collect();
                z = self.pcg(&b)?;
            }
        }
        Ok(z)
    }

    /// `y = A x` restricted to free nodes (full-length vectors).
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        for &i in &self.order {
            let mut acc = self.diag[i] * x[i];
            for (j, w) in self.view.neighbors(i) {
                if self.free[j] {
                    acc -= w * x[j];
                }
            }
            y[i] = acc;
        }
    }

    fn pcg(&self, b: &[f64]) -> Result<Vec<f64>> {
        let n = b.len();
        let bnorm = b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let mut x = vec![0.0; n];
        if bnorm == 0.0 {
            return Ok(x);
        }
        let tol = CG_TOL * bnorm;
        let mut r = b.to_vec();
        let mut zr: Vec<f64> = (0..n)
            .map(|i| if self.free[i] { r[i] / self.diag[i] } else { 0.0 })
            .collect();
        let mut p = zr.clone();
        let mut ap = vec![0.0; n];
        let mut rz: f64 = self.order.iter().map(|&i| r[i] * zr[i]).sum();
        let max_iters = 10 * self.order.len() + 100;
        for _ in 0..max_iters {
            self.apply(&p, &mut ap);
            let pap: f64 = self.order.iter().map(|&i| p[i] * ap[i]).sum();
            if !(pap > 0.0) {
                return Err(Error::NumericalFailure(format!(
                    "conjugate gradient breakdown (pAp = {pap})"
                )));
            }
            let alpha = rz / pap;
            let mut rmax = 0.0f64;
            for &i in &self.order {
                x[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
                rmax = rmax.max(r[i].abs());
            }
            if rmax <= tol {
                return Ok(x);
            }
            for &i in &self.order {
                zr[i] = r[i] / self.diag[i];
            }
            let rz_next: f64 = self.order.iter().map(|&i| r[i] * zr[i]).sum();
            let beta = rz_next / rz;
            rz = rz_next;
            for &i in &self.order {
                p[i] = zr[i] + beta * p[i];
            }
        }
        Err(Error::NumericalFailure(
            "conjugate gradient did not reach tolerance".into(),
        ))
    }
}
