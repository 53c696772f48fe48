//! Per-round surrogate losses for the one-gradient feedback mode.
//!
//! After the single gradient query `g_t = grad f_t(x_t)`, each base learner
//! is updated on a surrogate built from that gradient alone:
//!
//! * strongly convex guess:  `<g_t, x> + (lambda/2) ||x - x_t||^2`
//! * exp-concave guess:      `<g_t, x> + (alpha/2) <g_t, x - x_t>^2`
//! * convex:                 `<g_t, x>`
//!
//! A snapshot is immutable once constructed, so a single round's snapshots
//! can be shared freely across learners.

use ndarray::Array1;

use crate::linalg;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SurrogateKind {
    StronglyConvex,
    ExpConcave,
    Convex,
}

/// One surrogate loss: the queried gradient, the anchor point it was taken
/// at, and the curvature coefficient of the guess (ignored for `Convex`).
#[derive(Debug, Clone)]
pub struct SurrogateSnapshot {
    pub kind: SurrogateKind,
    pub grad: Array1<f64>,
    pub anchor: Array1<f64>,
    pub coeff: f64,
}

impl SurrogateSnapshot {
    pub fn new(kind: SurrogateKind, grad: Array1<f64>, anchor: Array1<f64>, coeff: f64) -> Self {
        SurrogateSnapshot { kind, grad, anchor, coeff }
    }

    pub fn eval(&self, x: &Array1<f64>) -> f64 {
        let lin = self.grad.dot(x);
        match self.kind {
            SurrogateKind::Convex => lin,
            SurrogateKind::StronglyConvex => {
                let d = x - &self.anchor;
                lin + 0.5 * self.coeff * d.dot(&d)
            }
            SurrogateKind::ExpConcave => {
                let proj = self.grad.dot(&(x - &self.anchor));
                lin + 0.5 * self.coeff * proj * proj
            }
        }
    }

    pub fn grad_at(&self, x: &Array1<f64>) -> Array1<f64> {
        match self.kind {
            SurrogateKind::Convex => self.grad.clone(),
            SurrogateKind::StronglyConvex => &self.grad + &((x - &self.anchor) * self.coeff),
            SurrogateKind::ExpConcave => {
                let proj = self.grad.dot(&(x - &self.anchor));
                &self.grad + &(&self.grad * (self.coeff * proj))
            }
        }
    }

    /// Hessian of the exp-concave surrogate is the rank-one PSD matrix
    /// `alpha g g^T`; the other kinds have constant (zero or isotropic)
    /// Hessians and are not interesting to expose.
    pub fn exp_concave_hessian(&self) -> Option<ndarray::Array2<f64>> {
        match self.kind {
            SurrogateKind::ExpConcave => Some(linalg::outer(&self.grad) * self.coeff),
            _ => None,
        }
    }
}
