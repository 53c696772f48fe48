//! Optimistic base learners: the bottom layer of the ensemble.
//!
//! Three families, all of the optimistic mirror-descent shape "play from the
//! pivot against a gradient guess, then move the pivot with the received
//! gradient":
//!
//! * convex: projected OGD with the variation-adaptive step
//!   `eta_t = min(D / sqrt(1 + Vbar_{t-1}), 1/gamma)`, where `Vbar` sums the
//!   squared differences of received gradients;
//! * strongly convex (guess `lambda`): projected OGD with
//!   `eta_t = 2 / (gamma + lambda t)`;
//! * exp-concave (guess `alpha`): online Newton step under the quadratic
//!   regularizer `U_t = gamma I + (alpha G^2/2) I + (alpha/2) sum g_s g_s^T`,
//!   with mirror steps solved by matrix-norm projection.
//!
//! The optimism passed to `predict` is the learner's previously received
//! gradient (zero at the first round); `update` consumes the gradient of
//! whatever loss the learner is being run on (the true loss in multi-gradient
//! mode, a surrogate in one-gradient mode).

use ndarray::{Array1, Array2};

use crate::error::Error;
use crate::geometry::{project, project_matrix_norm, Domain};
use crate::linalg;
use crate::Result;

/// Rounds between full refreshes of the Newton learner's maintained inverse.
pub const ONS_REFRESH_INTERVAL: usize = 512;

#[derive(Debug, Clone)]
pub struct ConvexOgdState {
    domain: Domain,
    pivot: Array1<f64>,
    played: Option<Array1<f64>>,
    prev_played: Option<Array1<f64>>,
    /// Running sum of squared received-gradient differences, through the
    /// previous round.
    variation: f64,
    gamma: f64,
    last_grad: Option<Array1<f64>>,
}

impl ConvexOgdState {
    pub fn new(domain: Domain, gamma: f64) -> Self {
        let pivot = domain.center();
        ConvexOgdState {
            domain,
            pivot,
            played: None,
            prev_played: None,
            variation: 0.0,
            gamma,
            last_grad: None,
        }
    }

    /// `min(D / sqrt(1 + Vbar_{t-1}), 1/gamma)`, recomputed each round.
    pub fn step_size(&self) -> f64 {
        (self.domain.diameter() / (1.0 + self.variation).sqrt()).min(1.0 / self.gamma)
    }

    pub fn variation(&self) -> f64 {
        self.variation
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }
}

#[derive(Debug, Clone)]
pub struct StronglyConvexOgdState {
    domain: Domain,
    pivot: Array1<f64>,
    played: Option<Array1<f64>>,
    prev_played: Option<Array1<f64>>,
    lambda: f64,
    gamma: f64,
    /// Rounds completed so far.
    rounds: usize,
    last_grad: Option<Array1<f64>>,
}

impl StronglyConvexOgdState {
    pub fn new(domain: Domain, lambda: f64, gamma: f64) -> Self {
        let pivot = domain.center();
        StronglyConvexOgdState {
            domain,
            pivot,
            played: None,
            prev_played: None,
            lambda,
            gamma,
            rounds: 0,
            last_grad: None,
        }
    }

    /// `2 / (gamma + lambda t)` for the upcoming round `t`.
    pub fn step_size(&self) -> f64 {
        let t = (self.rounds + 1) as f64;
        2.0 / (self.gamma + self.lambda * t)
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }
}

#[derive(Debug, Clone)]
pub struct ExpConcaveOnsState {
    domain: Domain,
    pivot: Array1<f64>,
    played: Option<Array1<f64>>,
    prev_played: Option<Array1<f64>>,
    alpha: f64,
    u: Array2<f64>,
    u_inv: Array2<f64>,
    updates_since_refresh: usize,
    /// Max absolute entry gap between the maintained inverse and a fresh
    /// factorization, recorded at the last refresh.
    last_refresh_deviation: f64,
    last_grad: Option<Array1<f64>>,
}

impl ExpConcaveOnsState {
    /// `grad_bound_eff` is the bound on the gradients this learner will
    /// actually receive: the surrogate bound in one-gradient mode, the raw
    /// bound in multi-gradient mode.
    pub fn new(domain: Domain, alpha: f64, gamma: f64, grad_bound_eff: f64) -> Self {
        let d = domain.dim();
        let pivot = domain.center();
        let diag = gamma + 0.5 * alpha * grad_bound_eff * grad_bound_eff;
        ExpConcaveOnsState {
            domain,
            pivot,
            played: None,
            prev_played: None,
            alpha,
            u: Array2::eye(d) * diag,
            u_inv: Array2::eye(d) / diag,
            updates_since_refresh: 0,
            last_refresh_deviation: 0.0,
            last_grad: None,
        }
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn regularizer(&self) -> &Array2<f64> {
        &self.u
    }

    pub fn maintained_inverse(&self) -> &Array2<f64> {
        &self.u_inv
    }

    pub fn last_refresh_deviation(&self) -> f64 {
        self.last_refresh_deviation
    }

    fn mirror_step(&self, from: &Array1<f64>, grad: &Array1<f64>) -> Result<Array1<f64>> {
        let target = from - &self.u_inv.dot(grad);
        project_matrix_norm(&self.domain, &target, &self.u)
    }

    fn accumulate(&mut self, grad: &Array1<f64>) -> Result<()> {
        let half_alpha = 0.5 * self.alpha;
        self.u = &self.u + &(linalg::outer(grad) * half_alpha);
        // Sherman-Morrison on the maintained inverse.
        let ug = self.u_inv.dot(grad);
        let denom = 1.0 + half_alpha * grad.dot(&ug);
        self.u_inv = &self.u_inv - &(linalg::outer(&ug) * (half_alpha / denom));
        self.updates_since_refresh += 1;
        if self.updates_since_refresh >= ONS_REFRESH_INTERVAL {
            let fresh = linalg::spd_inverse(&self.u)?;
            let mut dev = 0.0f64;
            for (a, b) in self.u_inv.iter().zip(fresh.iter()) {
                dev = dev.max((a - b).abs());
            }
            self.last_refresh_deviation = dev;
            self.u_inv = fresh;
            self.updates_since_refresh = 0;
        }
        Ok(())
    }
}

/// One base learner of any family.
#[derive(Debug, Clone)]
pub enum BaseLearner {
    Convex(ConvexOgdState),
    StronglyConvex(StronglyConvexOgdState),
    ExpConcave(ExpConcaveOnsState),
}

impl BaseLearner {
    pub fn convex(domain: Domain, gamma: f64) -> Self {
        BaseLearner::Convex(ConvexOgdState::new(domain, gamma))
    }

    pub fn strongly_convex(domain: Domain, lambda: f64, gamma: f64) -> Self {
        BaseLearner::StronglyConvex(StronglyConvexOgdState::new(domain, lambda, gamma))
    }

    pub fn exp_concave(domain: Domain, alpha: f64, gamma: f64, grad_bound_eff: f64) -> Self {
        BaseLearner::ExpConcave(ExpConcaveOnsState::new(domain, alpha, gamma, grad_bound_eff))
    }

    /// The gradient received last round, used as this round's optimism.
    pub fn last_grad(&self) -> Option<&Array1<f64>> {
        match self {
            BaseLearner::Convex(s) => s.last_grad.as_ref(),
            BaseLearner::StronglyConvex(s) => s.last_grad.as_ref(),
            BaseLearner::ExpConcave(s) => s.last_grad.as_ref(),
        }
    }

    pub fn played(&self) -> Option<&Array1<f64>> {
        match self {
            BaseLearner::Convex(s) => s.played.as_ref(),
            BaseLearner::StronglyConvex(s) => s.played.as_ref(),
            BaseLearner::ExpConcave(s) => s.played.as_ref(),
        }
    }

    pub fn pivot(&self) -> &Array1<f64> {
        match self {
            BaseLearner::Convex(s) => &s.pivot,
            BaseLearner::StronglyConvex(s) => &s.pivot,
            BaseLearner::ExpConcave(s) => &s.pivot,
        }
    }

    /// `||x_t - x_{t-1}||^2` of played points; zero before two rounds.
    pub fn stability(&self) -> f64 {
        let (cur, prev) = match self {
            BaseLearner::Convex(s) => (&s.played, &s.prev_played),
            BaseLearner::StronglyConvex(s) => (&s.played, &s.prev_played),
            BaseLearner::ExpConcave(s) => (&s.played, &s.prev_played),
        };
        match (cur, prev) {
            (Some(c), Some(p)) => {
                let d = c - p;
                d.dot(&d)
            }
            _ => 0.0,
        }
    }

    /// Emits this round's decision from the pivot and the optimism (the
    /// previous received gradient, or zero at the first round).
    pub fn predict(&mut self, optimism: &Array1<f64>) -> Result<Array1<f64>> {
        let played = match self {
            BaseLearner::Convex(s) => {
                let eta = s.step_size();
                project(&s.domain, &(&s.pivot - &(optimism * eta)))?
            }
            BaseLearner::StronglyConvex(s) => {
                let eta = s.step_size();
                project(&s.domain, &(&s.pivot - &(optimism * eta)))?
            }
            BaseLearner::ExpConcave(s) => s.mirror_step(&s.pivot, optimism)?,
        };
        match self {
            BaseLearner::Convex(s) => {
                s.prev_played = s.played.take();
                s.played = Some(played.clone());
            }
            BaseLearner::StronglyConvex(s) => {
                s.prev_played = s.played.take();
                s.played = Some(played.clone());
            }
            BaseLearner::ExpConcave(s) => {
                s.prev_played = s.played.take();
                s.played = Some(played.clone());
            }
        }
        Ok(played)
    }

    /// Moves the pivot with the received gradient and advances the schedule
    /// state (variation accumulator, round counter, or Newton matrix).
    pub fn update(&mut self, grad: &Array1<f64>) -> Result<()> {
        if self.played().is_none() {
            return Err(Error::Protocol("base update called before predict"));
        }
        match self {
            BaseLearner::Convex(s) => {
                let eta = s.step_size();
                s.pivot = project(&s.domain, &(&s.pivot - &(grad * eta)))?;
                // The variation sum starts at the second received gradient.
                if let Some(prev) = &s.last_grad {
                    let d = grad - prev;
                    s.variation += d.dot(&d);
                }
                s.last_grad = Some(grad.clone());
            }
            BaseLearner::StronglyConvex(s) => {
                let eta = s.step_size();
                s.pivot = project(&s.domain, &(&s.pivot - &(grad * eta)))?;
                s.rounds += 1;
                s.last_grad = Some(grad.clone());
            }
            BaseLearner::ExpConcave(s) => {
                s.pivot = s.mirror_step(&s.pivot, grad)?;
                s.accumulate(grad)?;
                s.last_grad = Some(grad.clone());
            }
        }
        Ok(())
    }
}
