//! A single MsMwC instance: optimistic mirror descent on the simplex under a
//! weighted negative-entropy regularizer, with per-coordinate step sizes and
//! a squared-error bias correction.
//!
//! Each round the instance first plays
//! `p_t = argmin_p <m_t, p> + D_psi(p, pivot_t)`
//! against an optimism vector `m_t`, and after observing the loss vector
//! `l_t` moves its pivot to
//! `pivot_{t+1} = argmin_p <l_t + a_t, p> + D_psi(p, pivot_t)`
//! where `a_{t,i} = 16 eta_i (l_{t,i} - m_{t,i})^2` and
//! `psi(p) = sum_i eta_i^{-1} p_i ln p_i`.
//!
//! Both argmins have the closed form `p_i = pivot_i * exp(-eta_i (v_i + mu))`
//! with a scalar normalization multiplier `mu`; the multiplier is found by
//! bisection. Weights live in log space throughout: with step sizes as small
//! as `1/(2 C_0 T)` the products that arise over long horizons underflow in
//! linear space.
//!
//! Losses and optimisms are fed pre-rescaled by an opaque scale `S` chosen by
//! the caller; the instance only enforces that the rescaled entries stay in
//! `[-1, 1]`, which the step-size cap `eta_i <= 1/32` requires.

use ndarray::Array1;

use crate::error::Error;
use crate::Result;

/// Hard cap on every per-coordinate step size.
pub const ETA_CAP: f64 = 1.0 / 32.0;
/// Residual tolerance for the normalization solve.
const NORMALIZATION_TOL: f64 = 1e-12;
/// Slack for the [-1, 1] range checks, absorbing rescaling round-off.
const RANGE_SLACK: f64 = 1e-9;

/// One loss/optimism pair, in pre-rescaled units.
#[derive(Debug, Clone)]
pub struct MsMwcFeed {
    pub loss: Array1<f64>,
    pub optimism: Array1<f64>,
}

/// State of one MsMwC instance.
#[derive(Debug, Clone)]
pub struct MsMwcState {
    /// Natural log of the pivot weights.
    log_pivot: Array1<f64>,
    /// Natural log of the most recently played weights.
    log_played: Option<Array1<f64>>,
    /// Previously played weights (linear space), for the stability metric.
    prev_played: Option<Array1<f64>>,
    eta: Array1<f64>,
    scale: f64,
    awaiting_update: bool,
}

impl MsMwcState {
    /// Builds an instance from a prior on the simplex, per-coordinate step
    /// sizes (each in `(0, 1/32]`) and the rescaling divisor.
    pub fn new(prior: &[f64], eta: &[f64], scale: f64) -> Result<Self> {
        if prior.len() != eta.len() {
            return Err(Error::DimensionMismatch { expected: prior.len(), got: eta.len() });
        }
        if prior.is_empty() {
            return Err(Error::Contract("empty simplex".into()));
        }
        let sum: f64 = prior.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::Contract(format!(
                "prior must sum to 1 (got {sum})"
            )));
        }
        if prior.iter().any(|p| *p <= 0.0) {
            return Err(Error::Contract("prior weights must be strictly positive".into()));
        }
        if eta.iter().any(|e| *e <= 0.0 || *e > ETA_CAP + 1e-15) {
            return Err(Error::Contract(format!(
                "step sizes must lie in (0, 1/32], got {eta:?}"
            )));
        }
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::Contract("scale must be positive and finite".into()));
        }
        Ok(MsMwcState {
            log_pivot: Array1::from_iter(prior.iter().map(|p| p.ln())),
            log_played: None,
            prev_played: None,
            eta: Array1::from(eta.to_vec()),
            scale,
            awaiting_update: false,
        })
    }

    pub fn dim(&self) -> usize {
        self.log_pivot.len()
    }

    /// Current pivot weights in linear space.
    pub fn pivot(&self) -> Array1<f64> {
        self.log_pivot.mapv(f64::exp)
    }

    /// Most recently played weights in linear space.
    pub fn played(&self) -> Option<Array1<f64>> {
        self.log_played.as_ref().map(|lp| lp.mapv(f64::exp))
    }

    fn check_range(&self, v: &Array1<f64>, what: &'static str) -> Result<()> {
        for &x in v.iter() {
            let scaled = x / self.scale;
            if !scaled.is_finite() || scaled.abs() > 1.0 + RANGE_SLACK {
                return Err(Error::RangeViolation { what, value: scaled });
            }
        }
        Ok(())
    }

    /// Mirror step against the optimism vector; returns and stores the played
    /// weights `p_t`. Adding a constant to every coordinate of `m` leaves the
    /// result unchanged.
    pub fn predict(&mut self, optimism: &Array1<f64>) -> Result<Array1<f64>> {
        if optimism.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: optimism.len() });
        }
        self.check_range(optimism, "optimism")?;
        let v = optimism / self.scale;
        let mu = solve_normalization(&self.log_pivot, &self.eta, &v)?;
        let log_played = step_log_weights(&self.log_pivot, &self.eta, &v, mu);
        if let Some(lp) = &self.log_played {
            self.prev_played = Some(lp.mapv(f64::exp));
        }
        let played = log_played.mapv(f64::exp);
        debug_assert!(played.iter().all(|p| *p > 0.0));
        self.log_played = Some(log_played);
        self.awaiting_update = true;
        Ok(played)
    }

    /// Pivot step: applies the bias-corrected loss and replaces the pivot.
    pub fn update(&mut self, feed: &MsMwcFeed) -> Result<()> {
        if !self.awaiting_update {
            return Err(Error::Protocol("msmwc update called before predict"));
        }
        if feed.loss.len() != self.dim() || feed.optimism.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: feed.loss.len() });
        }
        self.check_range(&feed.loss, "loss")?;
        self.check_range(&feed.optimism, "optimism")?;
        let loss = &feed.loss / self.scale;
        let opt = &feed.optimism / self.scale;
        // Effective loss: rescaled loss plus bias a_i = 16 eta_i (l_i - m_i)^2.
        let mut v = Array1::<f64>::zeros(self.dim());
        for i in 0..self.dim() {
            let diff = loss[i] - opt[i];
            v[i] = loss[i] + 16.0 * self.eta[i] * diff * diff;
        }
        let mu = solve_normalization(&self.log_pivot, &self.eta, &v)?;
        self.log_pivot = step_log_weights(&self.log_pivot, &self.eta, &v, mu);
        self.awaiting_update = false;
        Ok(())
    }

    /// `||p_t - p_{t-1}||_1^2` for the most recent pair of played weights;
    /// zero by convention before two rounds have been played.
    pub fn stability_metric(&self) -> f64 {
        match (&self.log_played, &self.prev_played) {
            (Some(lp), Some(prev)) => {
                let cur = lp.mapv(f64::exp);
                let l1: f64 = cur.iter().zip(prev.iter()).map(|(a, b)| (a - b).abs()).sum();
                l1 * l1
            }
            _ => 0.0,
        }
    }

    pub fn step_sizes(&self) -> &Array1<f64> {
        &self.eta
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// Simplex sanity check on pivot and played weights: positive entries
    /// summing to one within `1e-12`.
    pub fn check_simplex(&self) -> Result<()> {
        let check = |log_w: &Array1<f64>, what: &str| -> Result<()> {
            let w = log_w.mapv(f64::exp);
            let sum: f64 = w.iter().sum();
            if (sum - 1.0).abs() > 1e-12 {
                return Err(Error::Inconsistent(format!(
                    "{what} weights sum to {sum}, not 1"
                )));
            }
            if w.iter().any(|p| *p <= 0.0) {
                return Err(Error::Inconsistent(format!("{what} weights must stay positive")));
            }
            Ok(())
        };
        check(&self.log_pivot, "pivot")?;
        if let Some(lp) = &self.log_played {
            check(lp, "played")?;
        }
        Ok(())
    }
}

fn step_log_weights(
    log_pivot: &Array1<f64>,
    eta: &Array1<f64>,
    v: &Array1<f64>,
    mu: f64,
) -> Array1<f64> {
    Array1::from_iter(
        log_pivot
            .iter()
            .zip(eta.iter().zip(v.iter()))
            .map(|(lp, (e, vi))| lp - e * (vi + mu)),
    )
}

/// Finds the multiplier `mu` with `sum_i pivot_i exp(-eta_i (v_i + mu)) = 1`
/// to `1e-12`, by bisection on the log-sum-exp residual. The residual is
/// strictly decreasing in `mu`, and an analytic bracket follows from the
/// extreme step sizes.
pub fn solve_normalization(
    log_pivot: &Array1<f64>,
    eta: &Array1<f64>,
    v: &Array1<f64>,
) -> Result<f64> {
    let exponents: Vec<f64> = log_pivot
        .iter()
        .zip(eta.iter().zip(v.iter()))
        .map(|(lp, (e, vi))| lp - e * vi)
        .collect();
    let lse = |mu: f64| -> f64 {
        let mut hi = f64::NEG_INFINITY;
        for (w, e) in exponents.iter().zip(eta.iter()) {
            hi = hi.max(w - e * mu);
        }
        let sum: f64 = exponents
            .iter()
            .zip(eta.iter())
            .map(|(w, e)| (w - e * mu - hi).exp())
            .sum();
        hi + sum.ln()
    };

    let eta_min = eta.iter().cloned().fold(f64::INFINITY, f64::min);
    let eta_max = eta.iter().cloned().fold(0.0f64, f64::max);
    let r0 = lse(0.0);
    if !r0.is_finite() {
        return Err(Error::Numerical("normalization residual is not finite".into()));
    }
    // The residual slope lies in [-eta_max, -eta_min], so the root sits
    // between r0/eta_max and r0/eta_min.
    let (mut lo, mut hi) = if r0 >= 0.0 {
        (r0 / eta_max, r0 / eta_min)
    } else {
        (r0 / eta_min, r0 / eta_max)
    };
    lo -= 1e-9;
    hi += 1e-9;
    const BRACKET_LIMIT: f64 = 1e6;
    if lo < -BRACKET_LIMIT || hi > BRACKET_LIMIT {
        return Err(Error::Numerical(format!(
            "normalization bracket [{lo}, {hi}] exceeds +/-1e6"
        )));
    }
    if lse(lo) < -NORMALIZATION_TOL || lse(hi) > NORMALIZATION_TOL {
        return Err(Error::Numerical("normalization bracket does not straddle the root".into()));
    }

    // Bisect to interval collapse: the residual tolerance is 1e-12, but the
    // shift-invariance contract on the resulting weights wants the root
    // pinned to machine precision.
    let mut mu = 0.5 * (lo + hi);
    for _ in 0..200 {
        mu = 0.5 * (lo + hi);
        let r = lse(mu);
        if r == 0.0 {
            break;
        }
        if r > 0.0 {
            lo = mu;
        } else {
            hi = mu;
        }
        if (hi - lo) <= f64::EPSILON * mu.abs().max(1e-3) {
            break;
        }
    }
    let r = lse(mu);
    if r.abs() <= NORMALIZATION_TOL {
        return Ok(mu);
    }
    Err(Error::Numerical(format!(
        "normalization bisection stalled with residual {r:.3e}"
    )))
}
