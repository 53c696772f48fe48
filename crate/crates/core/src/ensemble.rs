//! The three-layer universal ensemble.
//!
//! Layout: a top MsMwC over `K = ceil(log2 T)` step-size regimes
//! (`eta_k = 1/(C0 * 2^k)`, prior proportional to `eta_k^2`), `K` mid MsMwC
//! instances over `N` base learners (step `2 eta_k`, uniform prior), and the
//! base pool itself: one strongly-convex OGD learner per curvature guess in
//! the geometric pool, one Newton-step learner per guess, and a single
//! variation-adaptive convex learner.
//!
//! Meta losses and optimisms carry cascaded correction terms: the mid layer
//! sees `<g_t, x_{t,i}> + lambda2 ||x_{t,i} - x_{t-1,i}||^2` per learner, the
//! top layer `<g_t, x_{t,k}> + lambda1 ||x_{t,k} - x_{t-1,k}||^2` per mid.
//! Each layer's optimism pairs the previous round's linearized regret guess
//! with the same correction, so the meta learners' own negative stability
//! cancels the movement of the layer below.
//!
//! The term `<g_t, x_t>` that the full optimism needs is unknown at predict
//! time but identical across coordinates, so the predict step drops it (the
//! entropy mirror step is invariant to uniform shifts) and the update step
//! restores it once the gradient is known.
//!
//! Feedback modes: `OneGradient` updates every base learner on a surrogate
//! built from the single queried gradient; `MultiGradient` queries the
//! environment's gradient at every base decision instead. Base learners are
//! shared across mids by default (all copies of learner `i` see identical
//! inputs, so the trajectories coincide); `BaseTopology::Full` instantiates
//! the `K x N` copies for verification.

use ndarray::Array1;

use crate::base::BaseLearner;
use crate::error::Error;
use crate::geometry::{BoundsBundle, Domain};
use crate::msmwc::{MsMwcFeed, MsMwcState};
use crate::surrogate::{SurrogateKind, SurrogateSnapshot};
use crate::Result;

/// Gradient oracle used by the multi-gradient feedback mode.
pub type GradOracle<'a> = dyn FnMut(&Array1<f64>) -> Array1<f64> + 'a;

/// Slack multiplier for the declared-gradient-bound warning.
const GRAD_BOUND_SLACK: f64 = 1e-6;
/// Relative tolerance for the per-round loss/optimism identity check.
const IDENTITY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeedbackMode {
    /// One gradient query per round; base learners run on surrogates.
    OneGradient,
    /// Base learners receive the true gradient at their own decisions.
    MultiGradient,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaseTopology {
    /// `N` base learners shared by every mid (behavior-preserving dedup).
    Shared,
    /// `K x N` physically distinct base learners.
    Full,
}

/// Geometric grid of curvature guesses `{1/T', 2/T', ..., 1}` with `T'` the
/// horizon rounded up to a power of two.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvaturePool {
    values: Vec<f64>,
}

impl CurvaturePool {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Builds the curvature pool for horizon `T`.
pub fn build_pool(horizon: usize) -> Result<CurvaturePool> {
    if horizon < 1 {
        return Err(Error::Config("horizon must be at least 1".into()));
    }
    let t_pow = horizon.next_power_of_two();
    let mut values = Vec::new();
    let mut v = 1.0 / t_pow as f64;
    loop {
        values.push(v);
        if v >= 1.0 {
            break;
        }
        v *= 2.0;
    }
    Ok(CurvaturePool { values })
}

/// The coupled constants of the ensemble, solved once per configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Constants {
    pub c0: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub gamma: f64,
}

/// Solves for the minimum constants satisfying the coupled one-sided
/// constraint system, taking `lambda2 = 2 lambda1` with equality and
/// over-satisfying the one constraint that couples `lambda1` to `lambda2`
/// (its denominator keeps only the `8 G^2` part). Every inequality is
/// re-verified post hoc.
pub fn solve_constants(bounds: &BoundsBundle) -> Result<Constants> {
    let d = bounds.diameter;
    let g = bounds.grad_bound;
    let l = bounds.smoothness;
    let g_sc = bounds.grad_bound_sc;

    let c2 = 4.0 * l * l + 32.0 * d * d * g * g * l * l + 8.0 * g.powi(4);
    let c3 = (4.0 + 4.0 * l * l) * g_sc * g_sc;
    let c4 = 2.0 * d * d * l * l + 2.0 * g * g + 10.0 * d * l * l;

    let lambda1 = (32.0 * c3).max(2.0 * c4).max(c2 / (2.0 * g * g));
    let lambda2 = 2.0 * lambda1;
    let c0 = [
        1.0,
        128.0,
        8.0 * lambda1 * d * d,
        8.0 * c2 * d * d / (8.0 * g * g + lambda2),
        64.0 * d * d * c3,
        8.0 * d,
        4.0 * d * d * c4,
    ]
    .into_iter()
    .fold(0.0f64, f64::max);
    let gamma = (8.0 * g * g + lambda2)
        .max(8.0 * lambda2 + 512.0 * g_sc * g_sc)
        .max(4.0 * lambda2 + 8.0 * g * g);

    let constants = Constants { c0, lambda1, lambda2, gamma };
    verify_constants(bounds, &constants)?;
    Ok(constants)
}

/// Re-evaluates every constraint the solve is supposed to satisfy.
pub fn verify_constants(bounds: &BoundsBundle, k: &Constants) -> Result<()> {
    let d = bounds.diameter;
    let g = bounds.grad_bound;
    let l = bounds.smoothness;
    let g_sc = bounds.grad_bound_sc;
    let c2 = 4.0 * l * l + 32.0 * d * d * g * g * l * l + 8.0 * g.powi(4);
    let c3 = (4.0 + 4.0 * l * l) * g_sc * g_sc;
    let c4 = 2.0 * d * d * l * l + 2.0 * g * g + 10.0 * d * l * l;

    let checks: [(&str, f64, f64); 14] = [
        ("c0 >= 1", k.c0, 1.0),
        ("c0 >= 128", k.c0, 128.0),
        ("c0 >= 8 lambda1 D^2", k.c0, 8.0 * k.lambda1 * d * d),
        (
            "c0 >= 8 C2 D^2 / (8 G^2 + lambda2)",
            k.c0,
            8.0 * c2 * d * d / (8.0 * g * g + k.lambda2),
        ),
        ("c0 >= 64 D^2 C3", k.c0, 64.0 * d * d * c3),
        ("c0 >= 8 D", k.c0, 8.0 * d),
        ("c0 >= 4 D^2 C4", k.c0, 4.0 * d * d * c4),
        (
            "lambda1 >= 4 C2 / (8 G^2 + lambda2)",
            k.lambda1,
            4.0 * c2 / (8.0 * g * g + k.lambda2),
        ),
        ("lambda1 >= 32 C3", k.lambda1, 32.0 * c3),
        ("lambda1 >= 2 C4", k.lambda1, 2.0 * c4),
        ("lambda2 >= 2 lambda1", k.lambda2, 2.0 * k.lambda1),
        ("gamma >= 8 G^2 + lambda2", k.gamma, 8.0 * g * g + k.lambda2),
        (
            "gamma >= 8 lambda2 + 512 Gsc^2",
            k.gamma,
            8.0 * k.lambda2 + 512.0 * g_sc * g_sc,
        ),
        ("gamma >= 4 lambda2 + 8 G^2", k.gamma, 4.0 * k.lambda2 + 8.0 * g * g),
    ];
    for (name, have, need) in checks {
        if have < need - 1e-9 * need.abs().max(1.0) {
            return Err(Error::Inconsistent(format!(
                "constant constraint failed: {name} ({have} < {need})"
            )));
        }
    }
    Ok(())
}

/// Rescaling divisor: the largest of the four magnitude bounds on the meta
/// losses and optimisms, so everything fed to the meta layers lands in
/// `[-1, 1]` after division.
pub fn compute_scale(bounds: &BoundsBundle, lambda1: f64, lambda2: f64) -> f64 {
    let gd = bounds.grad_bound * bounds.diameter;
    let d2 = bounds.diameter * bounds.diameter;
    [
        gd + lambda1 * d2,
        2.0 * gd + lambda2 * d2,
        gd + lambda2 * d2,
        2.0 * gd + (lambda1 + lambda2) * d2,
    ]
    .into_iter()
    .fold(0.0f64, f64::max)
}

/// Full configuration of one ensemble instance.
#[derive(Debug, Clone)]
pub struct EnsembleConfig {
    pub horizon: usize,
    pub domain: Domain,
    pub bounds: BoundsBundle,
    pub mode: FeedbackMode,
    pub topology: BaseTopology,
    pub constants: Constants,
    pub scale: f64,
    pub k_mids: usize,
    pub pool: CurvaturePool,
    pub n_bases: usize,
}

impl EnsembleConfig {
    pub fn new(
        horizon: usize,
        domain: Domain,
        bounds: BoundsBundle,
        mode: FeedbackMode,
        topology: BaseTopology,
    ) -> Result<Self> {
        domain.validate()?;
        if horizon < 1 {
            return Err(Error::Config("horizon must be at least 1".into()));
        }
        if (domain.diameter() - bounds.diameter).abs() > 1e-9 * bounds.diameter {
            return Err(Error::Config(format!(
                "declared diameter {} does not match the domain ({})",
                bounds.diameter,
                domain.diameter()
            )));
        }
        // The rescaling bounds require feasible points to have norm at most
        // the diameter.
        if domain.max_point_norm() > bounds.diameter * (1.0 + 1e-12) {
            return Err(Error::Config(format!(
                "feasible-point norm {} exceeds the diameter {}; shift the domain toward the origin",
                domain.max_point_norm(),
                bounds.diameter
            )));
        }
        let constants = solve_constants(&bounds)?;
        let scale = compute_scale(&bounds, constants.lambda1, constants.lambda2);
        let pool = build_pool(horizon)?;
        let k_mids = ceil_log2(horizon).max(1);
        let n_bases = 2 * pool.len() + 1;

        let cfg = EnsembleConfig {
            horizon,
            domain,
            bounds,
            mode,
            topology,
            constants,
            scale,
            k_mids,
            pool,
            n_bases,
        };
        cfg.check_step_sizes()?;
        Ok(cfg)
    }

    fn check_step_sizes(&self) -> Result<()> {
        let eta_1 = self.top_eta(1);
        if eta_1 > 1.0 / 32.0 || 2.0 * eta_1 > 1.0 / 32.0 {
            return Err(Error::Inconsistent(format!(
                "step sizes too large: eta_1 = {eta_1} (needs C0 >= 128)"
            )));
        }
        Ok(())
    }

    /// `eta_k = 1 / (C0 * 2^k)` for `k` in `1..=K`.
    pub fn top_eta(&self, k: usize) -> f64 {
        1.0 / (self.constants.c0 * (2.0f64).powi(k as i32))
    }

    pub fn top_prior(&self) -> Vec<f64> {
        let etas: Vec<f64> = (1..=self.k_mids).map(|k| self.top_eta(k)).collect();
        let z: f64 = etas.iter().map(|e| e * e).sum();
        etas.iter().map(|e| e * e / z).collect()
    }

    /// Bound on the gradients the Newton learners will actually receive.
    pub fn ons_grad_bound(&self) -> f64 {
        match self.mode {
            FeedbackMode::OneGradient => self.bounds.grad_bound_exp,
            FeedbackMode::MultiGradient => self.bounds.grad_bound,
        }
    }

    fn base_instances(&self) -> usize {
        match self.topology {
            BaseTopology::Shared => self.n_bases,
            BaseTopology::Full => self.k_mids * self.n_bases,
        }
    }
}

fn ceil_log2(t: usize) -> usize {
    if t <= 1 {
        return 0;
    }
    (usize::BITS - (t - 1).leading_zeros()) as usize
}

/// What one learner index means: the first `|H|` slots run strongly-convex
/// learners over the pool, the next `|H|` run exp-concave learners over the
/// same pool, and the last slot is the convex learner.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaseRole {
    StronglyConvex(usize),
    ExpConcave(usize),
    Convex,
}

/// Per-round telemetry emitted by `round_update`.
#[derive(Debug, Clone)]
pub struct RoundTelemetry {
    pub t: usize,
    pub loss: f64,
    pub decision: Array1<f64>,
    pub grad_queries: u64,
    /// Cumulative empirical gradient variation of the oracle gradients.
    pub emp_variation: f64,
    /// Cumulative weighted correction mass injected into the meta layers.
    pub corrections: f64,
    pub top_entropy: f64,
    /// `||q_t - q_{t-1}||_1^2`.
    pub s_q: f64,
    /// Stability of the mid currently holding the largest top weight.
    pub s_p_star: f64,
    /// `||x_t - x_{t-1}||^2`.
    pub s_x: f64,
    /// Largest absolute residual of the loss/optimism aggregation identity.
    pub aggregation_gap: f64,
    pub grad_bound_warning: bool,
}

struct RoundSnapshot {
    base_x: Vec<Array1<f64>>,
    base_corr: Vec<f64>,
    mid_x: Vec<Array1<f64>>,
    mid_corr: Vec<f64>,
    mid_w: Vec<Array1<f64>>,
    top_w: Array1<f64>,
    /// Dropped-constant optimism vectors actually fed to the mids.
    mid_opt: Vec<Array1<f64>>,
    top_opt: Array1<f64>,
    x: Array1<f64>,
}

/// One end-to-end instance of the universal learner.
pub struct Ensemble {
    config: EnsembleConfig,
    top: MsMwcState,
    mids: Vec<MsMwcState>,
    bases: Vec<BaseLearner>,
    roles: Vec<BaseRole>,
    rounds_done: usize,
    pending: Option<RoundSnapshot>,
    prev_x: Option<Array1<f64>>,
    prev_grad: Option<Array1<f64>>,
    prev_base_x: Vec<Array1<f64>>,
    prev_mid_x: Vec<Array1<f64>>,
    grad_queries: u64,
    emp_variation: f64,
    corrections: f64,
    grad_warnings: usize,
}

impl Ensemble {
    pub fn new(config: EnsembleConfig) -> Result<Self> {
        let top = MsMwcState::new(
            &config.top_prior(),
            &(1..=config.k_mids).map(|k| config.top_eta(k)).collect::<Vec<_>>(),
            config.scale,
        )?;
        let mut mids = Vec::with_capacity(config.k_mids);
        for k in 1..=config.k_mids {
            mids.push(MsMwcState::new(
                &vec![1.0 / config.n_bases as f64; config.n_bases],
                &vec![2.0 * config.top_eta(k); config.n_bases],
                config.scale,
            )?);
        }

        let mut roles = Vec::with_capacity(config.n_bases);
        for j in 0..config.pool.len() {
            roles.push(BaseRole::StronglyConvex(j));
        }
        for j in 0..config.pool.len() {
            roles.push(BaseRole::ExpConcave(j));
        }
        roles.push(BaseRole::Convex);

        let gamma = config.constants.gamma;
        let make_base = |role: &BaseRole| -> BaseLearner {
            match role {
                BaseRole::StronglyConvex(j) => BaseLearner::strongly_convex(
                    config.domain.clone(),
                    config.pool.values()[*j],
                    gamma,
                ),
                BaseRole::ExpConcave(j) => BaseLearner::exp_concave(
                    config.domain.clone(),
                    config.pool.values()[*j],
                    gamma,
                    config.ons_grad_bound(),
                ),
                BaseRole::Convex => BaseLearner::convex(config.domain.clone(), gamma),
            }
        };
        let instances = config.base_instances();
        let mut bases = Vec::with_capacity(instances);
        for idx in 0..instances {
            bases.push(make_base(&roles[idx % config.n_bases]));
        }

        Ok(Ensemble {
            config,
            top,
            mids,
            bases,
            roles,
            rounds_done: 0,
            pending: None,
            prev_x: None,
            prev_grad: None,
            prev_base_x: Vec::new(),
            prev_mid_x: Vec::new(),
            grad_queries: 0,
            emp_variation: 0.0,
            corrections: 0.0,
            grad_warnings: 0,
        })
    }

    pub fn config(&self) -> &EnsembleConfig {
        &self.config
    }

    pub fn grad_queries(&self) -> u64 {
        self.grad_queries
    }

    pub fn grad_bound_warnings(&self) -> usize {
        self.grad_warnings
    }

    pub fn rounds_done(&self) -> usize {
        self.rounds_done
    }

    pub fn top_state(&self) -> &MsMwcState {
        &self.top
    }

    pub fn mid_states(&self) -> &[MsMwcState] {
        &self.mids
    }

    pub fn bases(&self) -> &[BaseLearner] {
        &self.bases
    }

    pub fn roles(&self) -> &[BaseRole] {
        &self.roles
    }

    /// Index of base learner `(k, i)` in the instance vector.
    pub fn base_index(&self, k: usize, i: usize) -> usize {
        match self.config.topology {
            BaseTopology::Shared => i,
            BaseTopology::Full => k * self.config.n_bases + i,
        }
    }

    /// Emits this round's decision: base learners first, then the mids, then
    /// the top, aggregating bottom-up.
    pub fn round_predict(&mut self) -> Result<Array1<f64>> {
        if self.pending.is_some() {
            return Err(Error::Protocol("round_predict called twice without round_update"));
        }
        let t = self.rounds_done + 1;
        let dim = self.config.domain.dim();
        let first_round = t == 1;
        let lambda1 = self.config.constants.lambda1;
        let lambda2 = self.config.constants.lambda2;

        // Base layer.
        let mut base_x = Vec::with_capacity(self.bases.len());
        let mut base_corr = vec![0.0; self.bases.len()];
        for (idx, b) in self.bases.iter_mut().enumerate() {
            let optimism = b.last_grad().cloned().unwrap_or_else(|| Array1::zeros(dim));
            let x = b.predict(&optimism)?;
            if !first_round {
                let d = &x - &self.prev_base_x[idx];
                base_corr[idx] = d.dot(&d);
            }
            base_x.push(x);
        }

        // Mid layer.
        let n = self.config.n_bases;
        let mut mid_opt_hat = Vec::with_capacity(self.config.k_mids);
        let mut mid_opt = Vec::with_capacity(self.config.k_mids);
        let mut mid_w = Vec::with_capacity(self.config.k_mids);
        let mut mid_x = Vec::with_capacity(self.config.k_mids);
        for k in 0..self.config.k_mids {
            let mut hat = Array1::<f64>::zeros(n);
            let mut opt = Array1::<f64>::zeros(n);
            if !first_round {
                let g_prev = self.prev_grad.as_ref().unwrap();
                let x_prev = self.prev_x.as_ref().unwrap();
                for i in 0..n {
                    let idx = self.base_index(k, i);
                    let guess = -g_prev.dot(&(x_prev - &self.prev_base_x[idx]));
                    hat[i] = guess;
                    opt[i] = guess + lambda2 * base_corr[idx];
                }
            }
            let w = self.mids[k].predict(&opt)?;
            let mut xk = Array1::<f64>::zeros(dim);
            for i in 0..n {
                let idx = self.base_index(k, i);
                xk += &(&base_x[idx] * w[i]);
            }
            mid_opt_hat.push(hat);
            mid_opt.push(opt);
            mid_w.push(w);
            mid_x.push(xk);
        }

        // Top layer. The optimism aggregates the uncorrected per-learner
        // guesses (the mid corrections cancel between loss and optimism and
        // must not leak into this aggregate) plus the top's own correction.
        let mut mid_corr = vec![0.0; self.config.k_mids];
        let mut top_opt = Array1::<f64>::zeros(self.config.k_mids);
        if !first_round {
            for k in 0..self.config.k_mids {
                let d = &mid_x[k] - &self.prev_mid_x[k];
                mid_corr[k] = d.dot(&d);
                top_opt[k] = mid_opt_hat[k].dot(&mid_w[k]) + lambda1 * mid_corr[k];
            }
        }
        let top_w = self.top.predict(&top_opt)?;
        let mut x = Array1::<f64>::zeros(dim);
        for k in 0..self.config.k_mids {
            x += &(&mid_x[k] * top_w[k]);
        }

        if !self.config.domain.contains(&x) {
            return Err(Error::Invariant {
                round: t,
                detail: "aggregated decision left the feasible set".into(),
            });
        }

        self.pending = Some(RoundSnapshot {
            base_x,
            base_corr,
            mid_x,
            mid_corr,
            mid_w,
            top_w,
            mid_opt,
            top_opt,
            x: x.clone(),
        });
        Ok(x)
    }

    /// One-gradient feedback: `grad` is the single oracle gradient at the
    /// played point; base learners update on surrogates built from it.
    pub fn round_update(&mut self, grad: &Array1<f64>, f_value: f64) -> Result<RoundTelemetry> {
        if self.config.mode != FeedbackMode::OneGradient {
            return Err(Error::Protocol(
                "round_update without an oracle requires one-gradient mode",
            ));
        }
        self.round_update_inner(grad, f_value, None)
    }

    /// Multi-gradient feedback: `oracle` evaluates the true gradient at any
    /// point and is charged one query per call.
    pub fn round_update_with_oracle(
        &mut self,
        grad: &Array1<f64>,
        f_value: f64,
        oracle: &mut GradOracle,
    ) -> Result<RoundTelemetry> {
        if self.config.mode != FeedbackMode::MultiGradient {
            return Err(Error::Protocol(
                "round_update_with_oracle requires multi-gradient mode",
            ));
        }
        self.round_update_inner(grad, f_value, Some(oracle))
    }

    fn round_update_inner(
        &mut self,
        grad: &Array1<f64>,
        f_value: f64,
        oracle: Option<&mut GradOracle>,
    ) -> Result<RoundTelemetry> {
        let snap = self
            .pending
            .take()
            .ok_or(Error::Protocol("round_update called before round_predict"))?;
        let t = self.rounds_done + 1;
        let lambda1 = self.config.constants.lambda1;
        let lambda2 = self.config.constants.lambda2;
        let n = self.config.n_bases;
        let k_mids = self.config.k_mids;

        let grad_norm = grad.dot(grad).sqrt();
        let warn = grad_norm > self.config.bounds.grad_bound * (1.0 + GRAD_BOUND_SLACK);
        if warn {
            self.grad_warnings += 1;
        }
        self.grad_queries += 1;

        let g_dot_x = grad.dot(&snap.x);

        // Meta losses and full optimisms (the dropped constant restored).
        let mut aggregation_gap = 0.0f64;
        let mut correction_mass = 0.0;
        let mut top_loss = Array1::<f64>::zeros(k_mids);
        let mut top_opt_full = Array1::<f64>::zeros(k_mids);
        let mut mid_feeds = Vec::with_capacity(k_mids);
        for k in 0..k_mids {
            let mut loss = Array1::<f64>::zeros(n);
            let mut opt = Array1::<f64>::zeros(n);
            for i in 0..n {
                let idx = self.base_index(k, i);
                loss[i] = grad.dot(&snap.base_x[idx]) + lambda2 * snap.base_corr[idx];
                opt[i] = snap.mid_opt[k][i] + g_dot_x;
                correction_mass += snap.mid_w[k][i] * lambda2 * snap.base_corr[idx];
            }
            top_loss[k] = grad.dot(&snap.mid_x[k]) + lambda1 * snap.mid_corr[k];
            top_opt_full[k] = snap.top_opt[k] + g_dot_x;
            correction_mass += snap.top_w[k] * lambda1 * snap.mid_corr[k];

            // The top-level difference must equal the mid-level differences
            // aggregated by the mid weights.
            let lhs = top_loss[k] - top_opt_full[k];
            let rhs = (&loss - &opt).dot(&snap.mid_w[k]);
            let gap = (lhs - rhs).abs();
            aggregation_gap = aggregation_gap.max(gap);
            if gap > IDENTITY_TOL * self.config.scale.max(1.0) {
                return Err(Error::Invariant {
                    round: t,
                    detail: format!(
                        "loss/optimism aggregation identity failed at mid {k}: |{lhs} - {rhs}| = {gap}"
                    ),
                });
            }
            mid_feeds.push(MsMwcFeed { loss, optimism: opt });
        }
        self.corrections += correction_mass;

        // Meta updates, top first.
        self.top.update(&MsMwcFeed { loss: top_loss, optimism: top_opt_full })?;
        for (k, feed) in mid_feeds.iter().enumerate() {
            self.mids[k].update(feed)?;
        }
        self.top.check_simplex().map_err(|e| Error::Invariant {
            round: t,
            detail: format!("top weights: {e}"),
        })?;
        for (k, mid) in self.mids.iter().enumerate() {
            mid.check_simplex().map_err(|e| Error::Invariant {
                round: t,
                detail: format!("mid {k} weights: {e}"),
            })?;
        }

        // Base updates.
        match oracle {
            None => {
                // Surrogate snapshots from the single queried gradient.
                for (idx, b) in self.bases.iter_mut().enumerate() {
                    let role = self.roles[idx % n];
                    let snapshot = match role {
                        BaseRole::StronglyConvex(j) => SurrogateSnapshot::new(
                            SurrogateKind::StronglyConvex,
                            grad.clone(),
                            snap.x.clone(),
                            self.config.pool.values()[j],
                        ),
                        BaseRole::ExpConcave(j) => SurrogateSnapshot::new(
                            SurrogateKind::ExpConcave,
                            grad.clone(),
                            snap.x.clone(),
                            self.config.pool.values()[j],
                        ),
                        BaseRole::Convex => SurrogateSnapshot::new(
                            SurrogateKind::Convex,
                            grad.clone(),
                            snap.x.clone(),
                            0.0,
                        ),
                    };
                    let g_i = snapshot.grad_at(&snap.base_x[idx]);
                    b.update(&g_i)?;
                }
            }
            Some(oracle) => {
                for (idx, b) in self.bases.iter_mut().enumerate() {
                    let g_i = oracle(&snap.base_x[idx]);
                    self.grad_queries += 1;
                    b.update(&g_i)?;
                }
            }
        }

        // Telemetry.
        if let Some(pg) = &self.prev_grad {
            let d = grad - pg;
            self.emp_variation += d.dot(&d);
        }
        let s_x = match &self.prev_x {
            Some(px) => {
                let d = &snap.x - px;
                d.dot(&d)
            }
            None => 0.0,
        };
        let s_q = self.top.stability_metric();
        let star = snap
            .top_w
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(k, _)| k)
            .unwrap_or(0);
        let s_p_star = self.mids[star].stability_metric();
        let top_entropy = -snap.top_w.iter().map(|q| q * q.ln()).sum::<f64>();

        // Advance caches.
        self.prev_x = Some(snap.x.clone());
        self.prev_grad = Some(grad.clone());
        self.prev_base_x = snap.base_x;
        self.prev_mid_x = snap.mid_x;
        self.rounds_done += 1;

        Ok(RoundTelemetry {
            t,
            loss: f_value,
            decision: snap.x,
            grad_queries: self.grad_queries,
            emp_variation: self.emp_variation,
            corrections: self.corrections,
            top_entropy,
            s_q,
            s_p_star,
            s_x,
            aggregation_gap,
            grad_bound_warning: warn,
        })
    }
}

#[cfg(test)]
impl Ensemble {
    /// Degenerate one-mid, one-learner layout used to verify that the full
    /// wiring collapses to the underlying base learner.
    pub(crate) fn single_convex_for_test(
        domain: Domain,
        bounds: BoundsBundle,
        horizon: usize,
    ) -> Result<Self> {
        domain.validate()?;
        let constants = solve_constants(&bounds)?;
        let scale = compute_scale(&bounds, constants.lambda1, constants.lambda2);
        let config = EnsembleConfig {
            horizon,
            domain: domain.clone(),
            bounds,
            mode: FeedbackMode::OneGradient,
            topology: BaseTopology::Shared,
            constants,
            scale,
            k_mids: 1,
            pool: CurvaturePool { values: vec![1.0] },
            n_bases: 1,
        };
        let eta = config.top_eta(1);
        Ok(Ensemble {
            top: MsMwcState::new(&[1.0], &[eta], scale)?,
            mids: vec![MsMwcState::new(&[1.0], &[2.0 * eta], scale)?],
            bases: vec![BaseLearner::convex(domain, constants.gamma)],
            roles: vec![BaseRole::Convex],
            rounds_done: 0,
            pending: None,
            prev_x: None,
            prev_grad: None,
            prev_base_x: Vec::new(),
            prev_mid_x: Vec::new(),
            grad_queries: 0,
            emp_variation: 0.0,
            corrections: 0.0,
            grad_warnings: 0,
            config,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr1;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn test_bounds() -> BoundsBundle {
        BoundsBundle::new(1.0, 1.0, 1.0).unwrap()
    }

    fn small_config(t: usize, mode: FeedbackMode, topology: BaseTopology) -> EnsembleConfig {
        EnsembleConfig::new(t, Domain::origin_ball(2, 0.5), test_bounds(), mode, topology)
            .unwrap()
    }

    #[test]
    fn pool_for_t_eight() {
        let pool = build_pool(8).unwrap();
        assert_eq!(pool.values(), &[0.125, 0.25, 0.5, 1.0]);
    }

    #[test]
    fn pool_degenerate_horizon() {
        let pool = build_pool(1).unwrap();
        assert_eq!(pool.values(), &[1.0]);
    }

    #[test]
    fn pool_for_t_1024() {
        let pool = build_pool(1024).unwrap();
        assert_eq!(pool.len(), 11);
        assert_eq!(pool.values()[0], 1.0 / 1024.0);
        assert_eq!(*pool.values().last().unwrap(), 1.0);
        // Consecutive ratios are exactly 2.
        for w in pool.values().windows(2) {
            assert_eq!(w[1], 2.0 * w[0]);
        }
    }

    #[test]
    fn pool_rejects_zero_horizon() {
        assert!(build_pool(0).is_err());
    }

    #[test]
    fn constants_satisfy_posthoc_checks_at_unit_scale() {
        let bounds = BoundsBundle::new(1.0, 1.0, 1.0).unwrap();
        let k = solve_constants(&bounds).unwrap();
        assert_eq!(k.lambda2, 2.0 * k.lambda1);
        verify_constants(&bounds, &k).unwrap();
    }

    #[test]
    fn gamma_monotone_in_gradient_bound() {
        // At moderate scales every active constraint grows with G.
        let mut prev = 0.0;
        for g in [0.5, 1.0, 2.0, 4.0] {
            let bounds = BoundsBundle::new(1.0, g, 1.0).unwrap();
            let k = solve_constants(&bounds).unwrap();
            assert!(k.gamma >= prev, "gamma decreased when G grew to {g}");
            prev = k.gamma;
        }
    }

    #[test]
    fn scale_substitution_examples() {
        let b = BoundsBundle::new(1.0, 1.0, 1.0).unwrap();
        // lambda1 = lambda2 = 0 leaves only the linear terms.
        assert_eq!(compute_scale(&b, 0.0, 0.0), 2.0);
        // D = G = 1, lambda1 = 1, lambda2 = 2: max{2, 4, 3, 5} = 5.
        assert_eq!(compute_scale(&b, 1.0, 2.0), 5.0);
    }

    #[test]
    fn layout_counts() {
        let cfg = small_config(64, FeedbackMode::OneGradient, BaseTopology::Shared);
        assert_eq!(cfg.k_mids, 6);
        assert_eq!(cfg.pool.len(), 7);
        assert_eq!(cfg.n_bases, 15);
        let prior = cfg.top_prior();
        assert!((prior.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        // Prior decays by factor 4 per regime.
        for w in prior.windows(2) {
            assert!((w[0] / w[1] - 4.0).abs() < 1e-9);
        }
    }

    #[test]
    fn first_round_plays_domain_center() {
        let cfg = small_config(16, FeedbackMode::OneGradient, BaseTopology::Shared);
        let mut ens = Ensemble::new(cfg).unwrap();
        let x = ens.round_predict().unwrap();
        let c = ens.config().domain.center();
        let d = &x - &c;
        assert!(d.dot(&d).sqrt() < 1e-12);
    }

    #[test]
    fn zero_gradients_freeze_all_weights() {
        let cfg = small_config(16, FeedbackMode::OneGradient, BaseTopology::Shared);
        let mut ens = Ensemble::new(cfg).unwrap();
        let prior = ens.top_state().pivot();
        for _ in 0..8 {
            ens.round_predict().unwrap();
            let tel = ens.round_update(&Array1::zeros(2), 0.0).unwrap();
            assert_eq!(tel.s_q, 0.0);
        }
        let after = ens.top_state().pivot();
        for (a, b) in prior.iter().zip(after.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn protocol_errors() {
        let cfg = small_config(8, FeedbackMode::OneGradient, BaseTopology::Shared);
        let mut ens = Ensemble::new(cfg).unwrap();
        assert!(matches!(
            ens.round_update(&Array1::zeros(2), 0.0),
            Err(Error::Protocol(_))
        ));
        ens.round_predict().unwrap();
        assert!(matches!(ens.round_predict(), Err(Error::Protocol(_))));
        // Wrong-mode update.
        let cfg = small_config(8, FeedbackMode::MultiGradient, BaseTopology::Shared);
        let mut ens_multi = Ensemble::new(cfg).unwrap();
        ens_multi.round_predict().unwrap();
        assert!(matches!(
            ens_multi.round_update(&Array1::zeros(2), 0.0),
            Err(Error::Protocol(_))
        ));
    }

    #[test]
    fn one_gradient_counter_is_exact() {
        let t_max = 64;
        let cfg = small_config(t_max, FeedbackMode::OneGradient, BaseTopology::Shared);
        let mut ens = Ensemble::new(cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..t_max {
            let x = ens.round_predict().unwrap();
            let g = arr1(&[rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)]);
            ens.round_update(&g, g.dot(&x)).unwrap();
        }
        assert_eq!(ens.grad_queries(), t_max as u64);
    }

    #[test]
    fn multi_gradient_counter_counts_base_queries() {
        let t_max = 4;
        for topology in [BaseTopology::Shared, BaseTopology::Full] {
            let cfg = EnsembleConfig::new(
                16,
                Domain::origin_ball(2, 0.5),
                test_bounds(),
                FeedbackMode::MultiGradient,
                topology,
            )
            .unwrap();
            let n_inst = match topology {
                BaseTopology::Shared => cfg.n_bases as u64,
                BaseTopology::Full => (cfg.k_mids * cfg.n_bases) as u64,
            };
            let mut ens = Ensemble::new(cfg).unwrap();
            for _ in 0..t_max {
                ens.round_predict().unwrap();
                let g = arr1(&[0.1, -0.2]);
                let mut oracle = |_x: &Array1<f64>| arr1(&[0.1, -0.2]);
                ens.round_update_with_oracle(&g, 0.0, &mut oracle).unwrap();
            }
            assert_eq!(ens.grad_queries(), t_max as u64 * (1 + n_inst));
        }
    }

    #[test]
    fn decisions_stay_feasible_and_identity_holds() {
        let cfg = small_config(128, FeedbackMode::OneGradient, BaseTopology::Shared);
        let mut ens = Ensemble::new(cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let dom = ens.config().domain.clone();
        for _ in 0..128 {
            let x = ens.round_predict().unwrap();
            assert!(dom.contains(&x));
            // Quadratic pulling toward a drifting target.
            let c = arr1(&[rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3)]);
            let g = &x - &c;
            let tel = ens.round_update(&g, 0.5 * g.dot(&g)).unwrap();
            assert!(tel.aggregation_gap <= 1e-9 * ens.config().scale);
            assert!(!tel.grad_bound_warning);
        }
    }

    #[test]
    fn gradient_bound_warning_recorded() {
        let cfg = small_config(8, FeedbackMode::OneGradient, BaseTopology::Shared);
        let mut ens = Ensemble::new(cfg).unwrap();
        ens.round_predict().unwrap();
        let tel = ens.round_update(&arr1(&[30.0, 0.0]), 0.0);
        // The oversized gradient violates the meta-range invariant or at
        // minimum records a warning; both are acceptable abort paths, but the
        // warning must fire before any range error.
        match tel {
            Ok(t) => assert!(t.grad_bound_warning),
            Err(_) => assert_eq!(ens.grad_bound_warnings(), 1),
        }
    }

    #[test]
    fn single_expert_collapse() {
        // K = 1, N = 1: the ensemble must replay the lone convex base
        // learner run standalone on the same gradients.
        let bounds = test_bounds();
        let dom = Domain::origin_ball(2, 0.5);
        let constants = solve_constants(&bounds).unwrap();
        let mut ens = Ensemble::single_convex_for_test(dom.clone(), bounds, 32).unwrap();
        let mut lone = BaseLearner::convex(dom, constants.gamma);
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..32 {
            let x_e = ens.round_predict().unwrap();
            let m = lone.last_grad().cloned().unwrap_or_else(|| Array1::zeros(2));
            let x_l = lone.predict(&m).unwrap();
            let d = &x_e - &x_l;
            assert!(d.dot(&d).sqrt() <= 1e-9, "ensemble diverged from lone learner");
            let g = arr1(&[rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)]);
            ens.round_update(&g, 0.0).unwrap();
            lone.update(&g).unwrap();
        }
    }

    #[test]
    fn shift_invariance_of_mid_prediction() {
        // Adding a constant to every coordinate of a mid optimism leaves the
        // played weights unchanged; this is what justifies dropping the
        // unknown <g_t, x_t> term at predict time.
        let cfg = small_config(16, FeedbackMode::OneGradient, BaseTopology::Shared);
        let ens = Ensemble::new(cfg).unwrap();
        let mut a = ens.mid_states()[0].clone();
        let mut b = ens.mid_states()[0].clone();
        let n = ens.config().n_bases;
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let m = Array1::from_iter((0..n).map(|_| rng.random_range(-1.0..1.0)));
        let shift = 0.7;
        let pa = a.predict(&m).unwrap();
        let pb = b.predict(&(&m + shift)).unwrap();
        for (x, y) in pa.iter().zip(pb.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}
