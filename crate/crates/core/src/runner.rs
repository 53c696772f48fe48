//! Round-loop drivers: one ensemble against one environment, and the
//! two-player game loops (honest self-play and dishonest opponents).

use ndarray::Array1;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::base::BaseLearner;
use crate::ensemble::{BaseTopology, Ensemble, EnsembleConfig, FeedbackMode, RoundTelemetry};
use crate::env::{Environment, GameSpec, OpponentStrategy};
use crate::error::Error;
use crate::geometry::BoundsBundle;
use crate::metrics::{
    build_records, comparator_loss, linear_comparator, Comparator, LinearSequence, RoundRecord,
};
use crate::Result;

/// Everything a finished single-learner run exposes.
pub struct RunOutput {
    pub records: Vec<RoundRecord>,
    pub comparator: Comparator,
    /// Largest disagreement between the two regret-accounting routes.
    pub route_gap: f64,
    /// Largest per-round loss/optimism aggregation residual seen.
    pub max_aggregation_gap: f64,
    pub grad_bound_warnings: usize,
    pub decisions: Vec<Array1<f64>>,
    pub ensemble: Ensemble,
}

impl RunOutput {
    pub fn final_regret(&self) -> f64 {
        self.records.last().map(|r| r.cum_regret).unwrap_or(0.0)
    }

    pub fn regret_at(&self, t: usize) -> Option<f64> {
        self.records.iter().find(|r| r.t == t).map(|r| r.cum_regret)
    }
}

/// Runs the ensemble over the environment's full horizon.
pub fn run_environment(
    env: &Environment,
    mode: FeedbackMode,
    topology: BaseTopology,
) -> Result<RunOutput> {
    let config = EnsembleConfig::new(
        env.horizon(),
        env.domain().clone(),
        *env.bounds(),
        mode,
        topology,
    )?;
    let mut ensemble = Ensemble::new(config)?;
    let mut telemetry: Vec<RoundTelemetry> = Vec::with_capacity(env.horizon());
    let mut max_gap = 0.0f64;
    for t in 1..=env.horizon() {
        let x = ensemble.round_predict()?;
        let g = env.gradient(t, &x)?;
        let f = env.value(t, &x)?;
        let tel = match mode {
            FeedbackMode::OneGradient => ensemble.round_update(&g, f)?,
            FeedbackMode::MultiGradient => {
                let mut oracle =
                    |p: &Array1<f64>| env.gradient(t, p).expect("feasible query point");
                ensemble.round_update_with_oracle(&g, f, &mut oracle)?
            }
        };
        max_gap = max_gap.max(tel.aggregation_gap);
        telemetry.push(tel);
    }
    let comparator = comparator_loss(env)?;
    let decisions: Vec<Array1<f64>> = telemetry.iter().map(|t| t.decision.clone()).collect();
    let (records, route_gap) =
        build_records(env, |t| env.vt_step(t), &telemetry, &comparator);
    Ok(RunOutput {
        records,
        comparator,
        route_gap,
        max_aggregation_gap: max_gap,
        grad_bound_warnings: ensemble.grad_bound_warnings(),
        decisions,
        ensemble,
    })
}

/// One player's view of a finished game run.
pub struct PlayerOutput {
    pub records: Vec<RoundRecord>,
    pub comparator: Comparator,
    pub route_gap: f64,
    pub plays: Vec<Array1<f64>>,
    pub grads: Vec<Array1<f64>>,
}

impl PlayerOutput {
    pub fn final_regret(&self) -> f64 {
        self.records.last().map(|r| r.cum_regret).unwrap_or(0.0)
    }
}

pub struct GameOutput {
    pub x_player: PlayerOutput,
    /// Present in honest mode only.
    pub y_player: Option<PlayerOutput>,
    pub values: Vec<f64>,
}

impl GameOutput {
    /// Sum of both players' regrets (honest mode).
    pub fn regret_sum(&self) -> Option<f64> {
        self.y_player
            .as_ref()
            .map(|y| self.x_player.final_regret() + y.final_regret())
    }
}

fn player_bounds(spec: &GameSpec, own_is_x: bool) -> Result<BoundsBundle> {
    let ata = spec.payoff.t().dot(&spec.payoff).as_standard_layout().to_owned();
    let a_norm = crate::linalg::lambda_max(&ata, 300).max(0.0).sqrt();
    let (own_domain, other_domain, offset) = if own_is_x {
        (&spec.x_domain, &spec.y_domain, &spec.x_offset)
    } else {
        (&spec.y_domain, &spec.x_domain, &spec.y_offset)
    };
    let g = a_norm * other_domain.max_point_norm() + offset.dot(offset).sqrt();
    // Per-round game losses are linear in the player's own variable.
    BoundsBundle::new(own_domain.diameter(), g.max(1e-6), 1e-3)
}

fn finish_player(
    domain: &crate::geometry::Domain,
    plays: Vec<Array1<f64>>,
    grads: Vec<Array1<f64>>,
    telemetry: Vec<RoundTelemetry>,
) -> PlayerOutput {
    let comparator = linear_comparator(domain, &grads);
    let seq = LinearSequence(&grads);
    let sup_step = |t: usize| {
        if t < 2 {
            0.0
        } else {
            let d = &grads[t - 1] - &grads[t - 2];
            d.dot(&d)
        }
    };
    let (records, route_gap) = build_records(&seq, sup_step, &telemetry, &comparator);
    PlayerOutput { records, comparator, route_gap, plays, grads }
}

/// Both players run the universal learner in one-gradient mode.
pub fn run_game_honest(spec: &GameSpec, horizon: usize) -> Result<GameOutput> {
    let x_cfg = EnsembleConfig::new(
        horizon,
        spec.x_domain.clone(),
        player_bounds(spec, true)?,
        FeedbackMode::OneGradient,
        BaseTopology::Shared,
    )?;
    let y_cfg = EnsembleConfig::new(
        horizon,
        spec.y_domain.clone(),
        player_bounds(spec, false)?,
        FeedbackMode::OneGradient,
        BaseTopology::Shared,
    )?;
    let mut ens_x = Ensemble::new(x_cfg)?;
    let mut ens_y = Ensemble::new(y_cfg)?;

    let mut x_tel = Vec::with_capacity(horizon);
    let mut y_tel = Vec::with_capacity(horizon);
    let mut x_plays = Vec::with_capacity(horizon);
    let mut y_plays = Vec::with_capacity(horizon);
    let mut x_grads = Vec::with_capacity(horizon);
    let mut y_grads = Vec::with_capacity(horizon);
    let mut values = Vec::with_capacity(horizon);
    for _ in 1..=horizon {
        let x = ens_x.round_predict()?;
        let y = ens_y.round_predict()?;
        let (gx, gy, value) = spec.step(&x, &y);
        x_tel.push(ens_x.round_update(&gx, gx.dot(&x))?);
        y_tel.push(ens_y.round_update(&gy, gy.dot(&y))?);
        x_plays.push(x);
        y_plays.push(y);
        x_grads.push(gx);
        y_grads.push(gy);
        values.push(value);
    }
    Ok(GameOutput {
        x_player: finish_player(&spec.x_domain, x_plays, x_grads, x_tel),
        y_player: Some(finish_player(&spec.y_domain, y_plays, y_grads, y_tel)),
        values,
    })
}

/// The x-player runs the universal learner; the y-player deviates to the
/// given strategy (seeded where randomized).
pub fn run_game_dishonest(
    spec: &GameSpec,
    horizon: usize,
    strategy: &OpponentStrategy,
    opponent_seed: u64,
) -> Result<GameOutput> {
    let x_cfg = EnsembleConfig::new(
        horizon,
        spec.x_domain.clone(),
        player_bounds(spec, true)?,
        FeedbackMode::OneGradient,
        BaseTopology::Shared,
    )?;
    let mut ens_x = Ensemble::new(x_cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opponent_seed);

    let mut x_tel = Vec::with_capacity(horizon);
    let mut x_plays = Vec::with_capacity(horizon);
    let mut x_grads = Vec::with_capacity(horizon);
    let mut values = Vec::with_capacity(horizon);
    for _ in 1..=horizon {
        let x = ens_x.round_predict()?;
        let y = spec.opponent_play(strategy, &x, &mut rng);
        if !spec.y_domain.contains(&y) {
            return Err(Error::Contract("opponent played an infeasible point".into()));
        }
        let (gx, _gy, value) = spec.step(&x, &y);
        x_tel.push(ens_x.round_update(&gx, gx.dot(&x))?);
        x_plays.push(x);
        x_grads.push(gx);
        values.push(value);
    }
    Ok(GameOutput {
        x_player: finish_player(&spec.x_domain, x_plays, x_grads, x_tel),
        y_player: None,
        values,
    })
}

/// Drives one standalone base learner on a gradient stream, recomputing its
/// published schedule externally each round. Returns the largest deviation
/// between the recomputed and internal step sizes (exact-equality audits
/// expect zero) and, for Newton learners, the largest inverse-refresh gap.
pub fn audit_base_schedule(
    learner: &mut BaseLearner,
    grads: &[Array1<f64>],
) -> Result<(f64, f64)> {
    let mut variation = 0.0f64;
    let mut prev: Option<Array1<f64>> = None;
    let mut max_step_dev = 0.0f64;
    let mut max_refresh_dev = 0.0f64;
    for (idx, g) in grads.iter().enumerate() {
        let t = idx + 1;
        let expected = match learner {
            BaseLearner::Convex(s) => {
                Some((s.domain().diameter() / (1.0 + variation).sqrt()).min(1.0 / s.gamma()))
            }
            BaseLearner::StronglyConvex(s) => {
                Some(2.0 / (s.gamma() + s.lambda() * t as f64))
            }
            BaseLearner::ExpConcave(_) => None,
        };
        let actual = match learner {
            BaseLearner::Convex(s) => Some(s.step_size()),
            BaseLearner::StronglyConvex(s) => Some(s.step_size()),
            BaseLearner::ExpConcave(_) => None,
        };
        if let (Some(e), Some(a)) = (expected, actual) {
            max_step_dev = max_step_dev.max((e - a).abs());
        }
        let m = learner.last_grad().cloned().unwrap_or_else(|| Array1::zeros(g.len()));
        learner.predict(&m)?;
        learner.update(g)?;
        if let Some(p) = &prev {
            let d = g - p;
            variation += d.dot(&d);
        }
        prev = Some(g.clone());
        if let BaseLearner::ExpConcave(s) = learner {
            max_refresh_dev = max_refresh_dev.max(s.last_refresh_deviation());
        }
    }
    Ok((max_step_dev, max_refresh_dev))
}
