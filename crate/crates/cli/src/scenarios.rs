//! The built-in benchmark scenarios. Each maps a (horizon, seed) pair to a
//! fully materialized environment or game at desk scale.

use ndarray::{arr2, Array1};

use uoco::env::{DriftSchedule, Environment, GameSpec, OpponentStrategy, SeaParams};
use uoco::geometry::Domain;
use uoco::Result;

use crate::config::Params;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    FixedSc,
    DriftingSc,
    FixedExp,
    DriftingConvex,
    AdversarialConvex,
    SeaStochastic,
    SeaMixed,
    GameHonest,
    GameDishonest,
}

pub const ALL_SCENARIOS: [(&str, Scenario, &str); 9] = [
    ("fixed-sc", Scenario::FixedSc, "fixed strongly convex quadratic (V_T = 0)"),
    ("drifting-sc", Scenario::DriftingSc, "strongly convex quadratic with harmonic center drift"),
    ("fixed-exp", Scenario::FixedExp, "fixed exp-concave log loss (V_T = 0)"),
    ("drifting-convex", Scenario::DriftingConvex, "zero-mean oscillating linear losses"),
    ("adversarial-convex", Scenario::AdversarialConvex, "sign-flipping linear losses"),
    ("sea-stochastic", Scenario::SeaStochastic, "stochastic quadratics, fixed expectation"),
    ("sea-mixed", Scenario::SeaMixed, "stochastic quadratics with drifting expectation"),
    ("game-honest", Scenario::GameHonest, "bilinear zero-sum self-play, both players universal"),
    ("game-dishonest", Scenario::GameDishonest, "universal player vs random-extreme adversary"),
];

pub fn scenario_by_name(name: &str) -> Option<Scenario> {
    ALL_SCENARIOS.iter().find(|(n, _, _)| *n == name).map(|(_, s, _)| *s)
}

pub fn scenario_name(s: Scenario) -> &'static str {
    ALL_SCENARIOS.iter().find(|(_, v, _)| *v == s).map(|(n, _, _)| *n).unwrap()
}

pub fn is_game(s: Scenario) -> bool {
    matches!(s, Scenario::GameHonest | Scenario::GameDishonest)
}

/// Domain from the config overrides, or the scenario's default shape.
fn make_domain(params: &Params, dim: usize, default_scale: f64) -> Domain {
    let scale = params.domain_scale.unwrap_or(default_scale);
    match params.domain_kind.as_deref() {
        Some("box") => Domain::symmetric_box(dim, scale),
        _ => Domain::origin_ball(dim, scale),
    }
}

/// Environment for a non-game scenario.
pub fn build_environment(
    scenario: Scenario,
    params: &Params,
    horizon: usize,
    seed: u64,
) -> Result<Environment> {
    let dim = params.dim.unwrap_or(4);
    match scenario {
        Scenario::FixedSc => Environment::fixed_quadratic(
            make_domain(params, dim, 0.125),
            params.curvature.unwrap_or(1.0),
            0.5,
            horizon,
            seed,
        ),
        Scenario::DriftingSc => Environment::drifting_quadratic(
            make_domain(params, dim, 0.125),
            params.curvature.unwrap_or(1.0),
            DriftSchedule::Harmonic { scale: params.magnitude.unwrap_or(0.02) },
            horizon,
            seed,
        ),
        Scenario::FixedExp => Environment::log_loss(
            make_domain(params, dim, 0.125),
            4.0,
            0.0,
            horizon,
            seed,
        ),
        Scenario::DriftingConvex => Environment::drifting_linear(
            make_domain(params, dim, 0.5),
            0.0,
            params.magnitude.unwrap_or(0.2),
            horizon,
            seed,
        ),
        Scenario::AdversarialConvex => Environment::adversarial_linear(
            make_domain(params, dim, 0.5),
            params.magnitude.unwrap_or(0.3),
            0.3,
            horizon,
            seed,
        ),
        Scenario::SeaStochastic => Environment::sea_quadratic(
            make_domain(params, dim, 0.125),
            params.curvature.unwrap_or(1.0),
            SeaParams { sigma2: params.sigma2.unwrap_or(8e-4), adv2: params.adv2.unwrap_or(0.0) },
            horizon,
            seed,
        ),
        Scenario::SeaMixed => Environment::sea_quadratic(
            make_domain(params, dim, 0.125),
            params.curvature.unwrap_or(1.0),
            SeaParams {
                sigma2: params.sigma2.unwrap_or(8e-4),
                adv2: params.adv2.unwrap_or(4e-4),
            },
            horizon,
            seed,
        ),
        Scenario::GameHonest | Scenario::GameDishonest => {
            unreachable!("game scenarios use build_game")
        }
    }
}

/// Game spec plus the opponent (dishonest scenarios only).
pub fn build_game(scenario: Scenario) -> Result<(GameSpec, Option<OpponentStrategy>)> {
    match scenario {
        Scenario::GameHonest => {
            // Off-center equilibrium: both players must travel, so the
            // regret sum is visibly positive before it saturates.
            let spec = GameSpec::new(
                arr2(&[[1.0]]),
                Domain::symmetric_box(1, 0.125),
                Domain::symmetric_box(1, 0.125),
                Array1::from(vec![-0.05]),
                Array1::from(vec![-0.05]),
            )?;
            Ok((spec, None))
        }
        Scenario::GameDishonest => {
            let spec = GameSpec::new(
                arr2(&[[1.0]]),
                Domain::symmetric_box(1, 0.125),
                Domain::symmetric_box(1, 0.125),
                Array1::from(vec![0.0]),
                Array1::from(vec![0.0]),
            )?;
            Ok((spec, Some(OpponentStrategy::RandomExtreme)))
        }
        _ => unreachable!("non-game scenarios use build_environment"),
    }
}
