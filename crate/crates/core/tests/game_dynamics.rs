//! No-regret dynamics checks for the zero-sum game engine: convergence of
//! the averaged honest play toward the equilibrium, the degenerate symmetric
//! start, and the brute-force minimax oracle.

use ndarray::{arr2, Array1};
use uoco::env::{GameSpec, OpponentStrategy};
use uoco::geometry::Domain;
use uoco::runner::{run_game_dishonest, run_game_honest};

fn pennies_box() -> Domain {
    Domain::symmetric_box(1, 0.125)
}

/// Matching pennies reparameterized from the probability simplex onto a
/// symmetric box, with linear offsets that move the equilibrium off center.
fn offset_game() -> GameSpec {
    GameSpec::new(
        arr2(&[[1.0]]),
        pennies_box(),
        pennies_box(),
        Array1::from(vec![-0.05]),
        Array1::from(vec![-0.05]),
    )
    .unwrap()
}

#[test]
fn averaged_honest_play_approaches_equilibrium() {
    // Interior stationarity of f(z, w) = z w - 0.05 z - 0.05 w puts the
    // equilibrium at (0.05, 0.05); the last iterates cycle around it while
    // the averages settle.
    let spec = offset_game();
    let out = run_game_honest(&spec, 2048).unwrap();
    let avg_x: f64 = out.x_player.plays.iter().map(|p| p[0]).sum::<f64>() / 2048.0;
    let y = out.y_player.as_ref().unwrap();
    let avg_y: f64 = y.plays.iter().map(|p| p[0]).sum::<f64>() / 2048.0;
    assert!((avg_x - 0.05).abs() <= 0.02, "avg x play {avg_x}");
    assert!((avg_y - 0.05).abs() <= 0.02, "avg y play {avg_y}");

    // The equilibrium value from the brute-force grid matches the value at
    // the stationary point.
    let minimax = spec.minimax_grid_value(400);
    assert!((minimax - (-0.0025)).abs() <= 1e-6, "minimax {minimax}");
}

#[test]
fn symmetric_start_at_equilibrium_stays_put() {
    // The pure game's equilibrium is the shared starting point, so honest
    // self-play is exactly symmetric: both players sit at the center with
    // zero gradients and zero regret.
    let spec = GameSpec::new(
        arr2(&[[1.0]]),
        pennies_box(),
        pennies_box(),
        Array1::from(vec![0.0]),
        Array1::from(vec![0.0]),
    )
    .unwrap();
    let out = run_game_honest(&spec, 256).unwrap();
    let y = out.y_player.as_ref().unwrap();
    for (x, w) in out.x_player.plays.iter().zip(y.plays.iter()) {
        assert_eq!(x[0], 0.0);
        assert_eq!(w[0], 0.0);
    }
    assert!(out.values.iter().all(|v| *v == 0.0));
    assert!(out.regret_sum().unwrap().abs() < 1e-12);
}

#[test]
fn best_response_opponent_runs_clean() {
    // Structural check of the remaining dishonest strategies: feasible
    // opponent plays, finished runs, finite regret.
    let spec = offset_game();
    for strategy in [
        OpponentStrategy::BestResponse,
        OpponentStrategy::FixedPlay(Array1::from(vec![0.1])),
    ] {
        let out = run_game_dishonest(&spec, 512, &strategy, 9).unwrap();
        assert_eq!(out.x_player.plays.len(), 512);
        assert!(out.x_player.final_regret().is_finite());
        assert!(out.x_player.route_gap <= 1e-9);
    }
}
