//! Experiment execution: the (horizon x seed) matrix, CSV and summary
//! output, and the validation pass.
//!
//! Experiments are independent and may run on worker threads; results are
//! collected and written in declaration order, so parallel and serial
//! executions produce byte-identical files.

use std::fmt::Write as _;
use std::path::PathBuf;

use uoco::ensemble::{BaseTopology, EnsembleConfig, FeedbackMode};
use uoco::metrics::{scaling_summary, write_csv, RoundRecord, ScalingPoint};
use uoco::runner::{run_environment, run_game_dishonest, run_game_honest};

use crate::config::ExperimentConfig;
use crate::scenarios::{build_environment, build_game, is_game, scenario_name};

pub struct RunReport {
    pub files: Vec<PathBuf>,
    pub summary_path: PathBuf,
    pub summary: String,
}

#[derive(Debug)]
pub struct RunError {
    pub message: String,
}

impl std::fmt::Display for RunError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.message)
    }
}

impl std::error::Error for RunError {}

struct ExperimentResult {
    label: String,
    csvs: Vec<(String, Vec<RoundRecord>)>,
    summary_line: String,
    point: Option<ScalingPoint>,
}

fn run_one(config: &ExperimentConfig, horizon: usize, seed: u64) -> Result<ExperimentResult, RunError> {
    let name = scenario_name(config.scenario);
    let label = format!("{name}-T{horizon}-seed{seed}");
    if is_game(config.scenario) {
        let (spec, opponent) =
            build_game(config.scenario).map_err(|e| RunError { message: e.to_string() })?;
        match opponent {
            None => {
                let out = run_game_honest(&spec, horizon)
                    .map_err(|e| RunError { message: format!("{label}: {e}") })?;
                let y = out.y_player.as_ref().expect("honest game has two players");
                let sum = out.regret_sum().unwrap();
                let point = ScalingPoint {
                    horizon,
                    final_regret: sum,
                    vt: 0.0,
                };
                Ok(ExperimentResult {
                    summary_line: format!(
                        "{label}: regret_x = {:.6e}, regret_y = {:.6e}, regret_sum = {:.6e}",
                        out.x_player.final_regret(),
                        y.final_regret(),
                        sum
                    ),
                    csvs: vec![
                        (format!("{label}-x.csv"), out.x_player.records),
                        (format!("{label}-y.csv"), out.y_player.unwrap().records),
                    ],
                    label,
                    point: Some(point),
                })
            }
            Some(strategy) => {
                let out = run_game_dishonest(&spec, horizon, &strategy, seed)
                    .map_err(|e| RunError { message: format!("{label}: {e}") })?;
                let regret = out.x_player.final_regret();
                Ok(ExperimentResult {
                    summary_line: format!("{label}: regret = {regret:.6e}"),
                    csvs: vec![(format!("{label}-x.csv"), out.x_player.records)],
                    label,
                    point: Some(ScalingPoint { horizon, final_regret: regret, vt: 0.0 }),
                })
            }
        }
    } else {
        let env = build_environment(config.scenario, &config.params, horizon, seed)
            .map_err(|e| RunError { message: format!("{label}: {e}") })?;
        let out = run_environment(&env, config.mode, config.topology)
            .map_err(|e| RunError { message: format!("{label}: {e}") })?;
        let (vt, vt_exact) = env.vt_total();
        let queries = out.ensemble.grad_queries();
        let regret = out.final_regret();
        Ok(ExperimentResult {
            summary_line: format!(
                "{label}: regret = {regret:.6e}, vt = {vt:.6e}{}, grad_queries = {queries}, warnings = {}",
                if vt_exact { "" } else { " (approximate)" },
                out.grad_bound_warnings
            ),
            csvs: vec![(format!("{label}.csv"), out.records)],
            label,
            point: Some(ScalingPoint { horizon, final_regret: regret, vt }),
        })
    }
}

/// Runs the full experiment matrix and writes one CSV per run plus a
/// plain-text summary with the scaling table.
pub fn execute(config: &ExperimentConfig, parallel: bool) -> Result<RunReport, RunError> {
    let jobs: Vec<(usize, u64)> = config
        .horizons
        .iter()
        .flat_map(|t| config.seeds.iter().map(move |s| (*t, *s)))
        .collect();

    let results: Vec<Result<ExperimentResult, RunError>> = if parallel && jobs.len() > 1 {
        std::thread::scope(|scope| {
            let handles: Vec<_> = jobs
                .iter()
                .map(|(t, s)| {
                    let (t, s) = (*t, *s);
                    scope.spawn(move || run_one(config, t, s))
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("experiment thread panicked")).collect()
        })
    } else {
        jobs.iter().map(|(t, s)| run_one(config, *t, *s)).collect()
    };

    let mut experiment_results = Vec::with_capacity(results.len());
    for r in results {
        experiment_results.push(r?);
    }

    std::fs::create_dir_all(&config.out_dir)
        .map_err(|e| RunError { message: format!("creating {:?}: {e}", config.out_dir) })?;

    let mut files = Vec::new();
    let mut summary = String::new();
    let name = scenario_name(config.scenario);
    writeln!(summary, "scenario: {name}").unwrap();
    writeln!(
        summary,
        "mode: {}",
        match config.mode {
            FeedbackMode::OneGradient => "one-grad",
            FeedbackMode::MultiGradient => "multi-grad",
        }
    )
    .unwrap();
    writeln!(
        summary,
        "fidelity: {}",
        match config.topology {
            BaseTopology::Shared => "shared",
            BaseTopology::Full => "full",
        }
    )
    .unwrap();
    writeln!(summary, "runs:").unwrap();
    for res in &experiment_results {
        writeln!(summary, "  {}", res.summary_line).unwrap();
        for (file_name, records) in &res.csvs {
            let path = config.out_dir.join(file_name);
            let mut buf = Vec::new();
            write_csv(records, &mut buf)
                .map_err(|e| RunError { message: format!("{}: {e}", res.label) })?;
            std::fs::write(&path, &buf)
                .map_err(|e| RunError { message: format!("writing {path:?}: {e}") })?;
            files.push(path);
        }
    }

    // Per-horizon means feed the scaling table.
    let mut points = Vec::new();
    for t in &config.horizons {
        let horizon_points: Vec<&ScalingPoint> = experiment_results
            .iter()
            .filter_map(|r| r.point.as_ref())
            .filter(|p| p.horizon == *t)
            .collect();
        if horizon_points.is_empty() {
            continue;
        }
        let n = horizon_points.len() as f64;
        points.push(ScalingPoint {
            horizon: *t,
            final_regret: horizon_points.iter().map(|p| p.final_regret).sum::<f64>() / n,
            vt: horizon_points.iter().map(|p| p.vt).sum::<f64>() / n,
        });
    }
    writeln!(summary, "scaling (per-horizon means over seeds):").unwrap();
    summary.push_str(&scaling_summary(&points).render());

    let summary_path = config.out_dir.join(format!("{name}-summary.txt"));
    std::fs::write(&summary_path, summary.as_bytes())
        .map_err(|e| RunError { message: format!("writing {summary_path:?}: {e}") })?;

    Ok(RunReport { files, summary_path, summary })
}

/// Dry-run validation: resolve every (horizon, seed) pair's environment and
/// learner configuration without running rounds. Returns the diagnostics.
pub fn validate(config: &ExperimentConfig) -> Vec<String> {
    let mut diagnostics = Vec::new();
    for t in &config.horizons {
        let seed = config.seeds[0];
        if is_game(config.scenario) {
            if let Err(e) = build_game(config.scenario) {
                diagnostics.push(format!("T={t}: {e}"));
            }
            continue;
        }
        match build_environment(config.scenario, &config.params, *t, seed) {
            Err(e) => diagnostics.push(format!("T={t}: {e}")),
            Ok(env) => {
                if let Err(e) = EnsembleConfig::new(
                    *t,
                    env.domain().clone(),
                    *env.bounds(),
                    config.mode,
                    config.topology,
                ) {
                    diagnostics.push(format!("T={t}: {e}"));
                }
            }
        }
    }
    diagnostics
}
