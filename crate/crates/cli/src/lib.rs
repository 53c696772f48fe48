//! Command-line harness around the universal online learner: scenario
//! catalog, flat-file configs with flag overrides, seeded runs with CSV and
//! summary outputs, and a validation pass.

pub mod config;
pub mod run;
pub mod scenarios;

use config::RawConfig;
use scenarios::ALL_SCENARIOS;

const USAGE: &str = "\
usage:
  uoco-bench run [--config FILE] [--scenario NAME] [--T LIST] [--seed LIST]
                 [--mode one-grad|multi-grad] [--fidelity shared|full]
                 [--out DIR] [--serial]
  uoco-bench validate [--config FILE] [flags as above]
  uoco-bench list-scenarios

Config files are flat `key = value` lines (scenario, horizons, seeds, mode,
fidelity, out, dim, domain, domain_scale, magnitude, curvature, sigma2,
adv2); command-line flags override file values. Horizons must be powers of
two.";

/// Entry point shared by the binary and the integration tests. Returns the
/// process exit code.
pub fn run_cli(args: &[String]) -> i32 {
    let Some(command) = args.first() else {
        eprintln!("{USAGE}");
        return 2;
    };
    match command.as_str() {
        "list-scenarios" => {
            for (name, _, blurb) in ALL_SCENARIOS {
                println!("{name:20} {blurb}");
            }
            0
        }
        "run" | "validate" => {
            let (raw, serial) = match collect_flags(&args[1..]) {
                Ok(v) => v,
                Err(msg) => {
                    eprintln!("{msg}\n{USAGE}");
                    return 2;
                }
            };
            let config = match raw.resolve() {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("error: {e}");
                    return 1;
                }
            };
            if command == "validate" {
                let diagnostics = run::validate(&config);
                if diagnostics.is_empty() {
                    println!("configuration valid");
                    0
                } else {
                    for d in &diagnostics {
                        eprintln!("invalid: {d}");
                    }
                    1
                }
            } else {
                match run::execute(&config, !serial) {
                    Ok(report) => {
                        print!("{}", report.summary);
                        println!("wrote {} file(s) under {:?}", report.files.len() + 1, config.out_dir);
                        0
                    }
                    Err(e) => {
                        eprintln!("error: {e}");
                        2
                    }
                }
            }
        }
        other => {
            eprintln!("unknown command '{other}'\n{USAGE}");
            2
        }
    }
}

/// Flags become raw key/value pairs layered over the config file.
fn collect_flags(args: &[String]) -> Result<(RawConfig, bool), String> {
    let mut raw = RawConfig::default();
    let mut serial = false;
    let mut i = 0;
    // The config file is applied first so flags can override it.
    while i < args.len() {
        if args[i] == "--config" {
            let path = args.get(i + 1).ok_or("--config needs a path")?;
            let file = RawConfig::parse_file(path).map_err(|e| e.to_string())?;
            for (k, v) in file.values {
                raw.values.entry(k).or_insert(v);
            }
            i += 2;
        } else {
            i += 1;
        }
    }
    let mut i = 0;
    while i < args.len() {
        let flag = args[i].as_str();
        match flag {
            "--config" => i += 2,
            "--serial" => {
                serial = true;
                i += 1;
            }
            "--scenario" | "--T" | "--seed" | "--mode" | "--fidelity" | "--out" | "--dim"
            | "--domain" | "--domain-scale" | "--magnitude" | "--curvature" | "--sigma2"
            | "--adv2" => {
                let value = args
                    .get(i + 1)
                    .ok_or_else(|| format!("{flag} needs a value"))?;
                let key = match flag {
                    "--T" => "horizons",
                    "--seed" => "seeds",
                    "--domain-scale" => "domain_scale",
                    other => &other[2..],
                };
                raw.set(key, value);
                i += 2;
            }
            other => return Err(format!("unknown flag '{other}'")),
        }
    }
    Ok((raw, serial))
}
