use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use condmv::fleming_viot::{simulate_fv_finite, simulate_fv_meanfield};
use condmv::killed_sim::simulate_killed;
use condmv::measures::MeasureFlow;
use condmv::mimic::mimic_compare;
use condmv::picard::{placeholder_flow, solve_fixed_point};
use condmv::renewal::{
    estimate_restart_kernel, log_survival_check, resample_curve, volterra_solve, write_volterra_csv,
};
use condmv::reward_opt::{optimize_policy, Problem};
use condmv::verify::run_verify;
use serde_json::{json, Value};

use crate::config::{self, ConfigError, ExperimentConfig, FvVariant, LoadedConfig};
use crate::Command;

pub const EXIT_OK: u8 = 0;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_RUNTIME: u8 = 3;
pub const EXIT_VERIFY: u8 = 4;

const BUNDLED_DEFAULT: &str = include_str!("../configs/default.json");

enum Failure {
    Config(String),
    Runtime(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.0)
    }
}

impl From<condmv::Error> for Failure {
    fn from(e: condmv::Error) -> Self {
        let msg = format!("{}: {e}", e.name());
        if e.is_input_error() {
            Failure::Config(msg)
        } else {
            Failure::Runtime(msg)
        }
    }
}

type Artifacts = BTreeMap<String, Vec<u8>>;

fn bytes(f: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> Vec<u8> {
    let mut buf = Vec::new();
    f(&mut buf).expect("writing to memory");
    buf
}

pub fn execute(
    command: Command,
    config_path: Option<&Path>,
    out: &Path,
    threads: Option<usize>,
    overrides: &[String],
) -> u8 {
    let loaded = match config_path {
        Some(p) => config::load(p, overrides),
        None if command == Command::Verify => serde_json::from_str(BUNDLED_DEFAULT)
            .map_err(|e| ConfigError(e.to_string()))
            .and_then(|v| config::resolve(v, overrides)),
        None => Err(ConfigError("--config is required".into())),
    };
    let loaded = match loaded {
        Ok(l) => l,
        Err(e) => {
            eprintln!("config error: {e}");
            return EXIT_CONFIG;
        }
    };
    let pool = match threads {
        Some(0) => {
            eprintln!("config error: --threads must be at least 1");
            return EXIT_CONFIG;
        }
        Some(k) => rayon::ThreadPoolBuilder::new().num_threads(k).build(),
        None => rayon::ThreadPoolBuilder::new().build(),
    };
    let pool = match pool {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: thread pool: {e}");
            return EXIT_RUNTIME;
        }
    };

    let start = Instant::now();
    let result = pool.install(|| dispatch(command, &loaded.config));
    let runtime = start.elapsed().as_secs_f64();
    let (artifacts, verify_passed) = match result {
        Ok(v) => v,
        Err(Failure::Config(m)) => {
            eprintln!("config error: {m}");
            return EXIT_CONFIG;
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            return EXIT_RUNTIME;
        }
    };
    if let Err(e) = write_outputs(
        out,
        command,
        &loaded,
        &artifacts,
        runtime,
        pool.current_num_threads(),
    ) {
        eprintln!("error: writing to {}: {e}", out.display());
        return EXIT_RUNTIME;
    }
    match verify_passed {
        Some(false) => EXIT_VERIFY,
        _ => EXIT_OK,
    }
}

fn write_outputs(
    out: &Path,
    command: Command,
    loaded: &LoadedConfig,
    artifacts: &Artifacts,
    runtime: f64,
    threads: usize,
) -> std::io::Result<()> {
    std::fs::create_dir_all(out)?;
    for (name, data) in artifacts {
        std::fs::write(out.join(name), data)?;
    }
    let manifest = json!({
        "command": command.as_str(),
        "config_hash": loaded.hash(),
        "seed": loaded.config.seed(),
        "versions": { "condmv": condmv::VERSION, "condmv-cli": env!("CARGO_PKG_VERSION") },
        "runtime_secs": runtime,
        "threads": threads,
        "artifacts": artifacts.keys().collect::<Vec<_>>(),
        "config": loaded.value,
    });
    let mut text = serde_json::to_vec_pretty(&manifest).map_err(std::io::Error::other)?;
    text.push(b'\n');
    std::fs::write(out.join("manifest.json"), text)
}

/// Conditional flow of the controlled system: the Picard fixed point, or a
/// single killed run when the drift ignores the measure.
fn driving_flow(cfg: &ExperimentConfig) -> Result<MeasureFlow<f64>, Failure> {
    if cfg.model.drift.mf_gain == 0.0 {
        let placeholder = placeholder_flow(&cfg.model, &cfg.sim)?;
        let ens = simulate_killed(
            &cfg.model,
            cfg.control()?,
            &placeholder,
            &cfg.sim,
            &cfg.initial,
        )?;
        return Ok(ens.conditional_flow()?);
    }
    let fp = solve_fixed_point(
        &cfg.model,
        cfg.control()?,
        &cfg.sim,
        &cfg.initial,
        &cfg.picard_settings(),
    )?;
    if !fp.converged {
        eprintln!(
            "warning: fixed point not reached in {} iterations (last distance {})",
            fp.iterations,
            fp.distance_trace.last().copied().unwrap_or(f64::NAN)
        );
    }
    Ok(fp.flow)
}

fn dispatch(
    command: Command,
    cfg: &ExperimentConfig,
) -> Result<(Artifacts, Option<bool>), Failure> {
    let mut a = Artifacts::new();
    match command {
        Command::Simulate => {
            let flow = if cfg.model.drift.mf_gain == 0.0 {
                placeholder_flow(&cfg.model, &cfg.sim)?
            } else {
                driving_flow(cfg)?
            };
            let ens = simulate_killed(&cfg.model, cfg.control()?, &flow, &cfg.sim, &cfg.initial)?;
            let cond = ens.conditional_flow()?;
            a.insert("survival.csv".into(), bytes(|w| ens.write_survival_csv(w)));
            a.insert("flow.csv".into(), bytes(|w| cond.write_csv(w)));
            a.insert("paths.bin".into(), bytes(|w| ens.write_paths_binary(w)));
        }
        Command::Picard => {
            let fp = solve_fixed_point(
                &cfg.model,
                cfg.control()?,
                &cfg.sim,
                &cfg.initial,
                &cfg.picard_settings(),
            )?;
            a.insert(
                "iterations.csv".into(),
                bytes(|w| fp.write_iterations_csv(w)),
            );
            a.insert("flow.csv".into(), bytes(|w| fp.flow.write_csv(w)));
            if !fp.converged {
                eprintln!(
                    "warning: fixed point not reached in {} iterations",
                    fp.iterations
                );
            }
        }
        Command::Fv => {
            let block = cfg.block(&cfg.fv, "fv")?;
            let policy = cfg.feedback()?;
            let trace = match block.variant {
                FvVariant::Finite => simulate_fv_finite(
                    &cfg.model,
                    policy,
                    &cfg.sim,
                    &cfg.initial,
                    block.reinsertion_cap,
                )?,
                FvVariant::MeanField => {
                    let flow = driving_flow(cfg)?;
                    simulate_fv_meanfield(
                        &cfg.model,
                        policy,
                        &flow,
                        &cfg.sim,
                        &cfg.initial,
                        block.reinsertion_cap,
                    )?
                }
            };
            a.insert("events.csv".into(), bytes(|w| trace.write_events_csv(w)));
            a.insert("f_curve.csv".into(), bytes(|w| trace.write_f_curve_csv(w)));
        }
        Command::Renewal => {
            let block = cfg.block(&cfg.renewal, "renewal")?;
            let policy = cfg.feedback()?;
            let flow = driving_flow(cfg)?;
            let mut kcfg = cfg.sim.clone();
            if let Some(n) = block.n_particles {
                kcfg.n_particles = n;
            }
            let kernel = estimate_restart_kernel(&cfg.model, policy, &flow, &kcfg, block.dt_r)?;
            let survival =
                resample_curve(flow.grid(), flow.survival(), block.dt_r, kernel.intervals())?;
            let cdf: Vec<f64> = survival.iter().map(|s| 1.0 - s).collect();
            let f = volterra_solve(&cdf, &kernel)?;
            let grid = kernel.grid();
            let report = log_survival_check(&f, &survival, &grid)?;
            a.insert("kernel.csv".into(), bytes(|w| kernel.write_csv(w)));
            a.insert(
                "f_volterra.csv".into(),
                bytes(|w| write_volterra_csv(w, &grid, &f, &report)),
            );
        }
        Command::Mimic => {
            let bins = *cfg.block(&cfg.mimic, "mimic")?;
            let (report, grid) = mimic_compare(
                &cfg.model,
                cfg.open_loop()?,
                bins,
                &cfg.sim,
                &cfg.initial,
                &cfg.picard_settings(),
            )?;
            a.insert("compare.csv".into(), bytes(|w| report.write_csv(w)));
            a.insert("policy_grid.csv".into(), bytes(|w| grid.write_csv(w)));
        }
        Command::Optimize => {
            let block = cfg.block(&cfg.optimize, "optimize")?;
            let picard = cfg.picard_settings();
            let problem = Problem {
                model: &cfg.model,
                config: &cfg.sim,
                initial: &cfg.initial,
                picard: &picard,
                family: block.family,
                objective: block.objective,
            };
            let res = optimize_policy(&problem, &block.settings())?;
            a.insert("trace.csv".into(), bytes(|w| res.write_trace_csv(w)));
            let best: Value = json!({
                "family": res.family,
                "method": res.method,
                "params": res.best_params,
                "J": res.best_j,
                "J_se": res.best_se,
                "policy": block.family.policy(&res.best_params, cfg.model.dim(), cfg.model.control_dim())?,
                "seed": res.seed,
            });
            let mut text = serde_json::to_vec_pretty(&best).expect("JSON value serializes");
            text.push(b'\n');
            a.insert("best.json".into(), text);
        }
        Command::Verify => {
            let outcome = run_verify(cfg.seed());
            for c in &outcome.report.criteria {
                println!("{}", c.summary_line());
            }
            a.extend(outcome.artifacts);
            return Ok((a, Some(outcome.report.all_passed)));
        }
    }
    Ok((a, None))
}
