//! Orchestration behind the `taf` subcommands.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use taf_core::evolution::{self, RunSummary};
use taf_core::heatkernel::{loglog_slope, scaling_exponent, PeriodicHeatKernel, DEFAULT_DUHAMEL_NODES};
use taf_core::uniqueness::{gronwall_fit, ratio_horizon, pair_table, PairedTrajectory, Perturbation};
use taf_core::Error;

use crate::checkpoint::save_checkpoint;
use crate::config::{RunConfig, Scenario};
use crate::error::{io_err, CliError};
use crate::scenarios;
use crate::sinks::{fmt_f64, EventRecord, RunSink};

/// Environment variable naming the directory that relative output paths resolve against.
pub const OUTPUT_ROOT_VAR: &str = "TAF_OUTPUT_ROOT";

pub fn output_root() -> PathBuf {
    std::env::var_os(OUTPUT_ROOT_VAR)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("."))
}

pub fn output_dir(config: &RunConfig, root: &Path) -> PathBuf {
    if config.output_dir.is_absolute() {
        config.output_dir.clone()
    } else {
        root.join(&config.output_dir)
    }
}

#[derive(Debug)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub summary: RunSummary,
    pub events: Vec<EventRecord>,
    pub final_checkpoint: Option<PathBuf>,
}

fn write(path: PathBuf, text: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(&path, text).map_err(io_err(path))
}

/// Run the configured scenario, writing `config.txt`, `diagnostics.csv`, `events.json` and
/// checkpoints into the output directory (plus `pair.csv` for the uniqueness pair).
pub fn run_scenario(config: &RunConfig, root: &Path) -> Result<RunOutcome, CliError> {
    let dir = output_dir(config, root);
    let state = scenarios::initial_state(config).map_err(CliError::Solver)?;
    let watch_entropy = !config.solver.drift;
    let mut sink = RunSink::create(&dir, config.checkpoint_every, config.barrier_function(), watch_entropy)
        .map_err(io_err(&dir))?;
    write(dir.join("config.txt"), config.echo())?;

    let result = evolution::run(&state, &config.solver, &mut sink);
    let events_path = dir.join("events.json");
    match result {
        Ok(summary) => {
            let final_checkpoint = sink.finish().map_err(CliError::Solver)?;
            sink.write_events(&events_path).map_err(io_err(&events_path))?;
            if config.scenario == Scenario::UniquenessPair {
                write_pair(config, &dir)?;
            }
            Ok(RunOutcome {
                dir,
                summary,
                events: sink.events.clone(),
                final_checkpoint,
            })
        }
        Err(Error::Abort {
            t,
            step,
            reason,
            last_good,
        }) => {
            let _ = sink.finish();
            let path = dir.join("checkpoints").join("abort.ckpt");
            let saved = save_checkpoint(&last_good, &path).ok().map(|_| path);
            sink.write_events(&events_path).map_err(io_err(&events_path))?;
            Err(CliError::Abort {
                source: Error::Abort {
                    t,
                    step,
                    reason,
                    last_good,
                },
                checkpoint: saved,
            })
        }
        Err(e) => {
            let _ = sink.write_events(&events_path);
            Err(CliError::Solver(e))
        }
    }
}

#[derive(Debug, Serialize)]
pub struct PairSummary {
    pub amplitude: f64,
    pub pattern: &'static str,
    pub c_hat: Option<f64>,
    pub worst_envelope_ratio: f64,
    pub envelope_holds: bool,
    /// Largest sample time up to which the `L∞/L²` ratio stays below the bound.
    pub ratio_horizon: Option<f64>,
    pub ratio_bound: f64,
}

/// Bound used when reporting the small-time horizon of the `L∞/L²` ratio.
pub const RATIO_BOUND: f64 = 1.0;
pub const GRONWALL_TOLERANCE: f64 = 0.05;

pub const PAIR_HEADER: &str = "t,f_bar_l2,rho_bar_linf,ratio,reconstruction_defect,gronwall_envelope";

/// Evolve the base state and its perturbation; write `pair.csv` and `pair_summary.json`.
pub fn write_pair(config: &RunConfig, dir: &Path) -> Result<PairSummary, CliError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let base = scenarios::initial_state(config).map_err(CliError::Solver)?;
    let perturbation = Perturbation::new(config.amplitude, config.pattern);
    let pair = PairedTrajectory::run(&base, perturbation, &config.solver).map_err(|e| match e {
        e @ Error::Abort { .. } => CliError::Abort {
            source: e,
            checkpoint: None,
        },
        e => CliError::Solver(e),
    })?;
    let fit = gronwall_fit(&pair, config.solver.t_end, GRONWALL_TOLERANCE).map_err(CliError::Solver)?;
    let rows = pair_table(&pair, &fit, DEFAULT_DUHAMEL_NODES).map_err(CliError::Solver)?;
    let opt = |v: Option<f64>| fmt_f64(v.unwrap_or(f64::NAN));
    let mut csv = String::from(PAIR_HEADER);
    csv.push('\n');
    for r in &rows {
        let line = [
            fmt_f64(r.t),
            fmt_f64(r.f_bar_l2),
            fmt_f64(r.rho_bar_linf),
            opt(r.ratio),
            opt(r.reconstruction_defect),
            opt(r.envelope),
        ]
        .join(",");
        csv.push_str(&line);
        csv.push('\n');
    }
    write(dir.join("pair.csv"), csv)?;
    let summary = PairSummary {
        amplitude: config.amplitude,
        pattern: perturbation.pattern.name(),
        c_hat: fit.c_hat,
        worst_envelope_ratio: fit.worst_ratio,
        envelope_holds: fit.envelope_holds,
        ratio_horizon: ratio_horizon(&pair, RATIO_BOUND).map_err(CliError::Solver)?,
        ratio_bound: RATIO_BOUND,
    };
    write(dir.join("pair_summary.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    Ok(summary)
}

/// `(t, ‖∇Φ‖_{Lᑫ((0,t)×T²)})` on a logarithmic time grid, with the fitted log-log slope.
pub fn kernel_table(q: f64, t_min: f64, t_max: f64, points: usize) -> Result<(Vec<(f64, f64)>, f64), CliError> {
    if !(t_min > 0.0 && t_max > t_min) || points < 2 {
        return Err(CliError::Solver(Error::Parameter(format!(
            "need 0 < tmin < tmax and at least 2 points (got tmin={t_min}, tmax={t_max}, points={points})"
        ))));
    }
    let k = PeriodicHeatKernel::default();
    let ratio = t_max / t_min;
    let rows = (0..points)
        .map(|i| {
            let t = t_min * ratio.powf(i as f64 / (points - 1) as f64);
            k.grad_lq_spacetime_norm(q, t).map(|v| (t, v))
        })
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| match e {
            Error::KernelExponent(_) => CliError::Solver(Error::Parameter(e.to_string())),
            e => CliError::Solver(e),
        })?;
    let slope = loglog_slope(&rows);
    Ok((rows, slope))
}

pub fn kernel_table_text(q: f64, t_min: f64, t_max: f64, points: usize) -> Result<String, CliError> {
    let (rows, slope) = kernel_table(q, t_min, t_max, points)?;
    let mut out = format!(
        "# q = {q}, fitted slope = {slope:.6}, predicted (4-3q)/(2q) = {:.6}\nt,grad_phi_norm\n",
        scaling_exponent(q)
    );
    for (t, v) in rows {
        out.push_str(&format!("{},{}\n", fmt_f64(t), fmt_f64(v)));
    }
    Ok(out)
}

/// Human-readable summary of a checkpoint.
pub fn inspect(path: &Path) -> Result<String, CliError> {
    let s = crate::checkpoint::load_checkpoint(path)?;
    let g = s.grid();
    Ok(format!(
        "grid = {} x {} x {}\ntime = {}\nstep = {}\nmass = {}\nmin_f = {}\nmax_rho = {}\nmin_one_minus_rho = {}\n",
        g.nx(),
        g.ny(),
        g.ntheta(),
        s.time(),
        s.step(),
        fmt_f64(s.mass()),
        fmt_f64(s.f().min()),
        fmt_f64(s.rho().max()),
        fmt_f64(s.min_one_minus_rho()),
    ))
}
