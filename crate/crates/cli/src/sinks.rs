//! Diagnostics sinks.
//!
//! `diagnostics.csv` has one row per sample, floats in `{:.17e}`:
//!
//! | column | meaning |
//! |---|---|
//! | `t`, `step` | sample time and step counter |
//! | `mass` | `∫f` over Υ |
//! | `min_f`, `min_one_minus_rho` | pointwise minima |
//! | `entropy` | `∫f log f + ∫(1−ρ) log(1−ρ)`; `nan` when ρ > 1 somewhere |
//! | `L2_f`, `H1_f`, `L2_rho` | norms over Υ, Υ, Ω |
//! | `mass_ratio` | `mass / mass(0)` |
//! | `jensen_ratio` | `‖ρ‖₂ / (√(2π)‖f‖₂)`, at most 1 |
//! | `v_max` | `max h(1−ρ)` for the configured barrier |
//!
//! `events.json` is an array of [`EventRecord`].

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use taf_core::diagnostics::{state_norms, ENTROPY_TOLERANCE};
use taf_core::evolution::{DiagnosticSink, HFunction, RunEvent};
use taf_core::{Error, ModelState, Result};

use crate::checkpoint::save_checkpoint;

pub const CSV_HEADER: &str =
    "t,step,mass,min_f,min_one_minus_rho,entropy,L2_f,H1_f,L2_rho,mass_ratio,jensen_ratio,v_max";

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EventRecord {
    pub kind: &'static str,
    pub t: f64,
    pub step: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
}

impl EventRecord {
    fn new(kind: &'static str, t: f64, step: u64) -> Self {
        Self {
            kind,
            t,
            step,
            detail: None,
            value: None,
        }
    }

    pub fn from_run_event(e: &RunEvent) -> Self {
        match e {
            RunEvent::Started { t, dt, steps } => Self {
                detail: Some(format!("{steps} steps")),
                value: Some(*dt),
                ..Self::new("started", *t, 0)
            },
            RunEvent::NegativeF { t, step, min_f } => Self {
                value: Some(*min_f),
                ..Self::new("negative_f", *t, *step)
            },
            RunEvent::Aborted { t, step, reason } => Self {
                detail: Some(reason.clone()),
                ..Self::new("aborted", *t, *step)
            },
            RunEvent::Finished { t, step } => Self::new("finished", *t, *step),
        }
    }
}

pub fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v:.17e}")
    }
}

/// Streams rows to `diagnostics.csv`, collects events, writes checkpoints at a sample cadence
/// and flags entropy increase when the drift term is off.
pub struct RunSink {
    csv: BufWriter<File>,
    csv_path: PathBuf,
    checkpoint_dir: PathBuf,
    checkpoint_every: usize,
    barrier: HFunction,
    watch_entropy: bool,
    samples: usize,
    initial_mass: Option<f64>,
    last_entropy: Option<(f64, f64)>,
    last_state: Option<ModelState>,
    pub events: Vec<EventRecord>,
    pub checkpoints: Vec<PathBuf>,
}

fn io_error(path: &Path, e: std::io::Error) -> Error {
    Error::Parameter(format!("{}: {e}", path.display()))
}

impl RunSink {
    pub fn create(dir: &Path, checkpoint_every: usize, barrier: HFunction, watch_entropy: bool) -> std::io::Result<Self> {
        fs::create_dir_all(dir)?;
        let checkpoint_dir = dir.join("checkpoints");
        fs::create_dir_all(&checkpoint_dir)?;
        let csv_path = dir.join("diagnostics.csv");
        let mut csv = BufWriter::new(File::create(&csv_path)?);
        writeln!(csv, "{CSV_HEADER}")?;
        Ok(Self {
            csv,
            csv_path,
            checkpoint_dir,
            checkpoint_every,
            barrier,
            watch_entropy,
            samples: 0,
            initial_mass: None,
            last_entropy: None,
            last_state: None,
            events: Vec::new(),
            checkpoints: Vec::new(),
        })
    }

    fn checkpoint(&mut self, state: &ModelState, name: String) -> Result<()> {
        let path = self.checkpoint_dir.join(&name);
        save_checkpoint(state, &path).map_err(|e| Error::Parameter(e.to_string()))?;
        // Relative to the run directory so reruns elsewhere produce identical events.
        self.events.push(EventRecord {
            detail: Some(format!("checkpoints/{name}")),
            ..EventRecord::new("checkpoint", state.time(), state.step())
        });
        self.checkpoints.push(path);
        Ok(())
    }

    /// Flush the CSV and write the final checkpoint (if any state was sampled).
    pub fn finish(&mut self) -> Result<Option<PathBuf>> {
        self.csv.flush().map_err(|e| io_error(&self.csv_path, e))?;
        match self.last_state.take() {
            Some(s) => {
                self.checkpoint(&s, "final.ckpt".into())?;
                Ok(self.checkpoints.last().cloned())
            }
            None => Ok(None),
        }
    }

    pub fn write_events(&self, path: &Path) -> std::io::Result<()> {
        let text = serde_json::to_string_pretty(&self.events)?;
        fs::write(path, text + "\n")
    }
}

impl DiagnosticSink for RunSink {
    fn sample(&mut self, state: &ModelState) -> Result<()> {
        let n = state_norms(state)?;
        let m0 = *self.initial_mass.get_or_insert(n.mass);
        let mass_ratio = if m0 != 0.0 { n.mass / m0 } else { f64::NAN };
        let jensen = if n.l2_f > 0.0 {
            n.l2_rho / ((2.0 * std::f64::consts::PI).sqrt() * n.l2_f)
        } else {
            f64::NAN
        };
        let v_max = state
            .rho()
            .values()
            .iter()
            .map(|&r| if r < 1.0 { self.barrier.h(1.0 - r) } else { f64::INFINITY })
            .fold(f64::NEG_INFINITY, f64::max);
        let row = [
            fmt_f64(n.t),
            n.step.to_string(),
            fmt_f64(n.mass),
            fmt_f64(n.min_f),
            fmt_f64(n.min_one_minus_rho),
            fmt_f64(n.entropy.unwrap_or(f64::NAN)),
            fmt_f64(n.l2_f),
            fmt_f64(n.h1_f),
            fmt_f64(n.l2_rho),
            fmt_f64(mass_ratio),
            fmt_f64(jensen),
            fmt_f64(v_max),
        ]
        .join(",");
        writeln!(self.csv, "{row}").map_err(|e| io_error(&self.csv_path, e))?;

        if let Some(e) = n.entropy {
            if let Some((t0, e0)) = self.last_entropy {
                let rate = (e - e0) / (n.t - t0);
                if self.watch_entropy && n.t > t0 && rate > ENTROPY_TOLERANCE {
                    self.events.push(EventRecord {
                        value: Some(rate),
                        detail: Some("entropy increased without drift".into()),
                        ..EventRecord::new("entropy_violation", n.t, n.step)
                    });
                }
            }
            self.last_entropy = Some((n.t, e));
        }
        self.samples += 1;
        if self.checkpoint_every > 0 && self.samples % self.checkpoint_every == 0 {
            self.checkpoint(state, format!("step_{:08}.ckpt", state.step()))?;
        }
        self.last_state = Some(state.clone());
        Ok(())
    }

    fn event(&mut self, event: &RunEvent) -> Result<()> {
        self.events.push(EventRecord::from_run_event(event));
        Ok(())
    }
}
