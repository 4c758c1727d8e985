//! CSV and metrics-record writers.
//!
//! Time series go to CSV; every summary goes to a flat, self-describing
//! `key = value` record (TOML-compatible) carrying `schema_version`.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{Context, Result};
use safe_imm::runner::RunOutput;
use safe_imm::sim::{DetectionOrigin, MeasurementData, TruthTrajectory};

pub const SCHEMA_VERSION: u32 = 1;

/// Per-step truth rows: `step,time,target_id,px,py,pz,vx,vy,vz`.
pub fn write_truth_csv(path: &Path, truth: &[TruthTrajectory], dt: f64) -> Result<()> {
    let mut w =
        csv::Writer::from_path(path).with_context(|| format!("cannot write {}", path.display()))?;
    w.write_record([
        "step",
        "time",
        "target_id",
        "px",
        "py",
        "pz",
        "vx",
        "vy",
        "vz",
    ])?;
    let steps = truth.first().map_or(0, |t| t.states.len());
    for k in 0..steps {
        for (ti, traj) in truth.iter().enumerate() {
            let s = &traj.states[k];
            w.write_record([
                k.to_string(),
                format!("{:.3}", k as f64 * dt),
                ti.to_string(),
                format!("{:.6}", s.pos[0]),
                format!("{:.6}", s.pos[1]),
                format!("{:.6}", s.pos[2]),
                format!("{:.6}", s.vel[0]),
                format!("{:.6}", s.vel[1]),
                format!("{:.6}", s.vel[2]),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Per-step detection rows: `step,time,origin,px,py,pz` with origin a
/// target id or `clutter`.
pub fn write_measurements_csv(path: &Path, data: &MeasurementData, dt: f64) -> Result<()> {
    let mut w =
        csv::Writer::from_path(path).with_context(|| format!("cannot write {}", path.display()))?;
    w.write_record(["step", "time", "origin", "px", "py", "pz"])?;
    for (k, frame) in data.frames.iter().enumerate() {
        for det in frame {
            let origin = match det.origin {
                DetectionOrigin::Target(ti) => ti.to_string(),
                DetectionOrigin::Clutter => "clutter".to_string(),
            };
            w.write_record([
                k.to_string(),
                format!("{:.3}", k as f64 * dt),
                origin,
                format!("{:.6}", det.pos[0]),
                format!("{:.6}", det.pos[1]),
                format!("{:.6}", det.pos[2]),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Confirmed track states per step (canonical 9-dim state).
pub fn write_tracks_csv(path: &Path, out: &RunOutput, dt: f64) -> Result<()> {
    let mut w =
        csv::Writer::from_path(path).with_context(|| format!("cannot write {}", path.display()))?;
    w.write_record([
        "step", "time", "track_id", "px", "py", "pz", "vx", "vy", "vz", "ax", "ay", "az",
    ])?;
    for (k, frame) in out.track_states.iter().enumerate() {
        for (id, state) in frame {
            let mut rec = vec![
                k.to_string(),
                format!("{:.3}", k as f64 * dt),
                id.to_string(),
            ];
            for v in state {
                rec.push(format!("{:.6}", v));
            }
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Gate decision series per confirmed track: model probabilities, winner,
/// fired flag, bound, and realized drift per step.
pub fn write_gate_audit_csv(path: &Path, out: &RunOutput, dt: f64) -> Result<()> {
    let mut w =
        csv::Writer::from_path(path).with_context(|| format!("cannot write {}", path.display()))?;
    w.write_record([
        "step",
        "time",
        "track_id",
        "assigned",
        "winner",
        "w_winner",
        "weights",
        "fired",
        "bound",
        "actual_drift",
        "margin_ok",
        "streak",
        "loglik_margin",
    ])?;
    for a in &out.audits {
        let weights = a
            .weights
            .iter()
            .map(|w| format!("{w:.6}"))
            .collect::<Vec<_>>()
            .join("|");
        w.write_record([
            a.step.to_string(),
            format!("{:.3}", a.step as f64 * dt),
            a.track_id.to_string(),
            a.assigned.to_string(),
            a.gate.winner_idx.to_string(),
            format!("{:.6}", a.gate.winner_prob),
            weights,
            a.gate.fired.to_string(),
            format!("{:.6}", a.gate.bound),
            format!("{:.6}", a.gate.actual_drift),
            a.gate.margin_ok.to_string(),
            a.gate.streak.to_string(),
            a.gate
                .loglik_margin
                .map(|m| format!("{m:.6}"))
                .unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Builder for the flat key/value metrics record.
pub struct Record {
    buf: String,
}

impl Record {
    pub fn new(command: &str) -> Self {
        let mut buf = String::new();
        let _ = writeln!(buf, "schema_version = {SCHEMA_VERSION}");
        let _ = writeln!(buf, "command = \"{command}\"");
        Self { buf }
    }

    pub fn num(&mut self, key: &str, value: f64) -> &mut Self {
        // Debug formatting keeps a decimal point, so the record reads back
        // as a float.
        let _ = writeln!(self.buf, "{key} = {value:?}");
        self
    }

    pub fn int(&mut self, key: &str, value: u64) -> &mut Self {
        let _ = writeln!(self.buf, "{key} = {value}");
        self
    }

    pub fn text(&mut self, key: &str, value: &str) -> &mut Self {
        let _ = writeln!(self.buf, "{key} = \"{value}\"");
        self
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, &self.buf)
            .with_context(|| format!("cannot write {}", path.display()))?;
        Ok(())
    }

    pub fn as_str(&self) -> &str {
        &self.buf
    }
}
