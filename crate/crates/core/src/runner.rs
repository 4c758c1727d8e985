//! One-call benchmark runs: simulate a scenario, track it, score it.
//!
//! This is the engine behind the command-line tool and the acceptance
//! suite. A run is fully determined by its settings (including the scenario
//! seed): simulation, tracking, and evaluation are all deterministic.

use nalgebra::{DMatrix, Vector3};
use serde::{Deserialize, Serialize};

use crate::association::{AssociationConfig, GnnTracker, TrackerConfig};
use crate::error::Result;
use crate::imm::{GateConfig, GateDecision, ImmConfig, Likelihood};
use crate::metrics::{evaluate_run, EvalConfig, RunMetrics};
use crate::models::MotionModel;
use crate::sim::{simulate, MeasurementData, ScenarioConfig, TruthTrajectory};
use crate::tpm_adapt::TpmConfig;

/// Which estimator runs behind the GNN tracker.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrackerKind {
    /// CV+CA bank with the drift-bounded winner-takes-all gate.
    SafeImm,
    /// Same bank with the gate disabled: always the fused mixture.
    MixtureOnly,
    /// Single constant-velocity Kalman filter.
    KfCv,
    /// Single constant-acceleration Kalman filter.
    KfCa,
}

/// Full description of one benchmark run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSettings {
    pub scenario: ScenarioConfig,
    pub tracker: TrackerKind,
    pub likelihood: Likelihood,
    /// Online TPM adaptation on/off (off = fixed base matrix).
    pub adaptive_tpm: bool,
    pub gate: GateConfig,
    pub tpm: TpmConfig,
    pub assoc: AssociationConfig,
    pub eval: EvalConfig,
    /// CV white-acceleration intensity.
    pub q_cv: f64,
    /// CA white-jerk intensity.
    pub q_ca: f64,
    /// Variance for acceleration states padded by CV -> CA mapping.
    pub pad_variance: f64,
    /// Lower bound on the filter's measurement-noise sigma, keeping R
    /// positive definite for noiseless scenarios.
    pub r_sigma_floor: f64,
    /// Student-t dof substituted while the scenario jams.
    pub nu_jam: f64,
}

impl Default for RunSettings {
    fn default() -> Self {
        Self {
            scenario: ScenarioConfig::default(),
            tracker: TrackerKind::SafeImm,
            likelihood: Likelihood::StudentT { nu: 5.0 },
            adaptive_tpm: false,
            gate: GateConfig::default(),
            tpm: TpmConfig::default(),
            assoc: AssociationConfig::default(),
            eval: EvalConfig::default(),
            q_cv: 0.5,
            q_ca: 0.2,
            pad_variance: crate::models::DEFAULT_PAD_VARIANCE,
            r_sigma_floor: 1e-3,
            nu_jam: 2.0,
        }
    }
}

impl RunSettings {
    /// The same run with a different scenario seed.
    pub fn with_seed(&self, seed: u64) -> Self {
        let mut s = self.clone();
        s.scenario.seed = seed;
        s
    }

    /// Measurement-noise covariance the filters assume.
    pub fn measurement_noise(&self) -> DMatrix<f64> {
        let sigma = self.scenario.noise.sigma_pos.max(self.r_sigma_floor);
        DMatrix::identity(3, 3) * sigma * sigma
    }

    fn effective_likelihood(&self) -> Likelihood {
        match (self.scenario.jamming, self.likelihood) {
            (true, Likelihood::StudentT { .. }) => Likelihood::StudentT { nu: self.nu_jam },
            (_, l) => l,
        }
    }

    fn tracker_config(&self) -> TrackerConfig {
        let (models, initial_weights, pi_base) = match self.tracker {
            TrackerKind::SafeImm | TrackerKind::MixtureOnly => (
                vec![MotionModel::cv(0, self.q_cv), MotionModel::ca(1, self.q_ca)],
                vec![0.9, 0.1],
                self.tpm.pi_base.clone(),
            ),
            TrackerKind::KfCv => (
                vec![MotionModel::cv(0, self.q_cv)],
                vec![1.0],
                DMatrix::from_vec(1, 1, vec![1.0]),
            ),
            TrackerKind::KfCa => (
                vec![MotionModel::ca(0, self.q_ca)],
                vec![1.0],
                DMatrix::from_vec(1, 1, vec![1.0]),
            ),
        };
        let mut gate = self.gate;
        if self.tracker == TrackerKind::MixtureOnly {
            gate.enabled = false;
        }
        let tpm = TpmConfig {
            pi_base,
            enabled: self.adaptive_tpm,
            ..self.tpm.clone()
        };
        let imm = ImmConfig {
            likelihood: self.effective_likelihood(),
            gate,
            tpm,
            pad_variance: self.pad_variance,
            weight_floor: 1e-6,
            gate_scale: None,
        };
        // The realized trajectory moves by the velocity jitter within each
        // step, and the filter's velocity estimate carries roughly one more
        // step of jitter memory; fold both into the gating covariance so
        // the association gate sees the full measurement-prediction spread.
        let jitter_var = (2.0 * self.scenario.noise.sigma_vel * self.scenario.dt).powi(2);
        let assoc = AssociationConfig {
            initial_weights,
            gate_variance_inflation: self.assoc.gate_variance_inflation.max(jitter_var),
            ..self.assoc.clone()
        };
        TrackerConfig { models, imm, assoc }
    }
}

/// One gate evaluation in context.
#[derive(Debug, Clone)]
pub struct GateAudit {
    pub step: usize,
    pub track_id: u64,
    /// Model probabilities after the step.
    pub weights: Vec<f64>,
    pub assigned: bool,
    pub gate: GateDecision,
}

/// Everything a run produces.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub metrics: RunMetrics,
    /// Per-step, per-confirmed-track gate records (the decision series).
    pub audits: Vec<GateAudit>,
    /// Per-frame confirmed estimates: (track id, full canonical state mean).
    pub track_states: Vec<Vec<(u64, Vec<f64>)>>,
    /// Steps on which winner-takes-all fired.
    pub fired_steps: usize,
    /// Fired steps whose realized drift respected the tolerance.
    pub compliant_fired_steps: usize,
    /// Largest realized mixture-to-winner drift over all steps: the jump an
    /// ungated winner-takes-all output would have taken.
    pub max_excursion: f64,
    /// Largest drift bound B over all steps.
    pub max_bound: f64,
    /// Ground truth the run was scored against (velocity-jittered when the
    /// scenario carries velocity noise).
    pub truth: Vec<TruthTrajectory>,
    /// Nominal (noise-free) truth.
    pub nominal_truth: Vec<TruthTrajectory>,
    /// The synthesized detections.
    pub measurements: MeasurementData,
}

impl RunOutput {
    /// Fraction of fired steps whose realized drift stayed within epsilon;
    /// 1 when nothing fired.
    pub fn compliance(&self) -> f64 {
        if self.fired_steps == 0 {
            1.0
        } else {
            self.compliant_fired_steps as f64 / self.fired_steps as f64
        }
    }
}

/// Simulates, tracks, and scores one scenario.
pub fn run_tracking(settings: &RunSettings) -> Result<RunOutput> {
    let (nominal_truth, measurements) = simulate(&settings.scenario)?;
    let r = settings.measurement_noise();
    let dt = settings.scenario.dt;
    let mut tracker = GnnTracker::new(settings.tracker_config());

    let steps = settings.scenario.steps();
    let mut audits = Vec::new();
    let mut track_states = Vec::with_capacity(steps);
    let mut outputs_by_frame: Vec<Vec<(u64, Vector3<f64>)>> = Vec::with_capacity(steps);
    let mut fired_steps = 0usize;
    let mut compliant = 0usize;
    let mut max_excursion = 0.0f64;
    let mut max_bound = 0.0f64;

    for (step, frame) in measurements.frames.iter().enumerate() {
        let detections: Vec<Vector3<f64>> = frame.iter().map(|d| d.pos).collect();
        let outs = tracker.step(&detections, &r, dt)?;

        let mut frame_positions = Vec::with_capacity(outs.len());
        let mut frame_states = Vec::with_capacity(outs.len());
        for out in outs {
            let mean = &out.estimate.mean;
            frame_positions.push((out.id, Vector3::new(mean[0], mean[1], mean[2])));
            frame_states.push((out.id, mean.iter().cloned().collect::<Vec<f64>>()));
            if out.gate.fired {
                fired_steps += 1;
                if out.gate.actual_drift <= out.gate.epsilon {
                    compliant += 1;
                }
            }
            max_excursion = max_excursion.max(out.gate.actual_drift);
            max_bound = max_bound.max(out.gate.bound);
            audits.push(GateAudit {
                step,
                track_id: out.id,
                weights: tracker
                    .tracks()
                    .iter()
                    .find(|t| t.id == out.id)
                    .map(|t| t.bank.weights.iter().cloned().collect())
                    .unwrap_or_default(),
                assigned: out.assigned,
                gate: out.gate,
            });
        }
        outputs_by_frame.push(frame_positions);
        track_states.push(frame_states);
    }

    // Score against the realized (observed) trajectories.
    let truth_positions: Vec<Vec<Vector3<f64>>> = (0..steps)
        .map(|k| {
            measurements
                .realized
                .iter()
                .map(|t| t.states[k].pos)
                .collect()
        })
        .collect();
    let metrics = evaluate_run(&truth_positions, &outputs_by_frame, &settings.eval);

    Ok(RunOutput {
        metrics,
        audits,
        track_states,
        fired_steps,
        compliant_fired_steps: compliant,
        max_excursion,
        max_bound,
        truth: measurements.realized.clone(),
        nominal_truth,
        measurements,
    })
}

/// Runs the same settings across a seed list, returning per-seed outputs.
pub fn run_seeds(settings: &RunSettings, seeds: &[u64]) -> Result<Vec<RunOutput>> {
    seeds
        .iter()
        .map(|&s| run_tracking(&settings.with_seed(s)))
        .collect()
}
