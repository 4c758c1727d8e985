//! Deterministic maneuvering-target scenario generation and measurement
//! synthesis.
//!
//! Ground truth is piecewise-constant-acceleration kinematics integrated
//! exactly per step. Measurement synthesis adds per-axis Gaussian position
//! noise, Poisson clutter over an inflated bounding box of the scene, and a
//! velocity-jitter channel realized as process noise on the propagated
//! trajectory: each step the target advances with its nominal velocity plus
//! a zero-mean perturbation of the configured scale. The perturbed
//! ("realized") trajectory is what the sensor observes and what evaluation
//! scores against; with zero velocity noise it coincides with the nominal
//! one. Everything is reproducible bit-for-bit from the seed.

use nalgebra::Vector3;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Measurement-noise profile: position noise goes onto the measurements,
/// velocity noise perturbs the within-step truth propagation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseProfile {
    /// Per-axis position measurement noise, meters (standard deviation).
    pub sigma_pos: f64,
    /// Per-axis velocity jitter, m/s (standard deviation).
    pub sigma_vel: f64,
}

impl NoiseProfile {
    /// High position noise, near-noiseless velocity.
    pub fn profile1() -> Self {
        Self {
            sigma_pos: 2.0,
            sigma_vel: 0.01,
        }
    }

    /// Near-noiseless position, high velocity jitter.
    pub fn profile2() -> Self {
        Self {
            sigma_pos: 0.01,
            sigma_vel: 2.0,
        }
    }

    /// Stress profile for robust-likelihood comparisons.
    pub fn high_noise() -> Self {
        Self {
            sigma_pos: 0.30,
            sigma_vel: 8.0,
        }
    }
}

/// Constant acceleration applied over `[start, end)` seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccelSegment {
    pub start: f64,
    pub end: f64,
    pub accel: [f64; 3],
}

/// One target: initial kinematics plus its acceleration schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetSpec {
    pub start_pos: [f64; 3],
    pub start_vel: [f64; 3],
    #[serde(default)]
    pub segments: Vec<AccelSegment>,
}

impl TargetSpec {
    fn accel_at(&self, t: f64) -> Vector3<f64> {
        for seg in &self.segments {
            if t >= seg.start && t < seg.end {
                return Vector3::from(seg.accel);
            }
        }
        Vector3::zeros()
    }
}

/// Full scenario description; identical configs produce identical output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    /// Step length, seconds.
    pub dt: f64,
    /// Total duration, seconds; must be an integer number of steps.
    pub duration: f64,
    pub targets: Vec<TargetSpec>,
    pub noise: NoiseProfile,
    /// Expected false detections per step, uniform over the scene box.
    pub clutter_rate: f64,
    /// Heavier measurement tails: 5% of detections drawn at 10x sigma, and
    /// trackers switch their likelihood dof to the jamming value.
    pub jamming: bool,
    /// Probability each target is detected per step.
    pub detection_prob: f64,
    pub seed: u64,
}

impl ScenarioConfig {
    /// The three-target maneuvering benchmark:
    /// T1 straight at 8 m/s; T2 at 9 m/s executing a 90-degree heading
    /// change via (-3, +3) m/s^2 over t in [10, 13) s; T3 at 10 m/s with
    /// +/-6 m/s^2 longitudinal bursts at t in [8, 10) and [20, 22) s.
    pub fn three_target_benchmark(noise: NoiseProfile, seed: u64) -> Self {
        Self {
            dt: 0.1,
            duration: 30.0,
            targets: vec![
                TargetSpec {
                    start_pos: [0.0, 0.0, 0.0],
                    start_vel: [8.0, 0.0, 0.0],
                    segments: vec![],
                },
                TargetSpec {
                    start_pos: [0.0, 60.0, 0.0],
                    start_vel: [9.0, 0.0, 0.0],
                    segments: vec![AccelSegment {
                        start: 10.0,
                        end: 13.0,
                        accel: [-3.0, 3.0, 0.0],
                    }],
                },
                TargetSpec {
                    start_pos: [0.0, -60.0, 0.0],
                    start_vel: [10.0, 0.0, 0.0],
                    segments: vec![
                        AccelSegment {
                            start: 8.0,
                            end: 10.0,
                            accel: [6.0, 0.0, 0.0],
                        },
                        AccelSegment {
                            start: 20.0,
                            end: 22.0,
                            accel: [-6.0, 0.0, 0.0],
                        },
                    ],
                },
            ],
            noise,
            clutter_rate: 0.0,
            jamming: false,
            detection_prob: 1.0,
            seed,
        }
    }

    pub fn steps(&self) -> usize {
        (self.duration / self.dt).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) {
            return Err(Error::NonPositiveDt(self.dt));
        }
        let ratio = self.duration / self.dt;
        if (ratio - ratio.round()).abs() > 1e-9 || ratio < 1.0 {
            return Err(Error::InvalidConfig(
                "duration must be a positive integer number of steps".into(),
            ));
        }
        if !(self.detection_prob > 0.0 && self.detection_prob <= 1.0) {
            return Err(Error::InvalidConfig(
                "detection probability must lie in (0, 1]".into(),
            ));
        }
        if self.clutter_rate < 0.0 {
            return Err(Error::InvalidConfig("clutter rate must be >= 0".into()));
        }
        if self.noise.sigma_pos < 0.0 || self.noise.sigma_vel < 0.0 {
            return Err(Error::InvalidConfig("noise sigmas must be >= 0".into()));
        }
        if self.targets.is_empty() {
            return Err(Error::InvalidConfig("at least one target required".into()));
        }
        Ok(())
    }
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self::three_target_benchmark(NoiseProfile::profile1(), 1)
    }
}

/// Position/velocity/acceleration of one target at one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KinematicState {
    pub pos: Vector3<f64>,
    pub vel: Vector3<f64>,
    pub acc: Vector3<f64>,
}

/// Per-step kinematic truth for one target.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthTrajectory {
    pub states: Vec<KinematicState>,
}

/// What produced a detection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DetectionOrigin {
    Target(usize),
    Clutter,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub pos: Vector3<f64>,
    pub origin: DetectionOrigin,
}

/// Measurement synthesis output: the per-step detection sets plus the
/// realized (velocity-jittered) trajectories they observe.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementData {
    pub frames: Vec<Vec<Detection>>,
    pub realized: Vec<TruthTrajectory>,
}

/// Exact piecewise-constant-acceleration ground truth, one state per step at
/// `t = k dt` for `k` in `0..steps`. Deterministic; no randomness involved.
pub fn generate_truth(cfg: &ScenarioConfig) -> Result<Vec<TruthTrajectory>> {
    cfg.validate()?;
    let steps = cfg.steps();
    let mut out = Vec::with_capacity(cfg.targets.len());
    for target in &cfg.targets {
        let mut states = Vec::with_capacity(steps);
        let mut pos = Vector3::from(target.start_pos);
        let mut vel = Vector3::from(target.start_vel);
        for k in 0..steps {
            let t = k as f64 * cfg.dt;
            let acc = target.accel_at(t);
            states.push(KinematicState { pos, vel, acc });
            pos += vel * cfg.dt + acc * (0.5 * cfg.dt * cfg.dt);
            vel += acc * cfg.dt;
        }
        out.push(TruthTrajectory { states });
    }
    Ok(out)
}

/// Synthesizes per-step detection sets from the nominal truth.
///
/// Per step and target: a velocity jitter is drawn and folded into the
/// realized propagation, the target is detected with `detection_prob`, and a
/// detected position gets per-axis Gaussian noise (10x inflated for the 5%
/// jamming outliers when jamming is on). Clutter counts are Poisson with
/// positions uniform over the truth bounding box inflated by 20 m.
pub fn generate_measurements(
    truth: &[TruthTrajectory],
    cfg: &ScenarioConfig,
) -> Result<MeasurementData> {
    cfg.validate()?;
    let steps = cfg.steps();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");

    // Clutter region: inflated bounding box of the nominal scene.
    let mut lo = Vector3::from_element(f64::INFINITY);
    let mut hi = Vector3::from_element(f64::NEG_INFINITY);
    for traj in truth {
        for s in &traj.states {
            for a in 0..3 {
                lo[a] = lo[a].min(s.pos[a]);
                hi[a] = hi[a].max(s.pos[a]);
            }
        }
    }
    let margin = 20.0;
    let (lo, hi) = (lo.map(|x| x - margin), hi.map(|x| x + margin));

    let mut realized: Vec<TruthTrajectory> = truth
        .iter()
        .map(|_| TruthTrajectory {
            states: Vec::with_capacity(steps),
        })
        .collect();
    let mut pos: Vec<Vector3<f64>> = truth.iter().map(|t| t.states[0].pos).collect();

    let mut frames = Vec::with_capacity(steps);
    for k in 0..steps {
        let mut frame = Vec::new();
        for (ti, traj) in truth.iter().enumerate() {
            let nominal = &traj.states[k];
            let jitter = Vector3::from_fn(|_, _| std_normal.sample(&mut rng) * cfg.noise.sigma_vel);
            let vel = nominal.vel + jitter;
            realized[ti].states.push(KinematicState {
                pos: pos[ti],
                vel,
                acc: nominal.acc,
            });

            if rng.random_range(0.0..1.0) < cfg.detection_prob {
                let sigma = if cfg.jamming && rng.random_range(0.0..1.0) < 0.05 {
                    10.0 * cfg.noise.sigma_pos
                } else {
                    cfg.noise.sigma_pos
                };
                let noise = Vector3::from_fn(|_, _| std_normal.sample(&mut rng) * sigma);
                frame.push(Detection {
                    pos: pos[ti] + noise,
                    origin: DetectionOrigin::Target(ti),
                });
            }

            // Advance the realized trajectory with the jittered velocity.
            pos[ti] += vel * cfg.dt + nominal.acc * (0.5 * cfg.dt * cfg.dt);
        }

        if cfg.clutter_rate > 0.0 {
            let poisson = Poisson::new(cfg.clutter_rate)
                .map_err(|_| Error::InvalidConfig("invalid clutter rate".into()))?;
            let count = poisson.sample(&mut rng) as usize;
            for _ in 0..count {
                let p = Vector3::from_fn(|a, _| rng.random_range(lo[a]..=hi[a]));
                frame.push(Detection {
                    pos: p,
                    origin: DetectionOrigin::Clutter,
                });
            }
        }
        frames.push(frame);
    }

    Ok(MeasurementData { frames, realized })
}

/// Truth plus measurements in one call.
pub fn simulate(cfg: &ScenarioConfig) -> Result<(Vec<TruthTrajectory>, MeasurementData)> {
    let truth = generate_truth(cfg)?;
    let data = generate_measurements(&truth, cfg)?;
    Ok((truth, data))
}
