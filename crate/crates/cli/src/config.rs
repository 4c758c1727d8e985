//! TOML run configuration: file loading, dotted-path overrides, and
//! conversion into library settings.
//!
//! Every field is optional and defaults to the benchmark values, so an
//! empty (or absent) config file reproduces the Profile 1 experiment.

use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use nalgebra::DMatrix;
use serde::Deserialize;

use safe_imm::association::{AssociationConfig, CostMetric};
use safe_imm::imm::{GateConfig, Likelihood};
use safe_imm::metrics::EvalConfig;
use safe_imm::runner::{RunSettings, TrackerKind};
use safe_imm::sim::{AccelSegment, NoiseProfile, ScenarioConfig, TargetSpec};
use safe_imm::tpm_adapt::TpmConfig;

/// Environment variable overriding `[run] output_dir`.
pub const OUTPUT_DIR_ENV: &str = "SAFE_IMM_OUTPUT_DIR";

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    #[serde(default)]
    pub scenario: ScenarioSection,
    #[serde(default)]
    pub models: ModelsSection,
    #[serde(default)]
    pub tracker: TrackerSection,
    #[serde(default)]
    pub gate: GateSection,
    #[serde(default)]
    pub tpm: TpmSection,
    #[serde(default)]
    pub gnn: GnnSection,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub run: RunSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSection {
    pub dt: f64,
    pub duration: f64,
    pub sigma_pos: f64,
    pub sigma_vel: f64,
    pub clutter_rate: f64,
    pub detection_prob: f64,
    pub jamming: bool,
    pub seed: u64,
    /// Custom targets; empty means the three-target benchmark.
    #[serde(default)]
    pub targets: Vec<TargetSection>,
}

impl Default for ScenarioSection {
    fn default() -> Self {
        Self {
            dt: 0.1,
            duration: 30.0,
            sigma_pos: 2.0,
            sigma_vel: 0.01,
            clutter_rate: 0.0,
            detection_prob: 1.0,
            jamming: false,
            seed: 1,
            targets: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetSection {
    pub start_pos: [f64; 3],
    pub start_vel: [f64; 3],
    #[serde(default)]
    pub segments: Vec<SegmentSection>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentSection {
    pub start: f64,
    pub end: f64,
    pub accel: [f64; 3],
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelsSection {
    pub q_cv: f64,
    pub q_ca: f64,
    pub pad_variance: f64,
}

impl Default for ModelsSection {
    fn default() -> Self {
        Self {
            q_cv: 0.5,
            q_ca: 0.2,
            pad_variance: 25.0,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackerSection {
    /// safe_imm | imm_mixture_only | kf_cv | kf_ca
    pub kind: String,
    /// gaussian | student_t
    pub likelihood: String,
    pub nu: f64,
    pub nu_jam: f64,
    pub adaptive_tpm: bool,
}

impl Default for TrackerSection {
    fn default() -> Self {
        Self {
            kind: "safe_imm".into(),
            likelihood: "student_t".into(),
            nu: 5.0,
            nu_jam: 2.0,
            adaptive_tpm: false,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GateSection {
    pub epsilon: f64,
    pub margin_delta: f64,
    pub streak: u32,
}

impl Default for GateSection {
    fn default() -> Self {
        Self {
            epsilon: 0.5,
            margin_delta: 0.05,
            streak: 2,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TpmSection {
    pub alpha_max: f64,
    pub g_glr: f64,
    pub g_ent: f64,
    pub winner_bias: f64,
    pub ca_boost: f64,
    pub cv_boost: f64,
    pub cap: f64,
    pub window: usize,
    pub pi_base: Vec<Vec<f64>>,
}

impl Default for TpmSection {
    fn default() -> Self {
        Self {
            alpha_max: 0.7,
            g_glr: 0.10,
            g_ent: 0.50,
            winner_bias: 0.10,
            ca_boost: 0.15,
            cv_boost: 0.05,
            cap: 0.5,
            window: 5,
            pi_base: vec![vec![0.992, 0.008], vec![0.015, 0.985]],
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GnnSection {
    pub assign_threshold: f64,
    /// mahalanobis | euclidean
    pub cost_metric: String,
    pub confirm_m: usize,
    pub confirm_n: usize,
    pub delete_after_misses: usize,
    pub velocity_var: f64,
    pub init_pair_radius: f64,
}

impl Default for GnnSection {
    fn default() -> Self {
        Self {
            assign_threshold: 30.0,
            cost_metric: "mahalanobis".into(),
            confirm_m: 2,
            confirm_n: 5,
            delete_after_misses: 5,
            velocity_var: 100.0,
            init_pair_radius: 10.0,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub ospa_cutoff: f64,
    pub ospa_order: f64,
    pub match_radius: f64,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            ospa_cutoff: 2.0,
            ospa_order: 1.0,
            match_radius: 2.0,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub seeds: Vec<u64>,
    pub output_dir: String,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            seeds: vec![1],
            output_dir: "out".into(),
        }
    }
}

impl FileConfig {
    /// Loads a config, layering dotted-path overrides and the optional
    /// single-seed override on top.
    pub fn load(path: Option<&Path>, overrides: &[String], seed: Option<u64>) -> Result<Self> {
        let mut value = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("cannot read config {}", p.display()))?;
                let table = text
                    .parse::<toml::Table>()
                    .map_err(|e| anyhow!("malformed config {}: {e}", p.display()))?;
                toml::Value::Table(table)
            }
            None => toml::Value::Table(toml::value::Table::new()),
        };
        for ov in overrides {
            apply_override(&mut value, ov)?;
        }
        if let Some(seed) = seed {
            apply_override(&mut value, &format!("scenario.seed={seed}"))?;
            apply_override(&mut value, &format!("run.seeds=[{seed}]"))?;
        }
        let cfg: FileConfig = value
            .try_into()
            .map_err(|e| anyhow!("invalid config field: {e}"))?;
        Ok(cfg)
    }

    pub fn scenario(&self) -> ScenarioConfig {
        let s = &self.scenario;
        let noise = NoiseProfile {
            sigma_pos: s.sigma_pos,
            sigma_vel: s.sigma_vel,
        };
        let mut cfg = ScenarioConfig::three_target_benchmark(noise, s.seed);
        cfg.dt = s.dt;
        cfg.duration = s.duration;
        cfg.clutter_rate = s.clutter_rate;
        cfg.detection_prob = s.detection_prob;
        cfg.jamming = s.jamming;
        if !s.targets.is_empty() {
            cfg.targets = s
                .targets
                .iter()
                .map(|t| TargetSpec {
                    start_pos: t.start_pos,
                    start_vel: t.start_vel,
                    segments: t
                        .segments
                        .iter()
                        .map(|seg| AccelSegment {
                            start: seg.start,
                            end: seg.end,
                            accel: seg.accel,
                        })
                        .collect(),
                })
                .collect();
        }
        cfg
    }

    pub fn settings(&self) -> Result<RunSettings> {
        let tracker = match self.tracker.kind.as_str() {
            "safe_imm" => TrackerKind::SafeImm,
            "imm_mixture_only" => TrackerKind::MixtureOnly,
            "kf_cv" => TrackerKind::KfCv,
            "kf_ca" => TrackerKind::KfCa,
            other => bail!("tracker.kind: unknown tracker {other:?}"),
        };
        let likelihood = match self.tracker.likelihood.as_str() {
            "gaussian" => Likelihood::Gaussian,
            "student_t" => Likelihood::StudentT {
                nu: self.tracker.nu,
            },
            other => bail!("tracker.likelihood: unknown likelihood {other:?}"),
        };
        let cost_metric = match self.gnn.cost_metric.as_str() {
            "mahalanobis" => CostMetric::Mahalanobis,
            "euclidean" => CostMetric::Euclidean,
            other => bail!("gnn.cost_metric: unknown metric {other:?}"),
        };
        let m = self.tpm.pi_base.len();
        if m == 0 || self.tpm.pi_base.iter().any(|row| row.len() != m) {
            bail!("tpm.pi_base must be a square matrix");
        }
        let pi_base = DMatrix::from_fn(m, m, |r, c| self.tpm.pi_base[r][c]);

        Ok(RunSettings {
            scenario: self.scenario(),
            tracker,
            likelihood,
            adaptive_tpm: self.tracker.adaptive_tpm,
            gate: GateConfig {
                enabled: true,
                epsilon: self.gate.epsilon,
                margin_delta: self.gate.margin_delta,
                streak_len: self.gate.streak,
            },
            tpm: TpmConfig {
                pi_base,
                alpha_max: self.tpm.alpha_max,
                g_glr: self.tpm.g_glr,
                g_ent: self.tpm.g_ent,
                winner_bias: self.tpm.winner_bias,
                ca_boost: self.tpm.ca_boost,
                cv_boost: self.tpm.cv_boost,
                cap: self.tpm.cap,
                window: self.tpm.window,
                enabled: self.tracker.adaptive_tpm,
            },
            assoc: AssociationConfig {
                assign_threshold: self.gnn.assign_threshold,
                cost_metric,
                gate_variance_inflation: 0.0,
                confirm_m: self.gnn.confirm_m,
                confirm_n: self.gnn.confirm_n,
                delete_after_misses: self.gnn.delete_after_misses,
                new_track_velocity_var: self.gnn.velocity_var,
                init_pair_radius: self.gnn.init_pair_radius,
                initial_weights: vec![0.9, 0.1],
            },
            eval: EvalConfig {
                ospa_cutoff: self.eval.ospa_cutoff,
                ospa_order: self.eval.ospa_order,
                match_radius: self.eval.match_radius,
            },
            q_cv: self.models.q_cv,
            q_ca: self.models.q_ca,
            pad_variance: self.models.pad_variance,
            r_sigma_floor: 1e-3,
            nu_jam: self.tracker.nu_jam,
        })
    }

    pub fn seeds(&self) -> Vec<u64> {
        if self.run.seeds.is_empty() {
            vec![self.scenario.seed]
        } else {
            self.run.seeds.clone()
        }
    }

    pub fn output_dir(&self) -> String {
        std::env::var(OUTPUT_DIR_ENV).unwrap_or_else(|_| self.run.output_dir.clone())
    }
}

/// Applies one `dotted.path=value` override onto a TOML tree, creating
/// intermediate tables as needed. The value parses as TOML (numbers,
/// booleans, arrays); anything unparseable is taken as a string.
fn apply_override(root: &mut toml::Value, spec: &str) -> Result<()> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| anyhow!("override {spec:?} must have the form key.path=value"))?;
    let parsed: toml::Value = match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap(),
        Err(_) => toml::Value::String(raw.trim().to_string()),
    };
    let mut node = root;
    let parts: Vec<&str> = path.trim().split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let table = node
            .as_table_mut()
            .ok_or_else(|| anyhow!("override {spec:?}: {part} is not a table"))?;
        if i == parts.len() - 1 {
            table.insert(part.to_string(), parsed);
            return Ok(());
        }
        node = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::value::Table::new()));
    }
    unreachable!("override paths have at least one component")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_reproduce_profile1_benchmark() {
        let cfg = FileConfig::load(None, &[], None).unwrap();
        let settings = cfg.settings().unwrap();
        assert_eq!(settings.scenario.dt, 0.1);
        assert_eq!(settings.scenario.steps(), 300);
        assert_eq!(settings.scenario.noise.sigma_pos, 2.0);
        assert_eq!(settings.q_cv, 0.5);
        assert_eq!(settings.q_ca, 0.2);
        assert_eq!(settings.gate.epsilon, 0.5);
        assert_eq!(settings.gate.streak_len, 2);
        assert_eq!(settings.assoc.assign_threshold, 30.0);
        assert_eq!(settings.tpm.pi_base[(0, 0)], 0.992);
        assert!(!settings.adaptive_tpm);
        assert_eq!(settings.likelihood, Likelihood::StudentT { nu: 5.0 });
    }

    #[test]
    fn overrides_apply_with_types() {
        let cfg = FileConfig::load(
            None,
            &[
                "gate.epsilon=0.25".into(),
                "tracker.kind=kf_cv".into(),
                "run.seeds=[3, 4]".into(),
                "scenario.jamming=true".into(),
            ],
            None,
        )
        .unwrap();
        let settings = cfg.settings().unwrap();
        assert_eq!(settings.gate.epsilon, 0.25);
        assert_eq!(settings.tracker, TrackerKind::KfCv);
        assert_eq!(cfg.seeds(), vec![3, 4]);
        assert!(settings.scenario.jamming);
    }

    #[test]
    fn seed_flag_overrides_seed_list() {
        let cfg = FileConfig::load(None, &[], Some(9)).unwrap();
        assert_eq!(cfg.seeds(), vec![9]);
        assert_eq!(cfg.scenario.seed, 9);
    }

    #[test]
    fn unknown_field_rejected() {
        let dir = std::env::temp_dir().join("safe_imm_cfg_test");
        std::fs::create_dir_all(&dir).unwrap();
        let p = dir.join("bad.toml");
        std::fs::write(&p, "[gate]\nepsilonn = 0.5\n").unwrap();
        let err = FileConfig::load(Some(&p), &[], None).unwrap_err();
        assert!(err.to_string().contains("invalid config field"));
    }
}
