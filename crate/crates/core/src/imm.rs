//! The interacting multiple model cycle with a drift-bounded
//! winner-takes-all output.
//!
//! One step runs: model priors -> mixing -> per-model predict/update ->
//! innovation likelihoods -> posterior weights -> transition-matrix
//! adaptation -> fused mixture and drift bound -> gated output.
//!
//! The gate emits the winning model's estimate alone only when the bound
//!
//! ```text
//! ||mu_mix - mu_w|| <= B = t * sqrt(tr(Pbar) * dbar2)
//! ```
//!
//! proves the jump from the mixture to the winner cannot exceed the
//! configured tolerance. Here `t` is the rival probability mass, `Pbar` a
//! reference covariance averaging the winner with the weighted rivals, and
//! `dbar2` the weighted Mahalanobis spread of rival means around the winner,
//! all expressed in the winner's state space. The inequality follows from
//! Cauchy-Schwarz in the `Pbar^-1` inner product, so a fired gate carries a
//! hard guarantee, not a heuristic.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kalman::{self, GaussianEstimate};
use crate::linalg::{moment_match, symmetrize};
use crate::models::{map_state, MotionModel};
use crate::tpm_adapt::{adapt_tpm, AdaptState, TpmConfig};

/// Tolerance for probability-vector and row-stochasticity checks.
const PROB_TOL: f64 = 1e-12;

/// Tail mass below which the bound degenerates to zero by convention.
const TAIL_EPS: f64 = 1e-15;

/// Hysteresis state for the winner-takes-all gate.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WtaStreak {
    /// Consecutive steps in which the gate condition held with an unchanged
    /// winner. Resets on any failed condition or winner change.
    pub consecutive_pass: u32,
    pub last_winner: Option<usize>,
}

/// Likelihood evaluator applied to the per-model innovations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Likelihood {
    Gaussian,
    StudentT { nu: f64 },
}

/// Winner-takes-all gate parameters.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GateConfig {
    /// Master switch; disabled means the output is always the mixture.
    pub enabled: bool,
    /// Drift tolerance in meters over the state Euclidean norm.
    pub epsilon: f64,
    /// Required probability margin between winner and runner-up.
    pub margin_delta: f64,
    /// Required consecutive passing steps (hysteresis).
    pub streak_len: u32,
}

impl Default for GateConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            epsilon: 0.5,
            margin_delta: 0.05,
            streak_len: 2,
        }
    }
}

/// Full configuration of one IMM step.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ImmConfig {
    pub likelihood: Likelihood,
    pub gate: GateConfig,
    pub tpm: TpmConfig,
    /// Variance given to acceleration states padded in by CV -> CA mapping.
    pub pad_variance: f64,
    /// Posterior probability floor; keeps every model revivable.
    pub weight_floor: f64,
    /// Optional diagonal pre-scaling applied to the drift bound's state
    /// space (canonical layout, truncated to the winner's dimension),
    /// normalizing the mixed units under the trace. `None` is identity.
    pub gate_scale: Option<Vec<f64>>,
}

impl Default for ImmConfig {
    fn default() -> Self {
        Self {
            likelihood: Likelihood::StudentT { nu: 5.0 },
            gate: GateConfig::default(),
            tpm: TpmConfig::default(),
            pad_variance: crate::models::DEFAULT_PAD_VARIANCE,
            weight_floor: 1e-6,
            gate_scale: None,
        }
    }
}

/// The IMM state: per-model estimates, model probabilities, the transition
/// matrix currently in force, gate hysteresis, and adaptation history.
#[derive(Debug, Clone)]
pub struct ModelBank {
    pub models: Vec<MotionModel>,
    pub estimates: Vec<GaussianEstimate>,
    pub weights: DVector<f64>,
    pub tpm: DMatrix<f64>,
    pub streak: WtaStreak,
    pub adapt: AdaptState,
}

impl ModelBank {
    pub fn new(
        models: Vec<MotionModel>,
        estimates: Vec<GaussianEstimate>,
        weights: DVector<f64>,
        tpm: DMatrix<f64>,
    ) -> Result<Self> {
        let m = models.len();
        if estimates.len() != m {
            return Err(Error::DimensionMismatch {
                expected: m,
                actual: estimates.len(),
            });
        }
        if weights.len() != m || tpm.nrows() != m || tpm.ncols() != m {
            return Err(Error::DimensionMismatch {
                expected: m,
                actual: weights.len(),
            });
        }
        for (model, est) in models.iter().zip(&estimates) {
            if est.dim() != model.state_dim() {
                return Err(Error::DimensionMismatch {
                    expected: model.state_dim(),
                    actual: est.dim(),
                });
            }
        }
        if (weights.sum() - 1.0).abs() > PROB_TOL || weights.iter().any(|w| *w < 0.0) {
            return Err(Error::InvalidConfig(
                "model weights must form a probability vector".into(),
            ));
        }
        for r in 0..m {
            let row_sum: f64 = (0..m).map(|c| tpm[(r, c)]).sum();
            if (row_sum - 1.0).abs() > PROB_TOL || (0..m).any(|c| tpm[(r, c)] < 0.0) {
                return Err(Error::InvalidConfig(
                    "transition matrix rows must be stochastic".into(),
                ));
            }
        }
        Ok(Self {
            models,
            estimates,
            weights,
            tpm,
            streak: WtaStreak::default(),
            adapt: AdaptState::default(),
        })
    }

    pub fn num_models(&self) -> usize {
        self.models.len()
    }

    /// Index of the highest-probability model; ties break to the lowest
    /// index for determinism.
    pub fn winner(&self) -> usize {
        let mut best = 0;
        for i in 1..self.weights.len() {
            if self.weights[i] > self.weights[best] {
                best = i;
            }
        }
        best
    }

    /// Index of the model with the largest state space: the fixed output
    /// space seen by downstream consumers.
    pub fn canonical_space(&self) -> usize {
        let mut best = 0;
        for (i, m) in self.models.iter().enumerate() {
            if m.state_dim() > self.models[best].state_dim() {
                best = i;
            }
        }
        best
    }
}

/// One-step model priors: `Pi^T w`.
pub fn model_priors(bank: &ModelBank) -> DVector<f64> {
    bank.tpm.transpose() * &bank.weights
}

/// Mixed initial conditions for each model: every rival estimate is mapped
/// into the target model's space and moment-matched with the mixing weights
/// `alpha(i->j) = Pi[i][j] w[i] / cbar[j]`.
///
/// Returns the mixed estimates plus a degeneracy flag set when some `cbar[j]`
/// vanished and the self-only fallback was substituted.
pub fn mix_initial_conditions(
    bank: &ModelBank,
    pad_variance: f64,
) -> (Vec<GaussianEstimate>, bool) {
    let m = bank.num_models();
    let mut degenerate = false;
    let mut mixed = Vec::with_capacity(m);
    for j in 0..m {
        let cbar: f64 = (0..m).map(|i| bank.tpm[(i, j)] * bank.weights[i]).sum();
        let alphas: Vec<f64> = if cbar < 1e-12 {
            degenerate = true;
            (0..m).map(|i| if i == j { 1.0 } else { 0.0 }).collect()
        } else {
            (0..m)
                .map(|i| bank.tpm[(i, j)] * bank.weights[i] / cbar)
                .collect()
        };
        let mapped: Vec<GaussianEstimate> = (0..m)
            .map(|i| {
                map_state(
                    &bank.models[i],
                    &bank.models[j],
                    &bank.estimates[i],
                    pad_variance,
                )
            })
            .collect();
        let means: Vec<DVector<f64>> = mapped.iter().map(|e| e.mean.clone()).collect();
        let covs: Vec<DMatrix<f64>> = mapped.iter().map(|e| e.cov.clone()).collect();
        let (mean, cov) = moment_match(&alphas, &means, &covs);
        mixed.push(GaussianEstimate::new(mean, cov));
    }
    (mixed, degenerate)
}

/// Combines priors and per-model log-likelihoods into posterior model
/// probabilities, entirely in log space with a max-subtraction softmax.
///
/// A probability floor is applied and the vector renormalized. If every
/// posterior mass underflows to zero (all likelihoods `-inf`), the priors are
/// returned unchanged and the fallback flag is set.
pub fn posterior_weights(
    priors: &DVector<f64>,
    logliks: &[f64],
    floor: f64,
) -> (DVector<f64>, bool) {
    let m = priors.len();
    debug_assert_eq!(logliks.len(), m);
    let logw: Vec<f64> = (0..m).map(|i| priors[i].ln() + logliks[i]).collect();
    let max = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return (priors.clone(), true);
    }
    let mut w = DVector::from_iterator(m, logw.iter().map(|lw| (lw - max).exp()));
    w /= w.sum();
    for i in 0..m {
        if w[i] < floor {
            w[i] = floor;
        }
    }
    let sum = w.sum();
    w /= sum;
    (w, false)
}

/// Moment-matched single-Gaussian reduction of the bank, expressed in the
/// state space of `target_space`.
pub fn mixture_moments(
    bank: &ModelBank,
    target_space: usize,
    pad_variance: f64,
) -> GaussianEstimate {
    let m = bank.num_models();
    let target = &bank.models[target_space];
    let mapped: Vec<GaussianEstimate> = (0..m)
        .map(|i| map_state(&bank.models[i], target, &bank.estimates[i], pad_variance))
        .collect();
    let weights: Vec<f64> = bank.weights.iter().cloned().collect();
    let means: Vec<DVector<f64>> = mapped.iter().map(|e| e.mean.clone()).collect();
    let covs: Vec<DMatrix<f64>> = mapped.iter().map(|e| e.cov.clone()).collect();
    let (mean, cov) = moment_match(&weights, &means, &covs);
    GaussianEstimate::new(mean, cov)
}

/// Everything the drift bound produces, all in the winner's state space.
#[derive(Debug, Clone)]
pub struct DriftBound {
    pub winner: usize,
    pub winner_prob: f64,
    /// Rival probability mass `t = 1 - w_w`.
    pub tail: f64,
    /// The bound `B = t * sqrt(tr(Pbar) * dbar2)`.
    pub bound: f64,
    /// Weighted Mahalanobis spread of rival means.
    pub dbar2: f64,
    /// Reference covariance averaging winner and weighted rivals.
    pub pbar: DMatrix<f64>,
    /// Realized `||mu_mix - mu_w||`, recorded for compliance audits.
    pub actual_drift: f64,
}

/// Evaluates the winner-takes-all drift bound for the current bank.
///
/// Rivals are mapped into the winner's state space; `Pbar` gets a diagonal
/// jitter of `1e-9 tr(Pbar)/n` (escalating tenfold) if its factorization
/// fails. A vanishing tail yields `B = 0` by convention.
pub fn drift_bound(bank: &ModelBank, pad_variance: f64) -> DriftBound {
    drift_bound_scaled(bank, pad_variance, None)
}

/// [`drift_bound`] evaluated in a diagonally rescaled state space; `scale`
/// entries follow the canonical layout and are truncated to the winner's
/// dimension. The Mahalanobis spread is scale-invariant, so only the trace
/// and the realized drift change.
pub fn drift_bound_scaled(
    bank: &ModelBank,
    pad_variance: f64,
    scale: Option<&[f64]>,
) -> DriftBound {
    let w = bank.winner();
    let winner_prob = bank.weights[w];
    let tail = (1.0 - winner_prob).max(0.0);
    let winner_est = &bank.estimates[w];
    let n = winner_est.dim();

    if tail <= TAIL_EPS || bank.num_models() == 1 {
        return DriftBound {
            winner: w,
            winner_prob,
            tail,
            bound: 0.0,
            dbar2: 0.0,
            pbar: winner_est.cov.clone(),
            actual_drift: 0.0,
        };
    }

    let mut pbar = winner_est.cov.clone();
    let mut deltas: Vec<(f64, DVector<f64>)> = Vec::with_capacity(bank.num_models() - 1);
    for i in 0..bank.num_models() {
        if i == w {
            continue;
        }
        let mapped = map_state(
            &bank.models[i],
            &bank.models[w],
            &bank.estimates[i],
            pad_variance,
        );
        let wt = bank.weights[i] / tail;
        pbar += mapped.cov * wt;
        deltas.push((wt, mapped.mean - &winner_est.mean));
    }
    pbar *= 0.5;
    symmetrize(&mut pbar);

    if let Some(scale) = scale {
        assert!(
            scale.len() >= n,
            "gate scale must cover the winner's state dimension"
        );
        for (_, delta) in &mut deltas {
            for k in 0..n {
                delta[k] *= scale[k];
            }
        }
        for r in 0..n {
            for c in 0..n {
                pbar[(r, c)] *= scale[r] * scale[c];
            }
        }
    }

    let trace: f64 = pbar.diagonal().sum();
    let chol = {
        let mut jitter = (1e-9 * trace / n as f64).max(f64::MIN_POSITIVE);
        let mut attempt = nalgebra::Cholesky::new(pbar.clone());
        while attempt.is_none() && jitter.is_finite() {
            let mut bumped = pbar.clone();
            for i in 0..n {
                bumped[(i, i)] += jitter;
            }
            attempt = nalgebra::Cholesky::new(bumped);
            jitter *= 10.0;
        }
        attempt.expect("Pbar regularization failed to produce a factorizable matrix")
    };

    let mut dbar2 = 0.0;
    let mut weighted_delta = DVector::zeros(n);
    for (wt, delta) in &deltas {
        let x = chol.solve(delta);
        dbar2 += wt * delta.dot(&x);
        weighted_delta.axpy(*wt, delta, 1.0);
    }
    dbar2 = dbar2.max(0.0);

    let bound = tail * (trace * dbar2).sqrt();
    let actual_drift = tail * weighted_delta.norm();

    DriftBound {
        winner: w,
        winner_prob,
        tail,
        bound,
        dbar2,
        pbar,
        actual_drift,
    }
}

/// Audit record of one gate evaluation.
#[derive(Debug, Clone)]
pub struct GateDecision {
    /// Drift bound B in the winner's state space.
    pub bound: f64,
    /// Tolerance the bound was compared against.
    pub epsilon: f64,
    /// Whether winner-takes-all output was emitted this step.
    pub fired: bool,
    pub winner_idx: usize,
    pub winner_prob: f64,
    /// Rival mass `t = 1 - winner_prob`.
    pub tail: f64,
    /// Probability margin test `w_w - w_runnerup >= margin_delta`.
    pub margin_ok: bool,
    /// Consecutive passing steps including this one.
    pub streak: u32,
    /// Realized `||mu_mix - mu_w||`; fired implies `actual_drift <= bound`.
    pub actual_drift: f64,
    /// Winner-vs-runner-up log-likelihood gap, when likelihoods were
    /// evaluated this step. Diagnostic only.
    pub loglik_margin: Option<f64>,
}

/// Diagnostics raised by degenerate numerical paths inside a step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StepFlags {
    /// Some mixing normalizer vanished; self-only mixing substituted.
    pub mixing_degenerate: bool,
    /// All posterior mass underflowed; weights fell back to priors.
    pub weight_fallback: bool,
    /// Number of models whose measurement update failed this step.
    pub failed_updates: u32,
}

/// Output of one IMM step.
#[derive(Debug, Clone)]
pub struct ImmStep {
    /// Gated estimate in the bank's canonical (largest) state space.
    pub output: GaussianEstimate,
    pub gate: GateDecision,
    pub flags: StepFlags,
}

/// Gated output for the bank as it stands: computes the drift bound, applies
/// the tolerance, margin, and hysteresis tests, updates the streak, and
/// emits either the winner or the mixture in the canonical space.
pub fn safe_output(bank: &mut ModelBank, cfg: &ImmConfig) -> (GaussianEstimate, GateDecision) {
    gated_output(bank, cfg, None)
}

fn gated_output(
    bank: &mut ModelBank,
    cfg: &ImmConfig,
    logliks: Option<&[f64]>,
) -> (GaussianEstimate, GateDecision) {
    let db = drift_bound_scaled(bank, cfg.pad_variance, cfg.gate_scale.as_deref());
    let w = db.winner;

    let mut runner_up = f64::NEG_INFINITY;
    for i in 0..bank.num_models() {
        if i != w && bank.weights[i] > runner_up {
            runner_up = bank.weights[i];
        }
    }
    let margin = if runner_up.is_finite() {
        db.winner_prob - runner_up
    } else {
        1.0
    };
    let margin_ok = margin >= cfg.gate.margin_delta;

    let pass = cfg.gate.enabled && db.bound <= cfg.gate.epsilon && margin_ok;
    if pass && bank.streak.last_winner == Some(w) {
        bank.streak.consecutive_pass += 1;
    } else if pass {
        bank.streak.consecutive_pass = 1;
    } else {
        bank.streak.consecutive_pass = 0;
    }
    bank.streak.last_winner = Some(w);
    let fired = pass && bank.streak.consecutive_pass >= cfg.gate.streak_len;

    let canonical = bank.canonical_space();
    let output = if fired {
        map_state(
            &bank.models[w],
            &bank.models[canonical],
            &bank.estimates[w],
            cfg.pad_variance,
        )
    } else {
        mixture_moments(bank, canonical, cfg.pad_variance)
    };

    let loglik_margin = logliks.and_then(|lls| {
        let mut ru = f64::NEG_INFINITY;
        for (i, ll) in lls.iter().enumerate() {
            if i != w && *ll > ru {
                ru = *ll;
            }
        }
        ru.is_finite().then(|| lls[w] - ru)
    });

    let decision = GateDecision {
        bound: db.bound,
        epsilon: cfg.gate.epsilon,
        fired,
        winner_idx: w,
        winner_prob: db.winner_prob,
        tail: db.tail,
        margin_ok,
        streak: bank.streak.consecutive_pass,
        actual_drift: db.actual_drift,
        loglik_margin,
    };
    (output, decision)
}

/// Runs one full IMM iteration against a position measurement `z` with noise
/// covariance `r`, mutating the bank in place.
///
/// A model whose update fails (singular innovation) keeps its predicted
/// estimate and contributes `-inf` likelihood for the step.
pub fn imm_step(
    bank: &mut ModelBank,
    z: &DVector<f64>,
    r: &DMatrix<f64>,
    dt: f64,
    cfg: &ImmConfig,
) -> Result<ImmStep> {
    let m = bank.num_models();
    let priors = model_priors(bank);
    let (mixed, mixing_degenerate) = mix_initial_conditions(bank, cfg.pad_variance);

    let mut logliks = Vec::with_capacity(m);
    let mut estimates = Vec::with_capacity(m);
    let mut failed_updates = 0u32;
    for (j, init) in mixed.into_iter().enumerate() {
        let predicted = kalman::predict(&init, &bank.models[j], dt)?;
        match kalman::update(&predicted, &bank.models[j], z, r) {
            Ok((posterior, innovation)) => {
                let ll = match cfg.likelihood {
                    Likelihood::Gaussian => kalman::gaussian_loglik(&innovation),
                    Likelihood::StudentT { nu } => kalman::student_t_loglik(&innovation, nu),
                }
                .unwrap_or(f64::NEG_INFINITY);
                estimates.push(posterior);
                logliks.push(ll);
            }
            Err(Error::SingularInnovation) => {
                failed_updates += 1;
                estimates.push(predicted);
                logliks.push(f64::NEG_INFINITY);
            }
            Err(e) => return Err(e),
        }
    }

    let (weights, weight_fallback) = posterior_weights(&priors, &logliks, cfg.weight_floor);
    bank.estimates = estimates;
    bank.weights = weights;

    bank.adapt.push(&logliks, bank.winner(), cfg.tpm.window);
    if m > 1 {
        bank.tpm = if cfg.tpm.enabled {
            adapt_tpm(&cfg.tpm, &bank.adapt, &bank.weights, &bank.models)
        } else {
            cfg.tpm.pi_base.clone()
        };
    }

    let (output, gate) = gated_output(bank, cfg, Some(&logliks));
    Ok(ImmStep {
        output,
        gate,
        flags: StepFlags {
            mixing_degenerate,
            weight_fallback,
            failed_updates,
        },
    })
}

/// Propagates the bank through `dt` seconds with no measurement: mixing and
/// prediction run as usual, the weights advance by the priors alone, and the
/// gate is re-evaluated on the predicted bank.
pub fn imm_predict(bank: &mut ModelBank, dt: f64, cfg: &ImmConfig) -> Result<ImmStep> {
    let priors = model_priors(bank);
    let (mixed, mixing_degenerate) = mix_initial_conditions(bank, cfg.pad_variance);

    let mut estimates = Vec::with_capacity(bank.num_models());
    for (j, init) in mixed.into_iter().enumerate() {
        estimates.push(kalman::predict(&init, &bank.models[j], dt)?);
    }
    bank.estimates = estimates;
    bank.weights = priors;

    let (output, gate) = gated_output(bank, cfg, None);
    Ok(ImmStep {
        output,
        gate,
        flags: StepFlags {
            mixing_degenerate,
            ..StepFlags::default()
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::ModelKind;
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn base_tpm() -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[0.992, 0.008, 0.015, 0.985])
    }

    fn random_pd(n: usize, rng: &mut impl Rng) -> DMatrix<f64> {
        let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        &a * a.transpose() + DMatrix::identity(n, n) * 0.05
    }

    fn random_estimate(model: &MotionModel, rng: &mut impl Rng) -> GaussianEstimate {
        let n = model.state_dim();
        GaussianEstimate::new(
            DVector::from_fn(n, |_, _| rng.random_range(-20.0..20.0)),
            random_pd(n, rng),
        )
    }

    fn random_simplex(m: usize, rng: &mut impl Rng) -> DVector<f64> {
        let mut w = DVector::from_fn(m, |_, _| -f64::ln(rng.random_range(1e-12..1.0)));
        let s = w.sum();
        w /= s;
        w
    }

    fn two_model_bank(rng: &mut impl Rng) -> ModelBank {
        let models = vec![MotionModel::cv(0, 0.5), MotionModel::ca(1, 0.2)];
        let estimates = models.iter().map(|m| random_estimate(m, rng)).collect();
        ModelBank::new(models, estimates, random_simplex(2, rng), base_tpm()).unwrap()
    }

    fn three_model_bank(rng: &mut impl Rng) -> ModelBank {
        let models = vec![
            MotionModel::cv(0, 0.5),
            MotionModel::ca(1, 0.2),
            MotionModel::ca(2, 1.0),
        ];
        let estimates = models.iter().map(|m| random_estimate(m, rng)).collect();
        let tpm = DMatrix::from_row_slice(
            3,
            3,
            &[0.98, 0.01, 0.01, 0.02, 0.96, 0.02, 0.015, 0.015, 0.97],
        );
        ModelBank::new(models, estimates, random_simplex(3, rng), tpm).unwrap()
    }

    #[test]
    fn priors_identity_tpm_returns_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut bank = two_model_bank(&mut rng);
        bank.tpm = DMatrix::identity(2, 2);
        let priors = model_priors(&bank);
        assert_relative_eq!(priors, bank.weights, epsilon = 1e-15);
    }

    #[test]
    fn priors_match_base_tpm_row() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut bank = two_model_bank(&mut rng);
        bank.weights = DVector::from_vec(vec![1.0, 0.0]);
        let priors = model_priors(&bank);
        assert_relative_eq!(priors[0], 0.992, epsilon = 1e-12);
        assert_relative_eq!(priors[1], 0.008, epsilon = 1e-12);
    }

    #[test]
    fn priors_uniform_fixed_point_of_doubly_stochastic_tpm() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut bank = two_model_bank(&mut rng);
        bank.tpm = DMatrix::from_row_slice(2, 2, &[0.9, 0.1, 0.1, 0.9]);
        bank.weights = DVector::from_vec(vec![0.5, 0.5]);
        let priors = model_priors(&bank);
        assert_relative_eq!(priors[0], 0.5, epsilon = 1e-15);
        assert_relative_eq!(priors[1], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn mixing_identity_tpm_is_no_op() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut bank = two_model_bank(&mut rng);
        bank.tpm = DMatrix::identity(2, 2);
        let (mixed, degenerate) = mix_initial_conditions(&bank, 25.0);
        assert!(!degenerate);
        for (m, e) in mixed.iter().zip(&bank.estimates) {
            assert_relative_eq!(m.mean, e.mean, epsilon = 1e-12);
            assert!((&m.cov - &e.cov).abs().max() <= 1e-12);
        }
    }

    #[test]
    fn mixing_single_model_returns_input() {
        let model = MotionModel::cv(0, 0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let est = random_estimate(&model, &mut rng);
        let bank = ModelBank::new(
            vec![model],
            vec![est.clone()],
            DVector::from_vec(vec![1.0]),
            DMatrix::from_vec(1, 1, vec![1.0]),
        )
        .unwrap();
        let (mixed, _) = mix_initial_conditions(&bank, 25.0);
        assert_relative_eq!(mixed[0].mean, est.mean, epsilon = 1e-15);
    }

    #[test]
    fn mixing_identical_estimates_keeps_shared_cov() {
        // Same-kind models with identical estimates: zero spread term.
        let models = vec![MotionModel::cv(0, 0.5), MotionModel::cv(1, 1.0)];
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let est = random_estimate(&models[0], &mut rng);
        let bank = ModelBank::new(
            models,
            vec![est.clone(), est.clone()],
            DVector::from_vec(vec![0.3, 0.7]),
            base_tpm(),
        )
        .unwrap();
        let (mixed, _) = mix_initial_conditions(&bank, 25.0);
        for m in &mixed {
            assert!((&m.cov - &est.cov).abs().max() <= 1e-12);
            assert_relative_eq!(m.mean, est.mean, epsilon = 1e-12);
        }
    }

    #[test]
    fn posterior_weights_equal_logliks_keep_priors() {
        let priors = DVector::from_vec(vec![0.3, 0.7]);
        let (w, fallback) = posterior_weights(&priors, &[-4.0, -4.0], 1e-6);
        assert!(!fallback);
        assert_relative_eq!(w, priors, epsilon = 1e-12);
    }

    #[test]
    fn posterior_weights_likelihood_ratio() {
        let priors = DVector::from_vec(vec![0.5, 0.5]);
        let (w, _) = posterior_weights(&priors, &[0.0, 3.0f64.ln()], 1e-6);
        assert_relative_eq!(w[0], 0.25, epsilon = 1e-9);
        assert_relative_eq!(w[1], 0.75, epsilon = 1e-9);
    }

    #[test]
    fn posterior_weights_survive_extreme_logliks() {
        let priors = DVector::from_vec(vec![0.5, 0.5]);
        let (w, fallback) = posterior_weights(&priors, &[0.0, -1e6], 1e-6);
        assert!(!fallback);
        assert!(w.iter().all(|x| x.is_finite()));
        assert_relative_eq!(w[0], 1.0 - 1e-6, epsilon = 1e-9);
        assert_relative_eq!(w[1], 1e-6, epsilon = 1e-9);
        assert_relative_eq!(w.sum(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn posterior_weights_all_underflow_falls_back_to_priors() {
        let priors = DVector::from_vec(vec![0.4, 0.6]);
        let (w, fallback) =
            posterior_weights(&priors, &[f64::NEG_INFINITY, f64::NEG_INFINITY], 1e-6);
        assert!(fallback);
        assert_relative_eq!(w, priors, epsilon = 1e-15);
    }

    #[test]
    fn posterior_weights_invariant_to_loglik_shift() {
        let priors = DVector::from_vec(vec![0.2, 0.8]);
        let (a, _) = posterior_weights(&priors, &[-3.0, -1.0], 1e-6);
        let (b, _) = posterior_weights(&priors, &[-3.0 + 123.4, -1.0 + 123.4], 1e-6);
        assert_relative_eq!(a, b, epsilon = 1e-12);
    }

    #[test]
    fn mixture_with_dominant_weight_is_winner() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut bank = two_model_bank(&mut rng);
        bank.weights = DVector::from_vec(vec![1.0, 0.0]);
        let mix = mixture_moments(&bank, 0, 25.0);
        assert_relative_eq!(mix.mean, bank.estimates[0].mean, epsilon = 1e-12);
        assert!((&mix.cov - &bank.estimates[0].cov).abs().max() <= 1e-12);
    }

    #[test]
    fn mixture_of_identical_estimates_is_exact() {
        let models = vec![MotionModel::cv(0, 0.5), MotionModel::cv(1, 1.0)];
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let est = random_estimate(&models[0], &mut rng);
        let bank = ModelBank::new(
            models,
            vec![est.clone(), est.clone()],
            DVector::from_vec(vec![0.3, 0.7]),
            base_tpm(),
        )
        .unwrap();
        let mix = mixture_moments(&bank, 0, 25.0);
        assert_relative_eq!(mix.mean, est.mean, epsilon = 1e-13);
        assert!((&mix.cov - &est.cov).abs().max() <= 1e-13);
    }

    #[test]
    fn mixture_symmetric_pair() {
        // Two equal-weight estimates with means +/- a and equal P:
        // mu_mix = 0, P_mix = P + a a^T.
        let models = vec![MotionModel::cv(0, 0.5), MotionModel::cv(1, 1.0)];
        let a = DVector::from_vec(vec![1.0, 2.0, -1.0, 0.5, 0.0, 3.0]);
        let p = DMatrix::identity(6, 6) * 2.0;
        let bank = ModelBank::new(
            models,
            vec![
                GaussianEstimate::new(a.clone(), p.clone()),
                GaussianEstimate::new(-a.clone(), p.clone()),
            ],
            DVector::from_vec(vec![0.5, 0.5]),
            DMatrix::from_row_slice(2, 2, &[0.9, 0.1, 0.1, 0.9]),
        )
        .unwrap();
        let mix = mixture_moments(&bank, 0, 25.0);
        assert!(mix.mean.abs().max() <= 1e-12);
        let expect = &p + &a * a.transpose();
        assert!((&mix.cov - expect).abs().max() <= 1e-12);
    }

    #[test]
    fn mixture_matches_sampling_oracle() {
        // Monte Carlo moment check on a random 2-model bank.
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut bank = two_model_bank(&mut rng);
        bank.weights = DVector::from_vec(vec![0.35, 0.65]);
        let target = bank.canonical_space();
        let mix = mixture_moments(&bank, target, 25.0);

        let n = 9;
        let draws = 200_000;
        let mapped: Vec<GaussianEstimate> = (0..2)
            .map(|i| {
                map_state(
                    &bank.models[i],
                    &bank.models[target],
                    &bank.estimates[i],
                    25.0,
                )
            })
            .collect();
        let factors: Vec<DMatrix<f64>> = mapped
            .iter()
            .map(|e| nalgebra::Cholesky::new(e.cov.clone()).unwrap().unpack())
            .collect();
        let mut sum = DVector::<f64>::zeros(n);
        let mut sum_sq = DMatrix::<f64>::zeros(n, n);
        for _ in 0..draws {
            let comp = if rng.random_range(0.0..1.0) < bank.weights[0] {
                0
            } else {
                1
            };
            let z = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal));
            let x = &mapped[comp].mean + &factors[comp] * z;
            sum += &x;
            sum_sq += &x * x.transpose();
        }
        let mean = sum / draws as f64;
        let cov = sum_sq / draws as f64 - &mean * mean.transpose();

        // 3-sigma Monte Carlo tolerance on each moment entry.
        let sd = mix.cov.diagonal().max().sqrt();
        let mean_tol = 3.0 * sd / (draws as f64).sqrt();
        assert!(
            (mean - &mix.mean).abs().max() < mean_tol * 2.0,
            "mixture mean outside Monte Carlo band"
        );
        let cov_tol = 3.0 * 3.0 * mix.cov.abs().max() / (draws as f64).sqrt();
        assert!(
            (cov - &mix.cov).abs().max() < cov_tol.max(0.05),
            "mixture covariance outside Monte Carlo band"
        );
    }

    #[test]
    fn drift_bound_degenerate_tail_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut bank = two_model_bank(&mut rng);
        bank.weights = DVector::from_vec(vec![1.0, 0.0]);
        let db = drift_bound(&bank, 25.0);
        assert_eq!(db.bound, 0.0);
        assert_eq!(db.dbar2, 0.0);
        assert_eq!(db.actual_drift, 0.0);
    }

    #[test]
    fn drift_bound_identical_means_is_zero() {
        let models = vec![MotionModel::cv(0, 0.5), MotionModel::cv(1, 1.0)];
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mean = DVector::from_fn(6, |_, _| rng.random_range(-5.0..5.0));
        let bank = ModelBank::new(
            models,
            vec![
                GaussianEstimate::new(mean.clone(), random_pd(6, &mut rng)),
                GaussianEstimate::new(mean, random_pd(6, &mut rng)),
            ],
            DVector::from_vec(vec![0.6, 0.4]),
            base_tpm(),
        )
        .unwrap();
        let db = drift_bound(&bank, 25.0);
        assert!(db.bound.abs() <= 1e-9);
        assert!(db.actual_drift <= 1e-12);
    }

    #[test]
    fn drift_bound_dominates_actual_drift_fuzzed() {
        // The central inequality: ||mu_mix - mu_w|| <= B on random banks.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for case in 0..20_000 {
            let bank = if case % 2 == 0 {
                two_model_bank(&mut rng)
            } else {
                three_model_bank(&mut rng)
            };
            let db = drift_bound(&bank, 25.0);
            assert!(
                db.actual_drift <= db.bound * (1.0 + 1e-9) + 1e-12,
                "violated at case {case}: drift {} > bound {}",
                db.actual_drift,
                db.bound
            );
        }
    }

    #[test]
    fn rank_one_loewner_inequality_holds() {
        // (v^T Pbar^-1 v) Pbar - v v^T is PSD: the Cauchy-Schwarz step
        // underlying the bound, checked through eigenvalues.
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..500 {
            let p = random_pd(6, &mut rng) + DMatrix::identity(6, 6) * 0.1;
            let v = DVector::from_fn(6, |_, _| rng.random_range(-5.0..5.0));
            let pinv = p.clone().try_inverse().unwrap();
            let quad = (v.transpose() * &pinv * &v)[0];
            let m = &p * quad - &v * v.transpose();
            let trace: f64 = m.diagonal().sum();
            for ev in m.symmetric_eigenvalues().iter() {
                assert!(*ev >= -1e-9 * trace.abs().max(1.0), "eigenvalue {ev}");
            }
        }
    }

    #[test]
    fn gate_fires_after_streak_and_outputs_winner() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut bank = two_model_bank(&mut rng);
        bank.weights = DVector::from_vec(vec![1.0, 0.0]);
        let cfg = ImmConfig::default();

        let (_, first) = safe_output(&mut bank, &cfg);
        assert!(!first.fired, "streak of two cannot fire on the first pass");
        assert_eq!(first.streak, 1);

        let (out, second) = safe_output(&mut bank, &cfg);
        assert!(second.fired);
        assert_eq!(second.streak, 2);
        // Winner is CV; output is mapped into the canonical CA space.
        assert_eq!(out.dim(), 9);
        assert_relative_eq!(
            out.mean.rows(0, 6).into_owned(),
            bank.estimates[0].mean,
            epsilon = 1e-12
        );
    }

    #[test]
    fn gate_zero_epsilon_never_fires_with_positive_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let mut cfg = ImmConfig::default();
        cfg.gate.epsilon = 0.0;
        for _ in 0..50 {
            let mut bank = two_model_bank(&mut rng);
            let db = drift_bound(&bank, cfg.pad_variance);
            let (_, decision) = safe_output(&mut bank, &cfg);
            if db.bound > 0.0 {
                assert!(!decision.fired);
            }
        }
    }

    #[test]
    fn gate_disabled_emits_mixture() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let mut cfg = ImmConfig::default();
        cfg.gate.enabled = false;
        let mut bank = two_model_bank(&mut rng);
        bank.weights = DVector::from_vec(vec![1.0, 0.0]);
        for _ in 0..5 {
            let (_, decision) = safe_output(&mut bank, &cfg);
            assert!(!decision.fired);
        }
    }

    #[test]
    fn gate_resets_streak_on_winner_change() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let mut bank = two_model_bank(&mut rng);
        let cfg = ImmConfig::default();
        bank.weights = DVector::from_vec(vec![1.0, 0.0]);
        let _ = safe_output(&mut bank, &cfg);
        assert_eq!(bank.streak.consecutive_pass, 1);
        bank.weights = DVector::from_vec(vec![0.0, 1.0]);
        let (_, d) = safe_output(&mut bank, &cfg);
        assert_eq!(d.streak, 1, "winner change must restart the streak");
        assert!(!d.fired);
    }

    #[test]
    fn gate_decision_tail_consistency() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..100 {
            let mut bank = two_model_bank(&mut rng);
            let (_, d) = safe_output(&mut bank, &ImmConfig::default());
            assert_relative_eq!(d.tail, 1.0 - d.winner_prob, epsilon = 1e-12);
            if d.fired {
                assert!(d.bound <= d.epsilon);
                assert!(d.actual_drift <= d.bound * (1.0 + 1e-9) + 1e-12);
            }
        }
    }

    #[test]
    fn single_model_step_matches_plain_kalman() {
        let model = MotionModel::cv(0, 0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(18);
        let est = random_estimate(&model, &mut rng);
        let mut bank = ModelBank::new(
            vec![model],
            vec![est.clone()],
            DVector::from_vec(vec![1.0]),
            DMatrix::from_vec(1, 1, vec![1.0]),
        )
        .unwrap();
        let z = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let r = DMatrix::identity(3, 3) * 0.25;
        let cfg = ImmConfig {
            likelihood: Likelihood::Gaussian,
            ..ImmConfig::default()
        };
        let step = imm_step(&mut bank, &z, &r, 0.1, &cfg).unwrap();

        let pred = kalman::predict(&est, &model, 0.1).unwrap();
        let (post, _) = kalman::update(&pred, &model, &z, &r).unwrap();
        assert_relative_eq!(bank.estimates[0].mean, post.mean, epsilon = 1e-12);
        assert_relative_eq!(bank.weights[0], 1.0, epsilon = 1e-15);
        assert_relative_eq!(step.output.mean, post.mean, epsilon = 1e-12);
    }

    #[test]
    fn long_run_weights_stay_valid_and_converge() {
        // Stationary target: the model matched to the true (quiet) dynamics
        // should accumulate weight; nothing may go non-finite.
        let models = [MotionModel::cv(0, 0.05), MotionModel::ca(1, 5.0)];
        let est0 = GaussianEstimate::new(DVector::zeros(6), DMatrix::identity(6, 6) * 10.0);
        let est1 = GaussianEstimate::new(DVector::zeros(9), DMatrix::identity(9, 9) * 10.0);
        let mut bank = ModelBank::new(
            vec![models[0], models[1]],
            vec![est0, est1],
            DVector::from_vec(vec![0.5, 0.5]),
            base_tpm(),
        )
        .unwrap();
        let cfg = ImmConfig {
            likelihood: Likelihood::Gaussian,
            ..ImmConfig::default()
        };
        let r = DMatrix::identity(3, 3) * 0.01;
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        for _ in 0..10_000 {
            let z = DVector::from_fn(3, |_, _| rng.random_range(-0.1..0.1));
            let step = imm_step(&mut bank, &z, &r, 0.1, &cfg).unwrap();
            assert!(step.output.mean.iter().all(|x| x.is_finite()));
            assert!(bank.weights.iter().all(|w| w.is_finite() && *w >= 0.0));
            assert_relative_eq!(bank.weights.sum(), 1.0, epsilon = 1e-9);
        }
        assert!(
            bank.weights[0] > 0.5,
            "CV should dominate a stationary run, got {}",
            bank.weights[0]
        );
    }

    #[test]
    fn predict_only_step_propagates_by_priors() {
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        let mut bank = two_model_bank(&mut rng);
        let expected = model_priors(&bank);
        let cfg = ImmConfig::default();
        let step = imm_predict(&mut bank, 0.1, &cfg).unwrap();
        assert_relative_eq!(bank.weights, expected, epsilon = 1e-12);
        assert!(step.gate.loglik_margin.is_none());
    }

    #[test]
    fn winner_invariant_under_monotone_loglik_transform() {
        let priors = DVector::from_vec(vec![0.5, 0.3, 0.2]);
        let lls = [-4.0, -2.5, -9.0];
        let (w1, _) = posterior_weights(&priors, &lls, 1e-6);
        let shifted: Vec<f64> = lls.iter().map(|l| 2.0 * l + 7.0).collect();
        let (w2, _) = posterior_weights(&priors, &shifted, 1e-6);
        let argmax =
            |v: &DVector<f64>| (0..v.len()).fold(0, |b, i| if v[i] > v[b] { i } else { b });
        assert_eq!(argmax(&w1), argmax(&w2));
    }

    #[test]
    fn canonical_space_is_largest_model() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let bank = two_model_bank(&mut rng);
        assert_eq!(bank.models[bank.canonical_space()].kind, ModelKind::Ca);
    }

    #[test]
    fn weights_stay_valid_over_fuzzed_steps() {
        // 1e5 steps with wild measurements, varying step lengths, and
        // occasional outliers: the weight vector must remain a probability
        // vector, never drifting below the floor or above one.
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let cfg = ImmConfig::default();
        let mut bank = {
            let models = vec![MotionModel::cv(0, 0.5), MotionModel::ca(1, 0.2)];
            let est0 = GaussianEstimate::new(DVector::zeros(6), DMatrix::identity(6, 6) * 10.0);
            let est1 = GaussianEstimate::new(DVector::zeros(9), DMatrix::identity(9, 9) * 10.0);
            ModelBank::new(
                models,
                vec![est0, est1],
                DVector::from_vec(vec![0.5, 0.5]),
                base_tpm(),
            )
            .unwrap()
        };
        for k in 0..100_000 {
            let scale = if k % 37 == 0 { 1000.0 } else { 5.0 };
            let z = DVector::from_fn(3, |_, _| rng.random_range(-scale..scale));
            let r = random_pd(3, &mut rng) + DMatrix::identity(3, 3) * 0.01;
            let dt = rng.random_range(0.01..1.0);
            imm_step(&mut bank, &z, &r, dt, &cfg).unwrap();
            let sum = bank.weights.sum();
            assert!((sum - 1.0).abs() <= 1e-9, "weight sum {sum} at step {k}");
            for w in bank.weights.iter() {
                assert!(
                    *w >= cfg.weight_floor * 0.5 && *w <= 1.0,
                    "weight {w} out of range at step {k}"
                );
            }
        }
    }

    #[test]
    fn scaled_drift_bound_homogeneous_and_sound() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        for _ in 0..300 {
            let bank = two_model_bank(&mut rng);
            let plain = drift_bound(&bank, 25.0);
            // Uniform scaling c multiplies both the bound and the drift.
            let c = rng.random_range(0.1..5.0);
            let uniform = vec![c; 9];
            let scaled = drift_bound_scaled(&bank, 25.0, Some(&uniform));
            assert_relative_eq!(scaled.bound, c * plain.bound, max_relative = 1e-9);
            assert_relative_eq!(
                scaled.actual_drift,
                c * plain.actual_drift,
                max_relative = 1e-9
            );

            // A non-uniform (position-dominant) scale still bounds the
            // rescaled drift.
            let mixed = vec![1.0, 1.0, 1.0, 0.1, 0.1, 0.1, 0.01, 0.01, 0.01];
            let db = drift_bound_scaled(&bank, 25.0, Some(&mixed));
            assert!(db.actual_drift <= db.bound * (1.0 + 1e-9) + 1e-12);
        }
    }
}
