//! Online transition-matrix corrections.
//!
//! Instead of a fixed TPM the filter can blend the base matrix toward a
//! winner-polarized one, with the blend weight driven by a windowed
//! generalized likelihood ratio and the normalized weight entropy. On top of
//! the blend sit a winner-streak self-transition bias and small boosts into
//! the maneuver (CA) or quiescent (CV) models. All corrections are applied
//! per step from the base matrix, so turning adaptation off recovers the
//! fixed-TPM behavior exactly.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::models::{ModelKind, MotionModel};

/// Minimum transition probability retained after renormalization.
const ENTRY_FLOOR: f64 = 1e-6;

/// Adaptation gains and the base matrix.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TpmConfig {
    /// Row-stochastic base transition matrix.
    pub pi_base: DMatrix<f64>,
    /// Upper bound on the blend weight toward the polarized matrix.
    pub alpha_max: f64,
    /// Gain on the GLR statistic in the blend weight.
    pub g_glr: f64,
    /// Gain on the normalized weight entropy in the blend weight.
    pub g_ent: f64,
    /// Added to the winner's self-transition once its streak reaches two.
    pub winner_bias: f64,
    /// Added to every transition into CA models on maneuver evidence.
    pub ca_boost: f64,
    /// Added to every transition into CV models on sustained quiescence.
    pub cv_boost: f64,
    /// Cap on off-diagonal transition probabilities.
    pub cap: f64,
    /// GLR window length (history entries retained).
    pub window: usize,
    /// Master switch; disabled returns `pi_base` untouched.
    pub enabled: bool,
}

impl TpmConfig {
    /// The benchmark base matrix for a CV+CA bank.
    pub fn base_two_model() -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[0.992, 0.008, 0.015, 0.985])
    }
}

impl Default for TpmConfig {
    fn default() -> Self {
        Self {
            pi_base: Self::base_two_model(),
            alpha_max: 0.7,
            g_glr: 0.10,
            g_ent: 0.50,
            winner_bias: 0.10,
            ca_boost: 0.15,
            cv_boost: 0.05,
            cap: 0.5,
            window: 5,
            enabled: true,
        }
    }
}

/// Per-track rolling history feeding the GLR and streak signals.
#[derive(Debug, Clone, Default)]
pub struct AdaptState {
    loglik_history: VecDeque<Vec<f64>>,
    winner_history: VecDeque<usize>,
}

impl AdaptState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records one step's per-model log-likelihoods and winner, keeping at
    /// most `window` entries.
    pub fn push(&mut self, logliks: &[f64], winner: usize, window: usize) {
        self.loglik_history.push_back(logliks.to_vec());
        self.winner_history.push_back(winner);
        while self.loglik_history.len() > window {
            self.loglik_history.pop_front();
        }
        while self.winner_history.len() > window {
            self.winner_history.pop_front();
        }
    }

    pub fn len(&self) -> usize {
        self.loglik_history.len()
    }

    pub fn is_empty(&self) -> bool {
        self.loglik_history.is_empty()
    }

    /// Length of the trailing run of the most recent winner.
    fn winner_streak(&self) -> usize {
        let Some(&last) = self.winner_history.back() else {
            return 0;
        };
        self.winner_history
            .iter()
            .rev()
            .take_while(|w| **w == last)
            .count()
    }

    fn incumbent(&self) -> Option<usize> {
        self.winner_history.back().copied()
    }
}

/// Windowed rival-advantage sum: for each history entry, the margin by which
/// the best-fitting model beats the incumbent winner, when they differ.
/// Zero when the incumbent dominated the entire window.
pub fn glr_statistic(state: &AdaptState) -> f64 {
    let Some(incumbent) = state.incumbent() else {
        return 0.0;
    };
    let mut total = 0.0;
    for lls in &state.loglik_history {
        let mut best = 0;
        for (i, ll) in lls.iter().enumerate() {
            if *ll > lls[best] {
                best = i;
            }
        }
        if best != incumbent {
            let adv = lls[best] - lls[incumbent];
            if adv > 0.0 {
                total += adv;
            }
        }
    }
    total
}

/// Shannon entropy of the weight vector normalized to `[0, 1]` by `ln M`,
/// with `0 ln 0 := 0`.
pub fn weight_entropy(w: &DVector<f64>) -> f64 {
    let m = w.len();
    if m <= 1 {
        return 0.0;
    }
    let mut h = 0.0;
    for wi in w.iter() {
        if *wi > 0.0 {
            h -= wi * wi.ln();
        }
    }
    h / (m as f64).ln()
}

/// Blend weight toward the polarized matrix: `min(alpha_max, g_glr * GLR +
/// g_ent * entropy)`.
pub fn blend_alpha(cfg: &TpmConfig, glr: f64, entropy: f64) -> f64 {
    (cfg.g_glr * glr + cfg.g_ent * entropy).min(cfg.alpha_max)
}

/// One adapted transition matrix for the current step.
///
/// Blends `pi_base` toward a winner-polarized matrix by `alpha`, applies the
/// winner-streak self-transition bias, boosts transitions into CA on maneuver
/// evidence (positive GLR) or into CV after a full quiet window, clamps
/// off-diagonals to the cap, and renormalizes rows with a strictly positive
/// entry floor. With no active signal the base matrix is returned unchanged.
pub fn adapt_tpm(
    cfg: &TpmConfig,
    state: &AdaptState,
    w: &DVector<f64>,
    models: &[MotionModel],
) -> DMatrix<f64> {
    let m = w.len();
    if !cfg.enabled || m < 2 {
        return cfg.pi_base.clone();
    }
    debug_assert_eq!(cfg.pi_base.nrows(), m);

    let mut winner = 0;
    for i in 1..m {
        if w[i] > w[winner] {
            winner = i;
        }
    }

    let glr = glr_statistic(state);
    let entropy = weight_entropy(w);
    let alpha = blend_alpha(cfg, glr, entropy);

    let apply_bias = cfg.winner_bias > 0.0 && state.winner_streak() >= 2;
    let maneuver = glr > 0.0;
    let quiescent = glr == 0.0 && state.len() >= cfg.window;
    let apply_boost = (maneuver && cfg.ca_boost > 0.0) || (quiescent && cfg.cv_boost > 0.0);

    if alpha <= 0.0 && !apply_bias && !apply_boost {
        return cfg.pi_base.clone();
    }

    // Polarized target: every row concentrates 1 - cap on the winner column.
    let off = cfg.cap / (m - 1) as f64;
    let mut pi = DMatrix::zeros(m, m);
    for r in 0..m {
        for c in 0..m {
            let polar = if c == winner { 1.0 - cfg.cap } else { off };
            pi[(r, c)] = (1.0 - alpha) * cfg.pi_base[(r, c)] + alpha * polar;
        }
    }

    if apply_bias {
        pi[(winner, winner)] += cfg.winner_bias;
    }
    if maneuver {
        for c in 0..m {
            if models[c].kind == ModelKind::Ca {
                for r in 0..m {
                    pi[(r, c)] += cfg.ca_boost;
                }
            }
        }
    } else if quiescent {
        for c in 0..m {
            if models[c].kind == ModelKind::Cv {
                for r in 0..m {
                    pi[(r, c)] += cfg.cv_boost;
                }
            }
        }
    }

    for r in 0..m {
        for c in 0..m {
            if r != c && pi[(r, c)] > cfg.cap {
                pi[(r, c)] = cfg.cap;
            }
        }
        normalize_row_floored(&mut pi, r);
    }
    pi
}

/// Scales a row to sum one, then lifts any entry below the floor to the
/// floor, paying the deficit out of the row's largest entry so the row stays
/// exactly stochastic.
fn normalize_row_floored(pi: &mut DMatrix<f64>, r: usize) {
    let m = pi.ncols();
    let sum: f64 = (0..m).map(|c| pi[(r, c)]).sum();
    for c in 0..m {
        pi[(r, c)] /= sum;
    }
    let mut argmax = 0;
    for c in 1..m {
        if pi[(r, c)] > pi[(r, argmax)] {
            argmax = c;
        }
    }
    for c in 0..m {
        if c != argmax && pi[(r, c)] < ENTRY_FLOOR {
            let deficit = ENTRY_FLOOR - pi[(r, c)];
            pi[(r, c)] = ENTRY_FLOOR;
            pi[(r, argmax)] -= deficit;
        }
    }
}
