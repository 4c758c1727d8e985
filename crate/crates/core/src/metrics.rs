//! RMSE and OSPA evaluation of tracker output against ground truth.

use nalgebra::{DMatrix, Vector3};
use serde::{Deserialize, Serialize};

use crate::association::solve_assignment;

/// Evaluation parameters.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EvalConfig {
    /// OSPA cutoff c (meters).
    pub ospa_cutoff: f64,
    /// OSPA order p.
    pub ospa_order: f64,
    /// Radius (m) within which a confirmed track may latch onto a truth
    /// target for RMSE scoring.
    pub match_radius: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            ospa_cutoff: 2.0,
            ospa_order: 1.0,
            match_radius: 2.0,
        }
    }
}

/// OSPA distance decomposed into localization and cardinality parts;
/// for order p = 1, `total = loc + card`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct OspaResult {
    pub total: f64,
    pub loc: f64,
    pub card: f64,
}

/// Standard OSPA between two point sets with cutoff `c` and order `p`.
///
/// With `m = |x| <= n = |y|`:
/// `total^p = (1/n) (min over assignments sum d_c^p + c^p (n - m))`,
/// the optimal sub-assignment solved exactly. Both sets empty gives zero.
pub fn ospa(x: &[Vector3<f64>], y: &[Vector3<f64>], c: f64, p: f64) -> OspaResult {
    assert!(c > 0.0, "cutoff must be positive");
    assert!(p >= 1.0, "order must be at least one");
    // Orient deterministically (lexicographic tie-break for equal sizes) so
    // symmetry holds bitwise, not just up to rounding.
    let swap = match x.len().cmp(&y.len()) {
        std::cmp::Ordering::Less => false,
        std::cmp::Ordering::Greater => true,
        std::cmp::Ordering::Equal => {
            let xf = x.iter().flat_map(|v| v.iter().copied());
            let yf = y.iter().flat_map(|v| v.iter().copied());
            xf.partial_cmp(yf) == Some(std::cmp::Ordering::Greater)
        }
    };
    let (small, large) = if swap { (y, x) } else { (x, y) };
    let (m, n) = (small.len(), large.len());
    if n == 0 {
        return OspaResult::default();
    }
    if m == 0 {
        return OspaResult {
            total: c,
            loc: 0.0,
            card: c,
        };
    }

    let cost = DMatrix::from_fn(m, n, |i, j| (small[i] - large[j]).norm().min(c).powf(p));
    let assignment = solve_assignment(&cost);
    debug_assert_eq!(assignment.pairs.len(), m);
    let loc_sum = assignment.total_cost;
    let card_sum = c.powf(p) * (n - m) as f64;
    let inv = 1.0 / p;
    OspaResult {
        total: ((loc_sum + card_sum) / n as f64).powf(inv),
        loc: (loc_sum / n as f64).powf(inv),
        card: (card_sum / n as f64).powf(inv),
    }
}

/// Per-axis RMSE over frames where the estimate is present; gap frames are
/// excluded from the average and counted.
#[derive(Debug, Clone, Copy, Default)]
pub struct AxisRmse {
    pub rmse: f64,
    pub matched_frames: usize,
    pub gap_frames: usize,
}

pub fn rmse_axis(truth: &[Vector3<f64>], est: &[Option<Vector3<f64>>], axis: usize) -> AxisRmse {
    assert_eq!(truth.len(), est.len(), "time bases must align");
    assert!(axis < 3);
    let mut sum_sq = 0.0;
    let mut matched = 0usize;
    let mut gaps = 0usize;
    for (t, e) in truth.iter().zip(est) {
        match e {
            Some(e) => {
                let d = e[axis] - t[axis];
                sum_sq += d * d;
                matched += 1;
            }
            None => gaps += 1,
        }
    }
    AxisRmse {
        rmse: if matched > 0 {
            (sum_sq / matched as f64).sqrt()
        } else {
            f64::NAN
        },
        matched_frames: matched,
        gap_frames: gaps,
    }
}

/// Scores for one truth target.
#[derive(Debug, Clone)]
pub struct TargetMetrics {
    pub target: usize,
    /// Track that latched onto this target at first confirmation, if any.
    pub locked_track: Option<u64>,
    /// Per-axis position RMSE against the locked track.
    pub rmse: [AxisRmse; 3],
    /// Per-target OSPA: localization of this target against its locked
    /// track (cutoff-clamped, missing frames count the cutoff), combined
    /// with the run-level cardinality term.
    pub ospa: OspaResult,
}

/// Scores for one full tracking run.
#[derive(Debug, Clone)]
pub struct RunMetrics {
    pub per_target: Vec<TargetMetrics>,
    /// Frame-averaged OSPA between the full truth and estimate sets.
    pub ospa: OspaResult,
    pub frames: usize,
}

impl RunMetrics {
    /// Largest per-axis x/y RMSE over all targets.
    pub fn worst_xy_rmse(&self) -> f64 {
        self.per_target
            .iter()
            .flat_map(|t| [t.rmse[0].rmse, t.rmse[1].rmse])
            .fold(f64::NAN, f64::max)
    }
}

/// Matches confirmed track outputs to truth targets and scores the run.
///
/// `truth[frame][target]` are ground-truth positions; `outputs[frame]` are
/// `(track id, position)` pairs of confirmed tracks. Each target locks onto
/// the nearest confirmed track within `match_radius` at the first frame one
/// exists, and keeps that identity for the rest of the run, so identity
/// switches surface as gaps and errors rather than silent re-matches.
pub fn evaluate_run(
    truth: &[Vec<Vector3<f64>>],
    outputs: &[Vec<(u64, Vector3<f64>)>],
    cfg: &EvalConfig,
) -> RunMetrics {
    assert_eq!(truth.len(), outputs.len(), "time bases must align");
    let frames = truth.len();
    let targets = truth.first().map_or(0, |f| f.len());
    let (c, p) = (cfg.ospa_cutoff, cfg.ospa_order);

    // Frame-averaged set OSPA.
    let mut ospa_acc = OspaResult::default();
    for (truth_frame, out_frame) in truth.iter().zip(outputs) {
        let est: Vec<Vector3<f64>> = out_frame.iter().map(|(_, p)| *p).collect();
        let r = ospa(truth_frame, &est, c, p);
        ospa_acc.total += r.total;
        ospa_acc.loc += r.loc;
        ospa_acc.card += r.card;
    }
    if frames > 0 {
        ospa_acc.total /= frames as f64;
        ospa_acc.loc /= frames as f64;
        ospa_acc.card /= frames as f64;
    }

    let mut per_target = Vec::with_capacity(targets);
    for target in 0..targets {
        // Lock to the nearest confirmed track at first opportunity.
        let mut locked: Option<u64> = None;
        for (truth_frame, out_frame) in truth.iter().zip(outputs) {
            let mut best: Option<(f64, u64)> = None;
            for (id, pos) in out_frame {
                let d = (pos - truth_frame[target]).norm();
                if d <= cfg.match_radius && best.map_or(true, |(bd, _)| d < bd) {
                    best = Some((d, *id));
                }
            }
            if let Some((_, id)) = best {
                locked = Some(id);
                break;
            }
        }

        let series: Vec<Option<Vector3<f64>>> = outputs
            .iter()
            .map(|frame| {
                locked.and_then(|id| {
                    frame
                        .iter()
                        .find(|(tid, _)| *tid == id)
                        .map(|(_, pos)| *pos)
                })
            })
            .collect();
        let truth_series: Vec<Vector3<f64>> = truth.iter().map(|frame| frame[target]).collect();
        let rmse = [
            rmse_axis(&truth_series, &series, 0),
            rmse_axis(&truth_series, &series, 1),
            rmse_axis(&truth_series, &series, 2),
        ];

        // Per-target localization: cutoff-clamped distance to the locked
        // track, a full cutoff on frames without it; cardinality is the
        // run-level set term.
        let mut loc_acc = 0.0;
        for (truth_pos, est) in truth_series.iter().zip(&series) {
            loc_acc += match est {
                Some(e) => (e - truth_pos).norm().min(c),
                None => c,
            };
        }
        let loc = if frames > 0 {
            loc_acc / frames as f64
        } else {
            0.0
        };
        let ospa = OspaResult {
            total: loc + ospa_acc.card,
            loc,
            card: ospa_acc.card,
        };

        per_target.push(TargetMetrics {
            target,
            locked_track: locked,
            rmse,
            ospa,
        });
    }

    RunMetrics {
        per_target,
        ospa: ospa_acc,
        frames,
    }
}
