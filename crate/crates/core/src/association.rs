//! Global-nearest-neighbor multi-object tracking: gated assignment costs, an
//! optimal rectangular assignment solver, and track lifecycle management
//! (initiation, M-of-N confirmation, consecutive-miss deletion).

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::imm::{imm_predict, imm_step, GateDecision, ImmConfig, ModelBank};
use crate::kalman::GaussianEstimate;
use crate::linalg::cholesky_guarded;
use crate::models::{ModelKind, MotionModel, MEAS_DIM};

/// Cost assigned to leaving a row or column unmatched inside the solver.
/// Any permitted pair is cheaper than two rejections, so cardinality is
/// maximized first and cost minimized second.
const REJECT_COST: f64 = 1e6;

/// Distance powering the assignment cost and gate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostMetric {
    /// Squared Mahalanobis distance `v^T S^-1 v` against the top-weight
    /// model's innovation covariance.
    Mahalanobis,
    /// Squared Euclidean distance in meters^2 against the predicted
    /// measurement.
    Euclidean,
}

/// GNN association and lifecycle parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AssociationConfig {
    /// Gate on the assignment cost; costs at or above it are forbidden.
    pub assign_threshold: f64,
    /// Cost/gate distance form.
    pub cost_metric: CostMetric,
    /// Extra per-axis variance (m^2) added to the gating covariance for
    /// measurement-prediction error the filter's model does not carry,
    /// e.g. scenario velocity jitter folded into the observed positions.
    /// Applies to the Mahalanobis metric only.
    pub gate_variance_inflation: f64,
    /// Hits required among the last `confirm_n` updates to confirm.
    pub confirm_m: usize,
    /// Length of the confirmation window.
    pub confirm_n: usize,
    /// Consecutive misses after which a track is deleted.
    pub delete_after_misses: usize,
    /// Initial velocity variance, (m/s)^2, for spawned tracks.
    pub new_track_velocity_var: f64,
    /// Search radius (m) pairing a new detection with a previous unassigned
    /// one for two-point velocity initialization.
    pub init_pair_radius: f64,
    /// Initial model weights for spawned tracks.
    pub initial_weights: Vec<f64>,
}

impl Default for AssociationConfig {
    fn default() -> Self {
        Self {
            assign_threshold: 30.0,
            cost_metric: CostMetric::Mahalanobis,
            gate_variance_inflation: 0.0,
            confirm_m: 2,
            confirm_n: 5,
            delete_after_misses: 5,
            new_track_velocity_var: 100.0,
            init_pair_radius: 10.0,
            initial_weights: vec![0.9, 0.1],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TrackStatus {
    Tentative,
    Confirmed,
    Deleted,
}

/// One tracked object: its filter bank plus lifecycle bookkeeping.
#[derive(Debug, Clone)]
pub struct Track {
    pub id: u64,
    pub bank: ModelBank,
    pub status: TrackStatus,
    /// Hit/miss record of the last `confirm_n` steps after birth.
    pub history: VecDeque<bool>,
    /// Steps since creation.
    pub age: usize,
    pub misses_in_row: usize,
}

impl Track {
    fn hits_in_window(&self) -> usize {
        self.history.iter().filter(|h| **h).count()
    }
}

/// Result of one assignment solve.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    /// Matched (row, column) pairs.
    pub pairs: Vec<(usize, usize)>,
    pub unassigned_rows: Vec<usize>,
    pub unassigned_cols: Vec<usize>,
    /// Total cost over the matched pairs.
    pub total_cost: f64,
}

/// Gated assignment costs: entry `(t, d)` is the squared distance (per the
/// configured metric) of detection `d` against track `t`'s predicted
/// measurement; the Mahalanobis form uses the innovation covariance of the
/// track's highest-weight model. Entries at or above `threshold` are
/// forbidden (`+inf`).
///
/// Tracks must already be predicted to the detection timestamp.
pub fn cost_matrix(
    tracks: &[Track],
    detections: &[Vector3<f64>],
    r: &DMatrix<f64>,
    threshold: f64,
    metric: CostMetric,
    gate_variance_inflation: f64,
) -> DMatrix<f64> {
    let mut cost = DMatrix::from_element(tracks.len(), detections.len(), f64::INFINITY);
    for (ti, track) in tracks.iter().enumerate() {
        let top = track.bank.winner();
        let est = &track.bank.estimates[top];
        let predicted_z = est.mean.rows(0, MEAS_DIM);
        let chol = match metric {
            CostMetric::Mahalanobis => {
                let mut s = est.cov.view((0, 0), (MEAS_DIM, MEAS_DIM)).into_owned() + r;
                for k in 0..MEAS_DIM {
                    s[(k, k)] += gate_variance_inflation;
                }
                match cholesky_guarded(&s) {
                    Ok(c) => Some(c),
                    Err(_) => continue,
                }
            }
            CostMetric::Euclidean => None,
        };
        for (di, z) in detections.iter().enumerate() {
            let v = DVector::from_iterator(MEAS_DIM, (0..MEAS_DIM).map(|k| z[k] - predicted_z[k]));
            let d2 = match &chol {
                Some(chol) => v.dot(&chol.solve(&v)),
                None => v.norm_squared(),
            };
            if d2 < threshold {
                cost[(ti, di)] = d2;
            }
        }
    }
    cost
}

/// Minimum-cost one-to-one assignment over the permitted (finite) entries of
/// a rectangular cost matrix, maximizing cardinality first.
///
/// The permitted-edge bipartite graph is split into connected components
/// (the optimum decomposes exactly across them, and gated tracking scenes
/// are mostly singletons), and each component is solved with a
/// shortest-augmenting-path Hungarian method on a square extension in which
/// every row and column also owns a rejection slot.
pub fn solve_assignment(cost: &DMatrix<f64>) -> Assignment {
    let rows = cost.nrows();
    let cols = cost.ncols();

    // Union-find over rows (0..rows) and columns (rows..rows+cols).
    let mut parent: Vec<usize> = (0..rows + cols).collect();
    fn find(parent: &mut [usize], x: usize) -> usize {
        let mut root = x;
        while parent[root] != root {
            root = parent[root];
        }
        let mut cur = x;
        while parent[cur] != root {
            let next = parent[cur];
            parent[cur] = root;
            cur = next;
        }
        root
    }
    let mut isolated_row = vec![true; rows];
    let mut isolated_col = vec![true; cols];
    for i in 0..rows {
        for j in 0..cols {
            if cost[(i, j)].is_finite() {
                isolated_row[i] = false;
                isolated_col[j] = false;
                let (a, b) = (find(&mut parent, i), find(&mut parent, rows + j));
                if a != b {
                    parent[a] = b;
                }
            }
        }
    }

    let mut result = Assignment {
        pairs: Vec::new(),
        unassigned_rows: (0..rows).filter(|i| isolated_row[*i]).collect(),
        unassigned_cols: (0..cols).filter(|j| isolated_col[*j]).collect(),
        total_cost: 0.0,
    };

    // Group the connected rows/cols per component root; ordered keys keep
    // the floating-point summation order, and with it the output bytes,
    // reproducible.
    let mut components: std::collections::BTreeMap<usize, (Vec<usize>, Vec<usize>)> =
        std::collections::BTreeMap::new();
    for i in 0..rows {
        if !isolated_row[i] {
            let root = find(&mut parent, i);
            components.entry(root).or_default().0.push(i);
        }
    }
    for j in 0..cols {
        if !isolated_col[j] {
            let root = find(&mut parent, rows + j);
            components.entry(root).or_default().1.push(j);
        }
    }

    for (comp_rows, comp_cols) in components.into_values() {
        let sub = DMatrix::from_fn(comp_rows.len(), comp_cols.len(), |i, j| {
            cost[(comp_rows[i], comp_cols[j])]
        });
        let local = solve_component(&sub);
        for (i, j) in local.pairs {
            result.pairs.push((comp_rows[i], comp_cols[j]));
        }
        for i in local.unassigned_rows {
            result.unassigned_rows.push(comp_rows[i]);
        }
        for j in local.unassigned_cols {
            result.unassigned_cols.push(comp_cols[j]);
        }
        result.total_cost += local.total_cost;
    }

    result.pairs.sort_unstable();
    result.unassigned_rows.sort_unstable();
    result.unassigned_cols.sort_unstable();
    result
}

fn solve_component(cost: &DMatrix<f64>) -> Assignment {
    let rows = cost.nrows();
    let cols = cost.ncols();
    let n = rows + cols;
    if n == 0 {
        return Assignment {
            pairs: Vec::new(),
            unassigned_rows: Vec::new(),
            unassigned_cols: Vec::new(),
            total_cost: 0.0,
        };
    }

    // Square extension: real rows/cols, then a rejection slot per row and
    // per column; dummy-dummy pairs are free.
    let mut a = DMatrix::from_element(n, n, f64::INFINITY);
    for i in 0..rows {
        for j in 0..cols {
            a[(i, j)] = cost[(i, j)];
        }
        a[(i, cols + i)] = REJECT_COST;
    }
    for j in 0..cols {
        a[(rows + j, j)] = REJECT_COST;
    }
    for i in 0..cols {
        for j in 0..rows {
            a[(rows + i, cols + j)] = 0.0;
        }
    }

    let row_of_col = hungarian_square(&a);

    let mut pairs = Vec::new();
    let mut total = 0.0;
    let mut row_used = vec![false; rows];
    let mut col_used = vec![false; cols];
    for (j, &i) in row_of_col.iter().enumerate() {
        if i < rows && j < cols {
            pairs.push((i, j));
            total += cost[(i, j)];
            row_used[i] = true;
            col_used[j] = true;
        }
    }
    pairs.sort_unstable();
    Assignment {
        pairs,
        unassigned_rows: (0..rows).filter(|i| !row_used[*i]).collect(),
        unassigned_cols: (0..cols).filter(|j| !col_used[*j]).collect(),
        total_cost: total,
    }
}

/// Exact Hungarian method (Jonker-Volgenant style shortest augmenting paths
/// with dual potentials) on a square matrix that is guaranteed to admit a
/// finite perfect matching. Returns, per column, the matched row.
fn hungarian_square(a: &DMatrix<f64>) -> Vec<usize> {
    let n = a.nrows();
    const NONE: usize = usize::MAX;
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    // p[j] = row matched to column j; column n is the virtual start column.
    let mut p = vec![NONE; n + 1];
    let mut way = vec![0usize; n + 1];

    for i in 0..n {
        p[n] = i;
        let mut j0 = n;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = NONE;
            for j in 0..n {
                if !used[j] {
                    let cur = a[(i0, j)] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            debug_assert!(delta.is_finite(), "no finite augmenting edge");
            for j in 0..=n {
                if used[j] {
                    if p[j] != NONE {
                        u[p[j]] += delta;
                    }
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == NONE {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == n {
                break;
            }
        }
    }
    p.truncate(n);
    p
}

/// Per-step output for one confirmed track.
#[derive(Debug, Clone)]
pub struct TrackOutput {
    pub id: u64,
    /// Gated estimate in the canonical (largest) model space.
    pub estimate: GaussianEstimate,
    pub gate: GateDecision,
    /// Whether a detection was associated this step.
    pub assigned: bool,
}

/// Everything needed to build and step tracks.
#[derive(Debug, Clone)]
pub struct TrackerConfig {
    /// Model set instantiated for every new track.
    pub models: Vec<MotionModel>,
    pub imm: ImmConfig,
    pub assoc: AssociationConfig,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            models: vec![MotionModel::cv(0, 0.5), MotionModel::ca(1, 0.2)],
            imm: ImmConfig::default(),
            assoc: AssociationConfig::default(),
        }
    }
}

/// The GNN tracker: owns the track list and runs the per-frame cycle of
/// predict, gate, assign, update, and lifecycle maintenance.
#[derive(Debug, Clone)]
pub struct GnnTracker {
    cfg: TrackerConfig,
    tracks: Vec<Track>,
    next_id: u64,
    /// Unassigned detections of the previous frame, for two-point
    /// velocity initialization.
    prev_unassigned: Vec<Vector3<f64>>,
    deleted: u64,
}

impl GnnTracker {
    pub fn new(cfg: TrackerConfig) -> Self {
        assert_eq!(
            cfg.assoc.initial_weights.len(),
            cfg.models.len(),
            "initial weights must match the model set"
        );
        Self {
            cfg,
            tracks: Vec::new(),
            next_id: 0,
            prev_unassigned: Vec::new(),
            deleted: 0,
        }
    }

    pub fn tracks(&self) -> &[Track] {
        &self.tracks
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.cfg
    }

    pub fn deleted_count(&self) -> u64 {
        self.deleted
    }

    /// Advances every track by one frame against the detection set and
    /// returns the gated outputs of the confirmed tracks.
    ///
    /// Assigned tracks run a full filter step from their pre-predict state;
    /// unassigned tracks coast on the predicted bank and record a miss;
    /// unassigned detections spawn tentative tracks.
    pub fn step(
        &mut self,
        detections: &[Vector3<f64>],
        r: &DMatrix<f64>,
        dt: f64,
    ) -> Result<Vec<TrackOutput>> {
        // Predicted copies drive gating and become the coasted state.
        let mut predicted = self.tracks.clone();
        let mut predicted_steps = Vec::with_capacity(predicted.len());
        for track in &mut predicted {
            predicted_steps.push(imm_predict(&mut track.bank, dt, &self.cfg.imm)?);
        }

        let cost = cost_matrix(
            &predicted,
            detections,
            r,
            self.cfg.assoc.assign_threshold,
            self.cfg.assoc.cost_metric,
            self.cfg.assoc.gate_variance_inflation,
        );
        let assignment = solve_assignment(&cost);

        let mut results: Vec<Option<(GaussianEstimate, GateDecision, bool)>> =
            vec![None; self.tracks.len()];
        let mut hit = vec![false; self.tracks.len()];
        for &(ti, di) in &assignment.pairs {
            hit[ti] = true;
            let z = DVector::from_column_slice(detections[di].as_slice());
            let step = imm_step(&mut self.tracks[ti].bank, &z, r, dt, &self.cfg.imm)?;
            let track = &mut self.tracks[ti];
            track.history.push_back(true);
            track.misses_in_row = 0;
            results[ti] = Some((step.output, step.gate, true));
        }

        for ti in 0..self.tracks.len() {
            if hit[ti] {
                continue;
            }
            // Commit the coasted (predict-only) bank.
            self.tracks[ti].bank = predicted[ti].bank.clone();
            let track = &mut self.tracks[ti];
            track.history.push_back(false);
            track.misses_in_row += 1;
            let step = &predicted_steps[ti];
            results[ti] = Some((step.output.clone(), step.gate.clone(), false));
        }

        // Lifecycle: trim windows, confirm, delete.
        let assoc = &self.cfg.assoc;
        for track in &mut self.tracks {
            while track.history.len() > assoc.confirm_n {
                track.history.pop_front();
            }
            track.age += 1;
            if track.status == TrackStatus::Tentative && track.hits_in_window() >= assoc.confirm_m {
                track.status = TrackStatus::Confirmed;
            }
            if track.misses_in_row >= assoc.delete_after_misses {
                track.status = TrackStatus::Deleted;
            }
        }

        // Outputs of the tracks confirmed as of this step's end.
        let mut outputs = Vec::new();
        for (track, result) in self.tracks.iter().zip(results) {
            if track.status == TrackStatus::Confirmed {
                let (estimate, gate, assigned) =
                    result.expect("every live track produced a step result");
                outputs.push(TrackOutput {
                    id: track.id,
                    estimate,
                    gate,
                    assigned,
                });
            }
        }
        let before = self.tracks.len();
        self.tracks.retain(|t| t.status != TrackStatus::Deleted);
        self.deleted += (before - self.tracks.len()) as u64;

        // Spawn tentative tracks from unassigned detections.
        let mut new_unassigned = Vec::new();
        for &di in &assignment.unassigned_cols {
            let z = detections[di];
            new_unassigned.push(z);
            let velocity = self.two_point_velocity(&z, dt);
            let bank = self.new_bank(&z, velocity, r);
            self.tracks.push(Track {
                id: self.next_id,
                bank,
                status: TrackStatus::Tentative,
                history: VecDeque::new(),
                age: 0,
                misses_in_row: 0,
            });
            self.next_id += 1;
        }
        self.prev_unassigned = new_unassigned;

        outputs.sort_by_key(|o| o.id);
        Ok(outputs)
    }

    /// Velocity from differencing against the nearest unassigned detection
    /// of the previous frame, when one lies within the pairing radius.
    fn two_point_velocity(&self, z: &Vector3<f64>, dt: f64) -> Vector3<f64> {
        let mut best: Option<(f64, &Vector3<f64>)> = None;
        for prev in &self.prev_unassigned {
            let d = (z - prev).norm();
            if d <= self.cfg.assoc.init_pair_radius && best.map_or(true, |(bd, _)| d < bd) {
                best = Some((d, prev));
            }
        }
        match best {
            Some((_, prev)) => (z - prev) / dt,
            None => Vector3::zeros(),
        }
    }

    fn new_bank(&self, z: &Vector3<f64>, velocity: Vector3<f64>, r: &DMatrix<f64>) -> ModelBank {
        let models = self.cfg.models.clone();
        let m = models.len();
        let mut estimates = Vec::with_capacity(m);
        for model in &models {
            let n = model.state_dim();
            let mut mean = DVector::zeros(n);
            let mut cov = DMatrix::zeros(n, n);
            for k in 0..3 {
                mean[k] = z[k];
                mean[3 + k] = velocity[k];
                cov[(k, k)] = r[(k, k)];
                cov[(3 + k, 3 + k)] = self.cfg.assoc.new_track_velocity_var;
            }
            if model.kind == ModelKind::Ca {
                for k in 6..9 {
                    cov[(k, k)] = self.cfg.imm.pad_variance;
                }
            }
            estimates.push(GaussianEstimate::new(mean, cov));
        }
        let weights = DVector::from_vec(self.cfg.assoc.initial_weights.clone());
        let tpm = if m == 1 {
            DMatrix::from_vec(1, 1, vec![1.0])
        } else {
            self.cfg.imm.tpm.pi_base.clone()
        };
        ModelBank::new(models, estimates, weights, tpm)
            .expect("tracker configuration produced an invalid bank")
    }
}
