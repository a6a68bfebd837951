//! Parts, assembly states and pose-based state scoring.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{
    farthest_point_sampling, rotation_angle, GeometryError, PointCloud3, RigidTransform,
};
use crate::mesh::TriangleMesh;

pub type PartId = String;
pub type StateId = usize;

pub const KEYPOINT_COUNT: usize = 17;
/// Lattice spacing of the dense surface samples that FPS draws from.
pub const DENSE_SPACING: f64 = 0.004;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AssemblyError {
    #[error("invalid state graph: {0}")]
    InvalidStateGraph(String),
    #[error("unknown state id {0}")]
    UnknownState(StateId),
    #[error("base part {0} not observed")]
    BaseUnobserved(PartId),
    #[error("distribution length {got} does not match {expected} states")]
    LengthMismatch { expected: usize, got: usize },
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("invalid detection config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartModel {
    pub part_id: PartId,
    pub mesh: TriangleMesh,
    /// FPS-sampled surface points, model frame.
    pub surface_points: PointCloud3,
    pub keypoints_3d: PointCloud3,
    pub symmetric: bool,
    /// Model-frame rotations mapping the part onto itself; identity is implied.
    pub symmetries: Vec<Matrix3<f64>>,
}

impl PartModel {
    /// Samples the mesh densely, then draws `surface_count` points by FPS.
    /// The keypoints are the first 17 of those, which is exactly FPS(17).
    pub fn from_mesh(
        part_id: impl Into<PartId>,
        mesh: TriangleMesh,
        surface_count: usize,
        symmetries: Vec<Matrix3<f64>>,
    ) -> Result<Self, AssemblyError> {
        let dense = mesh.sample_surface(DENSE_SPACING);
        let count = surface_count.max(KEYPOINT_COUNT);
        let picks = farthest_point_sampling(&dense, count.min(dense.len()))?;
        if picks.len() < KEYPOINT_COUNT {
            return Err(GeometryError::TooFewPoints {
                requested: KEYPOINT_COUNT,
                available: picks.len(),
            }
            .into());
        }
        let surface: Vec<_> = picks.iter().map(|&i| dense[i]).collect();
        Ok(Self {
            part_id: part_id.into(),
            mesh,
            keypoints_3d: PointCloud3::model(surface[..KEYPOINT_COUNT].to_vec()),
            surface_points: PointCloud3::model(surface),
            symmetric: !symmetries.is_empty(),
            symmetries,
        })
    }

    /// Rotation residual in degrees, minimized over the symmetry group.
    pub fn rotation_residual_deg(&self, expected: &Matrix3<f64>, observed: &Matrix3<f64>) -> f64 {
        let base = rotation_angle(&(expected.transpose() * observed));
        self.symmetries
            .iter()
            .map(|s| rotation_angle(&((expected * s).transpose() * observed)))
            .fold(base, f64::min)
            .to_degrees()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssemblyState {
    pub state_id: StateId,
    pub name: String,
    pub member_parts: BTreeSet<PartId>,
    /// Expected pose of each member relative to the base part.
    pub relative_poses: BTreeMap<PartId, RigidTransform>,
    pub is_error_state: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssemblyGraph {
    assembly_id: String,
    base_part: PartId,
    parts: Vec<PartModel>,
    states: Vec<AssemblyState>,
    neighbors: Vec<Vec<StateId>>,
}

impl AssemblyGraph {
    /// Validates the graph and derives the neighbor relation: consecutive
    /// nominal states in id order are neighbors, error states have none.
    pub fn new(
        assembly_id: impl Into<String>,
        base_part: impl Into<PartId>,
        parts: Vec<PartModel>,
        states: Vec<AssemblyState>,
    ) -> Result<Self, AssemblyError> {
        let base_part = base_part.into();
        let bad = |m: String| Err(AssemblyError::InvalidStateGraph(m));
        let part_ids: BTreeSet<&PartId> = parts.iter().map(|p| &p.part_id).collect();
        if part_ids.len() != parts.len() {
            return bad("duplicate part id".into());
        }
        if !part_ids.contains(&base_part) {
            return bad(format!("base part {base_part} is not a declared part"));
        }
        if states.is_empty() {
            return bad("no states".into());
        }
        for (i, s) in states.iter().enumerate() {
            if s.state_id != i {
                return bad(format!(
                    "state ids must be dense from 0, found {} at {i}",
                    s.state_id
                ));
            }
            if !s.member_parts.contains(&base_part) {
                return bad(format!("state {i} lacks the base part"));
            }
            if let Some(p) = s.member_parts.iter().find(|p| !part_ids.contains(p)) {
                return bad(format!("state {i} names unknown part {p}"));
            }
            let keys: BTreeSet<&PartId> = s.relative_poses.keys().collect();
            if keys != s.member_parts.iter().collect() {
                return bad(format!("state {i} relative poses do not match its members"));
            }
        }
        if states[0].is_error_state {
            return bad("state 0 must be a nominal state".into());
        }
        let nominal: Vec<StateId> = states
            .iter()
            .filter(|s| !s.is_error_state)
            .map(|s| s.state_id)
            .collect();
        let mut neighbors = vec![Vec::new(); states.len()];
        for w in nominal.windows(2) {
            neighbors[w[0]].push(w[1]);
            neighbors[w[1]].push(w[0]);
        }
        for n in &mut neighbors {
            n.sort_unstable();
        }
        Ok(Self {
            assembly_id: assembly_id.into(),
            base_part,
            parts,
            states,
            neighbors,
        })
    }

    pub fn assembly_id(&self) -> &str {
        &self.assembly_id
    }

    pub fn base_part(&self) -> &PartId {
        &self.base_part
    }

    pub fn parts(&self) -> &[PartModel] {
        &self.parts
    }

    pub fn part(&self, id: &str) -> Option<&PartModel> {
        self.parts.iter().find(|p| p.part_id == id)
    }

    pub fn states(&self) -> &[AssemblyState] {
        &self.states
    }

    pub fn state_count(&self) -> usize {
        self.states.len()
    }
}

/// Neighbors of `state` in the nominal assembly sequence.
pub fn neighbor_states(state: StateId, graph: &AssemblyGraph) -> Result<&[StateId], AssemblyError> {
    graph
        .neighbors
        .get(state)
        .map(Vec::as_slice)
        .ok_or(AssemblyError::UnknownState(state))
}

/// Pose of `b` expressed in the frame of `a`.
pub fn relative_pose(a: &RigidTransform, b: &RigidTransform) -> RigidTransform {
    a.inverse().compose(b)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StateDistribution(Vec<f64>);

impl StateDistribution {
    /// Checks non-negativity and unit mass.
    pub fn new(p: Vec<f64>) -> Result<Self, AssemblyError> {
        if p.is_empty() || p.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(AssemblyError::InvalidDistribution(format!("{p:?}")));
        }
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(AssemblyError::InvalidDistribution(format!("sums to {sum}")));
        }
        Ok(Self(p))
    }

    pub fn uniform(n: usize) -> Self {
        Self(vec![1.0 / n as f64; n])
    }

    pub fn one_hot(n: usize, k: StateId) -> Self {
        let mut p = vec![0.0; n];
        p[k] = 1.0;
        Self(p)
    }

    /// Scales non-negative scores to unit mass; all-zero input yields `None`.
    pub fn normalize(scores: &[f64]) -> Option<Self> {
        if scores.is_empty() || scores.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return None;
        }
        let sum: f64 = scores.iter().sum();
        (sum > 0.0).then(|| Self(scores.iter().map(|v| v / sum).collect()))
    }

    /// Highest-probability state; ties go to the lowest id.
    pub fn argmax(&self) -> StateId {
        argmax(&self.0)
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StateDetectionConfig {
    /// Residuals beyond these gates count as a mismatch.
    pub tol_t: f64,
    pub tol_r_deg: f64,
    pub sigma_t: f64,
    pub sigma_r_deg: f64,
    pub miss_penalty: f64,
}

impl Default for StateDetectionConfig {
    fn default() -> Self {
        Self {
            tol_t: 0.03,
            tol_r_deg: 15.0,
            sigma_t: 0.010,
            sigma_r_deg: 5.0,
            miss_penalty: 0.05,
        }
    }
}

impl StateDetectionConfig {
    pub fn validate(&self) -> Result<(), AssemblyError> {
        let positive = [self.tol_t, self.tol_r_deg, self.sigma_t, self.sigma_r_deg];
        if !positive.iter().all(|v| *v > 0.0 && v.is_finite()) {
            return Err(AssemblyError::InvalidConfig(format!("{self:?}")));
        }
        if !(self.miss_penalty > 0.0 && self.miss_penalty < 1.0) {
            return Err(AssemblyError::InvalidConfig(format!(
                "miss_penalty {}",
                self.miss_penalty
            )));
        }
        Ok(())
    }

    fn kernel(&self, e_t: f64, e_r_deg: f64) -> f64 {
        if e_t > self.tol_t || e_r_deg > self.tol_r_deg {
            return 0.0;
        }
        (-(e_t / self.sigma_t).powi(2) - (e_r_deg / self.sigma_r_deg).powi(2)).exp()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateDetection {
    pub distribution: StateDistribution,
    /// Unnormalized per-state scores (all ones when the base is unobserved).
    pub scores: Vec<f64>,
    pub base_observed: bool,
}

/// Scores every state by how well the observed poses, taken relative to the
/// base part, match the state's expected relative poses.
///
/// Per part and state the factor is:
/// * member, observed: `pen + (1 − pen)·k`, `k` the gated Gaussian kernel;
/// * member, unobserved: `pen`;
/// * non-member, observed: `1 − (1 − pen)·max k` over states that contain it,
///   so a part sitting exactly where another state puts it counts against
///   states lacking it.
pub fn detect_state_from_poses(
    observed: &BTreeMap<PartId, RigidTransform>,
    graph: &AssemblyGraph,
    cfg: &StateDetectionConfig,
) -> Result<StateDetection, AssemblyError> {
    cfg.validate()?;
    let n = graph.state_count();
    let Some(base_pose) = observed.get(graph.base_part()) else {
        return Ok(StateDetection {
            distribution: StateDistribution::uniform(n),
            scores: vec![1.0; n],
            base_observed: false,
        });
    };
    let pen = cfg.miss_penalty;

    // kernels[part][state] for observed non-base parts that the state contains.
    let mut kernels: BTreeMap<&PartId, Vec<Option<f64>>> = BTreeMap::new();
    for (part_id, pose) in observed {
        if part_id == graph.base_part() {
            continue;
        }
        let Some(part) = graph.part(part_id) else {
            continue;
        };
        let rel = relative_pose(base_pose, pose);
        let row = graph
            .states()
            .iter()
            .map(|s| {
                s.relative_poses.get(part_id).map(|exp| {
                    let e_t = (rel.translation() - exp.translation()).norm();
                    let e_r = part.rotation_residual_deg(exp.rotation(), rel.rotation());
                    cfg.kernel(e_t, e_r)
                })
            })
            .collect();
        kernels.insert(part_id, row);
    }

    let scores: Vec<f64> = graph
        .states()
        .iter()
        .map(|s| {
            let mut score = 1.0;
            for part in graph.parts() {
                if &part.part_id == graph.base_part() {
                    continue;
                }
                let member = s.member_parts.contains(&part.part_id);
                score *= match (kernels.get(&part.part_id), member) {
                    (Some(row), true) => pen + (1.0 - pen) * row[s.state_id].unwrap_or(0.0),
                    (None, true) => pen,
                    (Some(row), false) => {
                        let best = row.iter().flatten().copied().fold(0.0, f64::max);
                        1.0 - (1.0 - pen) * best
                    }
                    (None, false) => 1.0,
                };
            }
            score
        })
        .collect();
    let distribution =
        StateDistribution::normalize(&scores).unwrap_or_else(|| StateDistribution::uniform(n));
    Ok(StateDetection {
        distribution,
        scores,
        base_observed: true,
    })
}
