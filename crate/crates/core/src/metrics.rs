//! Pose and state evaluation: ADD / ADD-S, pose errors and per-state F1.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assembly::{PartId, StateId};
use crate::geometry::{rotation_angle, PointCloud3, RigidTransform, Vec3};

pub const ADD_THRESHOLD_MM: f64 = 100.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("no records to aggregate")]
    Empty,
    #[error("sequence lengths differ: {predicted} predicted vs {gt} ground truth")]
    LengthMismatch { predicted: usize, gt: usize },
    #[error("state id {id} out of range for {count} states")]
    StateOutOfRange { id: StateId, count: usize },
}

/// Mean point distance between the model under `est` and under `gt`, in mm.
/// The symmetric variant matches each estimated point to its nearest
/// ground-truth point.
pub fn add_error(
    est: &RigidTransform,
    gt: &RigidTransform,
    model: &PointCloud3,
    symmetric: bool,
) -> f64 {
    if model.is_empty() {
        return 0.0;
    }
    let e: Vec<Vec3> = model
        .points
        .iter()
        .map(|p| est.transform_point(p))
        .collect();
    let g: Vec<Vec3> = model.points.iter().map(|p| gt.transform_point(p)).collect();
    let total: f64 = if symmetric {
        let index = SortedCloud::new(&g);
        e.iter().map(|p| index.nearest_distance(p)).sum()
    } else {
        e.iter().zip(&g).map(|(a, b)| (a - b).norm()).sum()
    };
    1000.0 * total / model.len() as f64
}

/// Points sorted along x; a query scans outward and stops once the x gap
/// alone exceeds the best distance so far.
struct SortedCloud {
    points: Vec<Vec3>,
}

impl SortedCloud {
    fn new(points: &[Vec3]) -> Self {
        let mut points = points.to_vec();
        points.sort_by(|a, b| a.x.total_cmp(&b.x));
        Self { points }
    }

    fn nearest_distance(&self, q: &Vec3) -> f64 {
        let start = self.points.partition_point(|p| p.x < q.x);
        let mut best = f64::INFINITY;
        for p in &self.points[start..] {
            let dx = p.x - q.x;
            if dx * dx > best {
                break;
            }
            best = best.min((p - q).norm_squared());
        }
        for p in self.points[..start].iter().rev() {
            let dx = q.x - p.x;
            if dx * dx > best {
                break;
            }
            best = best.min((p - q).norm_squared());
        }
        best.sqrt()
    }
}

/// Translation error in mm and geodesic rotation error in degrees.
pub fn pose_errors(est: &RigidTransform, gt: &RigidTransform) -> (f64, f64) {
    let e_t = (est.translation() - gt.translation()).norm() * 1000.0;
    let e_r = rotation_angle(&(est.rotation().transpose() * gt.rotation())).to_degrees();
    (e_t, e_r.clamp(0.0, 180.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoseErrorRecord {
    pub part_id: PartId,
    pub frame: u64,
    /// `None` when the part was not detected.
    pub e_trans: Option<f64>,
    pub e_rot: Option<f64>,
    /// Millimeters; `+∞` for a missed detection.
    pub add: f64,
    pub add_within_threshold: bool,
}

impl PoseErrorRecord {
    pub fn evaluate(
        part_id: &str,
        frame: u64,
        est: Option<&RigidTransform>,
        gt: &RigidTransform,
        model: &PointCloud3,
        symmetric: bool,
        threshold_mm: f64,
    ) -> Self {
        match est {
            Some(est) => {
                let (e_t, e_r) = pose_errors(est, gt);
                let add = add_error(est, gt, model, symmetric);
                Self {
                    part_id: part_id.into(),
                    frame,
                    e_trans: Some(e_t),
                    e_rot: Some(e_r),
                    add,
                    add_within_threshold: add < threshold_mm,
                }
            }
            None => Self {
                part_id: part_id.into(),
                frame,
                e_trans: None,
                e_rot: None,
                add: f64::INFINITY,
                add_within_threshold: false,
            },
        }
    }

    pub fn detected(&self) -> bool {
        self.e_trans.is_some()
    }
}

/// Percentage of records whose ADD is under `threshold_mm`.
pub fn add_accuracy(records: &[PoseErrorRecord], threshold_mm: f64) -> Result<f64, MetricsError> {
    if records.is_empty() {
        return Err(MetricsError::Empty);
    }
    let hits = records.iter().filter(|r| r.add < threshold_mm).count();
    Ok(100.0 * hits as f64 / records.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateScore {
    pub state: StateId,
    /// Ground-truth frame count.
    pub support: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateF1Report {
    pub states: Vec<StateScore>,
    /// Mean F1 over states present in the ground truth.
    pub macro_f1: f64,
    pub accuracy: f64,
}

/// Per-state precision, recall and F1 in percent. An undefined ratio (no
/// predictions or no support) reads as 0.
pub fn state_f1(
    predicted: &[StateId],
    gt: &[StateId],
    state_count: usize,
) -> Result<StateF1Report, MetricsError> {
    if predicted.len() != gt.len() {
        return Err(MetricsError::LengthMismatch {
            predicted: predicted.len(),
            gt: gt.len(),
        });
    }
    if let Some(&id) = predicted.iter().chain(gt).find(|&&s| s >= state_count) {
        return Err(MetricsError::StateOutOfRange {
            id,
            count: state_count,
        });
    }
    let mut tp = vec![0usize; state_count];
    let mut pred_count = vec![0usize; state_count];
    let mut support = vec![0usize; state_count];
    for (&p, &g) in predicted.iter().zip(gt) {
        pred_count[p] += 1;
        support[g] += 1;
        if p == g {
            tp[p] += 1;
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let states: Vec<StateScore> = (0..state_count)
        .map(|s| {
            let precision = ratio(tp[s], pred_count[s]);
            let recall = ratio(tp[s], support[s]);
            // F1 from counts avoids the rounding of the harmonic mean.
            let f1 = ratio(2 * tp[s], pred_count[s] + support[s]);
            StateScore {
                state: s,
                support: support[s],
                precision: 100.0 * precision,
                recall: 100.0 * recall,
                f1: 100.0 * f1,
            }
        })
        .collect();
    let present: Vec<&StateScore> = states.iter().filter(|s| s.support > 0).collect();
    let macro_f1 = if present.is_empty() {
        0.0
    } else {
        present.iter().map(|s| s.f1).sum::<f64>() / present.len() as f64
    };
    let accuracy = 100.0 * ratio(tp.iter().sum(), gt.len());
    Ok(StateF1Report {
        states,
        macro_f1,
        accuracy,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartSummary {
    pub frames: usize,
    pub detected: usize,
    /// Means over detected frames; `None` when nothing was detected.
    pub mean_e_trans_mm: Option<f64>,
    pub mean_e_rot_deg: Option<f64>,
    pub add_accuracy: f64,
    pub miss_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceReport {
    pub frame_count: usize,
    pub add_threshold_mm: f64,
    pub parts: BTreeMap<PartId, PartSummary>,
    pub add_accuracy: f64,
    pub mean_e_trans_mm: Option<f64>,
    pub mean_e_rot_deg: Option<f64>,
    pub miss_rate: f64,
    pub state: StateF1Report,
    /// Absent unless timing was recorded; kept out of reproducible reports.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_runtime_ms: Option<f64>,
}

fn summarize(records: &[&PoseErrorRecord], threshold_mm: f64) -> PartSummary {
    let detected: Vec<_> = records.iter().filter(|r| r.detected()).collect();
    let mean = |f: fn(&PoseErrorRecord) -> Option<f64>| {
        (!detected.is_empty())
            .then(|| detected.iter().filter_map(|r| f(r)).sum::<f64>() / detected.len() as f64)
    };
    let n = records.len().max(1) as f64;
    PartSummary {
        frames: records.len(),
        detected: detected.len(),
        mean_e_trans_mm: mean(|r| r.e_trans),
        mean_e_rot_deg: mean(|r| r.e_rot),
        add_accuracy: 100.0 * records.iter().filter(|r| r.add < threshold_mm).count() as f64 / n,
        miss_rate: 100.0 * (records.len() - detected.len()) as f64 / n,
    }
}

impl SequenceReport {
    pub fn build(
        frame_count: usize,
        records: &[PoseErrorRecord],
        predicted: &[StateId],
        gt: &[StateId],
        state_count: usize,
        threshold_mm: f64,
    ) -> Result<Self, MetricsError> {
        let state = state_f1(predicted, gt, state_count)?;
        let mut by_part: BTreeMap<PartId, Vec<&PoseErrorRecord>> = BTreeMap::new();
        for r in records {
            by_part.entry(r.part_id.clone()).or_default().push(r);
        }
        let parts = by_part
            .iter()
            .map(|(id, rs)| (id.clone(), summarize(rs, threshold_mm)))
            .collect();
        let all: Vec<&PoseErrorRecord> = records.iter().collect();
        let overall = summarize(&all, threshold_mm);
        Ok(Self {
            frame_count,
            add_threshold_mm: threshold_mm,
            parts,
            add_accuracy: overall.add_accuracy,
            mean_e_trans_mm: overall.mean_e_trans_mm,
            mean_e_rot_deg: overall.mean_e_rot_deg,
            miss_rate: overall.miss_rate,
            state,
            mean_runtime_ms: None,
        })
    }

    /// Plain-text table with one row per part and a summary block.
    pub fn to_table(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.2}"));
        let mut out = String::new();
        out.push_str(&format!(
            "{:<16} {:>7} {:>9} {:>12} {:>10} {:>8}\n",
            "part", "frames", "ADD(S)%", "e_trans[mm]", "e_rot[deg]", "miss%"
        ));
        for (id, p) in &self.parts {
            out.push_str(&format!(
                "{:<16} {:>7} {:>9.2} {:>12} {:>10} {:>8.2}\n",
                id,
                p.frames,
                p.add_accuracy,
                fmt(p.mean_e_trans_mm),
                fmt(p.mean_e_rot_deg),
                p.miss_rate
            ));
        }
        out.push_str(&format!(
            "{:<16} {:>7} {:>9.2} {:>12} {:>10} {:>8.2}\n\n",
            "all",
            self.frame_count,
            self.add_accuracy,
            fmt(self.mean_e_trans_mm),
            fmt(self.mean_e_rot_deg),
            self.miss_rate
        ));
        out.push_str(&format!(
            "{:<8} {:>8} {:>10} {:>8} {:>8}\n",
            "state", "support", "precision", "recall", "F1"
        ));
        for s in &self.state.states {
            out.push_str(&format!(
                "{:<8} {:>8} {:>10.2} {:>8.2} {:>8.2}\n",
                s.state, s.support, s.precision, s.recall, s.f1
            ));
        }
        out.push_str(&format!(
            "\nmacro F1 {:.2}   state accuracy {:.2}\n",
            self.state.macro_f1, self.state.accuracy
        ));
        if let Some(ms) = self.mean_runtime_ms {
            out.push_str(&format!("runtime {ms:.2} ms/frame\n"));
        }
        out
    }
}
