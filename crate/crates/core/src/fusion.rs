//! Late fusion of learned state scores, pose evidence and temporal context.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assembly::{
    argmax, neighbor_states, AssemblyError, AssemblyGraph, StateDistribution, StateId,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FusionError {
    #[error("invalid fusion weights: {0}")]
    InvalidWeights(String),
    #[error("distribution length {got} does not match {expected} states")]
    LengthMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Assembly(#[from] AssemblyError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionWeights {
    pub w_dl: f64,
    pub w_p: f64,
    /// Previous fused distribution at the same state.
    pub w_f: f64,
    /// Previous fused distribution averaged over neighboring states.
    pub w_f1: f64,
}

impl Default for FusionWeights {
    fn default() -> Self {
        Self {
            w_dl: 1.0,
            w_p: 1.0,
            w_f: 0.5,
            w_f1: 0.25,
        }
    }
}

impl FusionWeights {
    pub fn new(w_dl: f64, w_p: f64, w_f: f64, w_f1: f64) -> Result<Self, FusionError> {
        let w = Self {
            w_dl,
            w_p,
            w_f,
            w_f1,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<(), FusionError> {
        let all = [self.w_dl, self.w_p, self.w_f, self.w_f1];
        if all.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) || self.sum() <= 0.0 {
            return Err(FusionError::InvalidWeights(format!("{self:?}")));
        }
        Ok(())
    }

    pub fn sum(&self) -> f64 {
        self.w_dl + self.w_p + self.w_f + self.w_f1
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self {
            w_dl: self.w_dl * k,
            w_p: self.w_p * k,
            w_f: self.w_f * k,
            w_f1: self.w_f1 * k,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionState {
    pub previous_final: StateDistribution,
    pub previous_argmax: StateId,
    pub frame_index: u64,
}

impl FusionState {
    /// Uniform prior before the first frame.
    pub fn initial(state_count: usize) -> Self {
        Self {
            previous_final: StateDistribution::uniform(state_count),
            previous_argmax: 0,
            frame_index: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionOutput {
    pub distribution: StateDistribution,
    pub chosen: StateId,
    /// The numerator vanished everywhere and a uniform distribution was returned.
    pub degenerate: bool,
    pub next: FusionState,
}

fn check_len(d: &StateDistribution, expected: usize) -> Result<(), FusionError> {
    if d.len() != expected {
        return Err(FusionError::LengthMismatch {
            expected,
            got: d.len(),
        });
    }
    Ok(())
}

/// `w_dl·P_DL + w_p·P_P`, elementwise and unnormalized.
pub fn fuse_dl_pose(
    sp_dl: &StateDistribution,
    sp_p: &StateDistribution,
    w: &FusionWeights,
) -> Result<Vec<f64>, FusionError> {
    w.validate()?;
    check_len(sp_p, sp_dl.len())?;
    Ok(sp_dl
        .probabilities()
        .iter()
        .zip(sp_p.probabilities())
        .map(|(d, p)| w.w_dl * d + w.w_p * p)
        .collect())
}

/// `w_f·P(s) + w_f1·mean(P(n) for n in neighbors(s))` over the previous fused
/// distribution. States without neighbors get no neighbor term.
pub fn temporal_term(
    prev: &FusionState,
    graph: &AssemblyGraph,
    w: &FusionWeights,
) -> Result<Vec<f64>, FusionError> {
    w.validate()?;
    check_len(&prev.previous_final, graph.state_count())?;
    let p = prev.previous_final.probabilities();
    (0..p.len())
        .map(|s| {
            let nbrs = neighbor_states(s, graph)?;
            let mean = if nbrs.is_empty() {
                0.0
            } else {
                nbrs.iter().map(|&n| p[n]).sum::<f64>() / nbrs.len() as f64
            };
            Ok(w.w_f * p[s] + w.w_f1 * mean)
        })
        .collect()
}

/// One fusion step: the weighted sum of all terms divided by the weight sum,
/// renormalized, with the lowest state id winning ties.
pub fn pose2state(
    sp_dl: &StateDistribution,
    sp_p: &StateDistribution,
    prev: &FusionState,
    graph: &AssemblyGraph,
    w: &FusionWeights,
) -> Result<FusionOutput, FusionError> {
    check_len(sp_dl, graph.state_count())?;
    let current = fuse_dl_pose(sp_dl, sp_p, w)?;
    let temporal = temporal_term(prev, graph, w)?;
    let total = w.sum();
    let numerator: Vec<f64> = current
        .iter()
        .zip(&temporal)
        .map(|(a, b)| (a + b) / total)
        .collect();
    let (distribution, degenerate) = match StateDistribution::normalize(&numerator) {
        Some(d) => (d, false),
        None => (StateDistribution::uniform(graph.state_count()), true),
    };
    let chosen = argmax(distribution.probabilities());
    let next = FusionState {
        previous_final: distribution.clone(),
        previous_argmax: chosen,
        frame_index: prev.frame_index + 1,
    };
    Ok(FusionOutput {
        distribution,
        chosen,
        degenerate,
        next,
    })
}
