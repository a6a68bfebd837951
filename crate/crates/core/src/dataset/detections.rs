use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{from_json_lines, read_text, to_json_lines, write_file, DatasetError};
use crate::assembly::KEYPOINT_COUNT;
use crate::refine::BoundingBox;

/// Pixel position plus detector confidence.
pub type Keypoint = [f64; 3];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionInstance {
    /// Part the keypoints belong to.
    pub part: String,
    /// Assembly-state class predicted for this instance.
    pub class_id: usize,
    pub confidence: f64,
    pub bbox: BoundingBox,
    pub keypoints: Vec<Keypoint>,
    /// Per-state class scores.
    pub scores: Vec<f64>,
    #[serde(flatten)]
    pub extra: BTreeMap<String, serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionFrame {
    pub frame: u64,
    pub assembly: String,
    #[serde(default)]
    pub instances: Vec<DetectionInstance>,
    #[serde(flatten)]
    pub extra: BTreeMap<String, serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DetectionFile {
    pub frames: Vec<DetectionFrame>,
}

impl DetectionFile {
    pub fn frame(&self, index: u64) -> Option<&DetectionFrame> {
        self.frames
            .binary_search_by_key(&index, |f| f.frame)
            .ok()
            .map(|i| &self.frames[i])
    }
}

fn check_instance(inst: &DetectionInstance) -> Result<(), String> {
    if inst.keypoints.len() != KEYPOINT_COUNT {
        return Err(format!(
            "instance of {} has {} keypoints, expected {KEYPOINT_COUNT}",
            inst.part,
            inst.keypoints.len()
        ));
    }
    if inst.keypoints.iter().flatten().any(|v| !v.is_finite()) {
        return Err(format!(
            "instance of {} has a non-finite keypoint",
            inst.part
        ));
    }
    if inst.scores.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) {
        return Err(format!(
            "instance of {} has a negative or non-finite score",
            inst.part
        ));
    }
    if !(0.0..=1.0).contains(&inst.confidence) {
        return Err(format!("confidence {} outside [0, 1]", inst.confidence));
    }
    BoundingBox::new(inst.bbox.x, inst.bbox.y, inst.bbox.w, inst.bbox.h)
        .map_err(|e| e.to_string())?;
    Ok(())
}

/// Parses and validates a detection file; frames must be strictly increasing.
pub fn parse_detections(text: &str) -> Result<DetectionFile, DatasetError> {
    let records: Vec<(usize, DetectionFrame)> = from_json_lines(text)?;
    let mut frames = Vec::with_capacity(records.len());
    let mut previous: Option<u64> = None;
    for (line, frame) in records {
        if let Some(p) = previous.filter(|&p| frame.frame <= p) {
            return Err(DatasetError::FrameGap {
                line,
                previous: p,
                found: frame.frame,
            });
        }
        for inst in &frame.instances {
            check_instance(inst)
                .map_err(|message| DatasetError::SchemaViolation { line, message })?;
        }
        previous = Some(frame.frame);
        frames.push(frame);
    }
    Ok(DetectionFile { frames })
}

pub fn read_detections(path: &Path) -> Result<DetectionFile, DatasetError> {
    parse_detections(&read_text(path)?)
}

pub fn write_detections(path: &Path, file: &DetectionFile) -> Result<(), DatasetError> {
    write_file(path, to_json_lines(&file.frames).as_bytes())
}
