use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{
    from_json_lines, read_depth_png, read_text, to_json_lines, write_file, DatasetError,
    ModelRegistry,
};
use crate::assembly::StateId;
use crate::geometry::{CameraIntrinsics, RigidTransform};
use crate::refine::DepthImage;

/// One manifest line: where the depth lives and what the ground truth is.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub frame: u64,
    /// Seconds since the start of the sequence.
    pub timestamp: f64,
    pub assembly: String,
    /// Depth PNG path relative to the manifest.
    pub depth: String,
    pub intrinsics: CameraIntrinsics,
    pub gt_state: StateId,
    /// Ground-truth camera-frame pose per visible part.
    pub gt_poses: BTreeMap<String, RigidTransform>,
}

#[derive(Debug, Clone)]
pub struct Sequence {
    root: PathBuf,
    entries: Vec<ManifestEntry>,
}

#[derive(Debug, Clone)]
pub struct SequenceFrame {
    pub entry: ManifestEntry,
    pub depth: DepthImage,
}

impl Sequence {
    pub fn entries(&self) -> &[ManifestEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn depth_path(&self, entry: &ManifestEntry) -> PathBuf {
        self.root.join(&entry.depth)
    }

    /// Decodes one frame's depth and checks it against the intrinsics.
    pub fn load_frame(&self, entry: &ManifestEntry) -> Result<SequenceFrame, DatasetError> {
        let path = self.depth_path(entry);
        let depth = read_depth_png(&path)?;
        if depth.width() != entry.intrinsics.width || depth.height() != entry.intrinsics.height {
            return Err(DatasetError::CorruptDepth {
                path,
                reason: format!(
                    "{}x{} image for {}x{} intrinsics",
                    depth.width(),
                    depth.height(),
                    entry.intrinsics.width,
                    entry.intrinsics.height
                ),
            });
        }
        Ok(SequenceFrame {
            entry: entry.clone(),
            depth,
        })
    }

    /// Frames in index order, depth decoded lazily.
    pub fn frames(&self) -> impl Iterator<Item = Result<SequenceFrame, DatasetError>> + '_ {
        self.entries.iter().map(|e| self.load_frame(e))
    }

    /// Every ground-truth part and state must exist in the registry.
    pub fn validate_against(&self, registry: &ModelRegistry) -> Result<(), DatasetError> {
        for (i, e) in self.entries.iter().enumerate() {
            let line = i + 1;
            let graph = registry
                .get(&e.assembly)
                .ok_or_else(|| DatasetError::SchemaViolation {
                    line,
                    message: format!("unknown assembly {}", e.assembly),
                })?;
            if e.gt_state >= graph.state_count() {
                return Err(DatasetError::SchemaViolation {
                    line,
                    message: format!("state {} out of range for {}", e.gt_state, e.assembly),
                });
            }
            if let Some(p) = e.gt_poses.keys().find(|p| graph.part(p).is_none()) {
                return Err(DatasetError::SchemaViolation {
                    line,
                    message: format!("unknown part {p} in {}", e.assembly),
                });
            }
        }
        Ok(())
    }
}

pub fn parse_manifest(text: &str, root: &Path) -> Result<Sequence, DatasetError> {
    let records: Vec<(usize, ManifestEntry)> = from_json_lines(text)?;
    let mut previous: Option<u64> = None;
    for (line, e) in &records {
        if let Some(p) = previous.filter(|&p| e.frame <= p) {
            return Err(DatasetError::FrameGap {
                line: *line,
                previous: p,
                found: e.frame,
            });
        }
        e.intrinsics
            .validate()
            .map_err(|err| DatasetError::SchemaViolation {
                line: *line,
                message: err.to_string(),
            })?;
        previous = Some(e.frame);
    }
    Ok(Sequence {
        root: root.to_path_buf(),
        entries: records.into_iter().map(|(_, e)| e).collect(),
    })
}

/// Reads and validates a manifest; depth files are opened on demand.
pub fn load_sequence(manifest: &Path) -> Result<Sequence, DatasetError> {
    let root = manifest.parent().unwrap_or(Path::new("."));
    parse_manifest(&read_text(manifest)?, root)
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<(), DatasetError> {
    write_file(path, to_json_lines(entries).as_bytes())
}
