//! On-disk formats: model registry (TOML + OBJ meshes), sequence manifests
//! and detection files (JSON lines), and 16-bit PNG depth maps.

mod depth;
mod detections;
mod registry;
mod sequence;

use std::path::{Path, PathBuf};

use thiserror::Error;

pub use depth::{decode_depth_png, encode_depth_png, read_depth_png, write_depth_png, MAX_DEPTH_M};
pub use detections::{
    parse_detections, read_detections, write_detections, DetectionFile, DetectionFrame,
    DetectionInstance, Keypoint,
};
pub use registry::{
    load_registry, load_registry_with, AssemblyEntry, ModelRegistry, PartEntry, RegistryFile,
    StateEntry, SymmetryEntry,
};
pub use sequence::{
    load_sequence, parse_manifest, write_manifest, ManifestEntry, Sequence, SequenceFrame,
};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("part {part}: mesh {path} is missing or unreadable ({reason})")]
    MissingMesh {
        part: String,
        path: PathBuf,
        reason: String,
    },
    #[error("invalid state graph in {assembly}: {reason}")]
    InvalidStateGraph { assembly: String, reason: String },
    #[error("registry {path}: {reason}")]
    InvalidRegistry { path: PathBuf, reason: String },
    #[error("{path}: corrupt depth image ({reason})")]
    CorruptDepth { path: PathBuf, reason: String },
    #[error("line {line}: frame index {found} does not follow {previous}")]
    FrameGap {
        line: usize,
        previous: u64,
        found: u64,
    },
    #[error("line {line}: {message}")]
    SchemaViolation { line: usize, message: String },
    #[error("unknown assembly {0}")]
    UnknownAssembly(String),
    #[error("depth {value} m cannot be stored in 16-bit millimeters")]
    DepthOutOfRange { value: f64 },
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>, DatasetError> {
    std::fs::read(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<(), DatasetError> {
    let io = |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io)?;
    }
    std::fs::write(path, bytes).map_err(io)
}

pub(crate) fn read_text(path: &Path) -> Result<String, DatasetError> {
    let bytes = read_file(path)?;
    String::from_utf8(bytes).map_err(|e| DatasetError::Io {
        path: path.to_path_buf(),
        source: std::io::Error::new(std::io::ErrorKind::InvalidData, e),
    })
}

/// Serializes records as one compact JSON object per line.
pub fn to_json_lines<T: serde::Serialize>(records: &[T]) -> String {
    let mut out = String::new();
    for r in records {
        // Serialization of these types cannot fail: maps have string keys.
        out.push_str(&serde_json::to_string(r).expect("serializable record"));
        out.push('\n');
    }
    out
}

/// Parses non-blank lines; errors carry the 1-based line number.
pub fn from_json_lines<T: serde::de::DeserializeOwned>(
    text: &str,
) -> Result<Vec<(usize, T)>, DatasetError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map(|v| (i + 1, v))
                .map_err(|e| DatasetError::SchemaViolation {
                    line: i + 1,
                    message: e.to_string(),
                })
        })
        .collect()
}
