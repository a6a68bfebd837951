use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use super::{read_text, DatasetError};
use crate::assembly::{AssemblyError, AssemblyGraph, AssemblyState, PartModel};
use crate::geometry::{exp_so3, RigidTransform, Vec3};
use crate::mesh::TriangleMesh;
use crate::refine::RefineConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegistryFile {
    pub assemblies: Vec<AssemblyEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssemblyEntry {
    pub id: String,
    pub base_part: String,
    /// Declared number of states, error states included.
    pub state_count: usize,
    pub parts: Vec<PartEntry>,
    pub states: Vec<StateEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartEntry {
    pub id: String,
    /// OBJ file, relative to the registry.
    pub mesh: String,
    #[serde(default)]
    pub symmetries: Vec<SymmetryEntry>,
}

/// A self-mapping rotation of the part about a model-frame axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SymmetryEntry {
    pub axis: [f64; 3],
    pub angle_deg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateEntry {
    pub id: usize,
    pub name: String,
    #[serde(default)]
    pub error: bool,
    /// Pose of each member relative to the base part, 4×4 row-major.
    pub poses: BTreeMap<String, RigidTransform>,
}

#[derive(Debug, Clone)]
pub struct ModelRegistry {
    pub source: RegistryFile,
    assemblies: Vec<AssemblyGraph>,
}

impl ModelRegistry {
    pub fn get(&self, assembly_id: &str) -> Option<&AssemblyGraph> {
        self.assemblies
            .iter()
            .find(|a| a.assembly_id() == assembly_id)
    }

    pub fn assemblies(&self) -> &[AssemblyGraph] {
        &self.assemblies
    }

    /// Builds graphs from an in-memory registry; `root` resolves mesh paths.
    pub fn from_file(
        source: RegistryFile,
        root: &Path,
        surface_count: usize,
    ) -> Result<Self, DatasetError> {
        Self::build(source, surface_count, |p| {
            let path: PathBuf = root.join(&p.mesh);
            let missing = |reason: String| DatasetError::MissingMesh {
                part: p.id.clone(),
                path: path.clone(),
                reason,
            };
            let text = read_text(&path).map_err(|e| missing(e.to_string()))?;
            TriangleMesh::parse_obj(&text).map_err(|e| missing(e.to_string()))
        })
    }

    /// Builds graphs with meshes supplied by mesh path instead of read from disk.
    pub fn from_meshes(
        source: RegistryFile,
        meshes: &BTreeMap<String, TriangleMesh>,
        surface_count: usize,
    ) -> Result<Self, DatasetError> {
        Self::build(source, surface_count, |p| {
            meshes
                .get(&p.mesh)
                .cloned()
                .ok_or_else(|| DatasetError::MissingMesh {
                    part: p.id.clone(),
                    path: PathBuf::from(&p.mesh),
                    reason: "not supplied".into(),
                })
        })
    }

    fn build(
        source: RegistryFile,
        surface_count: usize,
        mut load_mesh: impl FnMut(&PartEntry) -> Result<TriangleMesh, DatasetError>,
    ) -> Result<Self, DatasetError> {
        let mut seen = std::collections::BTreeSet::new();
        let mut assemblies = Vec::with_capacity(source.assemblies.len());
        for a in &source.assemblies {
            if !seen.insert(a.id.as_str()) {
                return Err(DatasetError::InvalidStateGraph {
                    assembly: a.id.clone(),
                    reason: "duplicate assembly id".into(),
                });
            }
            assemblies.push(build_assembly(a, surface_count, &mut load_mesh)?);
        }
        Ok(Self { source, assemblies })
    }
}

fn symmetry_matrix(s: &SymmetryEntry) -> Option<Matrix3<f64>> {
    let axis = Vec3::from(s.axis);
    let n = axis.norm();
    (n > 0.0 && s.angle_deg.is_finite()).then(|| exp_so3(&(axis / n * s.angle_deg.to_radians())))
}

fn build_assembly(
    a: &AssemblyEntry,
    surface_count: usize,
    load_mesh: &mut impl FnMut(&PartEntry) -> Result<TriangleMesh, DatasetError>,
) -> Result<AssemblyGraph, DatasetError> {
    let graph_err = |reason: String| DatasetError::InvalidStateGraph {
        assembly: a.id.clone(),
        reason,
    };
    let mut parts = Vec::with_capacity(a.parts.len());
    for p in &a.parts {
        let mesh = load_mesh(p)?;
        let symmetries = p
            .symmetries
            .iter()
            .map(|s| {
                symmetry_matrix(s)
                    .ok_or_else(|| graph_err(format!("part {}: zero symmetry axis", p.id)))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let model = PartModel::from_mesh(p.id.clone(), mesh, surface_count, symmetries)
            .map_err(|e| graph_err(format!("part {}: {e}", p.id)))?;
        parts.push(model);
    }
    if a.states.len() != a.state_count {
        return Err(graph_err(format!(
            "declares {} states but lists {}",
            a.state_count,
            a.states.len()
        )));
    }
    let states = a
        .states
        .iter()
        .map(|s| AssemblyState {
            state_id: s.id,
            name: s.name.clone(),
            member_parts: s.poses.keys().cloned().collect(),
            relative_poses: s.poses.clone(),
            is_error_state: s.error,
        })
        .collect();
    AssemblyGraph::new(a.id.clone(), a.base_part.clone(), parts, states).map_err(|e| match e {
        AssemblyError::InvalidStateGraph(reason) => graph_err(reason),
        other => graph_err(other.to_string()),
    })
}

/// Loads and validates a registry with the default surface sample count.
pub fn load_registry(path: &Path) -> Result<ModelRegistry, DatasetError> {
    load_registry_with(path, RefineConfig::default().surface_sample_count)
}

pub fn load_registry_with(
    path: &Path,
    surface_count: usize,
) -> Result<ModelRegistry, DatasetError> {
    let text = read_text(path)?;
    let source: RegistryFile =
        toml::from_str(&text).map_err(|e| DatasetError::InvalidRegistry {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
    ModelRegistry::from_file(
        source,
        path.parent().unwrap_or(Path::new(".")),
        surface_count,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    const IDENTITY: &str =
        "[1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0]";
    const SHIFTED: &str =
        "[1.0, 0.0, 0.0, 0.1, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0]";

    fn write_fixture(dir: &Path, states: &str, state_count: usize) -> PathBuf {
        let cube = TriangleMesh::cuboid(Vec3::zeros(), Vec3::new(0.05, 0.05, 0.02));
        std::fs::create_dir_all(dir.join("meshes")).unwrap();
        std::fs::write(dir.join("meshes/base.obj"), cube.to_obj()).unwrap();
        std::fs::write(dir.join("meshes/pin.obj"), cube.to_obj()).unwrap();
        let text = format!(
            r#"
[[assemblies]]
id = "Toy"
base_part = "base"
state_count = {state_count}

[[assemblies.parts]]
id = "base"
mesh = "meshes/base.obj"

[[assemblies.parts]]
id = "pin"
mesh = "meshes/pin.obj"
symmetries = [{{ axis = [0.0, 0.0, 1.0], angle_deg = 180.0 }}]
{states}
"#
        );
        let path = dir.join("registry.toml");
        std::fs::write(&path, text).unwrap();
        path
    }

    fn states(third_part: &str) -> String {
        format!(
            r#"
[[assemblies.states]]
id = 0
name = "loose"
poses = {{ base = {IDENTITY} }}

[[assemblies.states]]
id = 1
name = "pinned"
poses = {{ base = {IDENTITY}, pin = {SHIFTED} }}

[[assemblies.states]]
id = 2
name = "wrong"
error = true
poses = {{ base = {IDENTITY}, {third_part} = {IDENTITY} }}
"#
        )
    }

    #[test]
    fn loads_a_valid_registry() {
        let dir = tempfile::tempdir().unwrap();
        let reg = load_registry_with(&write_fixture(dir.path(), &states("pin"), 3), 40).unwrap();
        let g = reg.get("Toy").unwrap();
        assert_eq!(g.state_count(), 3);
        assert!(g.states()[2].is_error_state);
        let pin = g.part("pin").unwrap();
        assert!(pin.symmetric);
        assert_eq!(pin.keypoints_3d.len(), 17);
        assert!(reg.get("Other").is_none());
    }

    #[test]
    fn reload_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_fixture(dir.path(), &states("pin"), 3);
        let a = load_registry_with(&path, 40).unwrap();
        let b = load_registry_with(&path, 40).unwrap();
        assert_eq!(a.assemblies(), b.assemblies());
    }

    #[test]
    fn undeclared_part_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let err =
            load_registry_with(&write_fixture(dir.path(), &states("ghost"), 3), 40).unwrap_err();
        match err {
            DatasetError::InvalidStateGraph { assembly, reason } => {
                assert_eq!(assembly, "Toy");
                assert!(reason.contains("ghost"), "{reason}");
            }
            other => panic!("{other}"),
        }
    }

    #[test]
    fn count_mismatch_and_missing_mesh() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_fixture(dir.path(), &states("pin"), 4);
        assert!(matches!(
            load_registry_with(&path, 40),
            Err(DatasetError::InvalidStateGraph { .. })
        ));
        let path = write_fixture(dir.path(), &states("pin"), 3);
        std::fs::remove_file(dir.path().join("meshes/pin.obj")).unwrap();
        match load_registry_with(&path, 40).unwrap_err() {
            DatasetError::MissingMesh { part, .. } => assert_eq!(part, "pin"),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn toml_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_fixture(dir.path(), &states("pin"), 3);
        let reg = load_registry_with(&path, 40).unwrap();
        let text = toml::to_string(&reg.source).unwrap();
        let back: RegistryFile = toml::from_str(&text).unwrap();
        assert_eq!(back, reg.source);
    }
}
