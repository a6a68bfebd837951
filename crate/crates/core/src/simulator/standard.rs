//! Built-in assemblies made of stepped blocks.
//!
//! Every part is a thin prism resting on the table with its model z axis
//! pointing up. All parts share one height so none hides another from a
//! top-down camera. Attached parts sit in slots around the base; a state
//! lists which slot (and yaw) each member occupies.

use std::collections::BTreeMap;
use std::path::Path;

use crate::dataset::{
    write_file, AssemblyEntry, DatasetError, ModelRegistry, PartEntry, RegistryFile, StateEntry,
    SymmetryEntry,
};
use crate::geometry::{RigidTransform, Vec3};
use crate::mesh::TriangleMesh;

/// Shared thickness. Thin enough that the top face holds well over 30% of
/// every part's surface samples, which keeps hidden side faces out of the
/// depth refinement's near set.
pub const PART_HEIGHT: f64 = 0.01;

#[derive(Debug, Clone, Copy)]
enum Shape {
    /// Rectangle `l × w` centered on the origin with a triangular tip of
    /// length `tip` on the +x side; no rotation maps it onto itself.
    House { l: f64, w: f64, tip: f64 },
    /// Plain rectangle, symmetric under a half turn.
    Block { l: f64, w: f64 },
    /// Square, symmetric under quarter turns.
    Square { s: f64 },
}

impl Shape {
    fn footprint(self) -> Vec<(f64, f64)> {
        let rect = |l: f64, w: f64| {
            vec![
                (-l / 2.0, -w / 2.0),
                (l / 2.0, -w / 2.0),
                (l / 2.0, w / 2.0),
                (-l / 2.0, w / 2.0),
            ]
        };
        match self {
            Shape::House { l, w, tip } => {
                let mut f = rect(l, w);
                f.insert(2, (l / 2.0 + tip, 0.0));
                f
            }
            Shape::Block { l, w } => rect(l, w),
            Shape::Square { s } => rect(s, s),
        }
    }

    fn mesh(self) -> TriangleMesh {
        TriangleMesh::prism(&self.footprint(), PART_HEIGHT)
    }

    fn symmetries(self) -> Vec<SymmetryEntry> {
        let about_z = |angle_deg| SymmetryEntry {
            axis: [0.0, 0.0, 1.0],
            angle_deg,
        };
        match self {
            Shape::House { .. } => Vec::new(),
            Shape::Block { .. } => vec![about_z(180.0)],
            Shape::Square { .. } => vec![about_z(90.0), about_z(180.0), about_z(270.0)],
        }
    }
}

/// Placement in the base frame: x, y offset and yaw in degrees.
type Slot = (f64, f64, f64);

/// Name, error flag, and the members other than the base with their slots.
type StateSpec = (&'static str, bool, Vec<(&'static str, Slot)>);

struct Design {
    id: &'static str,
    parts: Vec<(&'static str, Shape)>,
    states: Vec<StateSpec>,
}

fn slot_pose((x, y, yaw_deg): Slot) -> RigidTransform {
    RigidTransform::from_axis_angle(&Vec3::z(), yaw_deg.to_radians(), Vec3::new(x, y, 0.0))
}

fn corner_clamp() -> Design {
    let jaw = ("jaw", (0.0, -0.13, 0.0));
    let screw = ("screw", (0.0, 0.1225, 0.0));
    Design {
        id: "CornerClamp",
        parts: vec![
            (
                "base",
                Shape::House {
                    l: 0.20,
                    w: 0.20,
                    tip: 0.06,
                },
            ),
            (
                "jaw",
                Shape::House {
                    l: 0.08,
                    w: 0.05,
                    tip: 0.03,
                },
            ),
            ("screw", Shape::Block { l: 0.12, w: 0.035 }),
        ],
        states: vec![
            ("base", false, vec![]),
            ("jaw mounted", false, vec![jaw]),
            ("screw inserted", false, vec![jaw, screw]),
        ],
    }
}

fn nano_vise() -> Design {
    let names = ["jaw", "spindle", "guide", "plate", "handle", "stop", "cap"];
    let slots: [Slot; 7] = [
        (-0.065, -0.095, 0.0),
        (0.01, -0.095, 0.0),
        (0.085, -0.095, 0.0),
        (-0.065, 0.095, 0.0),
        (0.01, 0.095, 0.0),
        (0.085, 0.095, 0.0),
        (0.1675, 0.0, 0.0),
    ];
    let mut parts = vec![(
        "base",
        Shape::House {
            l: 0.18,
            w: 0.14,
            tip: 0.05,
        },
    )];
    parts.extend(names.iter().map(|&n| {
        (
            n,
            Shape::House {
                l: 0.045,
                w: 0.04,
                tip: 0.02,
            },
        )
    }));
    const STATE_NAMES: [&str; 8] = [
        "base", "jaw", "spindle", "guide", "plate", "handle", "stop", "complete",
    ];
    let states = (0..8)
        .map(|k| {
            let members = names[..k].iter().zip(slots).map(|(&n, s)| (n, s)).collect();
            (STATE_NAMES[k], false, members)
        })
        .collect();
    Design {
        id: "NanoVise",
        parts,
        states,
    }
}

fn screw_clamp() -> Design {
    let arm = ("arm", (-0.04, -0.09, 0.0));
    let arm_backwards = ("arm", (-0.04, -0.09, 180.0));
    let screw_out = ("screw", (-0.05, 0.08, 0.0));
    let screw_in = ("screw", (0.05, 0.08, 0.0));
    let pad = ("pad", (0.185, 0.0, 0.0));
    let knob = ("knob", (0.07, -0.085, 0.0));
    let knob_turned = ("knob", (0.07, -0.085, 180.0));
    let lever_open = ("lever", (-0.07, 0.125, 0.0));
    let lever_closed = ("lever", (0.03, 0.125, 0.0));
    Design {
        id: "ScrewClamp",
        parts: vec![
            (
                "base",
                Shape::House {
                    l: 0.20,
                    w: 0.12,
                    tip: 0.05,
                },
            ),
            (
                "arm",
                Shape::House {
                    l: 0.07,
                    w: 0.05,
                    tip: 0.03,
                },
            ),
            ("screw", Shape::Block { l: 0.10, w: 0.03 }),
            ("pad", Shape::Square { s: 0.05 }),
            (
                "knob",
                Shape::House {
                    l: 0.05,
                    w: 0.04,
                    tip: 0.02,
                },
            ),
            ("lever", Shape::Block { l: 0.09, w: 0.03 }),
        ],
        states: vec![
            ("base", false, vec![]),
            ("arm", false, vec![arm]),
            ("screw loose", false, vec![arm, screw_out]),
            ("pad", false, vec![arm, screw_out, pad]),
            ("screw driven", false, vec![arm, screw_in, pad]),
            ("knob", false, vec![arm, screw_in, pad, knob]),
            (
                "lever open",
                false,
                vec![arm, screw_in, pad, knob, lever_open],
            ),
            (
                "knob turned",
                false,
                vec![arm, screw_in, pad, knob_turned, lever_open],
            ),
            (
                "lever closed",
                false,
                vec![arm, screw_in, pad, knob_turned, lever_closed],
            ),
            ("arm backwards", true, vec![arm_backwards, screw_out, pad]),
        ],
    }
}

fn geared_caliper() -> Design {
    let gear = ("gear", (-0.03, 0.075, 0.0));
    let slider = ("slider", (0.0, -0.065, 0.0));
    let cap = ("cap", (0.165, 0.0, 0.0));
    Design {
        id: "GearedCaliper",
        parts: vec![
            (
                "base",
                Shape::House {
                    l: 0.20,
                    w: 0.08,
                    tip: 0.04,
                },
            ),
            ("gear", Shape::Square { s: 0.06 }),
            (
                "slider",
                Shape::House {
                    l: 0.08,
                    w: 0.04,
                    tip: 0.03,
                },
            ),
            (
                "cap",
                Shape::House {
                    l: 0.05,
                    w: 0.04,
                    tip: 0.02,
                },
            ),
        ],
        states: vec![
            ("base", false, vec![]),
            ("gear", false, vec![gear]),
            ("slider", false, vec![gear, slider]),
            ("cap", false, vec![gear, slider, cap]),
            ("slider without gear", true, vec![slider]),
        ],
    }
}

fn designs() -> Vec<Design> {
    vec![nano_vise(), screw_clamp(), geared_caliper(), corner_clamp()]
}

fn mesh_path(assembly: &str, part: &str) -> String {
    format!("meshes/{}_{part}.obj", assembly.to_lowercase())
}

/// The built-in registry together with its meshes, keyed by mesh path.
pub fn standard_registry_file() -> (RegistryFile, BTreeMap<String, TriangleMesh>) {
    let mut meshes = BTreeMap::new();
    let assemblies = designs()
        .into_iter()
        .map(|d| {
            let parts = d
                .parts
                .iter()
                .map(|&(id, shape)| {
                    let mesh = mesh_path(d.id, id);
                    meshes.insert(mesh.clone(), shape.mesh());
                    PartEntry {
                        id: id.to_string(),
                        mesh,
                        symmetries: shape.symmetries(),
                    }
                })
                .collect();
            let states: Vec<StateEntry> = d
                .states
                .iter()
                .enumerate()
                .map(|(id, (name, error, members))| {
                    let mut poses: BTreeMap<String, RigidTransform> =
                        [("base".to_string(), RigidTransform::identity())].into();
                    poses.extend(
                        members
                            .iter()
                            .map(|&(p, slot)| (p.to_string(), slot_pose(slot))),
                    );
                    StateEntry {
                        id,
                        name: name.to_string(),
                        error: *error,
                        poses,
                    }
                })
                .collect();
            AssemblyEntry {
                id: d.id.to_string(),
                base_part: "base".to_string(),
                state_count: states.len(),
                parts,
                states,
            }
        })
        .collect();
    (RegistryFile { assemblies }, meshes)
}

/// Builds the built-in registry in memory.
pub fn standard_registry(surface_count: usize) -> Result<ModelRegistry, DatasetError> {
    let (file, meshes) = standard_registry_file();
    ModelRegistry::from_meshes(file, &meshes, surface_count)
}

/// Writes `registry.toml` and the OBJ meshes under `dir`.
pub fn write_standard_registry(dir: &Path) -> Result<(), DatasetError> {
    let (file, meshes) = standard_registry_file();
    for (path, mesh) in &meshes {
        write_file(&dir.join(path), mesh.to_obj().as_bytes())?;
    }
    let text = toml::to_string(&file).map_err(|e| DatasetError::InvalidRegistry {
        path: dir.join("registry.toml"),
        reason: e.to_string(),
    })?;
    write_file(&dir.join("registry.toml"), text.as_bytes())
}
