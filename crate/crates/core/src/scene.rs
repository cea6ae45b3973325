//! JSON scene files: model, simulation parameters and initial state.
//!
//! Bodies and geometries are referenced by name. Placements are a translation
//! plus a unit quaternion `[x, y, z, w]`. The shipped `scenes/scene.schema.json`
//! documents the format.

use std::path::Path;

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::collision::{GeometryPrimitive, DEFAULT_MARGIN};
use crate::contact::{ModeThresholds, SolverOptions};
use crate::error::{Result, SimError};
use crate::model::{
    Body, BodyInertia, CollisionPair, Geometry, JointKind, JointSpec, KinematicModel, Tangent, DEFAULT_GRAVITY,
};
use crate::simulator::{Baumgarte, SimParams, SimState};
use crate::spatial::Placement;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub bodies: Vec<BodyDesc>,
    #[serde(default)]
    pub geometries: Vec<GeometryDesc>,
    #[serde(default)]
    pub pairs: Vec<PairDesc>,
    #[serde(default = "default_gravity")]
    pub gravity: [f64; 3],
    #[serde(default)]
    pub params: ParamsDesc,
    #[serde(default)]
    pub initial: InitialDesc,
}

fn default_gravity() -> [f64; 3] {
    DEFAULT_GRAVITY
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BodyDesc {
    pub name: String,
    pub mass: f64,
    /// Rotational inertia about the center of mass, `[Ixx, Iyy, Izz]`.
    pub inertia_diag: [f64; 3],
    /// `[Ixy, Ixz, Iyz]`.
    #[serde(default, skip_serializing_if = "is_zero3")]
    pub inertia_offdiag: [f64; 3],
    #[serde(default, skip_serializing_if = "is_zero3")]
    pub com: [f64; 3],
    pub joint: JointDesc,
    /// Defaults to true for revolute and prismatic joints.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub actuated: Option<bool>,
}

fn is_zero3(x: &[f64; 3]) -> bool {
    x.iter().all(|v| *v == 0.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JointKindDesc {
    Free,
    Revolute,
    Prismatic,
    Fixed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointDesc {
    pub kind: JointKindDesc,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub axis: Option<[f64; 3]>,
    #[serde(default)]
    pub placement: PlacementDesc,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlacementDesc {
    #[serde(default)]
    pub translation: [f64; 3],
    /// Unit quaternion `[x, y, z, w]`.
    #[serde(default = "identity_quaternion")]
    pub quaternion: [f64; 4],
}

fn identity_quaternion() -> [f64; 4] {
    [0.0, 0.0, 0.0, 1.0]
}

impl Default for PlacementDesc {
    fn default() -> Self {
        Self { translation: [0.0; 3], quaternion: identity_quaternion() }
    }
}

impl PlacementDesc {
    fn build(&self, at: &str) -> Result<Placement> {
        let [x, y, z, w] = self.quaternion;
        let norm = (x * x + y * y + z * z + w * w).sqrt();
        if (norm - 1.0).abs() > 1e-9 {
            return Err(field_error(at, "quaternion", "must have unit norm"));
        }
        let q = UnitQuaternion::new_unchecked(nalgebra::Quaternion::new(w, x, y, z));
        Ok(Placement::from_quaternion(&q, Vector3::from(self.translation)))
    }

    fn from_placement(p: &Placement) -> Self {
        let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(p.rotation));
        Self { translation: p.translation.into(), quaternion: [q.i, q.j, q.k, q.w] }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeDesc {
    Halfspace,
    Sphere,
    Box,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShapeParams {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub half_extents: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normal: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offset: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryDesc {
    pub name: String,
    /// Owning body; omitted or null for the world.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub body: Option<String>,
    pub shape: ShapeDesc,
    #[serde(default)]
    pub params: ShapeParams,
    #[serde(default)]
    pub placement: PlacementDesc,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairDesc {
    pub a: String,
    pub b: String,
    pub mu: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsDesc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baumgarte_kp: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baumgarte_kd: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ncp_tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ncp_max_iters: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub margin: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps_lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps_slide: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps_cone: Option<f64>,
}

impl ParamsDesc {
    fn build(&self) -> SimParams {
        let d = SimParams::default();
        let t = ModeThresholds::default();
        let baumgarte = match (self.baumgarte_kp, self.baumgarte_kd) {
            (None, None) => None,
            (kp, kd) => Some(Baumgarte { kp: kp.unwrap_or(0.0), kd: kd.unwrap_or(0.0) }),
        };
        SimParams {
            dt: self.dt.unwrap_or(d.dt),
            baumgarte,
            solver: SolverOptions {
                tol: self.ncp_tol.unwrap_or(d.solver.tol),
                max_iters: self.ncp_max_iters.unwrap_or(d.solver.max_iters),
                thresholds: ModeThresholds {
                    eps_lambda: self.eps_lambda.unwrap_or(t.eps_lambda),
                    eps_slide: self.eps_slide.unwrap_or(t.eps_slide),
                    eps_cone: self.eps_cone.unwrap_or(t.eps_cone),
                },
            },
            margin: self.margin.unwrap_or(DEFAULT_MARGIN),
        }
    }

    fn from_params(p: &SimParams) -> Self {
        Self {
            dt: Some(p.dt),
            baumgarte_kp: p.baumgarte.map(|b| b.kp),
            baumgarte_kd: p.baumgarte.map(|b| b.kd),
            ncp_tol: Some(p.solver.tol),
            ncp_max_iters: Some(p.solver.max_iters),
            margin: Some(p.margin),
            eps_lambda: Some(p.solver.thresholds.eps_lambda),
            eps_slide: Some(p.solver.thresholds.eps_slide),
            eps_cone: Some(p.solver.thresholds.eps_cone),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialDesc {
    /// Defaults to the neutral configuration.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<Vec<f64>>,
    /// Defaults to zero.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v: Option<Vec<f64>>,
    /// Constant generalized torque; defaults to zero.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<Vec<f64>>,
}

/// A loaded scene.
#[derive(Clone, Debug)]
pub struct Scene {
    pub name: String,
    pub model: KinematicModel,
    pub state: SimState,
    pub params: SimParams,
    pub tau: Tangent,
}

fn field_error(at: &str, field: &str, message: &str) -> SimError {
    SimError::Scene { path: format!("{at}.{field}"), message: message.into() }
}

fn vec3(a: &[f64; 3]) -> Vector3<f64> {
    Vector3::from(*a)
}

impl SceneFile {
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| SimError::Scene { path: origin.into(), message: e.to_string() })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scene files always serialize")
    }

    pub fn build(&self) -> Result<Scene> {
        let body_index = |name: &str, at: &str, field: &str| {
            self.bodies
                .iter()
                .position(|b| b.name == name)
                .ok_or_else(|| field_error(at, field, &format!("unknown body '{name}'")))
        };
        let mut bodies = Vec::with_capacity(self.bodies.len());
        for (i, b) in self.bodies.iter().enumerate() {
            let at = format!("bodies[{i}]");
            if self.bodies[..i].iter().any(|o| o.name == b.name) {
                return Err(field_error(&at, "name", &format!("duplicate body name '{}'", b.name)));
            }
            let parent = match &b.joint.parent {
                Some(p) => Some(body_index(p, &at, "joint.parent")?),
                None => None,
            };
            let axis = || {
                b.joint
                    .axis
                    .map(|a| vec3(&a))
                    .ok_or_else(|| field_error(&at, "joint.axis", "required for revolute and prismatic joints"))
            };
            let kind = match b.joint.kind {
                JointKindDesc::Free => JointKind::Free,
                JointKindDesc::Fixed => JointKind::Fixed,
                JointKindDesc::Revolute => JointKind::Revolute { axis: axis()? },
                JointKindDesc::Prismatic => JointKind::Prismatic { axis: axis()? },
            };
            if !(b.mass > 0.0) {
                return Err(field_error(&at, "mass", "must be positive"));
            }
            let [ixx, iyy, izz] = b.inertia_diag;
            let [ixy, ixz, iyz] = b.inertia_offdiag;
            let inertia = Matrix3::new(ixx, ixy, ixz, ixy, iyy, iyz, ixz, iyz, izz);
            if inertia.symmetric_eigenvalues().min() < 0.0 {
                return Err(field_error(&at, "inertia_diag", "inertia must be positive semidefinite"));
            }
            let actuated =
                b.actuated.unwrap_or(matches!(kind, JointKind::Revolute { .. } | JointKind::Prismatic { .. }));
            bodies.push(Body {
                name: b.name.clone(),
                joint: JointSpec {
                    kind,
                    parent,
                    placement_in_parent: b.joint.placement.build(&format!("{at}.joint.placement"))?,
                },
                inertia: BodyInertia::new(b.mass, inertia, vec3(&b.com)),
                actuated,
            });
        }
        let mut geometries = Vec::with_capacity(self.geometries.len());
        for (i, g) in self.geometries.iter().enumerate() {
            let at = format!("geometries[{i}]");
            let body = match &g.body {
                Some(b) => Some(body_index(b, &at, "body")?),
                None => None,
            };
            let need = |v: Option<f64>, f: &str| {
                v.ok_or_else(|| field_error(&at, &format!("params.{f}"), "required for this shape"))
            };
            let shape = match g.shape {
                ShapeDesc::Sphere => GeometryPrimitive::Sphere { radius: need(g.params.radius, "radius")? },
                ShapeDesc::Box => GeometryPrimitive::Box {
                    half_extents: vec3(
                        &g.params
                            .half_extents
                            .ok_or_else(|| field_error(&at, "params.half_extents", "required for this shape"))?,
                    ),
                },
                ShapeDesc::Halfspace => GeometryPrimitive::HalfSpace {
                    normal: vec3(
                        &g.params.normal.ok_or_else(|| field_error(&at, "params.normal", "required for this shape"))?,
                    ),
                    offset: g.params.offset.unwrap_or(0.0),
                },
            };
            shape.validate().map_err(|m| field_error(&at, "params", &m))?;
            geometries.push(Geometry { body, shape, placement: g.placement.build(&format!("{at}.placement"))? });
        }
        let geom_index = |name: &str, at: &str, field: &str| {
            self.geometries
                .iter()
                .position(|g| g.name == name)
                .ok_or_else(|| field_error(at, field, &format!("unknown geometry '{name}'")))
        };
        let mut pairs = Vec::with_capacity(self.pairs.len());
        for (i, p) in self.pairs.iter().enumerate() {
            let at = format!("pairs[{i}]");
            pairs.push(CollisionPair {
                geom1: geom_index(&p.a, &at, "a")?,
                geom2: geom_index(&p.b, &at, "b")?,
                mu: p.mu,
            });
        }
        let model = KinematicModel::new(bodies, geometries, pairs, vec3(&self.gravity))?;
        let params = self.params.build();
        params.validate()?;
        let q = match &self.initial.q {
            Some(q) => {
                if q.len() != model.nq() {
                    return Err(field_error(
                        "initial",
                        "q",
                        &format!("expected {} entries, got {}", model.nq(), q.len()),
                    ));
                }
                Tangent::from_column_slice(q)
            }
            None => model.neutral(),
        };
        model.check_configuration(&q).map_err(|e| field_error("initial", "q", &e.to_string()))?;
        let tangent = |v: &Option<Vec<f64>>, field: &str| match v {
            Some(v) if v.len() != model.nv() => {
                Err(field_error("initial", field, &format!("expected {} entries, got {}", model.nv(), v.len())))
            }
            Some(v) => Ok(Tangent::from_column_slice(v)),
            None => Ok(Tangent::zeros(model.nv())),
        };
        let v = tangent(&self.initial.v, "v")?;
        let tau = tangent(&self.initial.tau, "tau")?;
        Ok(Scene {
            name: self.name.clone().unwrap_or_else(|| "scene".into()),
            model,
            state: SimState::new(q, v),
            params,
            tau,
        })
    }

    /// Inverse of [`SceneFile::build`]; geometries are named `g0, g1, …`.
    pub fn from_scene(scene: &Scene) -> Self {
        let m = &scene.model;
        let bodies = m
            .bodies()
            .iter()
            .map(|b| {
                let i = &b.inertia.inertia;
                let (kind, axis) = match &b.joint.kind {
                    JointKind::Free => (JointKindDesc::Free, None),
                    JointKind::Fixed => (JointKindDesc::Fixed, None),
                    JointKind::Revolute { axis } => (JointKindDesc::Revolute, Some((*axis).into())),
                    JointKind::Prismatic { axis } => (JointKindDesc::Prismatic, Some((*axis).into())),
                };
                BodyDesc {
                    name: b.name.clone(),
                    mass: b.inertia.mass,
                    inertia_diag: [i[(0, 0)], i[(1, 1)], i[(2, 2)]],
                    inertia_offdiag: [i[(0, 1)], i[(0, 2)], i[(1, 2)]],
                    com: b.inertia.com.into(),
                    joint: JointDesc {
                        kind,
                        parent: b.joint.parent.map(|p| m.bodies()[p].name.clone()),
                        axis,
                        placement: PlacementDesc::from_placement(&b.joint.placement_in_parent),
                    },
                    actuated: Some(b.actuated),
                }
            })
            .collect();
        let geometries = m
            .geometries()
            .iter()
            .enumerate()
            .map(|(k, g)| {
                let (shape, params) = match &g.shape {
                    GeometryPrimitive::Sphere { radius } => {
                        (ShapeDesc::Sphere, ShapeParams { radius: Some(*radius), ..Default::default() })
                    }
                    GeometryPrimitive::Box { half_extents } => (
                        ShapeDesc::Box,
                        ShapeParams { half_extents: Some((*half_extents).into()), ..Default::default() },
                    ),
                    GeometryPrimitive::HalfSpace { normal, offset } => (
                        ShapeDesc::Halfspace,
                        ShapeParams { normal: Some((*normal).into()), offset: Some(*offset), ..Default::default() },
                    ),
                };
                GeometryDesc {
                    name: format!("g{k}"),
                    body: g.body.map(|b| m.bodies()[b].name.clone()),
                    shape,
                    params,
                    placement: PlacementDesc::from_placement(&g.placement),
                }
            })
            .collect();
        let pairs = m
            .pairs()
            .iter()
            .map(|p| PairDesc { a: format!("g{}", p.geom1), b: format!("g{}", p.geom2), mu: p.mu })
            .collect();
        Self {
            name: Some(scene.name.clone()),
            bodies,
            geometries,
            pairs,
            gravity: m.gravity().into(),
            params: ParamsDesc::from_params(&scene.params),
            initial: InitialDesc {
                q: Some(scene.state.q.iter().copied().collect()),
                v: Some(scene.state.v.iter().copied().collect()),
                tau: Some(scene.tau.iter().copied().collect()),
            },
        }
    }
}

pub fn parse_scene(text: &str, origin: &str) -> Result<Scene> {
    let file = SceneFile::parse(text, origin)?;
    let mut scene = file.build().map_err(|e| match e {
        SimError::Scene { path, message } => SimError::Scene { path: format!("{origin}: {path}"), message },
        other => other,
    })?;
    if file.name.is_none() {
        if let Some(stem) = Path::new(origin).file_stem() {
            scene.name = stem.to_string_lossy().into_owned();
        }
    }
    Ok(scene)
}

pub fn load_scene(path: impl AsRef<Path>) -> Result<Scene> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| SimError::Scene { path: path.display().to_string(), message: e.to_string() })?;
    parse_scene(&text, &path.display().to_string())
}

pub fn dump_scene(scene: &Scene) -> String {
    SceneFile::from_scene(scene).to_json()
}

/// Names of the scenes shipped with the crate.
pub const BUNDLED_SCENES: &[&str] =
    &["cube_on_plane", "cube_slide", "chain12", "quadruped", "free_fall", "sphere_drop"];

pub fn bundled_scene_source(name: &str) -> Option<&'static str> {
    let name = name.strip_suffix(".json").unwrap_or(name);
    Some(match name {
        "cube_on_plane" => include_str!("../scenes/cube_on_plane.json"),
        "cube_slide" => include_str!("../scenes/cube_slide.json"),
        "chain12" => include_str!("../scenes/chain12.json"),
        "quadruped" => include_str!("../scenes/quadruped.json"),
        "free_fall" => include_str!("../scenes/free_fall.json"),
        "sphere_drop" => include_str!("../scenes/sphere_drop.json"),
        _ => return None,
    })
}

pub fn bundled_scene(name: &str) -> Result<Scene> {
    let src = bundled_scene_source(name)
        .ok_or_else(|| SimError::Scene { path: name.into(), message: "no bundled scene with this name".into() })?;
    parse_scene(src, &format!("{}.json", name.strip_suffix(".json").unwrap_or(name)))
}

/// Loads a file if `spec` names one, otherwise a bundled scene of that name.
pub fn resolve_scene(spec: &str) -> Result<Scene> {
    if Path::new(spec).exists() {
        return load_scene(spec);
    }
    let base = Path::new(spec).file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default();
    match bundled_scene_source(&base) {
        Some(_) => bundled_scene(&base),
        None => load_scene(spec),
    }
}
