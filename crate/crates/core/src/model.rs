//! Kinematic trees: joints, configuration-space geometry, forward kinematics
//! and kinematic Jacobians.
//!
//! Every body owns the joint connecting it to its parent. The body frame is
//! the joint frame after the joint motion, so
//! `⁰M_i = ⁰M_parent · placement_in_parent · X_J(q_i)`.
//!
//! Velocities are body-local spatial motions. A free joint stores
//! `(translation, quaternion [x, y, z, w])` in `q` and a local twist
//! `[ω; v]` in the tangent, integrated as `M ← M·exp(δ)`.

use nalgebra::{DMatrix, DVector, Matrix3, Matrix6, Matrix6xX, Quaternion, UnitQuaternion, Vector3, Vector6};

use crate::collision::GeometryPrimitive;
use crate::error::{check_dim, Result, SimError};
use crate::spatial::{cross_motion, exp6, log6, se3_right_jacobian, skew, stack, Placement};

pub type Configuration = DVector<f64>;
pub type Tangent = DVector<f64>;

#[derive(Clone, Debug, PartialEq)]
pub enum JointKind {
    Free,
    Revolute { axis: Vector3<f64> },
    Prismatic { axis: Vector3<f64> },
    Fixed,
}

impl JointKind {
    pub fn nq(&self) -> usize {
        match self {
            JointKind::Free => 7,
            JointKind::Revolute { .. } | JointKind::Prismatic { .. } => 1,
            JointKind::Fixed => 0,
        }
    }

    pub fn nv(&self) -> usize {
        match self {
            JointKind::Free => 6,
            JointKind::Revolute { .. } | JointKind::Prismatic { .. } => 1,
            JointKind::Fixed => 0,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            JointKind::Free => "free",
            JointKind::Revolute { .. } => "revolute",
            JointKind::Prismatic { .. } => "prismatic",
            JointKind::Fixed => "fixed",
        }
    }

    /// Motion subspace columns, expressed in the child body frame.
    fn subspace(&self) -> Vec<Vector6<f64>> {
        match self {
            JointKind::Free => (0..6)
                .map(|k| {
                    let mut e = Vector6::zeros();
                    e[k] = 1.0;
                    e
                })
                .collect(),
            JointKind::Revolute { axis } => vec![stack(axis, &Vector3::zeros())],
            JointKind::Prismatic { axis } => vec![stack(&Vector3::zeros(), axis)],
            JointKind::Fixed => Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct JointSpec {
    pub kind: JointKind,
    pub parent: Option<usize>,
    pub placement_in_parent: Placement,
}

/// Mass properties of a body, expressed in the body frame.
#[derive(Clone, Debug, PartialEq)]
pub struct BodyInertia {
    pub mass: f64,
    /// Rotational inertia about the center of mass.
    pub inertia: Matrix3<f64>,
    pub com: Vector3<f64>,
}

impl BodyInertia {
    pub fn new(mass: f64, inertia: Matrix3<f64>, com: Vector3<f64>) -> Self {
        Self { mass, inertia, com }
    }

    pub fn uniform_box(mass: f64, half_extents: Vector3<f64>) -> Self {
        let (x, y, z) = (2.0 * half_extents.x, 2.0 * half_extents.y, 2.0 * half_extents.z);
        let d = Vector3::new(y * y + z * z, x * x + z * z, x * x + y * y) * (mass / 12.0);
        Self { mass, inertia: Matrix3::from_diagonal(&d), com: Vector3::zeros() }
    }

    pub fn solid_sphere(mass: f64, radius: f64) -> Self {
        let i = 0.4 * mass * radius * radius;
        Self { mass, inertia: Matrix3::from_diagonal_element(i), com: Vector3::zeros() }
    }

    /// 6×6 spatial inertia about the body origin.
    pub fn spatial(&self) -> Matrix6<f64> {
        let c = skew(&self.com);
        let m = self.mass;
        let mut out = Matrix6::zeros();
        out.fixed_view_mut::<3, 3>(0, 0).copy_from(&(self.inertia - m * c * c));
        out.fixed_view_mut::<3, 3>(0, 3).copy_from(&(m * c));
        out.fixed_view_mut::<3, 3>(3, 0).copy_from(&(-m * c));
        out.fixed_view_mut::<3, 3>(3, 3).copy_from(&Matrix3::from_diagonal_element(m));
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Body {
    pub name: String,
    pub joint: JointSpec,
    pub inertia: BodyInertia,
    /// Whether the joint coordinates of this body receive actuator torques.
    pub actuated: bool,
}

/// A collision shape rigidly attached to a body (or to the world when `body` is `None`).
#[derive(Clone, Debug, PartialEq)]
pub struct Geometry {
    pub body: Option<usize>,
    pub shape: GeometryPrimitive,
    pub placement: Placement,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CollisionPair {
    pub geom1: usize,
    pub geom2: usize,
    pub mu: f64,
}

/// Immutable description of an articulated system and its environment.
#[derive(Clone, Debug)]
pub struct KinematicModel {
    bodies: Vec<Body>,
    geometries: Vec<Geometry>,
    pairs: Vec<CollisionPair>,
    gravity: Vector3<f64>,
    idx_q: Vec<usize>,
    idx_v: Vec<usize>,
    subspaces: Vec<Vec<Vector6<f64>>>,
    spatial_inertias: Vec<Matrix6<f64>>,
    // supports[i][j]: body j lies on the path from the root to body i (inclusive).
    supports: Vec<Vec<bool>>,
    dof_body: Vec<usize>,
    nq: usize,
    nv: usize,
}

pub const DEFAULT_GRAVITY: [f64; 3] = [0.0, 0.0, -9.81];

impl KinematicModel {
    pub fn new(
        bodies: Vec<Body>,
        geometries: Vec<Geometry>,
        pairs: Vec<CollisionPair>,
        gravity: Vector3<f64>,
    ) -> Result<Self> {
        let nb = bodies.len();
        let mut idx_q = Vec::with_capacity(nb);
        let mut idx_v = Vec::with_capacity(nb);
        let mut subspaces = Vec::with_capacity(nb);
        let mut supports = vec![vec![false; nb]; nb];
        let mut dof_body = Vec::new();
        let (mut nq, mut nv) = (0, 0);
        for (i, b) in bodies.iter().enumerate() {
            if let Some(p) = b.joint.parent {
                if p >= i {
                    return Err(SimError::InvalidModel(format!(
                        "body {i} ({}) has parent {p}; parents must precede children",
                        b.name
                    )));
                }
                let parent_support = supports[p].clone();
                supports[i] = parent_support;
            }
            supports[i][i] = true;
            match &b.joint.kind {
                JointKind::Revolute { axis } | JointKind::Prismatic { axis } if (axis.norm() - 1.0).abs() > 1e-9 => {
                    return Err(SimError::InvalidModel(format!(
                        "joint axis of body {i} ({}) is not unit norm",
                        b.name
                    )));
                }
                _ => {}
            }
            if !(b.inertia.mass > 0.0) {
                return Err(SimError::InvalidModel(format!("body {i} ({}) must have positive mass", b.name)));
            }
            let sym = (b.inertia.inertia - b.inertia.inertia.transpose()).norm();
            let eig = b.inertia.inertia.symmetric_eigenvalues();
            if sym > 1e-12 || eig.min() <= 0.0 {
                return Err(SimError::InvalidModel(format!(
                    "inertia of body {i} ({}) must be symmetric positive definite",
                    b.name
                )));
            }
            if b.joint.placement_in_parent.orthonormality_error() > 1e-10 {
                return Err(SimError::InvalidModel(format!(
                    "joint placement of body {i} ({}) is not a rigid transform",
                    b.name
                )));
            }
            idx_q.push(nq);
            idx_v.push(nv);
            nq += b.joint.kind.nq();
            nv += b.joint.kind.nv();
            dof_body.extend(std::iter::repeat_n(i, b.joint.kind.nv()));
            subspaces.push(b.joint.kind.subspace());
        }
        for (k, g) in geometries.iter().enumerate() {
            if let Some(b) = g.body {
                if b >= nb {
                    return Err(SimError::InvalidModel(format!("geometry {k} references unknown body {b}")));
                }
            }
            g.shape.validate().map_err(|m| SimError::InvalidModel(format!("geometry {k}: {m}")))?;
        }
        for (k, p) in pairs.iter().enumerate() {
            if p.geom1 >= geometries.len() || p.geom2 >= geometries.len() {
                return Err(SimError::InvalidModel(format!("pair {k} references unknown geometry")));
            }
            if !(p.mu >= 0.0) {
                return Err(SimError::InvalidModel(format!("pair {k} has negative friction")));
            }
        }
        let spatial_inertias = bodies.iter().map(|b| b.inertia.spatial()).collect();
        Ok(Self {
            bodies,
            geometries,
            pairs,
            gravity,
            idx_q,
            idx_v,
            subspaces,
            spatial_inertias,
            supports,
            dof_body,
            nq,
            nv,
        })
    }

    pub fn nq(&self) -> usize {
        self.nq
    }
    pub fn nv(&self) -> usize {
        self.nv
    }
    pub fn nbodies(&self) -> usize {
        self.bodies.len()
    }
    pub fn bodies(&self) -> &[Body] {
        &self.bodies
    }
    pub fn geometries(&self) -> &[Geometry] {
        &self.geometries
    }
    pub fn pairs(&self) -> &[CollisionPair] {
        &self.pairs
    }
    pub fn gravity(&self) -> Vector3<f64> {
        self.gravity
    }
    pub fn idx_q(&self, body: usize) -> usize {
        self.idx_q[body]
    }
    pub fn idx_v(&self, body: usize) -> usize {
        self.idx_v[body]
    }
    pub fn joint_nv(&self, body: usize) -> usize {
        self.subspaces[body].len()
    }
    pub fn parent(&self, body: usize) -> Option<usize> {
        self.bodies[body].joint.parent
    }
    pub(crate) fn subspace(&self, body: usize) -> &[Vector6<f64>] {
        &self.subspaces[body]
    }
    pub(crate) fn spatial_inertia(&self, body: usize) -> &Matrix6<f64> {
        &self.spatial_inertias[body]
    }
    /// Body owning tangent coordinate `dof`.
    pub fn dof_body(&self, dof: usize) -> usize {
        self.dof_body[dof]
    }
    /// `true` when body `j` lies on the kinematic path from the root to body `i`.
    pub fn supports(&self, i: usize, j: usize) -> bool {
        self.supports[i][j]
    }

    /// Returns a copy of the model with some geometry placements replaced.
    pub fn with_geometry_placement(&self, geom: usize, placement: Placement) -> Self {
        let mut m = self.clone();
        m.geometries[geom].placement = placement;
        m
    }

    pub fn with_friction(&self, pair: usize, mu: f64) -> Self {
        let mut m = self.clone();
        m.pairs[pair].mu = mu;
        m
    }

    /// Identity placements for free joints, zero for 1-dof joints.
    pub fn neutral(&self) -> Configuration {
        let mut q = DVector::zeros(self.nq);
        for (i, b) in self.bodies.iter().enumerate() {
            if b.joint.kind == JointKind::Free {
                q[self.idx_q[i] + 6] = 1.0;
            }
        }
        q
    }

    /// Actuation selection matrix `S` (n_a × n_v), rows of the identity.
    pub fn actuation(&self) -> DMatrix<f64> {
        let rows: Vec<usize> = (0..self.nv).filter(|&d| self.bodies[self.dof_body[d]].actuated).collect();
        let mut s = DMatrix::zeros(rows.len(), self.nv);
        for (r, &d) in rows.iter().enumerate() {
            s[(r, d)] = 1.0;
        }
        s
    }

    pub fn check_configuration(&self, q: &Configuration) -> Result<()> {
        check_dim("configuration", self.nq, q.len())?;
        for (i, b) in self.bodies.iter().enumerate() {
            if b.joint.kind == JointKind::Free {
                let n = q.rows(self.idx_q[i] + 3, 4).norm();
                if (n - 1.0).abs() > 1e-9 {
                    return Err(SimError::InvalidParameter(format!("quaternion of body {i} has norm {n}")));
                }
            }
        }
        Ok(())
    }

    /// Joint transform `X_J(q_i)` of body `i`.
    fn joint_transform(&self, i: usize, q: &Configuration) -> Placement {
        let iq = self.idx_q[i];
        match &self.bodies[i].joint.kind {
            JointKind::Free => free_placement(q, iq),
            JointKind::Revolute { axis } => Placement::from_rotation(crate::spatial::exp3(&(axis * q[iq]))),
            JointKind::Prismatic { axis } => Placement::from_translation(axis * q[iq]),
            JointKind::Fixed => Placement::identity(),
        }
    }

    /// Joint velocity `S_i q̇_i` in the body frame.
    pub(crate) fn joint_velocity(&self, i: usize, v: &Tangent) -> Vector6<f64> {
        let iv = self.idx_v[i];
        self.subspaces[i].iter().enumerate().fold(Vector6::zeros(), |acc, (k, s)| acc + s * v[iv + k])
    }
}

fn free_placement(q: &Configuration, iq: usize) -> Placement {
    let t = Vector3::new(q[iq], q[iq + 1], q[iq + 2]);
    let quat = UnitQuaternion::new_normalize(Quaternion::new(q[iq + 6], q[iq + 3], q[iq + 4], q[iq + 5]));
    Placement::from_quaternion(&quat, t)
}

/// Configuration increment `q ⊕ δ`.
pub fn integrate(model: &KinematicModel, q: &Configuration, delta: &Tangent) -> Result<Configuration> {
    check_dim("configuration", model.nq, q.len())?;
    check_dim("tangent", model.nv, delta.len())?;
    Ok(integrate_unchecked(model, q, delta))
}

pub(crate) fn integrate_unchecked(model: &KinematicModel, q: &Configuration, delta: &Tangent) -> Configuration {
    let mut out = q.clone();
    for (i, b) in model.bodies.iter().enumerate() {
        let (iq, iv) = (model.idx_q[i], model.idx_v[i]);
        match b.joint.kind {
            JointKind::Free => {
                let m = free_placement(q, iq);
                let xi = Vector6::from_iterator(delta.rows(iv, 6).iter().copied());
                let quat_old =
                    UnitQuaternion::new_normalize(Quaternion::new(q[iq + 6], q[iq + 3], q[iq + 4], q[iq + 5]));
                let inc = exp6(&xi);
                let t = m.rotation * inc.translation + m.translation;
                let w = Vector3::new(xi[0], xi[1], xi[2]);
                let mut quat = quat_old * UnitQuaternion::from_scaled_axis(w);
                // keep the stored hemisphere continuous with the input
                if quat.coords.dot(&quat_old.coords) < 0.0 {
                    quat = UnitQuaternion::new_unchecked(-quat.into_inner());
                }
                out[iq] = t.x;
                out[iq + 1] = t.y;
                out[iq + 2] = t.z;
                out[iq + 3] = quat.i;
                out[iq + 4] = quat.j;
                out[iq + 5] = quat.k;
                out[iq + 6] = quat.w;
            }
            JointKind::Revolute { .. } | JointKind::Prismatic { .. } => {
                out[iq] = q[iq] + delta[iv];
            }
            JointKind::Fixed => {}
        }
    }
    out
}

/// Tangent `δ` such that `q0 ⊕ δ = q1`, taking the shortest rotation arc.
pub fn difference(model: &KinematicModel, q0: &Configuration, q1: &Configuration) -> Result<Tangent> {
    check_dim("configuration", model.nq, q0.len())?;
    check_dim("configuration", model.nq, q1.len())?;
    let mut out = DVector::zeros(model.nv);
    for (i, b) in model.bodies.iter().enumerate() {
        let (iq, iv) = (model.idx_q[i], model.idx_v[i]);
        match b.joint.kind {
            JointKind::Free => {
                let m0 = free_placement(q0, iq);
                let m1 = free_placement(q1, iq);
                let xi = log6(&m0.inv_times(&m1));
                out.rows_mut(iv, 6).copy_from(&xi);
            }
            JointKind::Revolute { .. } | JointKind::Prismatic { .. } => {
                out[iv] = q1[iq] - q0[iq];
            }
            JointKind::Fixed => {}
        }
    }
    Ok(out)
}

/// Partials of `q ⊕ δ` in tangent coordinates: `(∂/∂q, ∂/∂δ)`.
pub fn integrate_jacobians(
    model: &KinematicModel,
    _q: &Configuration,
    delta: &Tangent,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    check_dim("tangent", model.nv, delta.len())?;
    let mut jq = DMatrix::identity(model.nv, model.nv);
    let mut jd = DMatrix::identity(model.nv, model.nv);
    for (i, b) in model.bodies.iter().enumerate() {
        if b.joint.kind == JointKind::Free {
            let iv = model.idx_v[i];
            let xi = Vector6::from_iterator(delta.rows(iv, 6).iter().copied());
            let ad_inv = crate::spatial::adjoint(&exp6(&(-xi)));
            jq.view_mut((iv, iv), (6, 6)).copy_from(&ad_inv);
            jd.view_mut((iv, iv), (6, 6)).copy_from(&se3_right_jacobian(&xi));
        }
    }
    Ok((jq, jd))
}

/// `∂ difference(q0, q1) / ∂q1` in tangent coordinates at `q1`.
pub fn difference_jacobian_q1(model: &KinematicModel, q0: &Configuration, q1: &Configuration) -> Result<DMatrix<f64>> {
    let d = difference(model, q0, q1)?;
    let mut j = DMatrix::identity(model.nv, model.nv);
    for (i, b) in model.bodies.iter().enumerate() {
        if b.joint.kind == JointKind::Free {
            let iv = model.idx_v[i];
            let xi = Vector6::from_iterator(d.rows(iv, 6).iter().copied());
            let jr = se3_right_jacobian(&xi);
            let inv = jr.try_inverse().ok_or_else(|| SimError::InvalidParameter("log Jacobian is singular".into()))?;
            j.view_mut((iv, iv), (6, 6)).copy_from(&inv);
        }
    }
    Ok(j)
}

/// Placements of every body, both world (`⁰M_i`) and parent-relative (`λM_i`).
#[derive(Clone, Debug)]
pub struct FrameData {
    pub world: Vec<Placement>,
    pub local: Vec<Placement>,
}

impl FrameData {
    pub fn compute(model: &KinematicModel, q: &Configuration) -> Self {
        let nb = model.nbodies();
        let mut world = Vec::with_capacity(nb);
        let mut local = Vec::with_capacity(nb);
        for i in 0..nb {
            let joint = &model.bodies[i].joint;
            let rel = joint.placement_in_parent * model.joint_transform(i, q);
            let w = match joint.parent {
                Some(p) => world[p] * rel,
                None => rel,
            };
            local.push(rel);
            world.push(w);
        }
        Self { world, local }
    }

    /// World placement of a body, identity for the world itself.
    pub fn body_placement(&self, body: Option<usize>) -> Placement {
        body.map_or_else(Placement::identity, |b| self.world[b])
    }
}

/// World placement of every body.
pub fn forward_kinematics(model: &KinematicModel, q: &Configuration) -> Vec<Placement> {
    FrameData::compute(model, q).world
}

/// Body-local spatial velocities.
pub fn body_velocities(model: &KinematicModel, frames: &FrameData, v: &Tangent) -> Vec<Vector6<f64>> {
    let nb = model.nbodies();
    let mut out: Vec<Vector6<f64>> = Vec::with_capacity(nb);
    for i in 0..nb {
        let vj = model.joint_velocity(i, v);
        let vi = match model.parent(i) {
            Some(p) => frames.local[i].act_inv_motion(&out[p]) + vj,
            None => vj,
        };
        out.push(vi);
    }
    out
}

/// World-frame motion subspace columns for every tangent coordinate, `⁰X_j S_j`.
pub fn world_jacobian(model: &KinematicModel, frames: &FrameData) -> Matrix6xX<f64> {
    let mut j = Matrix6xX::zeros(model.nv);
    for b in 0..model.nbodies() {
        let iv = model.idx_v[b];
        for (k, s) in model.subspaces[b].iter().enumerate() {
            j.set_column(iv + k, &frames.world[b].act_motion(s));
        }
    }
    j
}

/// Body Jacobian `J_i` such that `J_i v` is the body-local velocity of body `i`.
pub fn body_jacobian(model: &KinematicModel, frames: &FrameData, jw: &Matrix6xX<f64>, body: usize) -> Matrix6xX<f64> {
    let mut j = Matrix6xX::zeros(model.nv);
    let m = &frames.world[body];
    for d in 0..model.nv {
        if model.supports[body][model.dof_body[d]] {
            let col = jw.column(d).into_owned();
            j.set_column(d, &m.act_inv_motion(&col));
        }
    }
    j
}

/// `∂(J_i v)/∂q` for body `i` at fixed `v`, as a 6×n_v matrix in body coordinates.
///
/// Perturbing coordinate `d` of joint `j` right-multiplies `λM_j` by
/// `exp(S δ)`, so the world-frame variation is `−(⁰X_j S) ×̱ ⁰v_{λ(j)}`.
pub fn body_velocity_derivative(
    model: &KinematicModel,
    frames: &FrameData,
    jw: &Matrix6xX<f64>,
    world_velocities: &[Vector6<f64>],
    body: usize,
) -> Matrix6xX<f64> {
    let mut out = Matrix6xX::zeros(model.nv);
    let m = &frames.world[body];
    for d in 0..model.nv {
        let jb = model.dof_body[d];
        if !model.supports[body][jb] {
            continue;
        }
        if let Some(p) = model.parent(jb) {
            let s = jw.column(d).into_owned();
            let dv = -cross_motion(&s, &world_velocities[p]);
            out.set_column(d, &m.act_inv_motion(&dv));
        }
    }
    out
}

/// World-frame spatial velocities `⁰X_i v_i`.
pub fn world_velocities(frames: &FrameData, local: &[Vector6<f64>]) -> Vec<Vector6<f64>> {
    frames.world.iter().zip(local).map(|(m, v)| m.act_motion(v)).collect()
}

/// A frame rigidly attached to a body, or anchored to the world.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Frame {
    pub body: Option<usize>,
    pub placement: Placement,
}

impl Frame {
    pub fn on_body(body: usize, placement: Placement) -> Self {
        Self { body: Some(body), placement }
    }

    pub fn world(placement: Placement) -> Self {
        Self { body: None, placement }
    }

    fn check(&self, model: &KinematicModel) -> Result<()> {
        match self.body {
            Some(b) if b >= model.nbodies() => Err(SimError::UnknownBody(b)),
            _ => Ok(()),
        }
    }
}

/// Spatial velocity of the frame, expressed in the frame.
pub fn frame_velocity(
    model: &KinematicModel,
    q: &Configuration,
    v: &Tangent,
    frame: &Frame,
) -> Result<crate::spatial::SpatialMotion> {
    frame.check(model)?;
    check_dim("configuration", model.nq, q.len())?;
    check_dim("tangent", model.nv, v.len())?;
    let Some(b) = frame.body else {
        return Ok(crate::spatial::SpatialMotion::zero());
    };
    let frames = FrameData::compute(model, q);
    let vel = body_velocities(model, &frames, v);
    Ok(crate::spatial::SpatialMotion(frame.placement.act_inv_motion(&vel[b])))
}

/// Frame Jacobian: `J v = frame_velocity(q, v)` for every `v`.
pub fn frame_jacobian(model: &KinematicModel, q: &Configuration, frame: &Frame) -> Result<Matrix6xX<f64>> {
    frame.check(model)?;
    check_dim("configuration", model.nq, q.len())?;
    let Some(b) = frame.body else {
        return Ok(Matrix6xX::zeros(model.nv));
    };
    let frames = FrameData::compute(model, q);
    let jw = world_jacobian(model, &frames);
    Ok(transform_columns(&frame.placement, &body_jacobian(model, &frames, &jw, b)))
}

/// Partials of the frame velocity, `(∂/∂q, ∂/∂v)`, in tangent coordinates.
pub fn fkv_derivatives(
    model: &KinematicModel,
    q: &Configuration,
    v: &Tangent,
    frame: &Frame,
) -> Result<(Matrix6xX<f64>, Matrix6xX<f64>)> {
    frame.check(model)?;
    check_dim("configuration", model.nq, q.len())?;
    check_dim("tangent", model.nv, v.len())?;
    let Some(b) = frame.body else {
        return Ok((Matrix6xX::zeros(model.nv), Matrix6xX::zeros(model.nv)));
    };
    let frames = FrameData::compute(model, q);
    let jw = world_jacobian(model, &frames);
    let local = body_velocities(model, &frames, v);
    let wv = world_velocities(&frames, &local);
    let dq = body_velocity_derivative(model, &frames, &jw, &wv, b);
    let dv = body_jacobian(model, &frames, &jw, b);
    Ok((transform_columns(&frame.placement, &dq), transform_columns(&frame.placement, &dv)))
}

/// Re-expresses body-frame motion columns in a frame placed at `m` in the body.
fn transform_columns(m: &Placement, cols: &Matrix6xX<f64>) -> Matrix6xX<f64> {
    let mut out = Matrix6xX::zeros(cols.ncols());
    for (k, c) in cols.column_iter().enumerate() {
        out.set_column(k, &m.act_inv_motion(&c.into_owned()));
    }
    out
}
