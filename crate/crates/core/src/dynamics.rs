//! Joint-space dynamics: mass matrix, bias forces, unconstrained forward
//! dynamics and analytical partial derivatives of inverse dynamics.
//!
//! The equations of motion read `M(q) v̇ + b(q, v) = τ + J_cᵀ λ`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, Matrix6, Vector6};

use crate::error::{check_dim, Result, SimError};
use crate::model::{Configuration, FrameData, KinematicModel, Tangent};
use crate::spatial::{adjoint, cross_force, cross_motion, stack, Placement};

/// Mass matrix, its Cholesky factor and the bias vector at one state.
#[derive(Clone, Debug)]
pub struct DynamicsWorkspace {
    pub frames: FrameData,
    pub mass: DMatrix<f64>,
    pub bias: DVector<f64>,
    chol: Cholesky<f64, Dyn>,
}

impl DynamicsWorkspace {
    pub fn new(model: &KinematicModel, q: &Configuration, v: &Tangent) -> Result<Self> {
        check_dim("configuration", model.nq(), q.len())?;
        check_dim("velocity", model.nv(), v.len())?;
        let frames = FrameData::compute(model, q);
        Self::from_frames(model, frames, v)
    }

    pub fn from_frames(model: &KinematicModel, frames: FrameData, v: &Tangent) -> Result<Self> {
        let mass = crba(model, &frames);
        let bias = rnea(model, &frames, v, &DVector::zeros(model.nv()), true);
        let chol = Cholesky::new(mass.clone()).ok_or(SimError::SingularMass)?;
        Ok(Self { frames, mass, bias, chol })
    }

    pub fn solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(rhs)
    }

    pub fn solve_matrix(&self, rhs: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(rhs)
    }

    pub fn mass_inverse(&self) -> DMatrix<f64> {
        self.chol.inverse()
    }

    pub fn cholesky_factor(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    /// `v̇_f = M⁻¹(τ − b)`.
    pub fn free_acceleration(&self, tau: &Tangent) -> DVector<f64> {
        self.solve(&(tau - &self.bias))
    }
}

#[derive(Clone, Debug)]
pub struct UfdDerivatives {
    pub dq: DMatrix<f64>,
    pub dv: DMatrix<f64>,
    pub dtau: DMatrix<f64>,
}

fn motion_transform(local: &Placement) -> Matrix6<f64> {
    adjoint(&local.inverse())
}

/// Composite rigid body algorithm.
fn crba(model: &KinematicModel, frames: &FrameData) -> DMatrix<f64> {
    let nb = model.nbodies();
    let nv = model.nv();
    let mut composite: Vec<Matrix6<f64>> = (0..nb).map(|i| *model.spatial_inertia(i)).collect();
    let xs: Vec<Matrix6<f64>> = frames.local.iter().map(motion_transform).collect();
    let mut m = DMatrix::zeros(nv, nv);
    for i in (0..nb).rev() {
        if let Some(p) = model.parent(i) {
            let add = xs[i].transpose() * composite[i] * xs[i];
            composite[p] += add;
        }
        let iv = model.idx_v(i);
        for (a, s) in model.subspace(i).iter().enumerate() {
            // F is the composite force of a unit motion along this joint column
            let mut f = composite[i] * s;
            for (b, s2) in model.subspace(i).iter().enumerate() {
                m[(iv + a, iv + b)] = s2.dot(&f);
            }
            let mut j = i;
            while let Some(p) = model.parent(j) {
                f = xs[j].transpose() * f;
                j = p;
                let jv = model.idx_v(j);
                for (b, s2) in model.subspace(j).iter().enumerate() {
                    let val = s2.dot(&f);
                    m[(iv + a, jv + b)] = val;
                    m[(jv + b, iv + a)] = val;
                }
            }
        }
    }
    m
}

struct RneaState {
    v: Vec<Vector6<f64>>,
    a: Vec<Vector6<f64>>,
    f: Vec<Vector6<f64>>,
    /// Parent velocity and acceleration expressed in the child frame.
    v_parent: Vec<Vector6<f64>>,
    a_parent: Vec<Vector6<f64>>,
    vj: Vec<Vector6<f64>>,
}

fn root_acceleration(model: &KinematicModel, with_gravity: bool) -> Vector6<f64> {
    if with_gravity {
        stack(&nalgebra::Vector3::zeros(), &(-model.gravity()))
    } else {
        Vector6::zeros()
    }
}

fn rnea_forward(model: &KinematicModel, frames: &FrameData, v: &Tangent, a: &Tangent, with_gravity: bool) -> RneaState {
    let nb = model.nbodies();
    let a0 = root_acceleration(model, with_gravity);
    let mut st = RneaState {
        v: Vec::with_capacity(nb),
        a: Vec::with_capacity(nb),
        f: Vec::with_capacity(nb),
        v_parent: Vec::with_capacity(nb),
        a_parent: Vec::with_capacity(nb),
        vj: Vec::with_capacity(nb),
    };
    for i in 0..nb {
        let x = &frames.local[i];
        let (vp, ap) = match model.parent(i) {
            Some(p) => (x.act_inv_motion(&st.v[p]), x.act_inv_motion(&st.a[p])),
            None => (Vector6::zeros(), x.act_inv_motion(&a0)),
        };
        let vj = model.joint_velocity(i, v);
        let vi = vp + vj;
        let ai = ap + model.joint_velocity(i, a) + cross_motion(&vi, &vj);
        let inertia = model.spatial_inertia(i);
        let fi = inertia * ai + cross_force(&vi, &(inertia * vi));
        st.v.push(vi);
        st.a.push(ai);
        st.f.push(fi);
        st.v_parent.push(vp);
        st.a_parent.push(ap);
        st.vj.push(vj);
    }
    st
}

fn project_forces(model: &KinematicModel, frames: &FrameData, f: &mut [Vector6<f64>]) -> DVector<f64> {
    let mut tau = DVector::zeros(model.nv());
    for i in (0..model.nbodies()).rev() {
        let iv = model.idx_v(i);
        for (k, s) in model.subspace(i).iter().enumerate() {
            tau[iv + k] = s.dot(&f[i]);
        }
        if let Some(p) = model.parent(i) {
            let fp = frames.local[i].act_force(&f[i]);
            f[p] += fp;
        }
    }
    tau
}

/// Recursive Newton–Euler inverse dynamics.
fn rnea(model: &KinematicModel, frames: &FrameData, v: &Tangent, a: &Tangent, with_gravity: bool) -> DVector<f64> {
    let mut st = rnea_forward(model, frames, v, a, with_gravity);
    project_forces(model, frames, &mut st.f)
}

/// `M(q) a + b(q, v)`.
pub fn inverse_dynamics(model: &KinematicModel, q: &Configuration, v: &Tangent, a: &Tangent) -> Result<DVector<f64>> {
    check_dim("configuration", model.nq(), q.len())?;
    check_dim("velocity", model.nv(), v.len())?;
    check_dim("acceleration", model.nv(), a.len())?;
    Ok(rnea(model, &FrameData::compute(model, q), v, a, true))
}

pub fn mass_matrix(model: &KinematicModel, q: &Configuration) -> Result<DMatrix<f64>> {
    check_dim("configuration", model.nq(), q.len())?;
    Ok(crba(model, &FrameData::compute(model, q)))
}

/// Gravity, Coriolis and centrifugal terms, `b = ID(q, v, 0)`.
pub fn bias(model: &KinematicModel, q: &Configuration, v: &Tangent) -> Result<DVector<f64>> {
    inverse_dynamics(model, q, v, &DVector::zeros(model.nv()))
}

/// Total kinetic energy `½ Σ vᵢᵀ Iᵢ vᵢ`.
pub fn kinetic_energy(model: &KinematicModel, q: &Configuration, v: &Tangent) -> Result<f64> {
    check_dim("configuration", model.nq(), q.len())?;
    check_dim("velocity", model.nv(), v.len())?;
    let frames = FrameData::compute(model, q);
    let vel = crate::model::body_velocities(model, &frames, v);
    Ok((0..model.nbodies()).map(|i| 0.5 * vel[i].dot(&(model.spatial_inertia(i) * vel[i]))).sum())
}

/// Gravitational potential energy `−Σ mᵢ g·cᵢ`.
pub fn potential_energy(model: &KinematicModel, q: &Configuration) -> Result<f64> {
    check_dim("configuration", model.nq(), q.len())?;
    let frames = FrameData::compute(model, q);
    Ok(model
        .bodies()
        .iter()
        .enumerate()
        .map(|(i, b)| -b.inertia.mass * model.gravity().dot(&frames.world[i].act_point(&b.inertia.com)))
        .sum())
}

/// Analytical partials `(∂ID/∂q, ∂ID/∂v)` at fixed acceleration `a`.
///
/// Each tangent direction is pushed through the Newton–Euler recursion in
/// forward mode. Perturbing coordinate `d` of joint `j` along its column `s`
/// changes the parent-to-child transform by `δ(ⁱXλ) = −ad_s ⁱXλ`.
pub fn inverse_dynamics_derivatives(
    model: &KinematicModel,
    frames: &FrameData,
    v: &Tangent,
    a: &Tangent,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let nv = model.nv();
    let nb = model.nbodies();
    let st = rnea_forward(model, frames, v, a, true);
    let mut dq = DMatrix::zeros(nv, nv);
    let mut dv = DMatrix::zeros(nv, nv);
    let mut dvel = vec![Vector6::zeros(); nb];
    let mut dacc = vec![Vector6::zeros(); nb];
    let mut dfor = vec![Vector6::zeros(); nb];
    // nominal subtree forces, needed where a perturbed transform carries them to the parent
    let mut ftot = st.f.clone();
    for i in (0..nb).rev() {
        if let Some(p) = model.parent(i) {
            let fp = frames.local[i].act_force(&ftot[i]);
            ftot[p] += fp;
        }
    }
    for wrt_q in [true, false] {
        for d in 0..nv {
            let j = model.dof_body(d);
            let s = model.subspace(j)[d - model.idx_v(j)];
            for i in 0..nb {
                // bodies outside the subtree of j are unaffected
                if !model.supports(i, j) {
                    dvel[i] = Vector6::zeros();
                    dacc[i] = Vector6::zeros();
                    dfor[i] = Vector6::zeros();
                    continue;
                }
                let x = &frames.local[i];
                let (mut dvi, mut dai) = match model.parent(i) {
                    Some(p) if i != j => (x.act_inv_motion(&dvel[p]), x.act_inv_motion(&dacc[p])),
                    _ => (Vector6::zeros(), Vector6::zeros()),
                };
                if i == j {
                    if wrt_q {
                        dvi -= cross_motion(&s, &st.v_parent[i]);
                        dai -= cross_motion(&s, &st.a_parent[i]);
                    } else {
                        dvi += s;
                        dai += cross_motion(&st.v[i], &s);
                    }
                }
                dai += cross_motion(&dvi, &st.vj[i]);
                let inertia = model.spatial_inertia(i);
                let dfi =
                    inertia * dai + cross_force(&dvi, &(inertia * st.v[i])) + cross_force(&st.v[i], &(inertia * dvi));
                dvel[i] = dvi;
                dacc[i] = dai;
                dfor[i] = dfi;
            }
            let col = perturbed_projection(model, frames, &mut dfor, &ftot, j, &s, wrt_q);
            if wrt_q {
                dq.set_column(d, &col);
            } else {
                dv.set_column(d, &col);
            }
        }
    }
    (dq, dv)
}

fn perturbed_projection(
    model: &KinematicModel,
    frames: &FrameData,
    df: &mut [Vector6<f64>],
    ftot: &[Vector6<f64>],
    j: usize,
    s: &Vector6<f64>,
    wrt_q: bool,
) -> DVector<f64> {
    let mut tau = DVector::zeros(model.nv());
    for i in (0..model.nbodies()).rev() {
        let iv = model.idx_v(i);
        for (k, si) in model.subspace(i).iter().enumerate() {
            tau[iv + k] = si.dot(&df[i]);
        }
        if let Some(p) = model.parent(i) {
            let mut contrib = df[i];
            if i == j && wrt_q {
                // δ(ⁱXλᵀ) f = −ⁱXλᵀ ad_sᵀ f = ⁱXλᵀ (s ×* f)
                contrib += cross_force(s, &ftot[i]);
            }
            let fp = frames.local[i].act_force(&contrib);
            df[p] += fp;
        }
    }
    tau
}

/// `v̇ = M⁻¹(τ − b + J_cᵀ λ)`.
pub fn ufd(
    model: &KinematicModel,
    q: &Configuration,
    v: &Tangent,
    tau: &Tangent,
    jc: &DMatrix<f64>,
    lambda: &DVector<f64>,
) -> Result<DVector<f64>> {
    check_dim("torque", model.nv(), tau.len())?;
    check_contact_dims(model, jc, lambda)?;
    let ws = DynamicsWorkspace::new(model, q, v)?;
    Ok(ws.solve(&(tau - &ws.bias + jc.transpose() * lambda)))
}

fn check_contact_dims(model: &KinematicModel, jc: &DMatrix<f64>, lambda: &DVector<f64>) -> Result<()> {
    check_dim("contact Jacobian columns", model.nv(), jc.ncols())?;
    check_dim("contact forces", jc.nrows(), lambda.len())
}

/// Partials of [`ufd`] with `J_cᵀ λ` held fixed, via `∂FD = −M⁻¹ ∂ID`.
pub fn ufd_derivatives(
    model: &KinematicModel,
    q: &Configuration,
    v: &Tangent,
    tau: &Tangent,
    jc: &DMatrix<f64>,
    lambda: &DVector<f64>,
) -> Result<UfdDerivatives> {
    check_dim("torque", model.nv(), tau.len())?;
    check_contact_dims(model, jc, lambda)?;
    let ws = DynamicsWorkspace::new(model, q, v)?;
    let a = ws.solve(&(tau - &ws.bias + jc.transpose() * lambda));
    Ok(ufd_derivatives_at(model, &ws, v, &a))
}

/// [`ufd_derivatives`] for a known acceleration and factorized mass matrix.
pub fn ufd_derivatives_at(model: &KinematicModel, ws: &DynamicsWorkspace, v: &Tangent, a: &Tangent) -> UfdDerivatives {
    let (id_q, id_v) = inverse_dynamics_derivatives(model, &ws.frames, v, a);
    UfdDerivatives { dq: -ws.solve_matrix(&id_q), dv: -ws.solve_matrix(&id_v), dtau: ws.mass_inverse() }
}

/// Delassus matrix `G = J_c M⁻¹ J_cᵀ`.
pub fn delassus(ws: &DynamicsWorkspace, jc: &DMatrix<f64>) -> DMatrix<f64> {
    let minv_jt = ws.solve_matrix(&jc.transpose());
    let g = jc * minv_jt;
    0.5 * (&g + g.transpose())
}

/// Free contact velocity `g = J_c (v + Δt v̇_f)`.
pub fn free_velocity(ws: &DynamicsWorkspace, v: &Tangent, tau: &Tangent, jc: &DMatrix<f64>, dt: f64) -> DVector<f64> {
    jc * (v + dt * ws.free_acceleration(tau))
}
