//! Analytical step derivatives by implicit differentiation of the contact NCP.
//!
//! Every seed direction `(dq, dv, dτ, dμ)` is pushed through one step: the
//! unconstrained dynamics with `J_cᵀλ` frozen, the derivative of the contact
//! velocity at fixed impulses (including the motion of the contact frames),
//! then a reduced linear system that keeps each contact in its current mode.

use std::ops::Range;

use nalgebra::{
    DMatrix, DVector, Matrix2, Matrix3, Matrix3x2, Matrix6, Matrix6xX, RowDVector, Vector2, Vector3, Vector6,
};

use crate::collision::{contact_derivatives, CdDerivatives, ContactFrame};
use crate::contact::{block, ContactMode};
use crate::dynamics::inverse_dynamics_derivatives;
use crate::error::{Result, SimError};
use crate::model::{
    body_jacobian, body_velocities, body_velocity_derivative, integrate_jacobians, world_velocities, FrameData,
    KinematicModel,
};
use crate::simulator::{gap_gain, SimParams, StepResult};
use crate::spatial::{adjoint, cross_motion, motion_cross, p_operator, stack, Placement};

/// Parameters a Jacobian is taken with respect to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ThetaSelector {
    Q,
    V,
    Tau,
    /// Columns ordered `[q, v, τ]`.
    All,
    /// Friction coefficient of one collision pair.
    Mu(usize),
}

impl ThetaSelector {
    pub fn dim(&self, model: &KinematicModel) -> usize {
        match self {
            ThetaSelector::All => 3 * model.nv(),
            ThetaSelector::Mu(_) => 1,
            _ => model.nv(),
        }
    }

    pub fn name(&self) -> String {
        match self {
            ThetaSelector::Q => "q".into(),
            ThetaSelector::V => "v".into(),
            ThetaSelector::Tau => "tau".into(),
            ThetaSelector::All => "all".into(),
            ThetaSelector::Mu(p) => format!("mu{p}"),
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "q" => Ok(ThetaSelector::Q),
            "v" => Ok(ThetaSelector::V),
            "tau" => Ok(ThetaSelector::Tau),
            "all" => Ok(ThetaSelector::All),
            _ => s
                .strip_prefix("mu")
                .and_then(|p| p.parse().ok())
                .map(ThetaSelector::Mu)
                .ok_or_else(|| SimError::InvalidParameter(format!("unknown parameter selector '{s}'"))),
        }
    }

    /// Columns of the `All` layout covered by `part`.
    pub fn columns_in_all(part: ThetaSelector, nv: usize) -> Option<Range<usize>> {
        match part {
            ThetaSelector::Q => Some(0..nv),
            ThetaSelector::V => Some(nv..2 * nv),
            ThetaSelector::Tau => Some(2 * nv..3 * nv),
            ThetaSelector::All => Some(0..3 * nv),
            ThetaSelector::Mu(_) => None,
        }
    }
}

/// Input tangents of one step, one column per seed direction.
#[derive(Clone, Debug)]
pub struct TangentSeeds {
    pub dq: DMatrix<f64>,
    pub dv: DMatrix<f64>,
    pub dtau: DMatrix<f64>,
    /// One row per collision pair.
    pub dmu: DMatrix<f64>,
}

impl TangentSeeds {
    pub fn zeros(model: &KinematicModel, k: usize) -> Self {
        let nv = model.nv();
        Self {
            dq: DMatrix::zeros(nv, k),
            dv: DMatrix::zeros(nv, k),
            dtau: DMatrix::zeros(nv, k),
            dmu: DMatrix::zeros(model.pairs().len(), k),
        }
    }

    /// Identity seeds for the parameters picked by `selector`.
    pub fn for_selector(model: &KinematicModel, selector: ThetaSelector) -> Result<Self> {
        let nv = model.nv();
        let mut s = Self::zeros(model, selector.dim(model));
        let eye = DMatrix::<f64>::identity(nv, nv);
        match selector {
            ThetaSelector::Q => s.dq.copy_from(&eye),
            ThetaSelector::V => s.dv.copy_from(&eye),
            ThetaSelector::Tau => s.dtau.copy_from(&eye),
            ThetaSelector::All => {
                s.dq.columns_mut(0, nv).copy_from(&eye);
                s.dv.columns_mut(nv, nv).copy_from(&eye);
                s.dtau.columns_mut(2 * nv, nv).copy_from(&eye);
            }
            ThetaSelector::Mu(p) => {
                if p >= model.pairs().len() {
                    return Err(SimError::InvalidParameter(format!("collision pair {p} does not exist")));
                }
                s.dmu[(p, 0)] = 1.0;
            }
        }
        Ok(s)
    }

    pub fn ncols(&self) -> usize {
        self.dq.ncols()
    }
}

/// Output tangents of one step.
#[derive(Clone, Debug)]
pub struct StepTangent {
    pub dq: DMatrix<f64>,
    pub dv: DMatrix<f64>,
    pub dlambda: DMatrix<f64>,
    /// First-order change of the free contact velocity `g`; `G dλ + dg` is `dσ`.
    pub dg: DMatrix<f64>,
    /// The reduced system was solved by pseudo-inverse.
    pub rank_deficient: bool,
    /// The step has redundant impulse solutions and either they move the
    /// bodies differently or this derivative differs between them.
    pub nonunique: bool,
    /// A contact frame or mode sits on a non-smooth configuration.
    pub boundary: bool,
}

/// Kinematic quantities of one contact needed by the derivatives.
#[derive(Clone, Debug)]
pub struct ContactKinematics {
    pub body1: Option<usize>,
    pub body2: Option<usize>,
    /// Body Jacobians (zero for the world).
    pub j1: Matrix6xX<f64>,
    pub j2: Matrix6xX<f64>,
    /// `ᶜX_i = Ad(ᶜM₀ ⁰M_i)`.
    pub x1: Matrix6<f64>,
    pub x2: Matrix6<f64>,
    /// Full 6-row contact Jacobian `ᶜX₁J₁ − ᶜX₂J₂`.
    pub jc6: Matrix6xX<f64>,
    /// Contact frame variation `D₁J₁ + D₂J₂`.
    pub frame_motion: Matrix6xX<f64>,
    /// Gap gradient in tangent coordinates.
    pub dphi: RowDVector<f64>,
    pub placement: Placement,
    pub cd: CdDerivatives,
}

impl ContactKinematics {
    pub fn new(
        model: &KinematicModel,
        frames: &FrameData,
        jw: &Matrix6xX<f64>,
        contact: &ContactFrame,
    ) -> Result<Self> {
        let cd = contact_derivatives(model, frames, contact)?;
        let body1 = model.geometries()[contact.geoms.0].body;
        let body2 = model.geometries()[contact.geoms.1].body;
        let side = |b: Option<usize>| match b {
            Some(b) => (body_jacobian(model, frames, jw, b), adjoint(&contact.placement.inv_times(&frames.world[b]))),
            None => (Matrix6xX::zeros(model.nv()), adjoint(&contact.placement.inverse())),
        };
        let (j1, x1) = side(body1);
        let (j2, x2) = side(body2);
        // a world side has a zero Jacobian and contributes nothing
        let (jc6, frame_motion, dphi) = match (body1, body2) {
            (_, None) => (x1 * &j1, cd.d_m1 * &j1, cd.dphi_m1 * &j1),
            (None, _) => (-x2 * &j2, cd.d_m2 * &j2, cd.dphi_m2 * &j2),
            _ => (x1 * &j1 - x2 * &j2, cd.d_m1 * &j1 + cd.d_m2 * &j2, cd.dphi_m1 * &j1 + cd.dphi_m2 * &j2),
        };
        let dphi = RowDVector::from_row_slice(dphi.as_slice());
        Ok(Self { body1, body2, j1, j2, x1, x2, jc6, frame_motion, dphi, placement: contact.placement, cd })
    }

    /// Collision-correction part of `∂(J_c w)/∂q`: the contact frame moves and
    /// the body-to-contact transforms change.
    pub fn velocity_correction(&self, w: &DVector<f64>) -> Matrix6xX<f64> {
        let ww: Vector6<f64> = &self.jc6 * w;
        let mut out = motion_cross(&ww) * &self.frame_motion;
        if self.body1.is_some() {
            let w1: Vector6<f64> = &self.j1 * w;
            out -= (self.x1 * motion_cross(&w1)) * &self.j1;
        }
        if self.body2.is_some() {
            let w2: Vector6<f64> = &self.j2 * w;
            out += (self.x2 * motion_cross(&w2)) * &self.j2;
        }
        out
    }

    /// Adjoint of [`Self::velocity_correction`]: `∂(J_cᵀλ)/∂q` from the same terms.
    pub fn force_correction(&self, lambda: &Vector3<f64>) -> DMatrix<f64> {
        let y = stack(&Vector3::zeros(), lambda);
        let mut out = -(self.jc6.transpose() * (p_operator(&y) * &self.frame_motion));
        if self.body1.is_some() {
            let y1 = self.x1.transpose() * y;
            out += self.j1.transpose() * (p_operator(&y1) * &self.j1);
        }
        if self.body2.is_some() {
            let y2 = self.x2.transpose() * y;
            out -= self.j2.transpose() * (p_operator(&y2) * &self.j2);
        }
        out
    }

    /// `∂(J_c w)/∂q` from the motion of the bodies at fixed contact frame.
    pub fn velocity_attached(
        &self,
        model: &KinematicModel,
        frames: &FrameData,
        jw: &Matrix6xX<f64>,
        world_vel: &[Vector6<f64>],
    ) -> Matrix6xX<f64> {
        let mut out = Matrix6xX::zeros(model.nv());
        if let Some(b) = self.body1 {
            out += self.x1 * body_velocity_derivative(model, frames, jw, world_vel, b);
        }
        if let Some(b) = self.body2 {
            out -= self.x2 * body_velocity_derivative(model, frames, jw, world_vel, b);
        }
        out
    }

    /// `∂(J_cᵀλ)/∂q` from the motion of the bodies at fixed contact frame.
    ///
    /// Only a joint `d` strictly above joint `e` on the path to the contact body
    /// sees its column change, by `S_d ×̱ S_e` in world coordinates.
    pub fn force_attached(&self, model: &KinematicModel, jw: &Matrix6xX<f64>, lambda: &Vector3<f64>) -> DMatrix<f64> {
        let nv = model.nv();
        let f = self.placement.act_force(&stack(&Vector3::zeros(), lambda));
        let mut out = DMatrix::zeros(nv, nv);
        for (body, sign) in [(self.body1, 1.0), (self.body2, -1.0)] {
            let Some(b) = body else { continue };
            for e in 0..nv {
                let be = model.dof_body(e);
                if !model.supports(b, be) {
                    continue;
                }
                let se: Vector6<f64> = jw.column(e).into_owned();
                for d in 0..nv {
                    let bd = model.dof_body(d);
                    if bd != be && model.supports(be, bd) {
                        let sd: Vector6<f64> = jw.column(d).into_owned();
                        out[(d, e)] += sign * cross_motion(&sd, &se).dot(&f);
                    }
                }
            }
        }
        out
    }
}

/// Local description of a sliding contact.
#[derive(Clone, Debug)]
pub struct SlidingBasis {
    /// Tangent space of the cone surface at `λ`: `[λ/‖λ‖, e_z × u]`.
    pub r: Matrix3x2<f64>,
    /// Row weighting `blockdiag((1/α)(I − uuᵀ), 1)`.
    pub p: Matrix3<f64>,
    pub q: Matrix2<f64>,
    /// Slip direction.
    pub u: Vector2<f64>,
    /// `1/α = μλ_N/‖σ_T‖`.
    pub inv_alpha: f64,
}

pub fn sliding_basis(contact: usize, lambda: &Vector3<f64>, sigma: &Vector3<f64>, mu: f64) -> Result<SlidingBasis> {
    let st = sigma.x.hypot(sigma.y);
    let ln = lambda.norm();
    let scale = st.min(ln);
    if !(st > f64::MIN_POSITIVE && ln > f64::MIN_POSITIVE) {
        return Err(SimError::SingularMode { contact, scale });
    }
    let u = Vector2::new(sigma.x / st, sigma.y / st);
    let inv_alpha = mu * lambda.z / st;
    let mut r = Matrix3x2::zeros();
    r.set_column(0, &(lambda / ln));
    r.set_column(1, &Vector3::new(-u.y, u.x, 0.0));
    let mut p = Matrix3::zeros();
    p.fixed_view_mut::<2, 2>(0, 0).copy_from(&((Matrix2::identity() - u * u.transpose()) * inv_alpha));
    p[(2, 2)] = 1.0;
    Ok(SlidingBasis { r, p, q: Matrix2::new(0.0, 0.0, 0.0, 1.0), u, inv_alpha })
}

#[derive(Clone, Debug)]
enum Block {
    Breaking,
    Sticking(usize),
    Sliding(usize, SlidingBasis),
}

/// Linear system `A X = −B rhs` keeping every contact in its mode.
#[derive(Clone, Debug)]
pub struct ReducedSystem {
    pub matrix: DMatrix<f64>,
    blocks: Vec<Block>,
    dim: usize,
}

impl ReducedSystem {
    pub fn assemble(
        delassus: &DMatrix<f64>,
        lambda: &DVector<f64>,
        sigma: &DVector<f64>,
        mu: &[f64],
        modes: &[ContactMode],
    ) -> Result<Self> {
        let mut blocks = Vec::with_capacity(modes.len());
        let mut dim = 0;
        for (c, mode) in modes.iter().enumerate() {
            blocks.push(match mode {
                ContactMode::Breaking => Block::Breaking,
                ContactMode::Sticking => {
                    dim += 3;
                    Block::Sticking(dim - 3)
                }
                ContactMode::Sliding => {
                    dim += 2;
                    Block::Sliding(dim - 2, sliding_basis(c, &block(lambda, c), &block(sigma, c), mu[c])?)
                }
            });
        }
        let mut s = Self { matrix: DMatrix::zeros(dim, dim), blocks, dim };
        let cols = s.expand(&DMatrix::identity(dim, dim));
        s.matrix = s.restrict(&(delassus * cols));
        for b in &s.blocks {
            if let Block::Sliding(o, basis) = b {
                let mut v = s.matrix.fixed_view_mut::<2, 2>(*o, *o);
                v += basis.q;
            }
        }
        Ok(s)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Row operator `B`: contact velocity variations to mode equations.
    pub fn restrict(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.dim, m.ncols());
        for (c, b) in self.blocks.iter().enumerate() {
            let rows = m.rows(3 * c, 3);
            match b {
                Block::Breaking => {}
                Block::Sticking(o) => out.rows_mut(*o, 3).copy_from(&rows),
                Block::Sliding(o, basis) => out.rows_mut(*o, 2).copy_from(&((basis.p * basis.r).transpose() * rows)),
            }
        }
        out
    }

    /// Column operator `C`: reduced unknowns to impulse variations.
    pub fn expand(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(3 * self.blocks.len(), x.ncols());
        for (c, b) in self.blocks.iter().enumerate() {
            match b {
                Block::Breaking => {}
                Block::Sticking(o) => out.rows_mut(3 * c, 3).copy_from(&x.rows(*o, 3)),
                Block::Sliding(o, basis) => out.rows_mut(3 * c, 3).copy_from(&(basis.r * x.rows(*o, 2))),
            }
        }
        out
    }

    /// Impulse variation forced by `dμ` on sliding contacts (one row per contact).
    pub fn friction_seed(&self, lambda: &DVector<f64>, dmu_contacts: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(3 * self.blocks.len(), dmu_contacts.ncols());
        for (c, b) in self.blocks.iter().enumerate() {
            if let Block::Sliding(_, basis) = b {
                let ln = lambda[3 * c + 2];
                for k in 0..dmu_contacts.ncols() {
                    out[(3 * c, k)] = -ln * basis.u.x * dmu_contacts[(c, k)];
                    out[(3 * c + 1, k)] = -ln * basis.u.y * dmu_contacts[(c, k)];
                }
            }
        }
        out
    }

    /// Solves `A X = rhs` by Householder QR, falling back to the pseudo-inverse when `A`
    /// is numerically rank deficient (redundant contact patches).
    pub fn solve(&self, rhs: &DMatrix<f64>) -> ReducedSolution {
        if self.dim == 0 {
            return ReducedSolution {
                x: DMatrix::zeros(0, rhs.ncols()),
                rank_deficient: false,
                null_space: DMatrix::zeros(0, 0),
            };
        }
        // column pivoting orders |r_ii| so the diagonal exposes the numerical rank
        let qr = self.matrix.clone().col_piv_qr();
        let diag = qr.r().diagonal().abs();
        let (lo, hi) = (diag.min(), diag.max());
        if hi > 0.0 && lo > 1e-10 * hi {
            if let Some(x) = qr.solve(rhs) {
                return ReducedSolution { x, rank_deficient: false, null_space: DMatrix::zeros(self.dim, 0) };
            }
        }
        let svd = self.matrix.clone().svd(true, true);
        let tol = 1e-9 * svd.singular_values.max();
        let vt = svd.v_t.as_ref().expect("requested");
        let null: Vec<_> =
            (0..self.dim).filter(|&i| svd.singular_values[i] <= tol).map(|i| vt.row(i).transpose()).collect();
        let null_space = if null.is_empty() { DMatrix::zeros(self.dim, 0) } else { DMatrix::from_columns(&null) };
        let x = svd.solve(rhs, tol).unwrap_or_else(|_| DMatrix::zeros(self.dim, rhs.ncols()));
        ReducedSolution { x, rank_deficient: true, null_space }
    }
}

/// Solution of the reduced system and its numerical null space.
#[derive(Clone, Debug)]
pub struct ReducedSolution {
    pub x: DMatrix<f64>,
    /// Solved by pseudo-inverse.
    pub rank_deficient: bool,
    /// Orthonormal basis of the numerical null space of `A` (no columns when `A` is regular).
    pub null_space: DMatrix<f64>,
}

/// Linearization of one step around the impulse `lambda`.
struct Linearized {
    tangent: StepTangent,
    /// Impulse directions of the numerical null space of the reduced system.
    null_impulses: DMatrix<f64>,
}

/// `m · seed`. Selector seeds are made of zero and unit columns, which are
/// copied instead of multiplied.
fn apply(m: &DMatrix<f64>, seed: &DMatrix<f64>) -> DMatrix<f64> {
    let mut picks = Vec::with_capacity(seed.ncols());
    for col in seed.column_iter() {
        let mut pick = None;
        for (i, x) in col.iter().enumerate() {
            if *x == 0.0 {
                continue;
            }
            if *x != 1.0 || pick.is_some() {
                return m * seed;
            }
            pick = Some(i);
        }
        picks.push(pick);
    }
    let mut out = DMatrix::zeros(m.nrows(), seed.ncols());
    for (j, pick) in picks.into_iter().enumerate() {
        if let Some(i) = pick {
            out.set_column(j, &m.column(i));
        }
    }
    out
}

fn linearize(
    model: &KinematicModel,
    step: &StepResult,
    params: &SimParams,
    seeds: &TangentSeeds,
    lambda: &DVector<f64>,
) -> Result<Linearized> {
    let nv = model.nv();
    let k = seeds.ncols();
    let dt = params.dt;
    let ws = &step.dynamics;
    let frames = &ws.frames;
    let v = &step.state.v;
    let v_next = &step.next.v;
    let acc = (v_next - v) / dt;
    let (id_q, id_v) = inverse_dynamics_derivatives(model, frames, v, &acc);
    let mut force = dt * (&seeds.dtau - apply(&id_q, &seeds.dq) - apply(&id_v, &seeds.dv));

    let n = step.contacts.len();
    let jw = &step.world_jacobian;
    let kin = step.contacts.iter().map(|c| ContactKinematics::new(model, frames, jw, c)).collect::<Result<Vec<_>>>()?;
    let mut jtl = DMatrix::zeros(nv, nv);
    for (c, ck) in kin.iter().enumerate() {
        let l = block(lambda, c);
        if l != Vector3::zeros() {
            jtl += ck.force_attached(model, jw, &l) + ck.force_correction(&l);
        }
    }
    if n > 0 {
        force += apply(&jtl, &seeds.dq);
    }
    let minv = ws.mass_inverse();
    let dv_fixed = &seeds.dv + &minv * &force;
    let mut boundary = kin.iter().any(|ck| ck.cd.boundary);

    let mut nonunique = false;
    let mut null_impulses = DMatrix::zeros(3 * n, 0);
    let (dlambda, dg, rank_deficient) = if n == 0 {
        (DMatrix::zeros(0, k), DMatrix::zeros(0, k), false)
    } else {
        let jc = &step.contact_jacobian;
        let world_at = |w: &DVector<f64>| world_velocities(frames, &body_velocities(model, frames, w));
        let wv_next = world_at(v_next);
        let kd = params.baumgarte.map(|b| b.kd);
        let wv_now = kd.map(|_| world_at(v));
        let mut rhs = jc * &dv_fixed;
        let jc_dv = kd.map(|_| jc * &seeds.dv);
        for (c, ck) in kin.iter().enumerate() {
            let dj = ck.velocity_attached(model, frames, jw, &wv_next) + ck.velocity_correction(v_next);
            let mut rows = rhs.rows_mut(3 * c, 3);
            rows += dj.fixed_rows::<3>(3) * &seeds.dq;
            let gain = gap_gain(params, step.contacts[c].signed_distance);
            let mut normal = gain * (&ck.dphi * &seeds.dq);
            if let (Some(kd), Some(wv), Some(jdv)) = (kd, &wv_now, &jc_dv) {
                let dj = ck.velocity_attached(model, frames, jw, wv) + ck.velocity_correction(v);
                normal -= kd * (dj.row(5) * &seeds.dq + jdv.row(3 * c + 2));
            }
            let mut row = rhs.row_mut(3 * c + 2);
            row += normal;
        }
        let problem = &step.problem;
        let reduced = ReducedSystem::assemble(
            &problem.delassus,
            lambda,
            &step.solution.sigma,
            &problem.mu,
            &step.solution.modes,
        )?;
        let dmu_contacts = DMatrix::from_fn(n, k, |c, j| seeds.dmu[(step.contacts[c].pair, j)]);
        let seed = reduced.friction_seed(lambda, &dmu_contacts);
        let rhs_full = if seed.iter().all(|x| *x == 0.0) { rhs.clone() } else { &rhs + &problem.delassus * &seed };
        let solved = reduced.solve(&(-reduced.restrict(&rhs_full)));
        boundary |= step.mode_flagged();
        if solved.null_space.ncols() > 0 {
            // redundant impulses are harmless only when they carry no generalized force
            null_impulses = reduced.expand(&solved.null_space);
            let jt = step.contact_jacobian.transpose();
            nonunique = (&jt * &null_impulses).amax() > 1e-8 * jt.amax().max(f64::MIN_POSITIVE);
        }
        (seed + reduced.expand(&solved.x), rhs, solved.rank_deficient)
    };

    let dv = if n == 0 { dv_fixed } else { dv_fixed + &minv * (step.contact_jacobian.transpose() * &dlambda) };
    let (jq, jd) = integrate_jacobians(model, &step.state.q, &(dt * v_next))?;
    let dq = apply(&jq, &seeds.dq) + dt * (&jd * &dv);
    Ok(Linearized { tangent: StepTangent { dq, dv, dlambda, dg, rank_deficient, nonunique, boundary }, null_impulses })
}

/// Relative change of `dv` per relative change of the impulse along a
/// redundant direction above which the derivative is considered ambiguous.
const SELECTION_TOL: f64 = 1e-6;

/// Pushes the seed directions through one step.
///
/// When the reduced system is singular, the step is re-linearized around
/// impulses moved along each redundant direction. These impulses solve the
/// same step, so a derivative that changes with them depends on which
/// solution the contact solver returned and is flagged `nonunique`.
pub fn step_tangent(
    model: &KinematicModel,
    step: &StepResult,
    params: &SimParams,
    seeds: &TangentSeeds,
) -> Result<StepTangent> {
    let lambda = &step.solution.lambda;
    let Linearized { mut tangent, null_impulses } = linearize(model, step, params, seeds, lambda)?;
    if tangent.nonunique || null_impulses.ncols() == 0 || seeds.ncols() == 0 {
        return Ok(tangent);
    }
    let rel = 1e-3;
    let scale = tangent.dv.amax().max(f64::MIN_POSITIVE);
    for dir in null_impulses.column_iter() {
        let h = rel * lambda.amax() / dir.amax().max(f64::MIN_POSITIVE);
        let shifted = linearize(model, step, params, seeds, &(lambda + h * dir))?;
        let sensitivity = (&shifted.tangent.dv - &tangent.dv).amax() / (rel * scale);
        if sensitivity > SELECTION_TOL {
            log::debug!("step derivative depends on the impulse selection (sensitivity {sensitivity:.2e})");
            tangent.nonunique = true;
            break;
        }
    }
    Ok(tangent)
}

/// Step Jacobian with respect to a parameter block.
#[derive(Clone, Debug)]
pub struct StepJacobian {
    pub selector: ThetaSelector,
    /// `dq⁺/dθ` in tangent coordinates (n_v × n_θ).
    pub dq: DMatrix<f64>,
    pub dv: DMatrix<f64>,
    /// `dλ/dθ` (3 n_c × n_θ).
    pub dlambda: DMatrix<f64>,
    pub dg: DMatrix<f64>,
    pub rank_deficient: bool,
    pub nonunique: bool,
    pub boundary: bool,
}

impl StepJacobian {
    fn part(&self, m: &DMatrix<f64>, part: ThetaSelector) -> Option<DMatrix<f64>> {
        if self.selector == part {
            return Some(m.clone());
        }
        if self.selector != ThetaSelector::All {
            return None;
        }
        ThetaSelector::columns_in_all(part, m.ncols() / 3).map(|r| m.columns(r.start, r.len()).into_owned())
    }

    pub fn dq_wrt(&self, part: ThetaSelector) -> Option<DMatrix<f64>> {
        self.part(&self.dq, part)
    }

    pub fn dv_wrt(&self, part: ThetaSelector) -> Option<DMatrix<f64>> {
        self.part(&self.dv, part)
    }

    pub fn dlambda_wrt(&self, part: ThetaSelector) -> Option<DMatrix<f64>> {
        if self.selector == part {
            return Some(self.dlambda.clone());
        }
        if self.selector != ThetaSelector::All {
            return None;
        }
        ThetaSelector::columns_in_all(part, self.dq.ncols() / 3)
            .map(|r| self.dlambda.columns(r.start, r.len()).into_owned())
    }
}

pub fn step_jacobian(
    model: &KinematicModel,
    step: &StepResult,
    params: &SimParams,
    selector: ThetaSelector,
) -> Result<StepJacobian> {
    let seeds = TangentSeeds::for_selector(model, selector)?;
    let t = step_tangent(model, step, params, &seeds)?;
    Ok(StepJacobian {
        selector,
        dq: t.dq,
        dv: t.dv,
        dlambda: t.dlambda,
        dg: t.dg,
        rank_deficient: t.rank_deficient,
        nonunique: t.nonunique,
        boundary: t.boundary,
    })
}
