//! Time stepping: collision detection, the contact NCP and symplectic Euler
//! integration, plus forward-mode Jacobians along rollouts.
//!
//! Contact impulses are impulses (N·s): `v⁺ = v + Δt v̇_f + M⁻¹J_cᵀλ` and
//! `q⁺ = q ⊕ Δt v⁺`.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector, Matrix6xX, Vector3};

use crate::collision::{detect_contacts, ContactFrame, DEFAULT_MARGIN};
use crate::contact::{contact_jacobian, solve_ncp, ContactMode, ContactProblem, ContactSolution, SolverOptions};
use crate::diff::{step_tangent, TangentSeeds, ThetaSelector};
use crate::dynamics::{delassus, DynamicsWorkspace};
use crate::error::{check_dim, Result, SimError};
use crate::model::{integrate_unchecked, world_jacobian, Configuration, FrameData, KinematicModel, Tangent};

/// Baumgarte gains of `g = J_c v_f + Φ/Δt − K_p[Φ/Δt]₋ − K_d J_c v` (normal rows).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Baumgarte {
    pub kp: f64,
    pub kd: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimParams {
    pub dt: f64,
    /// `None` keeps only the `Φ/Δt` gap term.
    pub baumgarte: Option<Baumgarte>,
    pub solver: SolverOptions,
    pub margin: f64,
}

impl Default for SimParams {
    fn default() -> Self {
        Self { dt: 1e-3, baumgarte: None, solver: SolverOptions::default(), margin: DEFAULT_MARGIN }
    }
}

impl SimParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) {
            return Err(SimError::InvalidParameter("dt must be positive".into()));
        }
        if let Some(b) = self.baumgarte {
            if !(0.0..=1.0).contains(&b.kp) || !(0.0..=1.0).contains(&b.kd) {
                return Err(SimError::InvalidParameter("Baumgarte gains must lie in [0, 1]".into()));
            }
        }
        if !(self.margin >= 0.0) {
            return Err(SimError::InvalidParameter("contact margin must be non-negative".into()));
        }
        let t = &self.solver.thresholds;
        if !(t.eps_lambda > 0.0 && t.eps_slide > 0.0 && t.eps_cone > 0.0) {
            return Err(SimError::InvalidParameter("mode thresholds must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimState {
    pub q: Configuration,
    pub v: Tangent,
}

impl SimState {
    pub fn new(q: Configuration, v: Tangent) -> Self {
        Self { q, v }
    }
}

/// Previous impulses keyed by `(pair, corner)`.
pub type WarmStart = HashMap<(usize, usize), Vector3<f64>>;

#[derive(Clone, Debug)]
pub struct StepResult {
    pub state: SimState,
    pub tau: Tangent,
    pub next: SimState,
    pub contacts: Vec<ContactFrame>,
    pub solution: ContactSolution,
    pub(crate) dynamics: DynamicsWorkspace,
    pub(crate) world_jacobian: Matrix6xX<f64>,
    pub(crate) contact_jacobian: DMatrix<f64>,
    pub(crate) problem: ContactProblem,
}

impl StepResult {
    pub fn warm_start(&self) -> WarmStart {
        self.contacts
            .iter()
            .enumerate()
            .map(|(k, c)| ((c.pair, c.corner), self.solution.lambda.fixed_rows::<3>(3 * k).into_owned()))
            .collect()
    }

    pub fn contact_jacobian(&self) -> &DMatrix<f64> {
        &self.contact_jacobian
    }

    pub fn problem(&self) -> &ContactProblem {
        &self.problem
    }

    pub fn frames(&self) -> &FrameData {
        &self.dynamics.frames
    }

    pub fn dynamics(&self) -> &DynamicsWorkspace {
        &self.dynamics
    }

    /// Any contact with an ambiguous or boundary classification.
    pub fn mode_flagged(&self) -> bool {
        self.solution.ambiguous.iter().chain(&self.solution.boundary).any(|f| *f)
    }

    pub fn count_modes(&self, mode: ContactMode) -> usize {
        self.solution.modes.iter().filter(|m| **m == mode).count()
    }
}

/// Gap and Baumgarte terms added to the normal rows of `g`.
pub(crate) fn normal_correction(params: &SimParams, phi: f64, normal_velocity: f64) -> f64 {
    let inv_dt = 1.0 / params.dt;
    match params.baumgarte {
        None => phi * inv_dt,
        Some(b) => phi * inv_dt - b.kp * (phi * inv_dt).min(0.0) - b.kd * normal_velocity,
    }
}

/// Coefficient of `dΦ` in the differentiated normal rows of `g`.
pub(crate) fn gap_gain(params: &SimParams, phi: f64) -> f64 {
    match params.baumgarte {
        None => 1.0 / params.dt,
        Some(b) => (1.0 - b.kp * if phi < 0.0 { 1.0 } else { 0.0 }) / params.dt,
    }
}

pub fn step(
    model: &KinematicModel,
    state: &SimState,
    tau: &Tangent,
    params: &SimParams,
    warm_start: Option<&WarmStart>,
) -> Result<StepResult> {
    params.validate()?;
    model.check_configuration(&state.q)?;
    check_dim("velocity", model.nv(), state.v.len())?;
    check_dim("torque", model.nv(), tau.len())?;
    let frames = FrameData::compute(model, &state.q);
    let dynamics = DynamicsWorkspace::from_frames(model, frames, &state.v)?;
    let contacts = detect_contacts(model, &dynamics.frames, params.margin)?;
    let jw = world_jacobian(model, &dynamics.frames);
    let jc = contact_jacobian(model, &jw, &contacts);
    let dt = params.dt;
    let v_free = &state.v + dt * dynamics.free_acceleration(tau);
    let mut g = &jc * &v_free;
    let jv = &jc * &state.v;
    for (k, c) in contacts.iter().enumerate() {
        g[3 * k + 2] += normal_correction(params, c.signed_distance, jv[3 * k + 2]);
    }
    let problem = ContactProblem::new(delassus(&dynamics, &jc), g, contacts.iter().map(|c| c.friction).collect())?;
    let warm = warm_start.map(|w| {
        let mut l = DVector::zeros(3 * contacts.len());
        for (k, c) in contacts.iter().enumerate() {
            if let Some(x) = w.get(&(c.pair, c.corner)) {
                l.fixed_rows_mut::<3>(3 * k).copy_from(x);
            }
        }
        l
    });
    let solution = solve_ncp(&problem, &params.solver, warm.as_ref())?;
    if !solution.converged {
        log::warn!(
            "contact solver stopped after {} sweeps with residual {:.3e}",
            solution.iterations,
            solution.residual
        );
    }
    let v_next =
        if contacts.is_empty() { v_free } else { v_free + dynamics.solve(&(jc.transpose() * &solution.lambda)) };
    let q_next = integrate_unchecked(model, &state.q, &(dt * &v_next));
    Ok(StepResult {
        state: state.clone(),
        tau: tau.clone(),
        next: SimState::new(q_next, v_next),
        contacts,
        solution,
        dynamics,
        world_jacobian: jw,
        contact_jacobian: jc,
        problem,
    })
}

/// Runs `taus.len()` steps, warm-starting each from the previous impulses.
pub fn rollout(
    model: &KinematicModel,
    state0: &SimState,
    taus: &[Tangent],
    params: &SimParams,
) -> Result<Vec<StepResult>> {
    if taus.is_empty() {
        return Err(SimError::InvalidParameter("rollout needs at least one step".into()));
    }
    let mut out: Vec<StepResult> = Vec::with_capacity(taus.len());
    let mut state = state0.clone();
    for tau in taus {
        let warm = out.last().map(|s| s.warm_start());
        let r = step(model, &state, tau, params, warm.as_ref())?;
        state = r.next.clone();
        out.push(r);
    }
    Ok(out)
}

/// Constant torque sequence of length `steps`.
pub fn constant_torques(tau: &Tangent, steps: usize) -> Vec<Tangent> {
    vec![tau.clone(); steps]
}

#[derive(Clone, Debug)]
pub struct RolloutJacobian {
    pub steps: Vec<StepResult>,
    pub selector: ThetaSelector,
    /// `dq_T/dθ` in tangent coordinates.
    pub dq: DMatrix<f64>,
    pub dv: DMatrix<f64>,
    /// Steps whose contact modes or frames sit on a boundary.
    pub flagged_steps: Vec<usize>,
    pub rank_deficient_steps: Vec<usize>,
    /// Steps whose impulse solution is not unique in a way that moves the bodies.
    pub nonunique_steps: Vec<usize>,
}

/// Rollout with forward-mode sensitivities of the final state.
///
/// `Q` and `V` refer to the initial state, `Tau` to the torque of the first
/// step only, and `Mu(pair)` to a friction coefficient held for the whole rollout.
pub fn rollout_jacobian(
    model: &KinematicModel,
    state0: &SimState,
    taus: &[Tangent],
    params: &SimParams,
    selector: ThetaSelector,
) -> Result<RolloutJacobian> {
    let steps = rollout(model, state0, taus, params)?;
    let mut seeds = TangentSeeds::for_selector(model, selector)?;
    let n = seeds.ncols();
    let mut flagged_steps = Vec::new();
    let mut rank_deficient_steps = Vec::new();
    let mut nonunique_steps = Vec::new();
    for (k, s) in steps.iter().enumerate() {
        let t = step_tangent(model, s, params, &seeds)?;
        if t.boundary || s.mode_flagged() {
            flagged_steps.push(k);
        }
        if t.nonunique {
            nonunique_steps.push(k);
        }
        if t.rank_deficient {
            rank_deficient_steps.push(k);
        }
        seeds.dq = t.dq;
        seeds.dv = t.dv;
        if k == 0 {
            seeds.dtau = DMatrix::zeros(model.nv(), n);
        }
    }
    Ok(RolloutJacobian {
        steps,
        selector,
        dq: seeds.dq,
        dv: seeds.dv,
        flagged_steps,
        rank_deficient_steps,
        nonunique_steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{kinetic_energy, potential_energy};
    use crate::fixtures::{ball, chain, cube};
    use crate::model::difference;

    fn at_rest(model: &KinematicModel, z: f64) -> SimState {
        let mut q = model.neutral();
        q[2] = z;
        SimState::new(q, DVector::zeros(model.nv()))
    }

    #[test]
    fn free_fall_velocity_and_position() {
        let m = ball(0.1, 0.5);
        let s0 = at_rest(&m, 10.0);
        let params = SimParams { dt: 0.01, ..Default::default() };
        let tau = DVector::zeros(6);
        let r = step(&m, &s0, &tau, &params, None).unwrap();
        assert!((r.next.v[5] + 0.0981).abs() < 1e-14);
        let traj = rollout(&m, &s0, &constant_torques(&tau, 25), &params).unwrap();
        // symplectic Euler: the position uses the updated velocity
        let sum: f64 = traj.iter().map(|s| s.next.v[5]).sum();
        let zt = traj.last().unwrap().next.q[2];
        assert!((zt - (10.0 + 0.01 * sum)).abs() < 1e-12);
        assert!((zt - (10.0 - 0.0981 * 0.01 * (25.0 * 26.0 / 2.0))).abs() < 1e-12);
    }

    #[test]
    fn resting_cube_impulse_balance() {
        let m = cube(1.0);
        let s0 = at_rest(&m, 0.5);
        let params = SimParams { solver: SolverOptions { tol: 1e-14, ..Default::default() }, ..Default::default() };
        let r = step(&m, &s0, &DVector::zeros(6), &params, None).unwrap();
        assert_eq!(r.contacts.len(), 4);
        let total: f64 = (0..4).map(|k| r.solution.lambda[3 * k + 2]).sum();
        assert!((total - 9.81 * params.dt).abs() < 1e-13);
        assert!(r.next.v.norm() < 1e-10);
        assert_eq!(r.count_modes(ContactMode::Sticking), 4);
    }

    #[test]
    fn sliding_cube_saturates_friction() {
        let m = cube(0.5);
        let mut s0 = at_rest(&m, 0.5);
        s0.v[3] = 2.0;
        s0.v[4] = 0.5;
        let r = step(&m, &s0, &DVector::zeros(6), &SimParams::default(), None).unwrap();
        let (mut tx, mut ty, mut n) = (0.0, 0.0, 0.0);
        for k in 0..r.contacts.len() {
            tx += r.solution.lambda[3 * k];
            ty += r.solution.lambda[3 * k + 1];
            n += r.solution.lambda[3 * k + 2];
        }
        assert!((f64::hypot(tx, ty) - 0.5 * n).abs() < 1e-9 * n);
        assert_eq!(r.count_modes(ContactMode::Sliding), 4);
    }

    #[test]
    fn dropped_ball_settles() {
        let m = ball(0.1, 0.8);
        let h = 0.05;
        let s0 = at_rest(&m, 0.1 + h);
        // the margin must cover one step of travel at impact speed, otherwise the
        // first detected contact is already penetrating and Φ/Δt pushes it out
        let params = SimParams { dt: 1e-3, margin: 2e-3, ..Default::default() };
        let fall = (2.0 * h / 9.81f64).sqrt();
        let n = (2.0 * fall / params.dt).ceil() as usize;
        let traj = rollout(&m, &s0, &constant_torques(&DVector::zeros(6), n), &params).unwrap();
        assert!(traj.last().unwrap().next.v.norm() < 1e-6);
    }

    #[test]
    fn energy_does_not_grow_in_persistent_contact() {
        let m = cube(0.3);
        let mut s = at_rest(&m, 0.5);
        s.v[3] = 1.0;
        s.v[2] = 0.7;
        let params = SimParams::default();
        let traj = rollout(&m, &s, &constant_torques(&DVector::zeros(6), 400), &params).unwrap();
        let energy = |st: &SimState| kinetic_energy(&m, &st.q, &st.v).unwrap() + potential_energy(&m, &st.q).unwrap();
        let mut prev = energy(&traj[0].next);
        for r in &traj[1..] {
            let e = energy(&r.next);
            assert!(e <= prev + 1e-6, "{e} > {prev}");
            prev = e;
        }
    }

    #[test]
    fn baumgarte_keeps_penetration_bounded() {
        let m = cube(1.0);
        let s0 = at_rest(&m, 0.5 - 1e-4);
        let params = SimParams { baumgarte: Some(Baumgarte { kp: 0.1, kd: 0.0 }), ..Default::default() };
        let traj = rollout(&m, &s0, &constant_torques(&DVector::zeros(6), 1000), &params).unwrap();
        let depth = |r: &StepResult| r.contacts.iter().map(|c| c.signed_distance.abs()).fold(0.0, f64::max);
        let early = traj[..10].iter().map(depth).fold(0.0, f64::max);
        let all = traj.iter().map(depth).fold(0.0, f64::max);
        assert!(early > 0.0 && all <= 5.0 * early);
    }

    #[test]
    fn rollouts_are_deterministic() {
        let m = cube(0.5);
        let mut s = at_rest(&m, 0.52);
        s.v[3] = 1.5;
        s.v[0] = 0.4;
        let taus = constant_torques(&DVector::zeros(6), 60);
        let a = rollout(&m, &s, &taus, &SimParams::default()).unwrap();
        let b = rollout(&m, &s, &taus, &SimParams::default()).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.next, y.next);
            assert_eq!(x.solution.lambda, y.solution.lambda);
        }
    }

    #[test]
    fn contact_free_velocity_jacobian_is_identity() {
        let m = ball(0.1, 0.5);
        let s0 = at_rest(&m, 10.0);
        let params = SimParams { dt: 0.01, ..Default::default() };
        let j = rollout_jacobian(&m, &s0, &constant_torques(&DVector::zeros(6), 1), &params, ThetaSelector::V).unwrap();
        assert!((j.dv - DMatrix::identity(6, 6)).abs().max() < 1e-14);
    }

    #[test]
    fn friction_sensitivity_vanishes_without_contact() {
        let m = ball(0.1, 0.5);
        let s0 = at_rest(&m, 1.0);
        let j = rollout_jacobian(
            &m,
            &s0,
            &constant_torques(&DVector::zeros(6), 10),
            &SimParams::default(),
            ThetaSelector::Mu(0),
        )
        .unwrap();
        assert_eq!(j.dq.norm(), 0.0);
        assert_eq!(j.dv.norm(), 0.0);
    }

    #[test]
    fn invalid_inputs_are_rejected() {
        let m = chain(3);
        let s = SimState::new(m.neutral(), DVector::zeros(3));
        assert!(step(&m, &s, &DVector::zeros(2), &SimParams::default(), None).is_err());
        let bad = SimParams { dt: 0.0, ..Default::default() };
        assert!(step(&m, &s, &DVector::zeros(3), &bad, None).is_err());
        let bad = SimParams { baumgarte: Some(Baumgarte { kp: 1.5, kd: 0.0 }), ..Default::default() };
        assert!(bad.validate().is_err());
        assert!(rollout(&m, &s, &[], &SimParams::default()).is_err());
    }

    #[test]
    fn prismatic_double_integrator_rollout_jacobian() {
        use crate::fixtures::body;
        use crate::model::JointKind;
        let bodies = [Vector3::x(), Vector3::y(), Vector3::z()]
            .into_iter()
            .enumerate()
            .map(|(i, axis)| {
                body(&format!("p{i}"), JointKind::Prismatic { axis }, i.checked_sub(1), Vector3::zeros(), 1.0)
            })
            .collect();
        let m = KinematicModel::new(bodies, vec![], vec![], Vector3::new(0.0, 0.0, -9.81)).unwrap();
        let s = SimState::new(m.neutral(), DVector::from_column_slice(&[0.3, -0.1, 0.2]));
        let params = SimParams::default();
        let steps = 25;
        let taus = constant_torques(&DVector::zeros(3), steps);
        let j = rollout_jacobian(&m, &s, &taus, &params, ThetaSelector::V).unwrap();
        let expected = DMatrix::<f64>::identity(3, 3) * (steps as f64 * params.dt);
        assert!((&j.dq - expected).amax() < 1e-12);
        assert!((&j.dv - DMatrix::<f64>::identity(3, 3)).amax() < 1e-12);
    }

    #[test]
    fn one_step_rollout_matches_step() {
        let m = cube(0.5);
        let mut s = at_rest(&m, 0.5);
        s.v[3] = 1.0;
        let tau = DVector::zeros(6);
        let a = step(&m, &s, &tau, &SimParams::default(), None).unwrap();
        let b = rollout(&m, &s, &[tau], &SimParams::default()).unwrap();
        assert_eq!(a.next, b[0].next);
        assert!(difference(&m, &a.next.q, &b[0].next.q).unwrap().norm() == 0.0);
    }
}
