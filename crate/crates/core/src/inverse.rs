//! Gauss-Newton solvers for initial-condition estimation and inverse dynamics
//! through contact.

use nalgebra::{DMatrix, DVector};

use crate::diff::{step_jacobian, ThetaSelector};
use crate::error::{check_dim, Result, SimError};
use crate::fd::{fd_rollout_jacobian, fd_step_jacobian, FdSettings};
use crate::model::{difference, difference_jacobian_q1, Configuration, KinematicModel, Tangent};
use crate::simulator::{rollout, rollout_jacobian, step, SimParams, SimState};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GnSettings {
    pub max_iters: usize,
    /// Stop once `‖r‖ ≤ residual_tol`.
    pub residual_tol: f64,
    /// Initial Levenberg damping, multiplied by 10 on rejection and divided by 10 on acceptance.
    pub damping: f64,
    /// Stop once `‖δ‖ ≤ step_tol · (1 + ‖θ‖)`.
    pub step_tol: f64,
    /// Consecutive rejections before giving up.
    pub max_rejections: usize,
}

impl Default for GnSettings {
    fn default() -> Self {
        Self { max_iters: 100, residual_tol: 1e-8, damping: 1e-8, step_tol: 1e-12, max_rejections: 10 }
    }
}

impl GnSettings {
    fn validate(&self) -> Result<()> {
        let ok = self.max_iters > 0
            && self.residual_tol > 0.0
            && self.damping > 0.0
            && self.step_tol > 0.0
            && self.max_rejections > 0;
        if !ok {
            return Err(SimError::InvalidParameter("Gauss-Newton settings must all be positive".into()));
        }
        Ok(())
    }
}

/// One row of the trace. `objective` is `½‖r‖²` at the current iterate, after
/// the accept/reject decision of this iteration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GnIteration {
    pub iteration: usize,
    pub objective: f64,
    pub residual_norm: f64,
    pub gradient_norm: f64,
    pub step_norm: f64,
    pub damping: f64,
    pub accepted: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GnStatus {
    Converged,
    StepTolerance,
    MaxIterations,
    /// Too many consecutive rejected steps; the best iterate is returned.
    Stalled,
}

impl GnStatus {
    pub fn name(&self) -> &'static str {
        match self {
            GnStatus::Converged => "converged",
            GnStatus::StepTolerance => "step-tolerance",
            GnStatus::MaxIterations => "max-iterations",
            GnStatus::Stalled => "stalled",
        }
    }
}

#[derive(Clone, Debug)]
pub struct GnResult {
    pub theta: DVector<f64>,
    pub status: GnStatus,
    /// Row 0 is the initial point.
    pub trace: Vec<GnIteration>,
}

impl GnResult {
    pub fn objective(&self) -> f64 {
        self.trace.last().map_or(f64::NAN, |t| t.objective)
    }

    pub fn residual_norm(&self) -> f64 {
        self.trace.last().map_or(f64::NAN, |t| t.residual_norm)
    }

    /// Iterations performed, rejected ones included.
    pub fn iterations(&self) -> usize {
        self.trace.len().saturating_sub(1)
    }
}

/// Levenberg-damped Gauss-Newton on `½‖r(θ)‖²`.
///
/// `residual` returns `(r, ∂r/∂θ)`. A trial point whose evaluation fails is
/// treated like a rejected step.
pub fn gauss_newton<F>(mut residual: F, theta0: &DVector<f64>, settings: &GnSettings) -> Result<GnResult>
where
    F: FnMut(&DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>)>,
{
    settings.validate()?;
    let mut theta = theta0.clone();
    let (mut r, mut jac) = residual(&theta)?;
    check_dim("residual Jacobian columns", theta.len(), jac.ncols())?;
    check_dim("residual Jacobian rows", r.len(), jac.nrows())?;
    let mut damping = settings.damping;
    let mut grad = jac.transpose() * &r;
    let mut trace = vec![GnIteration {
        iteration: 0,
        objective: 0.5 * r.norm_squared(),
        residual_norm: r.norm(),
        gradient_norm: grad.norm(),
        step_norm: 0.0,
        damping,
        accepted: true,
    }];
    let mut rejections = 0;
    for it in 1..=settings.max_iters {
        if r.norm() <= settings.residual_tol {
            return Ok(GnResult { theta, status: GnStatus::Converged, trace });
        }
        let mut normal = jac.transpose() * &jac;
        for i in 0..theta.len() {
            normal[(i, i)] += damping;
        }
        let delta = match normal.cholesky() {
            Some(c) => -c.solve(&grad),
            None => {
                // inf or NaN entries in the Jacobian
                return Err(SimError::InvalidParameter(
                    "Gauss-Newton normal equations are not positive definite".into(),
                ));
            }
        };
        let step_norm = delta.norm();
        if step_norm <= settings.step_tol * (1.0 + theta.norm()) {
            return Ok(GnResult { theta, status: GnStatus::StepTolerance, trace });
        }
        let trial = &theta + &delta;
        let objective = 0.5 * r.norm_squared();
        let accepted = match residual(&trial) {
            Ok((rt, jt)) if 0.5 * rt.norm_squared() < objective => {
                theta = trial;
                r = rt;
                jac = jt;
                grad = jac.transpose() * &r;
                true
            }
            Ok(_) => false,
            Err(e) => {
                log::debug!("Gauss-Newton trial evaluation failed: {e}");
                false
            }
        };
        if accepted {
            damping = (damping / 10.0).max(f64::MIN_POSITIVE);
            rejections = 0;
        } else {
            damping *= 10.0;
            rejections += 1;
        }
        trace.push(GnIteration {
            iteration: it,
            objective: 0.5 * r.norm_squared(),
            residual_norm: r.norm(),
            gradient_norm: grad.norm(),
            step_norm,
            damping,
            accepted,
        });
        log::debug!("gn {it}: objective {:.3e} damping {damping:.1e} accepted {accepted}", 0.5 * r.norm_squared());
        if rejections >= settings.max_rejections {
            log::warn!("Gauss-Newton stalled after {rejections} rejected steps");
            return Ok(GnResult { theta, status: GnStatus::Stalled, trace });
        }
    }
    let status = if r.norm() <= settings.residual_tol { GnStatus::Converged } else { GnStatus::MaxIterations };
    Ok(GnResult { theta, status, trace })
}

/// Where Jacobians of the forward map come from.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum JacobianSource {
    Analytic,
    FiniteDifference(FdSettings),
}

/// Unknown of the initial-condition problem.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitialUnknown {
    /// The initial velocity `v₀`.
    Velocity,
    /// The torque of the first step; its impulse is `τ₀·Δt`.
    FirstTorque,
}

impl InitialUnknown {
    fn selector(self) -> ThetaSelector {
        match self {
            InitialUnknown::Velocity => ThetaSelector::V,
            InitialUnknown::FirstTorque => ThetaSelector::Tau,
        }
    }
}

/// `min ½‖difference(q*_T, q_T(θ))‖²` over `θ = θ₀ + E z`.
#[derive(Clone, Debug)]
pub struct InitialConditionProblem<'a> {
    pub model: &'a KinematicModel,
    pub state0: &'a SimState,
    /// Fixes the rollout length; with [`InitialUnknown::FirstTorque`] the
    /// first entry is replaced by the iterate.
    pub taus: &'a [Tangent],
    pub params: &'a SimParams,
    pub target: &'a Configuration,
    pub unknown: InitialUnknown,
    /// Columns `E` of the searched subspace; `None` searches all of `θ`.
    /// Inelastic contact erases some initial velocity components, which are
    /// then unobservable from `q_T`.
    pub subspace: Option<DMatrix<f64>>,
}

#[derive(Clone, Debug)]
pub struct EstimateResult {
    /// The estimate `θ₀ + E z*`.
    pub theta: DVector<f64>,
    /// Trace over the subspace coordinates `z`.
    pub gn: GnResult,
    /// `‖difference(q*_T, q_T(θ*))‖`.
    pub final_error: f64,
    /// Rollout steps flagged as mode or frame boundaries at `θ*`.
    pub flagged_steps: Vec<usize>,
}

impl InitialConditionProblem<'_> {
    fn setup(&self, theta: &DVector<f64>) -> (SimState, Vec<Tangent>) {
        let mut s = self.state0.clone();
        let mut t = self.taus.to_vec();
        match self.unknown {
            InitialUnknown::Velocity => s.v = theta.clone(),
            InitialUnknown::FirstTorque => t[0] = theta.clone(),
        }
        (s, t)
    }
}

/// Recovers `v₀` or `τ₀` from a final configuration.
pub fn estimate_initial_conditions(
    problem: &InitialConditionProblem,
    theta0: &DVector<f64>,
    source: JacobianSource,
    settings: &GnSettings,
) -> Result<EstimateResult> {
    let model = problem.model;
    let params = problem.params;
    if problem.taus.is_empty() {
        return Err(SimError::InvalidParameter("rollout needs at least one step".into()));
    }
    model.check_configuration(problem.target)?;
    check_dim("initial guess", model.nv(), theta0.len())?;
    let basis = problem.subspace.clone().unwrap_or_else(|| DMatrix::identity(model.nv(), model.nv()));
    check_dim("subspace rows", model.nv(), basis.nrows())?;
    let selector = problem.unknown.selector();
    let lift = |z: &DVector<f64>| theta0 + &basis * z;
    let residual = |z: &DVector<f64>| -> Result<(DVector<f64>, DMatrix<f64>)> {
        let (s, t) = problem.setup(&lift(z));
        let (q_final, dq) = match source {
            JacobianSource::Analytic => {
                let j = rollout_jacobian(model, &s, &t, params, selector)?;
                (j.steps.last().expect("non-empty rollout").next.q.clone(), j.dq)
            }
            JacobianSource::FiniteDifference(fd) => {
                let traj = rollout(model, &s, &t, params)?;
                let j = fd_rollout_jacobian(model, &s, &t, params, selector, &fd)?;
                (traj.last().expect("non-empty rollout").next.q.clone(), j.dq)
            }
        };
        let r = difference(model, problem.target, &q_final)?;
        let jr = difference_jacobian_q1(model, problem.target, &q_final)? * dq * &basis;
        Ok((r, jr))
    };
    let gn = gauss_newton(residual, &DVector::zeros(basis.ncols()), settings)?;
    let theta = lift(&gn.theta);
    let (s, t) = problem.setup(&theta);
    let j = rollout_jacobian(model, &s, &t, params, selector)?;
    let q_final = &j.steps.last().expect("non-empty rollout").next.q;
    let final_error = difference(model, problem.target, q_final)?.norm();
    Ok(EstimateResult { theta, gn, final_error, flagged_steps: j.flagged_steps })
}

/// Actuator torques `τ_act` with `v⁺(q, v, Sᵀτ_act) ≈ v*`, by
/// `min ½‖v⁺ − v*‖²`.
pub fn inverse_dynamics_contact(
    model: &KinematicModel,
    state: &SimState,
    v_target: &Tangent,
    params: &SimParams,
    tau_act0: &DVector<f64>,
    source: JacobianSource,
    settings: &GnSettings,
) -> Result<GnResult> {
    let s = model.actuation();
    check_dim("target velocity", model.nv(), v_target.len())?;
    check_dim("actuator torques", s.nrows(), tau_act0.len())?;
    let st = s.transpose();
    let residual = |theta: &DVector<f64>| -> Result<(DVector<f64>, DMatrix<f64>)> {
        let tau = &st * theta;
        let r = step(model, state, &tau, params, None)?;
        let dv = match source {
            JacobianSource::Analytic => step_jacobian(model, &r, params, ThetaSelector::Tau)?.dv,
            JacobianSource::FiniteDifference(fd) => {
                fd_step_jacobian(model, state, &tau, params, ThetaSelector::Tau, &fd, None)?.dv
            }
        };
        Ok((&r.next.v - v_target, dv * &st))
    };
    gauss_newton(residual, tau_act0, settings)
}
