//! Central finite differences of steps and rollouts.
//!
//! Configurations are perturbed through `integrate`, so free-joint quaternions
//! stay on the manifold, and final configurations are compared with
//! `difference`. Every column costs exactly two forward evaluations.

use std::collections::BTreeSet;

use nalgebra::DMatrix;

use crate::contact::ContactMode;
use crate::diff::ThetaSelector;
use crate::error::{Result, SimError};
use crate::model::{difference, integrate, KinematicModel, Tangent};
use crate::simulator::{rollout, step, SimParams, SimState, StepResult, WarmStart};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FdSettings {
    pub eps: f64,
    /// Solver tolerance used for the perturbed solves; the default solver
    /// tolerance would dominate the truncation error at `eps = 1e-6`.
    pub ncp_tol: f64,
}

impl Default for FdSettings {
    fn default() -> Self {
        Self { eps: 1e-6, ncp_tol: 1e-14 }
    }
}

impl FdSettings {
    pub fn with_eps(eps: f64) -> Self {
        Self { eps, ..Default::default() }
    }

    fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0) || !(self.ncp_tol > 0.0) {
            return Err(SimError::InvalidParameter("finite-difference step and tolerance must be positive".into()));
        }
        Ok(())
    }

    fn params(&self, params: &SimParams) -> SimParams {
        let mut p = *params;
        p.solver.tol = p.solver.tol.min(self.ncp_tol);
        p
    }
}

#[derive(Clone, Debug)]
pub struct FdJacobian {
    pub selector: ThetaSelector,
    pub dq: DMatrix<f64>,
    pub dv: DMatrix<f64>,
    pub step_calls: usize,
    /// Some perturbed evaluation saw a different contact set.
    pub contact_set_changed: bool,
    /// Some perturbed evaluation saw a contact in a different mode.
    pub mode_changed: bool,
}

impl FdJacobian {
    /// The perturbed evaluations all share the contact set and modes.
    pub fn consistent(&self) -> bool {
        !self.contact_set_changed && !self.mode_changed
    }
}

/// One perturbed problem: model (for friction), state and torque sequence.
struct Perturbed {
    model: Option<KinematicModel>,
    state: SimState,
    tau0: Tangent,
}

fn perturb(
    model: &KinematicModel,
    state: &SimState,
    tau0: &Tangent,
    selector: ThetaSelector,
    column: usize,
    h: f64,
) -> Result<Perturbed> {
    let nv = model.nv();
    let mut p = Perturbed { model: None, state: state.clone(), tau0: tau0.clone() };
    let (part, k) = match selector {
        ThetaSelector::All => match column / nv {
            0 => (ThetaSelector::Q, column),
            1 => (ThetaSelector::V, column - nv),
            _ => (ThetaSelector::Tau, column - 2 * nv),
        },
        s => (s, column),
    };
    match part {
        ThetaSelector::Q => {
            let mut d = Tangent::zeros(nv);
            d[k] = h;
            p.state.q = integrate(model, &state.q, &d)?;
        }
        ThetaSelector::V => p.state.v[k] += h,
        ThetaSelector::Tau => p.tau0[k] += h,
        ThetaSelector::Mu(pair) => {
            let mu = model
                .pairs()
                .get(pair)
                .ok_or_else(|| SimError::InvalidParameter(format!("collision pair {pair} does not exist")))?
                .mu;
            p.model = Some(model.with_friction(pair, mu + h));
        }
        ThetaSelector::All => unreachable!("split above"),
    }
    Ok(p)
}

type Signature = BTreeSet<(usize, usize, u8)>;
type ContactSet = BTreeSet<(usize, usize, usize)>;

fn signature(steps: &[StepResult]) -> (BTreeSet<(usize, usize, usize)>, Signature) {
    let mut set = BTreeSet::new();
    let mut modes = BTreeSet::new();
    for (t, s) in steps.iter().enumerate() {
        for (c, con) in s.contacts.iter().enumerate() {
            set.insert((t, con.pair, con.corner));
            let m = match s.solution.modes[c] {
                ContactMode::Breaking => 0,
                ContactMode::Sticking => 1,
                ContactMode::Sliding => 2,
            };
            modes.insert((t * 1_000_003 + con.pair, con.corner, m));
        }
    }
    (set, modes)
}

/// Central differences of a rollout's final state.
///
/// `Tau` perturbs only the first torque, matching
/// [`crate::simulator::rollout_jacobian`].
pub fn fd_rollout_jacobian(
    model: &KinematicModel,
    state0: &SimState,
    taus: &[Tangent],
    params: &SimParams,
    selector: ThetaSelector,
    settings: &FdSettings,
) -> Result<FdJacobian> {
    settings.validate()?;
    let first = taus.first().ok_or_else(|| SimError::InvalidParameter("rollout needs at least one step".into()))?;
    let params = settings.params(params);
    let n = selector.dim(model);
    let nv = model.nv();
    let h = settings.eps;
    let mut out = FdJacobian {
        selector,
        dq: DMatrix::zeros(nv, n),
        dv: DMatrix::zeros(nv, n),
        step_calls: 0,
        contact_set_changed: false,
        mode_changed: false,
    };
    let mut reference: Option<(ContactSet, Signature)> = None;
    let mut taus = taus.to_vec();
    for col in 0..n {
        let mut ends = Vec::with_capacity(2);
        for sign in [1.0, -1.0] {
            let p = perturb(model, state0, first, selector, col, sign * h)?;
            let m = p.model.as_ref().unwrap_or(model);
            taus[0] = p.tau0;
            let traj = rollout(m, &p.state, &taus, &params)?;
            out.step_calls += traj.len();
            let sig = signature(&traj);
            match &reference {
                None => reference = Some(sig),
                Some((set, modes)) => {
                    out.contact_set_changed |= *set != sig.0;
                    out.mode_changed |= *set == sig.0 && *modes != sig.1;
                }
            }
            ends.push(traj.last().expect("non-empty rollout").next.clone());
        }
        let (plus, minus) = (&ends[0], &ends[1]);
        out.dq.set_column(col, &(difference(model, &minus.q, &plus.q)? / (2.0 * h)));
        out.dv.set_column(col, &((&plus.v - &minus.v) / (2.0 * h)));
    }
    Ok(out)
}

/// Central differences of one step: exactly `2·n_θ` calls to [`step`].
pub fn fd_step_jacobian(
    model: &KinematicModel,
    state: &SimState,
    tau: &Tangent,
    params: &SimParams,
    selector: ThetaSelector,
    settings: &FdSettings,
    warm_start: Option<&WarmStart>,
) -> Result<FdJacobian> {
    settings.validate()?;
    let params = settings.params(params);
    let n = selector.dim(model);
    let nv = model.nv();
    let h = settings.eps;
    let mut out = FdJacobian {
        selector,
        dq: DMatrix::zeros(nv, n),
        dv: DMatrix::zeros(nv, n),
        step_calls: 0,
        contact_set_changed: false,
        mode_changed: false,
    };
    let mut reference = None;
    for col in 0..n {
        let mut ends = Vec::with_capacity(2);
        for sign in [1.0, -1.0] {
            let p = perturb(model, state, tau, selector, col, sign * h)?;
            let m = p.model.as_ref().unwrap_or(model);
            let r = step(m, &p.state, &p.tau0, &params, warm_start)?;
            out.step_calls += 1;
            let sig = signature(std::slice::from_ref(&r));
            match &reference {
                None => reference = Some(sig),
                Some((set, modes)) => {
                    out.contact_set_changed |= *set != sig.0;
                    out.mode_changed |= *set == sig.0 && *modes != sig.1;
                }
            }
            ends.push(r.next);
        }
        let (plus, minus) = (&ends[0], &ends[1]);
        out.dq.set_column(col, &(difference(model, &minus.q, &plus.q)? / (2.0 * h)));
        out.dv.set_column(col, &((&plus.v - &minus.v) / (2.0 * h)));
    }
    Ok(out)
}

/// `‖a − b‖_max / max(‖a‖_max, ‖b‖_max, floor)`.
pub fn relative_error_with_floor(a: &DMatrix<f64>, b: &DMatrix<f64>, floor: f64) -> f64 {
    if a.shape() != b.shape() {
        return f64::INFINITY;
    }
    if a.is_empty() {
        return 0.0;
    }
    let scale = a.amax().max(b.amax()).max(floor);
    (a - b).amax() / scale
}

/// Blocks are compared relative to their own size, but never to less than
/// this fraction of the whole output's size.
pub const BLOCK_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct BlockError {
    /// `dq` or `dv`.
    pub output: &'static str,
    pub block: ThetaSelector,
    pub error: f64,
}

/// Relative error of every parameter block of `dq` and `dv`.
///
/// `scale` holds the magnitudes of the two outputs over every parameter; pass
/// `None` to use the magnitudes of the matrices given.
pub fn block_errors(
    nv: usize,
    selector: ThetaSelector,
    analytic: [&DMatrix<f64>; 2],
    numeric: [&DMatrix<f64>; 2],
    scale: Option<[f64; 2]>,
) -> Vec<BlockError> {
    let parts = match selector {
        ThetaSelector::All => vec![ThetaSelector::Q, ThetaSelector::V, ThetaSelector::Tau],
        s => vec![s],
    };
    let mut out = Vec::new();
    for (o, output) in ["dq", "dv"].into_iter().enumerate() {
        let (a, b) = (analytic[o], numeric[o]);
        let s = scale.map_or_else(|| a.amax().max(b.amax()), |s| s[o]);
        for &block in &parts {
            let cols = match selector {
                ThetaSelector::All => ThetaSelector::columns_in_all(block, nv).expect("q, v and tau are in all"),
                _ => 0..a.ncols(),
            };
            let ab = a.columns(cols.start, cols.len()).into_owned();
            let bb = b.columns(cols.start, cols.len()).into_owned();
            let error = relative_error_with_floor(&ab, &bb, (BLOCK_FLOOR * s).max(f64::MIN_POSITIVE));
            out.push(BlockError { output, block, error });
        }
    }
    out
}

/// Largest entry of [`block_errors`].
pub fn max_block_error(
    nv: usize,
    selector: ThetaSelector,
    analytic: [&DMatrix<f64>; 2],
    numeric: [&DMatrix<f64>; 2],
) -> f64 {
    block_errors(nv, selector, analytic, numeric, None).iter().map(|e| e.error).fold(0.0, f64::max)
}

/// [`relative_error_with_floor`] with a floor of `1e-12`.
pub fn relative_error(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    relative_error_with_floor(a, b, 1e-12)
}
