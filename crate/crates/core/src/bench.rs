//! Wall-clock comparison of a step, its analytical Jacobian and its
//! finite-difference Jacobian.

use std::hint::black_box;
use std::time::Instant;

use crate::diff::{step_jacobian, ThetaSelector};
use crate::error::{Result, SimError};
use crate::fd::{fd_step_jacobian, FdSettings};
use crate::model::{KinematicModel, Tangent};
use crate::simulator::{step, SimParams, SimState};

#[derive(Clone, Debug, PartialEq)]
pub struct Timing {
    pub name: &'static str,
    pub reps: usize,
    pub mean_us: f64,
    pub std_us: f64,
    /// Forward step evaluations per repetition.
    pub step_calls: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchReport {
    pub nv: usize,
    pub contacts: usize,
    pub step: Timing,
    pub analytic: Timing,
    pub finite_difference: Timing,
}

impl BenchReport {
    /// `finite_difference / analytic` on mean wall time.
    pub fn ratio(&self) -> f64 {
        self.finite_difference.mean_us / self.analytic.mean_us
    }

    /// Cost of the analytical Jacobian in units of forward steps.
    pub fn analytic_cost_in_steps(&self) -> f64 {
        self.analytic.mean_us / self.step.mean_us
    }
}

fn time<F: FnMut() -> Result<usize>>(name: &'static str, reps: usize, warmup: usize, mut f: F) -> Result<Timing> {
    let mut step_calls = 0;
    for _ in 0..warmup {
        step_calls = f()?;
    }
    let mut samples = Vec::with_capacity(reps);
    for _ in 0..reps {
        let t = Instant::now();
        step_calls = black_box(f()?);
        samples.push(t.elapsed().as_secs_f64() * 1e6);
    }
    let mean = samples.iter().sum::<f64>() / reps as f64;
    let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (reps.max(2) - 1) as f64;
    Ok(Timing { name, reps, mean_us: mean, std_us: var.sqrt(), step_calls })
}

/// Times `step`, `step_jacobian(All)` and `fd_step_jacobian(All)` at one state.
///
/// The finite differences run with the forward solver's own tolerance, so
/// both sides pay for the same convergence criterion.
pub fn bench(
    model: &KinematicModel,
    state: &SimState,
    tau: &Tangent,
    params: &SimParams,
    reps: usize,
    warmup: usize,
) -> Result<BenchReport> {
    if reps < 2 {
        return Err(SimError::InvalidParameter("bench needs at least two repetitions".into()));
    }
    let nominal = step(model, state, tau, params, None)?;
    let warm = nominal.warm_start();
    let fd = FdSettings { eps: FdSettings::default().eps, ncp_tol: params.solver.tol };
    let step_t = time("step", reps, warmup, || {
        black_box(step(model, state, tau, params, None)?);
        Ok(1)
    })?;
    let analytic = time("step_jacobian", reps, warmup, || {
        black_box(step_jacobian(model, &nominal, params, ThetaSelector::All)?);
        Ok(0)
    })?;
    let finite_difference = time("fd_jacobian", reps, warmup, || {
        let j = fd_step_jacobian(model, state, tau, params, ThetaSelector::All, &fd, Some(&warm))?;
        Ok(j.step_calls)
    })?;
    Ok(BenchReport { nv: model.nv(), contacts: nominal.contacts.len(), step: step_t, analytic, finite_difference })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::ball;
    use nalgebra::DVector;

    #[test]
    fn report_counts_calls() {
        let m = ball(0.1, 0.5);
        let mut q = m.neutral();
        q[2] = 0.1;
        let s = SimState::new(q, DVector::zeros(6));
        let r = bench(&m, &s, &DVector::zeros(6), &SimParams::default(), 3, 1).unwrap();
        assert_eq!(r.finite_difference.step_calls, 36);
        assert_eq!(r.step.step_calls, 1);
        assert_eq!(r.contacts, 1);
        assert!(r.ratio() > 0.0 && r.step.std_us >= 0.0);
        assert!(bench(&m, &s, &DVector::zeros(6), &SimParams::default(), 1, 0).is_err());
    }
}
