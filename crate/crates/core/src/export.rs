//! CSV writers for trajectories, Jacobians, solver traces and timings.
//!
//! Floats are written with Rust's shortest round-trip formatting, so the files
//! are deterministic and reload bit-exactly.

use std::io::Write;

use nalgebra::DMatrix;

use crate::bench::BenchReport;
use crate::diff::ThetaSelector;
use crate::error::{check_dim, Result};
use crate::inverse::GnIteration;
use crate::model::KinematicModel;
use crate::simulator::{SimParams, SimState, StepResult};

fn names(prefix: &str, n: usize) -> impl Iterator<Item = String> + '_ {
    (0..n).map(move |i| format!("{prefix}{i}"))
}

/// One row per state: `step, time, q*, v*, contacts, ncp_residual, converged`.
/// Row 0 is the initial state; row `k` is the state after step `k`, and its
/// contact columns describe that step.
pub fn write_trajectory<W: Write>(
    out: W,
    model: &KinematicModel,
    params: &SimParams,
    initial: &SimState,
    steps: &[StepResult],
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["step".to_string(), "time".to_string()];
    header.extend(names("q", model.nq()));
    header.extend(names("v", model.nv()));
    header.extend(["contacts", "ncp_residual", "converged"].map(String::from));
    w.write_record(&header)?;
    let row = |k: usize, s: &SimState, tail: [String; 3]| {
        let mut r = vec![k.to_string(), (k as f64 * params.dt).to_string()];
        r.extend(s.q.iter().chain(s.v.iter()).map(f64::to_string));
        r.extend(tail);
        r
    };
    w.write_record(row(0, initial, [0.to_string(), 0.0.to_string(), true.to_string()]))?;
    for (k, s) in steps.iter().enumerate() {
        let tail = [s.contacts.len().to_string(), s.solution.residual.to_string(), s.solution.converged.to_string()];
        w.write_record(row(k + 1, &s.next, tail))?;
    }
    w.flush()?;
    Ok(())
}

/// One row per contact per step, with impulses in the contact frame.
pub fn write_contacts<W: Write>(out: W, steps: &[StepResult]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["step", "pair", "corner", "mode", "signed_distance", "lambda_x", "lambda_y", "lambda_n"])?;
    for (k, s) in steps.iter().enumerate() {
        for (c, con) in s.contacts.iter().enumerate() {
            let l = s.solution.lambda.rows(3 * c, 3);
            w.write_record([
                (k + 1).to_string(),
                con.pair.to_string(),
                con.corner.to_string(),
                s.solution.modes[c].name().to_string(),
                con.signed_distance.to_string(),
                l[0].to_string(),
                l[1].to_string(),
                l[2].to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Column labels for a parameter block, e.g. `q3`, `tau0`, `mu1`.
pub fn theta_labels(model: &KinematicModel, selector: ThetaSelector) -> Vec<String> {
    let nv = model.nv();
    match selector {
        ThetaSelector::Q => names("q", nv).collect(),
        ThetaSelector::V => names("v", nv).collect(),
        ThetaSelector::Tau => names("tau", nv).collect(),
        ThetaSelector::All => names("q", nv).chain(names("v", nv)).chain(names("tau", nv)).collect(),
        ThetaSelector::Mu(p) => vec![format!("mu{p}")],
    }
}

/// Labelled matrix: a leading `output` column followed by one column per parameter.
pub fn write_matrix<W: Write>(out: W, rows: &[String], cols: &[String], m: &DMatrix<f64>) -> Result<()> {
    check_dim("row labels", m.nrows(), rows.len())?;
    check_dim("column labels", m.ncols(), cols.len())?;
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["output".to_string()];
    header.extend(cols.iter().cloned());
    w.write_record(&header)?;
    for (i, label) in rows.iter().enumerate() {
        let mut r = vec![label.clone()];
        r.extend(m.row(i).iter().map(f64::to_string));
        w.write_record(&r)?;
    }
    w.flush()?;
    Ok(())
}

/// `dq⁺` rows followed by `dv⁺` rows.
pub fn write_jacobian<W: Write>(
    out: W,
    model: &KinematicModel,
    selector: ThetaSelector,
    dq: &DMatrix<f64>,
    dv: &DMatrix<f64>,
) -> Result<()> {
    let rows: Vec<String> = names("dq", model.nv()).chain(names("dv", model.nv())).collect();
    let mut stacked = DMatrix::zeros(dq.nrows() + dv.nrows(), dq.ncols());
    stacked.rows_mut(0, dq.nrows()).copy_from(dq);
    stacked.rows_mut(dq.nrows(), dv.nrows()).copy_from(dv);
    write_matrix(out, &rows, &theta_labels(model, selector), &stacked)
}

pub fn write_gn_trace<W: Write>(out: W, trace: &[GnIteration]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["iteration", "objective", "residual_norm", "gradient_norm", "step_norm", "damping", "accepted"])?;
    for t in trace {
        w.write_record([
            t.iteration.to_string(),
            t.objective.to_string(),
            t.residual_norm.to_string(),
            t.gradient_norm.to_string(),
            t.step_norm.to_string(),
            t.damping.to_string(),
            t.accepted.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_bench<W: Write>(out: W, report: &BenchReport) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["operation", "reps", "mean_us", "std_us", "step_calls"])?;
    for t in [&report.step, &report.analytic, &report.finite_difference] {
        w.write_record([
            t.name.to_string(),
            t.reps.to_string(),
            t.mean_us.to_string(),
            t.std_us.to_string(),
            t.step_calls.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads back a trajectory written by [`write_trajectory`] as `(q, v)` rows.
pub fn read_trajectory<R: std::io::Read>(input: R, nq: usize, nv: usize) -> Result<Vec<SimState>> {
    let mut r = csv::Reader::from_reader(input);
    let mut states = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        check_dim("trajectory columns", 2 + nq + nv + 3, rec.len())?;
        let parse = |i: usize| -> Result<f64> {
            rec[i].parse::<f64>().map_err(|e| crate::SimError::InvalidParameter(format!("trajectory column {i}: {e}")))
        };
        let q = (0..nq).map(|i| parse(2 + i)).collect::<Result<Vec<_>>>()?;
        let v = (0..nv).map(|i| parse(2 + nq + i)).collect::<Result<Vec<_>>>()?;
        states.push(SimState::new(q.into(), v.into()));
    }
    Ok(states)
}
