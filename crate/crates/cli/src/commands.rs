use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use diffsim::bench::bench;
use diffsim::diff::ThetaSelector;
use diffsim::export;
use diffsim::fd::{block_errors, fd_rollout_jacobian, FdSettings};
use diffsim::inverse::{
    estimate_initial_conditions, inverse_dynamics_contact, GnResult, GnSettings, InitialConditionProblem,
    InitialUnknown, JacobianSource,
};
use diffsim::scene::{dump_scene, resolve_scene, Scene, BUNDLED_SCENES};
use diffsim::simulator::{constant_torques, rollout, rollout_jacobian};
use nalgebra::{DMatrix, DVector};

use crate::{Command, Problem};

/// Runs one subcommand; `Ok(false)` means the command ran but its check failed.
pub fn run(command: Command) -> Result<bool> {
    match command {
        Command::Simulate { scene, steps, out, contacts } => {
            simulate(&load(&scene)?, steps, out.as_deref(), contacts.as_deref())
        }
        Command::Jacobian { scene, theta, steps, out } => jacobian(&load(&scene)?, &theta, steps, out.as_deref()),
        Command::Fdcheck { scene, eps, tol, theta, steps } => fdcheck(&load(&scene)?, eps, tol, &theta, steps),
        Command::Bench { scene, reps, warmup, out } => bench_cmd(&load(&scene)?, reps, warmup, out.as_deref()),
        Command::SolveInverse { scene, problem, target, steps, dofs, fd, max_iters, out } => {
            let opts = InverseOptions { steps, dofs, fd, max_iters };
            solve_inverse(&load(&scene)?, problem, target.as_deref(), &opts, out.as_deref())
        }
        Command::Dump { scene, out } => {
            let text = dump_scene(&load(&scene)?);
            let mut w = output(out.as_deref())?;
            writeln!(w, "{text}")?;
            w.flush()?;
            Ok(true)
        }
        Command::Scenes => {
            for name in BUNDLED_SCENES {
                println!("{name}");
            }
            Ok(true)
        }
    }
}

fn load(spec: &str) -> Result<Scene> {
    let scene = resolve_scene(spec).with_context(|| format!("loading scene {spec}"))?;
    log::info!("scene {}: nq {}, nv {}", scene.name, scene.model.nq(), scene.model.nv());
    Ok(scene)
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn require_steps(steps: usize) -> Result<()> {
    if steps == 0 {
        bail!("--steps must be at least 1");
    }
    Ok(())
}

fn simulate(scene: &Scene, steps: usize, out: Option<&Path>, contacts: Option<&Path>) -> Result<bool> {
    require_steps(steps)?;
    let traj = rollout(&scene.model, &scene.state, &constant_torques(&scene.tau, steps), &scene.params)?;
    export::write_trajectory(output(out)?, &scene.model, &scene.params, &scene.state, &traj)?;
    if let Some(path) = contacts {
        export::write_contacts(output(Some(path))?, &traj)?;
    }
    let unconverged = traj.iter().filter(|s| !s.solution.converged).count();
    if unconverged > 0 {
        eprintln!("warning: contact solver did not converge on {unconverged} of {steps} steps");
    }
    Ok(true)
}

fn jacobian(scene: &Scene, theta: &str, steps: usize, out: Option<&Path>) -> Result<bool> {
    require_steps(steps)?;
    let selector = ThetaSelector::parse(theta)?;
    let taus = constant_torques(&scene.tau, steps);
    let j = rollout_jacobian(&scene.model, &scene.state, &taus, &scene.params, selector)?;
    export::write_jacobian(output(out)?, &scene.model, selector, &j.dq, &j.dv)?;
    report_flags(&j.flagged_steps, &j.nonunique_steps);
    Ok(true)
}

fn report_flags(flagged: &[usize], nonunique: &[usize]) {
    if !flagged.is_empty() {
        eprintln!(
            "warning: steps {flagged:?} sit on a contact mode or frame boundary; derivatives there are one-sided"
        );
    }
    if !nonunique.is_empty() {
        eprintln!(
            "warning: steps {nonunique:?} have redundant contact impulses that the derivative depends on; it follows the solver's choice"
        );
    }
}

fn fdcheck(scene: &Scene, eps: f64, tol: f64, theta: &str, steps: usize) -> Result<bool> {
    require_steps(steps)?;
    let model = &scene.model;
    let selectors = match ThetaSelector::parse(theta)? {
        ThetaSelector::All => {
            let mut s = vec![ThetaSelector::All];
            s.extend((0..model.pairs().len()).map(ThetaSelector::Mu));
            s
        }
        s => vec![s],
    };
    let taus = constant_torques(&scene.tau, steps);
    let settings = FdSettings::with_eps(eps);
    let mut worst: f64 = 0.0;
    // per-output scale over every parameter block checked so far
    let mut scale = [f64::MIN_POSITIVE; 2];
    for selector in selectors {
        let a = rollout_jacobian(model, &scene.state, &taus, &scene.params, selector)?;
        let fd = fd_rollout_jacobian(model, &scene.state, &taus, &scene.params, selector, &settings)?;
        // blocks far below the scale of the whole output are compared in absolute terms
        for (o, m) in [(&a.dq, &fd.dq), (&a.dv, &fd.dv)].into_iter().enumerate() {
            scale[o] = scale[o].max(m.0.amax()).max(m.1.amax());
        }
        for e in block_errors(model.nv(), selector, [&a.dq, &a.dv], [&fd.dq, &fd.dv], Some(scale)) {
            worst = worst.max(e.error);
            println!("{}/{:<6} max rel err {:.3e}", e.output, e.block.name(), e.error);
        }
        report_flags(&a.flagged_steps, &a.nonunique_steps);
        if !fd.consistent() {
            eprintln!("warning: finite differences for {} crossed a contact set or mode change", selector.name());
        }
    }
    let pass = worst < tol;
    println!("max rel err {worst:.3e} ({}, tol {tol:e}, eps {eps:e})", if pass { "pass" } else { "FAIL" });
    Ok(pass)
}

fn bench_cmd(scene: &Scene, reps: usize, warmup: usize, out: Option<&Path>) -> Result<bool> {
    if reps < 100 {
        bail!("--reps must be at least 100");
    }
    let r = bench(&scene.model, &scene.state, &scene.tau, &scene.params, reps, warmup)?;
    for t in [&r.step, &r.analytic, &r.finite_difference] {
        eprintln!("{:<14} {:>10.2} ± {:>8.2} us  ({} step calls)", t.name, t.mean_us, t.std_us, t.step_calls);
    }
    eprintln!("ratio fd/analytic {:.1}; analytic Jacobian costs {:.2} steps", r.ratio(), r.analytic_cost_in_steps());
    export::write_bench(output(out)?, &r)?;
    Ok(true)
}

struct InverseOptions {
    steps: Option<usize>,
    dofs: Option<Vec<usize>>,
    fd: bool,
    max_iters: usize,
}

fn solve_inverse(
    scene: &Scene,
    problem: Problem,
    target: Option<&Path>,
    opts: &InverseOptions,
    out: Option<&Path>,
) -> Result<bool> {
    let model = &scene.model;
    let target_states = match target {
        Some(p) => {
            let f = File::open(p).with_context(|| format!("opening {}", p.display()))?;
            let states = export::read_trajectory(f, model.nq(), model.nv())
                .with_context(|| format!("reading {}", p.display()))?;
            if states.is_empty() {
                bail!("{} holds no states", p.display());
            }
            Some(states)
        }
        None => None,
    };
    let source =
        if opts.fd { JacobianSource::FiniteDifference(FdSettings::default()) } else { JacobianSource::Analytic };
    let settings = GnSettings { max_iters: opts.max_iters, ..GnSettings::default() };
    let gn = match problem {
        Problem::Invdyn => {
            if opts.dofs.is_some() || opts.steps.is_some() {
                bail!("--dofs and --steps apply to the estimation problems only");
            }
            let v_target =
                target_states.map_or_else(|| DVector::zeros(model.nv()), |s| s.last().expect("non-empty").v.clone());
            let na = model.actuation().nrows();
            let gn = inverse_dynamics_contact(
                model,
                &scene.state,
                &v_target,
                &scene.params,
                &DVector::zeros(na),
                source,
                &settings,
            )?;
            print_trace(&gn);
            println!("tau_act {}", join(gn.theta.iter()));
            gn
        }
        Problem::EstimateV0 | Problem::EstimateImpulse => {
            let Some(states) = target_states else { bail!("--target is required for {problem:?}") };
            let steps = opts.steps.unwrap_or(states.len() - 1);
            require_steps(steps)?;
            let (unknown, theta0) = if problem == Problem::EstimateV0 {
                (InitialUnknown::Velocity, scene.state.v.clone())
            } else {
                (InitialUnknown::FirstTorque, scene.tau.clone())
            };
            let subspace = match &opts.dofs {
                Some(d) => {
                    if let Some(bad) = d.iter().find(|&&i| i >= model.nv()) {
                        bail!("--dofs entry {bad} is out of range (nv = {})", model.nv());
                    }
                    Some(DMatrix::from_fn(model.nv(), d.len(), |r, c| if d[c] == r { 1.0 } else { 0.0 }))
                }
                None => None,
            };
            let taus = constant_torques(&scene.tau, steps);
            let target_q = &states.last().expect("non-empty").q;
            let problem = InitialConditionProblem {
                model,
                state0: &scene.state,
                taus: &taus,
                params: &scene.params,
                target: target_q,
                unknown,
                subspace,
            };
            let res = estimate_initial_conditions(&problem, &theta0, source, &settings)?;
            print_trace(&res.gn);
            println!("estimate {}", join(res.theta.iter()));
            println!("final configuration error {:.3e}", res.final_error);
            report_flags(&res.flagged_steps, &[]);
            res.gn
        }
    };
    if let Some(p) = out {
        export::write_gn_trace(output(Some(p))?, &gn.trace)?;
    }
    println!("status {}", gn.status.name());
    Ok(gn.status == diffsim::inverse::GnStatus::Converged)
}

fn print_trace(gn: &GnResult) {
    println!("{:>4} {:>12} {:>12} {:>9} accepted", "iter", "objective", "residual", "damping");
    for t in &gn.trace {
        println!(
            "{:>4} {:>12.4e} {:>12.4e} {:>9.1e} {}",
            t.iteration, t.objective, t.residual_norm, t.damping, t.accepted
        );
    }
}

fn join<'a>(xs: impl Iterator<Item = &'a f64>) -> String {
    xs.map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}
