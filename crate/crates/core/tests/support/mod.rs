//! Random contact states on the bundled scenes, shared by the integration tests.
#![allow(dead_code)]

use diffsim::contact::{modes_are_clear, ContactMode, SolverOptions};
use diffsim::diff::{step_jacobian, ContactKinematics, StepJacobian, ThetaSelector};
use diffsim::fd::{fd_step_jacobian, max_block_error, FdJacobian, FdSettings};
use diffsim::model::{integrate, world_jacobian, KinematicModel};
use diffsim::scene::{bundled_scene, Scene};
use diffsim::simulator::{step, Baumgarte, SimParams, SimState, StepResult};
use nalgebra::{DVector, UnitQuaternion, Vector3};
use rand::rngs::StdRng;
use rand::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Regime {
    Breaking,
    Sticking,
    Sliding,
    Mixed,
}

impl Regime {
    pub const ALL: [Regime; 4] = [Regime::Breaking, Regime::Sticking, Regime::Sliding, Regime::Mixed];

    pub fn of(modes: &[ContactMode]) -> Option<Regime> {
        let first = *modes.first()?;
        if modes.iter().any(|m| *m != first) {
            return Some(Regime::Mixed);
        }
        Some(match first {
            ContactMode::Breaking => Regime::Breaking,
            ContactMode::Sticking => Regime::Sticking,
            ContactMode::Sliding => Regime::Sliding,
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Regime::Breaking => "breaking",
            Regime::Sticking => "sticking",
            Regime::Sliding => "sliding",
            Regime::Mixed => "mixed",
        }
    }
}

/// A state to differentiate at.
#[derive(Clone, Debug)]
pub struct Sample {
    pub scene: &'static str,
    pub state: SimState,
    pub tau: DVector<f64>,
}

pub struct Scenes {
    pub cube: Scene,
    pub slide: Scene,
    pub chain: Scene,
}

impl Scenes {
    pub fn load() -> Self {
        Self {
            cube: bundled_scene("cube_on_plane").unwrap(),
            slide: bundled_scene("cube_slide").unwrap(),
            chain: bundled_scene("chain12").unwrap(),
        }
    }

    pub fn get(&self, name: &str) -> &Scene {
        match name {
            "cube_on_plane" => &self.cube,
            "cube_slide" => &self.slide,
            "chain12" => &self.chain,
            other => panic!("unknown scene {other}"),
        }
    }
}

fn uniform3(rng: &mut StdRng, lo: f64, hi: f64) -> Vector3<f64> {
    Vector3::new(rng.random_range(lo..hi), rng.random_range(lo..hi), rng.random_range(lo..hi))
}

/// Unit cube in a uniformly random orientation with its lowest corner at a
/// random signed distance around the detection margin. Velocities are drawn
/// in the world frame from one of three regimes (slow, skidding, lifting).
pub fn random_cube(rng: &mut StdRng, model: &KinematicModel, margin: f64) -> (SimState, DVector<f64>) {
    let axis = loop {
        let a = uniform3(rng, -1.0, 1.0);
        if a.norm() > 1e-3 && a.norm() <= 1.0 {
            break a.normalize();
        }
    };
    let angle = rng.random_range(0.0..std::f64::consts::PI);
    let mut delta = DVector::zeros(6);
    delta.rows_mut(0, 3).copy_from(&(axis * angle));
    let mut q = integrate(model, &model.neutral(), &delta).unwrap();
    let rot = UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(q[6], q[3], q[4], q[5]));
    let lowest = (0..8)
        .map(|k| {
            let c = Vector3::new(
                if k & 1 == 0 { -0.5 } else { 0.5 },
                if k & 2 == 0 { -0.5 } else { 0.5 },
                if k & 4 == 0 { -0.5 } else { 0.5 },
            );
            (rot * c).z
        })
        .fold(f64::INFINITY, f64::min);
    q[2] = -lowest + rng.random_range(-0.5 * margin..0.9 * margin);
    let (w, v) = match rng.random_range(0..3) {
        0 => (uniform3(rng, -0.05, 0.05), uniform3(rng, -0.02, 0.02)),
        1 => {
            let mut v = uniform3(rng, -3.0, 3.0);
            v.z = rng.random_range(-0.1..0.05);
            (uniform3(rng, -1.0, 1.0), v)
        }
        _ => {
            let mut v = uniform3(rng, -0.5, 0.5);
            v.z = rng.random_range(0.2..1.0);
            (uniform3(rng, -0.5, 0.5), v)
        }
    };
    let mut vel = DVector::zeros(6);
    vel.rows_mut(0, 3).copy_from(&(rot.inverse() * w));
    vel.rows_mut(3, 3).copy_from(&(rot.inverse() * v));
    let mut tau = DVector::zeros(6);
    tau.rows_mut(0, 3).copy_from(&uniform3(rng, -0.5, 0.5));
    tau.rows_mut(3, 3).copy_from(&uniform3(rng, -3.0, 3.0));
    (SimState::new(q, vel), tau)
}

/// Planar chain touching the ground at its three tips: yaw joints are free,
/// pitch joints stay near zero so every tip sits within the detection margin.
pub fn random_chain(rng: &mut StdRng, model: &KinematicModel) -> (SimState, DVector<f64>) {
    let nv = model.nv();
    let mut q = model.neutral();
    let mut v = DVector::zeros(nv);
    let mut tau = DVector::zeros(nv);
    let slow = rng.random_bool(0.3);
    for i in 0..nv {
        if i % 2 == 0 {
            q[i] = rng.random_range(-0.8..0.8);
            v[i] = if slow { rng.random_range(-1e-3..1e-3) } else { rng.random_range(-2.0..2.0) };
            tau[i] = rng.random_range(-0.05..0.05);
        } else {
            q[i] = rng.random_range(-1e-5..1e-5);
            v[i] = rng.random_range(-0.05..0.05);
            tau[i] = rng.random_range(-0.05..0.05);
        }
    }
    (SimState::new(q, v), tau)
}

pub fn random_sample(rng: &mut StdRng, scenes: &Scenes) -> Sample {
    match rng.random_range(0..3) {
        0 => {
            let (state, tau) = random_cube(rng, &scenes.cube.model, scenes.cube.params.margin);
            Sample { scene: "cube_on_plane", state, tau }
        }
        1 => {
            let (state, tau) = random_cube(rng, &scenes.slide.model, scenes.slide.params.margin);
            Sample { scene: "cube_slide", state, tau }
        }
        _ => {
            let (state, tau) = random_chain(rng, &scenes.chain.model);
            Sample { scene: "chain12", state, tau }
        }
    }
}

/// A sample with its step, analytical Jacobian and (when requested) FD Jacobian.
pub struct Checked {
    pub sample: Sample,
    pub regime: Regime,
    pub params: SimParams,
    pub step: StepResult,
    pub analytic: StepJacobian,
    pub fd: Option<FdJacobian>,
}

/// Steps and differentiates `sample`; `None` when the state is unusable as a
/// gradient check (no contact, unconverged, near a mode boundary, or with an
/// ambiguous derivative).
pub fn check(scenes: &Scenes, sample: Sample, baumgarte: Option<Baumgarte>, with_fd: bool) -> Option<Checked> {
    let scene = scenes.get(sample.scene);
    let params = check_params(scene, baumgarte);
    let r = step(&scene.model, &sample.state, &sample.tau, &params, None).ok()?;
    let regime = Regime::of(&r.solution.modes)?;
    if !r.solution.converged || !modes_are_clear(r.problem(), &r.solution, &params.solver.thresholds, 1e3) {
        return None;
    }
    let analytic = step_jacobian(&scene.model, &r, &params, ThetaSelector::All).ok()?;
    if analytic.boundary || analytic.nonunique {
        return None;
    }
    let fd = if with_fd {
        let fd = fd_step_jacobian(
            &scene.model,
            &sample.state,
            &sample.tau,
            &params,
            ThetaSelector::All,
            &FdSettings::default(),
            None,
        )
        .ok()?;
        if !fd.consistent() {
            return None;
        }
        Some(fd)
    } else {
        None
    };
    Some(Checked { sample, regime, params, step: r, analytic, fd })
}

/// Scene parameters with a tight solver tolerance for derivative checks.
pub fn check_params(scene: &Scene, baumgarte: Option<Baumgarte>) -> SimParams {
    SimParams { baumgarte, solver: SolverOptions { tol: 1e-12, ..scene.params.solver }, ..scene.params }
}

impl Checked {
    pub fn fd_error(&self, nv: usize) -> f64 {
        let fd = self.fd.as_ref().expect("checked with finite differences");
        max_block_error(nv, ThetaSelector::All, [&self.analytic.dq, &self.analytic.dv], [&fd.dq, &fd.dv])
    }
}

/// Smallest ratio, over sliding contacts, between the slip speed and the
/// change a perturbation of size `eps` in any single parameter causes in the
/// slip velocity. The slip direction bends the step on that scale; the other
/// modes are smooth up to a mode change, which the FD consistency flags catch.
pub fn slip_margin(c: &Checked, eps: f64) -> f64 {
    let sol = &c.step.solution;
    let ds = &c.step.problem().delassus * &c.analytic.dlambda + &c.analytic.dg;
    let mut margin = f64::INFINITY;
    for (k, mode) in sol.modes.iter().enumerate() {
        if *mode != ContactMode::Sliding {
            continue;
        }
        let (x, y) = (3 * k, 3 * k + 1);
        let rate = (0..ds.ncols()).map(|j| ds[(x, j)].hypot(ds[(y, j)])).fold(0.0, f64::max);
        if rate > 0.0 {
            margin = margin.min(sol.sigma[x].hypot(sol.sigma[y]) / (eps * rate));
        }
    }
    margin
}

/// Smallest `|Φ| / (eps ‖dΦ/dq‖∞)` over contacts: how many FD steps a signed
/// distance sits from zero, where position feedback switches on.
pub fn gap_margin(scenes: &Scenes, c: &Checked, eps: f64) -> f64 {
    let model = &scenes.get(c.sample.scene).model;
    let frames = c.step.frames();
    let jw = world_jacobian(model, frames);
    c.step
        .contacts
        .iter()
        .map(|con| {
            let ck = ContactKinematics::new(model, frames, &jw, con).unwrap();
            con.signed_distance.abs() / (eps * ck.dphi.amax().max(f64::MIN_POSITIVE))
        })
        .fold(f64::INFINITY, f64::min)
}
