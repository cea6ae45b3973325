//! Frictional contact as a nonlinear complementarity problem,
//!
//! `K_μ ∋ λ ⊥ σ + Γ_μ(σ) ∈ K*_μ`, with `σ = Gλ + g` and the De Saxcé term
//! `Γ_μ(σ) = [0, 0, μ‖σ_T‖]`, solved by projected Gauss–Seidel.
//!
//! Quantities are stacked per contact as `(x, y, N)` in the contact frame.

use nalgebra::{DMatrix, DVector, Matrix3, Matrix6xX, Vector3};

use crate::collision::ContactFrame;
use crate::error::{check_dim, Result, SimError};
use crate::model::KinematicModel;

#[derive(Clone, Debug)]
pub struct ContactProblem {
    pub delassus: DMatrix<f64>,
    pub free_velocity: DVector<f64>,
    pub mu: Vec<f64>,
}

impl ContactProblem {
    pub fn new(delassus: DMatrix<f64>, free_velocity: DVector<f64>, mu: Vec<f64>) -> Result<Self> {
        let n = mu.len();
        check_dim("Delassus rows", 3 * n, delassus.nrows())?;
        check_dim("Delassus columns", 3 * n, delassus.ncols())?;
        check_dim("free velocity", 3 * n, free_velocity.len())?;
        if mu.iter().any(|m| !(*m >= 0.0)) {
            return Err(SimError::InvalidParameter("friction coefficients must be non-negative".into()));
        }
        Ok(Self { delassus, free_velocity, mu })
    }

    pub fn len(&self) -> usize {
        self.mu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu.is_empty()
    }

    /// `σ = Gλ + g`.
    pub fn contact_velocity(&self, lambda: &DVector<f64>) -> DVector<f64> {
        &self.delassus * lambda + &self.free_velocity
    }

    /// Scale `max(1, ‖g‖∞)` used to normalize residuals.
    pub fn scale(&self) -> f64 {
        self.free_velocity.amax().max(1.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ContactMode {
    Breaking,
    Sticking,
    Sliding,
}

impl ContactMode {
    pub fn name(&self) -> &'static str {
        match self {
            ContactMode::Breaking => "breaking",
            ContactMode::Sticking => "sticking",
            ContactMode::Sliding => "sliding",
        }
    }
}

impl std::fmt::Display for ContactMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Numerical slack used when reading modes off a converged solution.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModeThresholds {
    /// Breaking threshold on `‖λ‖`, relative to the impulse scale `‖g‖∞ / ‖G‖∞`.
    pub eps_lambda: f64,
    /// Tangential speed above which a contact counts as slipping (m/s).
    pub eps_slide: f64,
    /// Relative slack on the cone boundary `‖λ_T‖ = μλ_N`.
    pub eps_cone: f64,
}

impl Default for ModeThresholds {
    fn default() -> Self {
        Self { eps_lambda: 1e-9, eps_slide: 1e-8, eps_cone: 1e-7 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_iters: usize,
    pub thresholds: ModeThresholds,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { tol: 1e-10, max_iters: 10_000, thresholds: ModeThresholds::default() }
    }
}

/// Modes of every contact plus flags for states where they are not clear-cut.
#[derive(Clone, Debug, PartialEq)]
pub struct Classification {
    pub modes: Vec<ContactMode>,
    /// Slipping faster than `eps_slide` while strictly inside the cone.
    pub ambiguous: Vec<bool>,
    /// Within the thresholds of a mode boundary (touching with no impulse, or sticking on the cone edge).
    pub boundary: Vec<bool>,
}

#[derive(Clone, Debug)]
pub struct ContactSolution {
    pub lambda: DVector<f64>,
    pub sigma: DVector<f64>,
    pub modes: Vec<ContactMode>,
    pub ambiguous: Vec<bool>,
    pub boundary: Vec<bool>,
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
}

pub(crate) fn block(v: &DVector<f64>, c: usize) -> Vector3<f64> {
    Vector3::new(v[3 * c], v[3 * c + 1], v[3 * c + 2])
}

fn tangential_norm(x: &Vector3<f64>) -> f64 {
    x.x.hypot(x.y)
}

/// Euclidean projection onto `K_μ = {‖λ_T‖ ≤ μ λ_N}`.
pub fn cone_project(lambda: &Vector3<f64>, mu: f64) -> Vector3<f64> {
    let n = lambda.z;
    let s = tangential_norm(lambda);
    if s <= mu * n {
        return *lambda;
    }
    if mu * s <= -n {
        return Vector3::zeros();
    }
    let beta = (mu * s + n) / (1.0 + mu * mu);
    Vector3::new(mu * beta * lambda.x / s, mu * beta * lambda.y / s, beta)
}

/// Distance to the dual cone `K*_μ = {μ‖y_T‖ ≤ y_N}`.
fn dual_cone_distance(y: &Vector3<f64>, mu: f64) -> f64 {
    if mu == 0.0 {
        return (-y.z).max(0.0);
    }
    // K*_μ is K_{1/μ}
    (y - cone_project(y, 1.0 / mu)).norm()
}

fn de_saxce(sigma: &Vector3<f64>, mu: f64) -> Vector3<f64> {
    Vector3::new(sigma.x, sigma.y, sigma.z + mu * tangential_norm(sigma))
}

/// Per-contact complementarity criteria in velocity units, normalized by `max(1, ‖g‖∞)`.
///
/// Cone violation of `λ` is mapped to velocity through `‖G‖∞`, and the
/// complementarity gap is the component of the De Saxcé velocity along `λ`,
/// so the result does not shrink with the impulse magnitude.
pub fn ncp_residuals(problem: &ContactProblem, lambda: &DVector<f64>) -> Vec<f64> {
    let sigma = problem.contact_velocity(lambda);
    let scale = problem.scale();
    let gnorm = problem.delassus.amax();
    (0..problem.len())
        .map(|c| {
            let mu = problem.mu[c];
            let l = block(lambda, c);
            let y = de_saxce(&block(&sigma, c), mu);
            let primal = (l - cone_project(&l, mu)).norm() * gnorm;
            let dual = dual_cone_distance(&y, mu);
            let ln = l.norm();
            let comp = if ln > 0.0 { l.dot(&y).abs() / ln } else { 0.0 };
            primal.max(dual).max(comp) / scale
        })
        .collect()
}

/// Largest per-contact criterion (0 for an empty problem).
pub fn ncp_residual(problem: &ContactProblem, lambda: &DVector<f64>) -> f64 {
    ncp_residuals(problem, lambda).into_iter().fold(0.0, f64::max)
}

pub(crate) fn impulse_scale(problem: &ContactProblem) -> f64 {
    let g = problem.free_velocity.amax();
    let gm = problem.delassus.amax();
    if gm > 0.0 {
        g / gm
    } else {
        g
    }
}

pub fn classify_modes(
    problem: &ContactProblem,
    lambda: &DVector<f64>,
    sigma: &DVector<f64>,
    thresholds: &ModeThresholds,
) -> Classification {
    let eps_lambda = thresholds.eps_lambda * impulse_scale(problem);
    let n = problem.len();
    let mut out = Classification { modes: Vec::with_capacity(n), ambiguous: vec![false; n], boundary: vec![false; n] };
    for c in 0..n {
        let mu = problem.mu[c];
        let l = block(lambda, c);
        let s = block(sigma, c);
        let slip = tangential_norm(&s);
        let on_edge = tangential_norm(&l) >= (1.0 - thresholds.eps_cone) * mu * l.z;
        let mode = if l.norm() <= eps_lambda {
            out.boundary[c] = s.z.abs() <= thresholds.eps_slide;
            ContactMode::Breaking
        } else if mu > 0.0 && slip > thresholds.eps_slide && on_edge {
            ContactMode::Sliding
        } else {
            out.ambiguous[c] = slip > thresholds.eps_slide;
            out.boundary[c] = mu > 0.0 && on_edge;
            ContactMode::Sticking
        };
        out.modes.push(mode);
    }
    out
}

/// True when the modes of `solution` survive thresholds scaled by `factor`
/// with no contact flagged, i.e. the state is well away from a mode boundary.
pub fn modes_are_clear(
    problem: &ContactProblem,
    solution: &ContactSolution,
    thresholds: &ModeThresholds,
    factor: f64,
) -> bool {
    let wide = ModeThresholds {
        eps_lambda: thresholds.eps_lambda * factor,
        eps_slide: thresholds.eps_slide * factor,
        eps_cone: thresholds.eps_cone * factor,
    };
    let cls = classify_modes(problem, &solution.lambda, &solution.sigma, &wide);
    cls.modes == solution.modes && !cls.ambiguous.iter().chain(&cls.boundary).any(|f| *f)
}

/// Projected Gauss–Seidel on the De Saxcé fixed point
/// `λ_c ← P_{K_μ}(λ_c − ρ_c (σ_c + Γ_μ(σ_c)))`, with `ρ_c = 1/‖G_cc‖₂`.
pub fn solve_ncp(
    problem: &ContactProblem,
    options: &SolverOptions,
    warm_start: Option<&DVector<f64>>,
) -> Result<ContactSolution> {
    if !(options.tol > 0.0) {
        return Err(SimError::InvalidParameter("solver tolerance must be positive".into()));
    }
    let n = problem.len();
    let mut lambda = match warm_start {
        Some(w) => {
            check_dim("warm start", 3 * n, w.len())?;
            let mut l = w.clone();
            for c in 0..n {
                let p = cone_project(&block(&l, c), problem.mu[c]);
                l.fixed_rows_mut::<3>(3 * c).copy_from(&p);
            }
            l
        }
        None => DVector::zeros(3 * n),
    };
    let g = &problem.delassus;
    let steps: Vec<f64> = (0..n)
        .map(|c| {
            let gcc: Matrix3<f64> = g.fixed_view::<3, 3>(3 * c, 3 * c).into_owned();
            let norm = gcc.symmetric_eigenvalues().max();
            if norm > 0.0 {
                1.0 / norm
            } else {
                0.0
            }
        })
        .collect();
    let mut sigma = problem.contact_velocity(&lambda);
    let mut residual = ncp_residual(problem, &lambda);
    let mut iterations = 0;
    while residual > options.tol && iterations < options.max_iters {
        for (c, &step) in steps.iter().enumerate() {
            let mu = problem.mu[c];
            let gcc: Matrix3<f64> = g.fixed_view::<3, 3>(3 * c, 3 * c).into_owned();
            let old = block(&lambda, c);
            let mut lc = old;
            let mut sc = block(&sigma, c);
            // a few local fixed-point passes with the off-diagonal coupling frozen
            for _ in 0..16 {
                let next = cone_project(&(lc - step * de_saxce(&sc, mu)), mu);
                let delta = next - lc;
                sc += gcc * delta;
                lc = next;
                if delta.norm() <= 1e-15 * lc.norm().max(1e-300) {
                    break;
                }
            }
            let delta = lc - old;
            if delta != Vector3::zeros() {
                sigma += g.fixed_columns::<3>(3 * c) * delta;
                lambda.fixed_rows_mut::<3>(3 * c).copy_from(&lc);
            }
        }
        iterations += 1;
        residual = ncp_residual(problem, &lambda);
    }
    let sigma = problem.contact_velocity(&lambda);
    let cls = classify_modes(problem, &lambda, &sigma, &options.thresholds);
    log::debug!("ncp: {n} contacts, {iterations} sweeps, residual {residual:.3e}");
    Ok(ContactSolution {
        lambda,
        sigma,
        modes: cls.modes,
        ambiguous: cls.ambiguous,
        boundary: cls.boundary,
        iterations,
        residual,
        converged: residual <= options.tol,
    })
}

/// Stacked contact Jacobian `J_c = E(ᶜX₁J₁ − ᶜX₂J₂)` (3n × n_v), linear rows in contact frames.
pub fn contact_jacobian(
    model: &KinematicModel,
    world_jacobian: &Matrix6xX<f64>,
    contacts: &[ContactFrame],
) -> DMatrix<f64> {
    let mut jc = DMatrix::zeros(3 * contacts.len(), model.nv());
    for (k, c) in contacts.iter().enumerate() {
        let b1 = model.geometries()[c.geoms.0].body;
        let b2 = model.geometries()[c.geoms.1].body;
        for d in 0..model.nv() {
            let owner = model.dof_body(d);
            let sign = b1.map_or(0.0, |b| if model.supports(b, owner) { 1.0 } else { 0.0 })
                - b2.map_or(0.0, |b| if model.supports(b, owner) { 1.0 } else { 0.0 });
            if sign == 0.0 {
                continue;
            }
            let col = c.placement.act_inv_motion(&world_jacobian.column(d).into_owned());
            for r in 0..3 {
                jc[(3 * k + r, d)] = sign * col[3 + r];
            }
        }
    }
    jc
}
