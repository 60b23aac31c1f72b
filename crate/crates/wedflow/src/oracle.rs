//! Causal reference stepper: minimizing-movement / implicit-Euler marching
//! used as the ground truth that the discounted-functional minimizers must
//! approach as the discount parameter shrinks.
//!
//! Each step solves the strictly convex (or convexified) problem
//!
//! ```text
//! u^n = argmin_u  tau psi((u - u^{n-1})/tau) + phi1(u) - phi2_reg(u) - <w, u>
//! ```
//!
//! with the perturbation lagged to the previous state. The two treatments
//! differ in where the concave part enters: [`TreatmentF::ExplicitLag`]
//! keeps the regularized concave energy implicit inside the step,
//! [`TreatmentF::FrozenPrevious`] lags its gradient along with the
//! perturbation, leaving a purely convex step problem.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::fixed_point::EvolutionProblem;
use crate::moreau_yosida::EnvelopePotential;
use crate::potentials::Potential;
use crate::spaces::{DualField, Field};
use crate::wed::{TimeGrid, Trajectory};

/// How the step treats the perturbation and the concave energy part.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TreatmentF {
    /// Perturbation lagged, regularized concave part implicit.
    ExplicitLag,
    /// Perturbation and concave-part gradient both lagged; the step problem
    /// is convex regardless of the split.
    FrozenPrevious,
}

/// Marching parameters for the reference stepper.
#[derive(Debug, Clone, Copy)]
pub struct StepperConfig {
    /// Number of time steps on `[0, T]`; independent of the step count the
    /// evolution problem uses elsewhere, so refinement studies can share one
    /// problem description.
    pub steps_n: usize,
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    pub treatment_f: TreatmentF,
}

impl StepperConfig {
    pub fn new(steps_n: usize) -> Self {
        Self {
            steps_n,
            newton_tol: 1e-10,
            newton_max_iter: 100,
            treatment_f: TreatmentF::ExplicitLag,
        }
    }
}

/// Implicit concave part for [`TreatmentF::ExplicitLag`]: the regularized
/// envelope when a regularization is configured, the raw energy otherwise.
fn implicit_concave(problem: &EvolutionProblem) -> Result<Option<Box<dyn Potential>>> {
    match (&problem.phi2, &problem.yosida) {
        (Some(phi2), Some(cfg)) => Ok(Some(Box::new(EnvelopePotential::new(phi2.clone(), *cfg)))),
        (Some(phi2), None) => Ok(Some(Box::new(RawConcave(phi2.clone())))),
        (None, _) => Ok(None),
    }
}

/// Thin pass-through so raw and regularized concave parts share one call
/// surface inside the stepper.
struct RawConcave(std::sync::Arc<dyn Potential>);

impl Potential for RawConcave {
    fn space(&self) -> &std::sync::Arc<crate::spaces::DiscreteSpace> {
        self.0.space()
    }
    fn value(&self, u: &Field) -> Result<f64> {
        self.0.value(u)
    }
    fn gradient(&self, u: &Field) -> Result<DualField> {
        self.0.gradient(u)
    }
    fn hessian(&self, u: &Field) -> Result<DMatrix<f64>> {
        self.0.hessian(u)
    }
    fn in_domain(&self, u: &Field) -> bool {
        self.0.in_domain(u)
    }
}

/// Lagged forcing `f(u_prev) (+ concave gradient under FrozenPrevious)`.
fn lagged_forcing(
    problem: &EvolutionProblem,
    u_prev: &Field,
    t: f64,
    cfg: &StepperConfig,
) -> Result<DualField> {
    let mut w = problem.space.zero_dual();
    if let Some(f) = &problem.perturbation {
        let fv = f.apply(u_prev, t)?;
        for (x, &y) in w.values.iter_mut().zip(&fv.values) {
            *x += y;
        }
    }
    if cfg.treatment_f == TreatmentF::FrozenPrevious {
        if let Some(pot) = implicit_concave(problem)? {
            let g = pot.gradient(u_prev)?;
            for (x, &y) in w.values.iter_mut().zip(&g.values) {
                *x += y;
            }
        }
    }
    Ok(w)
}

/// Data frozen for the duration of one implicit step: previous state, step
/// length, lagged forcing, and the free-dof selection.
struct StepContext<'a> {
    problem: &'a EvolutionProblem,
    concave: &'a Option<Box<dyn Potential>>,
    u_prev: &'a Field,
    tau: f64,
    w: &'a DualField,
    free: &'a [usize],
    cfg: &'a StepperConfig,
}

impl StepContext<'_> {
    /// Density residual of the step optimality system at `u`,
    /// `psi'((u-u_prev)/tau) + eta1(u) - eta2(u) - w`, restricted to free dofs.
    fn residual(&self, u: &Field) -> Result<DVector<f64>> {
        let dim = self.problem.space.dim();
        let mut v = self.problem.space.zero_field();
        for j in 0..dim {
            v.values[j] = (u.values[j] - self.u_prev.values[j]) / self.tau;
        }
        let gpsi = self.problem.psi.gradient(&v)?;
        let g1 = self.problem.phi1.gradient(u)?;
        let g2 = match (self.concave, self.cfg.treatment_f) {
            (Some(pot), TreatmentF::ExplicitLag) => Some(pot.gradient(u)?),
            _ => None,
        };
        let mut r = DVector::zeros(self.free.len());
        for (row, &j) in self.free.iter().enumerate() {
            let mut val = gpsi.values[j] + g1.values[j] - self.w.values[j];
            if let Some(g2) = &g2 {
                val -= g2.values[j];
            }
            r[row] = val;
        }
        Ok(r)
    }
}

/// Advances one step of length `T / steps_n` from `u_prev`; `t` names the
/// start of the step (the dynamics here are autonomous, so it only feeds the
/// perturbation interface).
pub fn step(
    problem: &EvolutionProblem,
    u_prev: &Field,
    t: f64,
    cfg: &StepperConfig,
) -> Result<Field> {
    let grid = TimeGrid::new(problem.grid.t_final, cfg.steps_n)?;
    let tau = grid.tau();
    let concave = implicit_concave(problem)?;
    let w = lagged_forcing(problem, u_prev, t, cfg)?;
    let free = problem.mask.free_indices();
    if free.is_empty() {
        return Ok(u_prev.clone());
    }
    let node = (t / tau).round() as usize;

    let mut u = u_prev.clone();
    let ctx = StepContext {
        problem,
        concave: &concave,
        u_prev,
        tau,
        w: &w,
        free: &free,
        cfg,
    };
    let mut residual = ctx.residual(&u)?;
    let mut merit = residual.amax();
    // Convergence scale includes the initial defect: stiff operators (e.g.
    // fourth order) have residual magnitudes far above 1, and the roundoff
    // floor of the Newton update sits at that scale, not at 1.
    let scale = 1.0 + w.values.iter().fold(0.0_f64, |m, &x| m.max(x.abs())) + merit;
    for _iter in 0..cfg.newton_max_iter {
        if merit <= cfg.newton_tol * scale {
            return Ok(u);
        }
        // Density Jacobian: (1/tau) Hpsi(v) + H1(u) [- H2(u)].
        let mut v = problem.space.zero_field();
        for j in 0..problem.space.dim() {
            v.values[j] = (u.values[j] - u_prev.values[j]) / tau;
        }
        let hpsi = problem.psi.hessian(&v)?;
        let h1 = problem.phi1.hessian(&u)?;
        let h2 = match (&concave, cfg.treatment_f) {
            (Some(pot), TreatmentF::ExplicitLag) => Some(pot.hessian(&u)?),
            _ => None,
        };
        let mut jac = DMatrix::zeros(free.len(), free.len());
        for (row, &i) in free.iter().enumerate() {
            for (col, &j) in free.iter().enumerate() {
                let mut val = hpsi[(i, j)] / tau + h1[(i, j)];
                if let Some(h2) = &h2 {
                    val -= h2[(i, j)];
                }
                jac[(row, col)] = val;
            }
        }
        let delta = jac.lu().solve(&residual).ok_or(Error::NewtonFailed {
            step: node,
            reason: "singular step Jacobian",
        })?;
        let mut t_damp = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let mut trial = u.clone();
            for (row, &j) in free.iter().enumerate() {
                trial.values[j] -= t_damp * delta[row];
            }
            let mut tv = problem.space.zero_field();
            for j in 0..problem.space.dim() {
                tv.values[j] = (trial.values[j] - u_prev.values[j]) / tau;
            }
            if problem.phi1.in_domain(&trial) && problem.psi.in_domain(&tv) {
                if let Ok(tr) = ctx.residual(&trial) {
                    let tm = tr.amax();
                    if tm < merit || tm <= cfg.newton_tol * scale {
                        u = trial;
                        residual = tr;
                        merit = tm;
                        accepted = true;
                        break;
                    }
                }
            }
            t_damp *= 0.5;
        }
        if !accepted {
            return Err(Error::NewtonFailed {
                step: node,
                reason: "step line search stalled",
            });
        }
    }
    if merit <= cfg.newton_tol * scale {
        Ok(u)
    } else {
        Err(Error::InnerSolveFailed {
            node,
            residual: merit,
            iters: cfg.newton_max_iter,
        })
    }
}

/// Marches the full trajectory `u^0 = u_0, u^n = step(u^{n-1})`.
pub fn run(problem: &EvolutionProblem, cfg: &StepperConfig) -> Result<Trajectory> {
    let grid = TimeGrid::new(problem.grid.t_final, cfg.steps_n)?;
    let mut states = Vec::with_capacity(cfg.steps_n + 1);
    states.push(problem.initial.clone());
    for n in 1..=cfg.steps_n {
        let prev = states.last().unwrap();
        let next = step(problem, prev, grid.time(n - 1), cfg)?;
        states.push(next);
    }
    Ok(Trajectory { states })
}
