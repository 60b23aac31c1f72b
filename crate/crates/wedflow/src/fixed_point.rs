//! Damped Picard iteration realizing the self-maps whose fixed points solve
//! the perturbed flow, plus continuity and a-priori-bound diagnostics.
//!
//! Two variants:
//!
//! * state map (`S`): iterate trajectories `v`; each pass assembles the
//!   lagged forcing `w^n = f(v^n) + A_lambda(v^n)` and replaces `v` by a
//!   damped blend with the convex minimizer of the discounted functional
//!   under that forcing;
//! * dual map (`S~`): iterate forcing trajectories `w`; each pass minimizes
//!   under `w`, then blends `w` toward `f(u) + A_lambda(u)` evaluated on the
//!   minimizer. This is the variant of choice when `f` is controlled only
//!   through the stronger space.
//!
//! Existence theory gives no algorithm; non-convergence here is an error,
//! not a counterexample. A norm guard turns unbounded iterate growth into
//! [`Error::DivergenceDetected`], which the sweep layer uses to locate the
//! empirical stability threshold in the discount parameter.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::moreau_yosida::{yosida_gradient, YosidaConfig};
use crate::parallel::try_indexed_map;
use crate::potentials::{EnergySplit, GrowthClass, Perturbation, Potential};
use crate::spaces::{DiscreteSpace, DualField, Field};
use crate::wed::{
    dual_distance, minimize_wed, trajectory_distance, DofMask, DualTrajectory, SolveConfig,
    TimeGrid, Trajectory, WedProblem, WedReport,
};

/// Which self-map the outer iteration follows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IterationVariant {
    /// Iterate on state trajectories.
    S,
    /// Iterate on forcing (dual) trajectories.
    STilde,
}

/// Outer-iteration parameters.
#[derive(Debug, Clone, Copy)]
pub struct FixedPointConfig {
    pub variant: IterationVariant,
    /// Blend weight toward the fresh map value; `1` is undamped Picard.
    pub damping_theta: f64,
    pub outer_tol: f64,
    pub outer_max_iter: usize,
    /// Norm threshold on the per-iterate bound witness; exceeding it raises
    /// [`Error::DivergenceDetected`].
    pub bound_guard: f64,
    pub inner: SolveConfig,
}

impl FixedPointConfig {
    pub fn new(variant: IterationVariant) -> Self {
        Self {
            variant,
            damping_theta: 0.5,
            outer_tol: 1e-6,
            outer_max_iter: 200,
            bound_guard: 1e6,
            inner: SolveConfig::default(),
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.damping_theta > 0.0 && self.damping_theta <= 1.0) {
            return Err(Error::ConfigInvalid {
                key: "damping_theta".into(),
                detail: format!("must lie in (0, 1], got {}", self.damping_theta),
            });
        }
        if self.outer_tol.is_nan() || self.outer_tol <= 0.0 {
            return Err(Error::ConfigInvalid {
                key: "outer_tol".into(),
                detail: format!("must be positive, got {}", self.outer_tol),
            });
        }
        if self.bound_guard.is_nan() || self.bound_guard <= 0.0 {
            return Err(Error::ConfigInvalid {
                key: "bound_guard".into(),
                detail: format!("must be positive, got {}", self.bound_guard),
            });
        }
        if self.outer_max_iter == 0 {
            return Err(Error::ConfigInvalid {
                key: "outer_max_iter".into(),
                detail: "must be at least 1".into(),
            });
        }
        Ok(())
    }
}

/// A perturbed, possibly nonconvex evolution instance shared by the
/// fixed-point solver, the causal reference stepper, and the sweep layer.
pub struct EvolutionProblem {
    pub space: Arc<DiscreteSpace>,
    pub grid: TimeGrid,
    pub epsilon: f64,
    pub psi: Arc<dyn Potential>,
    pub phi1: Arc<dyn Potential>,
    /// Raw concave energy part; regularized through `yosida` when present,
    /// used through its own gradient when `yosida` is `None` (smooth case).
    pub phi2: Option<Arc<dyn Potential>>,
    pub yosida: Option<YosidaConfig>,
    /// Declared domination constant of `phi2` against `phi1`.
    pub kappa: f64,
    pub perturbation: Option<Arc<dyn Perturbation>>,
    pub initial: Field,
    pub mask: DofMask,
}

impl EvolutionProblem {
    /// Lagged concave-part gradient at one field: the regularized gradient
    /// when a regularization is configured, the raw gradient otherwise.
    fn concave_gradient(&self, u: &Field) -> Result<Option<DualField>> {
        match (&self.phi2, &self.yosida) {
            (Some(phi2), Some(cfg)) => Ok(Some(yosida_gradient(phi2.as_ref(), u, cfg)?)),
            (Some(phi2), None) => Ok(Some(phi2.gradient(u)?)),
            (None, _) => Ok(None),
        }
    }

    /// Forcing trajectory `w^n = f(v^n, t_n) + A_lambda(v^n)` along `v`.
    pub fn lagged_forcing(&self, v: &Trajectory) -> Result<DualTrajectory> {
        let n_steps = self.grid.n_steps;
        let dim = self.space.dim();
        let mut states = try_indexed_map(n_steps, |i| -> Result<DualField> {
            let n = i + 1;
            let mut w = DualField {
                values: vec![0.0; dim],
            };
            if let Some(f) = &self.perturbation {
                let fv = f.apply(&v.states[n], self.grid.time(n))?;
                for (x, &y) in w.values.iter_mut().zip(&fv.values) {
                    *x += y;
                }
            }
            if let Some(a) = self.concave_gradient(&v.states[n])? {
                for (x, &y) in w.values.iter_mut().zip(&a.values) {
                    *x += y;
                }
            }
            Ok(w)
        })?;
        states.insert(0, self.space.zero_dual());
        Ok(DualTrajectory { states })
    }

    /// Convex inner minimization instance under a fixed forcing.
    pub fn inner_problem(&self, forcing: DualTrajectory) -> WedProblem {
        WedProblem {
            space: self.space.clone(),
            grid: self.grid,
            epsilon: self.epsilon,
            psi: self.psi.clone(),
            split: EnergySplit::convex(self.phi1.clone()),
            forcing,
            initial: self.initial.clone(),
            mask: self.mask.clone(),
        }
    }
}

/// Outcome of the outer iteration.
#[derive(Debug)]
pub struct FixedPointReport {
    /// Trajectory solving the discrete optimality system under the final
    /// lagged forcing.
    pub solution: Trajectory,
    /// Final lagged forcing trajectory.
    pub forcing: DualTrajectory,
    /// Successive-iterate distances, one per outer pass.
    pub iterate_distances: Vec<f64>,
    /// `W^{1,p}`-type discrete norm of each inner minimizer — the
    /// computational witness of the a-priori boundedness argument.
    pub bound_history: Vec<f64>,
    pub converged: bool,
    pub inner_reports: Vec<WedReport>,
}

/// Discrete `W^{1,p}(0,T; V)`-type norm,
/// `( sum_n tau (|u^n|_p^p + |v^n|_p^p) )^{1/p}`.
pub fn w1p_norm(space: &DiscreteSpace, tau: f64, traj: &Trajectory) -> Result<f64> {
    let p = space.exponent_p();
    let mut acc = 0.0;
    for n in 1..traj.states.len() {
        acc += tau * space.norm_p(&traj.states[n])?.powf(p);
        acc += tau * space.norm_p(&traj.velocity(n, tau))?.powf(p);
    }
    Ok(acc.powf(1.0 / p))
}

/// Runs the damped Picard iteration for the configured variant.
pub fn solve_regularized(
    problem: &EvolutionProblem,
    cfg: &FixedPointConfig,
) -> Result<FixedPointReport> {
    cfg.validate()?;
    if cfg.variant == IterationVariant::S {
        if let Some(f) = &problem.perturbation {
            if matches!(f.growth(), GrowthClass::FromStrongSpace { .. }) {
                return Err(Error::ConfigInvalid {
                    key: "variant".into(),
                    detail: "state-map iteration requires an ambient-growth perturbation; \
                             use the dual-map variant"
                        .into(),
                });
            }
        }
    }
    match cfg.variant {
        IterationVariant::S => solve_state_map(problem, cfg),
        IterationVariant::STilde => solve_dual_map(problem, cfg),
    }
}

fn solve_state_map(problem: &EvolutionProblem, cfg: &FixedPointConfig) -> Result<FixedPointReport> {
    let n_steps = problem.grid.n_steps;
    let tau = problem.grid.tau();
    let mut v = Trajectory::constant(&problem.initial, n_steps);
    let mut warm: Option<Trajectory> = None;
    let mut iterate_distances = Vec::new();
    let mut bound_history = Vec::new();
    let mut inner_reports = Vec::new();

    for outer in 0..cfg.outer_max_iter {
        let forcing = problem.lagged_forcing(&v)?;
        let inner = problem.inner_problem(forcing);
        let (u_star, report) = minimize_wed(&inner, warm.take(), &cfg.inner)?;
        inner_reports.push(report);
        let bound = w1p_norm(&problem.space, tau, &u_star)?;
        bound_history.push(bound);
        if bound > cfg.bound_guard {
            return Err(Error::DivergenceDetected {
                outer_iter: outer,
                norm: bound,
                guard: cfg.bound_guard,
            });
        }
        // Damped update v <- (1-theta) v + theta u*.
        let mut next = v.clone();
        for n in 1..=n_steps {
            next.states[n] = v.states[n].blend(cfg.damping_theta, &u_star.states[n]);
        }
        let distance = trajectory_distance(&problem.space, tau, &next, &v)?;
        iterate_distances.push(distance);
        v = next;
        warm = Some(u_star.clone());
        if distance <= cfg.outer_tol {
            let forcing = problem.lagged_forcing(&u_star)?;
            return Ok(FixedPointReport {
                solution: u_star,
                forcing,
                iterate_distances,
                bound_history,
                converged: true,
                inner_reports,
            });
        }
    }
    Err(Error::MaxOuterIterExceeded {
        iters: cfg.outer_max_iter,
        distance: *iterate_distances.last().unwrap_or(&f64::NAN),
        tol: cfg.outer_tol,
    })
}

fn solve_dual_map(problem: &EvolutionProblem, cfg: &FixedPointConfig) -> Result<FixedPointReport> {
    let n_steps = problem.grid.n_steps;
    let tau = problem.grid.tau();
    let v0 = Trajectory::constant(&problem.initial, n_steps);
    let mut w = problem.lagged_forcing(&v0)?;
    let mut warm: Option<Trajectory> = None;
    let mut iterate_distances = Vec::new();
    let mut bound_history = Vec::new();
    let mut inner_reports = Vec::new();

    for outer in 0..cfg.outer_max_iter {
        let inner = problem.inner_problem(w.clone());
        let (u_star, report) = minimize_wed(&inner, warm.take(), &cfg.inner)?;
        inner_reports.push(report);
        let bound = w1p_norm(&problem.space, tau, &u_star)?;
        bound_history.push(bound);
        if bound > cfg.bound_guard {
            return Err(Error::DivergenceDetected {
                outer_iter: outer,
                norm: bound,
                guard: cfg.bound_guard,
            });
        }
        let fresh = problem.lagged_forcing(&u_star)?;
        let mut next = w.clone();
        for n in 1..=n_steps {
            next.states[n] = w.states[n].blend(cfg.damping_theta, &fresh.states[n]);
        }
        let distance = dual_distance(&problem.space, tau, &next, &w)?;
        iterate_distances.push(distance);
        w = next;
        warm = Some(u_star.clone());
        if distance <= cfg.outer_tol {
            return Ok(FixedPointReport {
                solution: u_star,
                forcing: w,
                iterate_distances,
                bound_history,
                converged: true,
                inner_reports,
            });
        }
    }
    Err(Error::MaxOuterIterExceeded {
        iters: cfg.outer_max_iter,
        distance: *iterate_distances.last().unwrap_or(&f64::NAN),
        tol: cfg.outer_tol,
    })
}

/// Continuity witness of the solution operator `w -> argmin I_{eps,w}`:
/// solves at the problem's forcing and at a seeded random perturbation of
/// dual magnitude `dw_scale`, returning the ratio
/// `|u_perturbed - u_base|_{L^p(V)} / dw_scale`.
pub fn solution_map_continuity_probe(
    problem: &WedProblem,
    dw_scale: f64,
    seed: u64,
) -> Result<f64> {
    if dw_scale == 0.0 {
        return Ok(0.0);
    }
    let cfg = SolveConfig::default();
    let (base, _) = minimize_wed(problem, None, &cfg)?;
    let n_steps = problem.grid.n_steps;
    let dim = problem.space.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut delta = DualTrajectory::zeros(&problem.space, n_steps);
    for n in 1..=n_steps {
        for j in 0..dim {
            delta.states[n].values[j] = rng.gen_range(-1.0..1.0);
        }
    }
    let zero = DualTrajectory::zeros(&problem.space, n_steps);
    let raw_norm = dual_distance(&problem.space, problem.grid.tau(), &delta, &zero)?;
    if raw_norm == 0.0 {
        return Ok(0.0);
    }
    let rescale = dw_scale / raw_norm;
    let mut perturbed_forcing = problem.forcing.clone();
    for n in 1..=n_steps {
        for j in 0..dim {
            perturbed_forcing.states[n].values[j] += rescale * delta.states[n].values[j];
        }
    }
    let shifted = WedProblem {
        space: problem.space.clone(),
        grid: problem.grid,
        epsilon: problem.epsilon,
        psi: problem.psi.clone(),
        split: problem.split.clone(),
        forcing: perturbed_forcing,
        initial: problem.initial.clone(),
        mask: problem.mask.clone(),
    };
    let (moved, _) = minimize_wed(&shifted, Some(base.clone()), &cfg)?;
    let dist = trajectory_distance(&problem.space, problem.grid.tau(), &moved, &base)?;
    Ok(dist / dw_scale)
}

/// Checks a discrete Gronwall implication with left-endpoint quadrature.
///
/// Hypothesis: `u_n <= alpha_n + b * sum_{k<n} tau u_k` (up to slack).
/// Conclusion: `u_n <= alpha_n + b * sum_{k<n} tau alpha_k e^{b(t_n-t_k)}`
/// (up to slack). Both sides use quadrature slack `10 tau * scale`. Returns
/// `true` only when the hypothesis holds and the conclusion follows; a
/// violated hypothesis yields `false` without judging the conclusion.
pub fn gronwall_bound(alpha: &[f64], b: f64, u: &[f64], tau: f64) -> bool {
    if alpha.len() != u.len() || alpha.is_empty() || tau.is_nan() || tau <= 0.0 {
        return false;
    }
    let scale = 1.0
        + u.iter().fold(0.0_f64, |m, &x| m.max(x.abs()))
        + alpha.iter().fold(0.0_f64, |m, &x| m.max(x.abs()));
    let slack = 10.0 * tau * scale;
    let n = u.len();
    let mut running = 0.0; // sum_{k<n} tau u_k
    for i in 0..n {
        if u[i] > alpha[i] + b * running + slack {
            return false;
        }
        running += tau * u[i];
    }
    for i in 0..n {
        let mut kernel = 0.0; // sum_{k<i} tau alpha_k e^{b (t_i - t_k)}
        for (k, &a) in alpha.iter().enumerate().take(i) {
            kernel += tau * a * (b * tau * (i - k) as f64).exp();
        }
        if u[i] > alpha[i] + b * kernel + slack {
            return false;
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potentials::{
        make_p_power_dissipation, make_power_energy, make_scaling_perturbation,
    };
    use crate::spaces::DiscreteSpace;

    fn scalar_space() -> Arc<DiscreteSpace> {
        Arc::new(DiscreteSpace::single_point(2.0, 2.0).unwrap())
    }

    fn scalar_evolution(eps: f64, n_steps: usize, f_coeff: Option<f64>) -> EvolutionProblem {
        let space = scalar_space();
        EvolutionProblem {
            space: space.clone(),
            grid: TimeGrid::new(1.0, n_steps).unwrap(),
            epsilon: eps,
            psi: make_p_power_dissipation(space.clone(), 2.0).unwrap(),
            phi1: make_power_energy(space.clone(), 2.0, 1.0).unwrap(),
            phi2: None,
            yosida: None,
            kappa: 0.0,
            perturbation: f_coeff.map(|c| make_scaling_perturbation(space.clone(), c)),
            initial: space.field(vec![1.0]).unwrap(),
            mask: DofMask::all_free(1),
        }
    }

    /// Closed form of `-eps u'' + u' + c0 u = 0`, `u(0)=1`, `u'(T)=0`.
    fn damped_bvp(eps: f64, c0: f64, t_final: f64, t: f64) -> f64 {
        let disc = (1.0 + 4.0 * eps * c0).sqrt();
        let rm = (1.0 - disc) / (2.0 * eps);
        let rp = (1.0 + disc) / (2.0 * eps);
        let ratio = rm / rp;
        let c1 = 1.0 / (1.0 - ratio * (rm * t_final).exp() * (-rp * t_final).exp());
        let c2 = -c1 * ratio * (rm * t_final).exp();
        c1 * (rm * t).exp() + c2 * (rp * (t - t_final)).exp()
    }

    #[test]
    fn unperturbed_map_settles_immediately() {
        // With no forcing dependence on the iterate, the map is constant:
        // the second pass sees zero displacement.
        let problem = scalar_evolution(0.1, 20, None);
        let mut cfg = FixedPointConfig::new(IterationVariant::S);
        cfg.damping_theta = 1.0;
        let report = solve_regularized(&problem, &cfg).unwrap();
        assert!(report.converged);
        assert!(
            report.iterate_distances.len() <= 2,
            "took {} passes",
            report.iterate_distances.len()
        );
    }

    #[test]
    fn half_strength_coupling_matches_closed_form() {
        // f(u) = u/2 shifts the scalar two-point problem to
        // -eps u'' + u' + u/2 = 0; frozen benchmark at eps = 1e-2, N = 400.
        let problem = scalar_evolution(1e-2, 400, Some(0.5));
        let cfg = FixedPointConfig::new(IterationVariant::S);
        let report = solve_regularized(&problem, &cfg).unwrap();
        assert!(report.converged);
        assert!(
            report.iterate_distances.len() <= 50,
            "outer iterations {}",
            report.iterate_distances.len()
        );
        let mut sup: f64 = 0.0;
        for n in 0..=400 {
            let t = problem.grid.time(n);
            let want = damped_bvp(1e-2, 0.5, 1.0, t);
            sup = sup.max((report.solution.states[n].values[0] - want).abs());
        }
        assert!(sup <= 5e-4, "sup deviation {sup}");
    }

    #[test]
    fn amplifying_coupling_diverges() {
        // f(u) = 4u at a large discount parameter leaves the stable regime;
        // the norm guard must fire rather than iterate forever.
        let problem = scalar_evolution(0.2, 100, Some(4.0));
        let mut cfg = FixedPointConfig::new(IterationVariant::S);
        cfg.bound_guard = 1e3;
        let err = solve_regularized(&problem, &cfg).unwrap_err();
        assert!(
            matches!(err, Error::DivergenceDetected { .. }),
            "expected divergence, got {err:?}"
        );
    }

    #[test]
    fn starved_outer_budget_reported() {
        let problem = scalar_evolution(1e-2, 50, Some(0.5));
        let mut cfg = FixedPointConfig::new(IterationVariant::S);
        cfg.outer_max_iter = 2;
        cfg.outer_tol = 1e-12;
        let err = solve_regularized(&problem, &cfg).unwrap_err();
        assert!(matches!(err, Error::MaxOuterIterExceeded { .. }));
    }

    #[test]
    fn dual_and_state_variants_agree() {
        let problem = scalar_evolution(5e-2, 100, Some(0.5));
        let s = solve_regularized(&problem, &FixedPointConfig::new(IterationVariant::S)).unwrap();
        let st =
            solve_regularized(&problem, &FixedPointConfig::new(IterationVariant::STilde)).unwrap();
        let diff = s.solution.sup_distance(&st.solution);
        assert!(diff <= 1e-5, "variants disagree by {diff}");
    }

    #[test]
    fn continuity_probe_is_stable_across_scales() {
        let problem = scalar_evolution(0.1, 50, None)
            .inner_problem(DualTrajectory::zeros(&scalar_space(), 50));
        assert_eq!(
            solution_map_continuity_probe(&problem, 0.0, 1).unwrap(),
            0.0
        );
        let mut ratios = Vec::new();
        for scale in [1e-2, 1e-3, 1e-4] {
            ratios.push(solution_map_continuity_probe(&problem, scale, 42).unwrap());
        }
        for r in &ratios {
            assert!(r.is_finite() && *r > 0.0);
        }
        let lo = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = ratios.iter().cloned().fold(0.0_f64, f64::max);
        assert!(hi <= 2.0 * lo, "ratios vary too much: {ratios:?}");
    }

    #[test]
    fn continuity_probe_bounded_over_directions() {
        let problem = scalar_evolution(0.1, 30, None)
            .inner_problem(DualTrajectory::zeros(&scalar_space(), 30));
        let mut worst: f64 = 0.0;
        for seed in 0..10 {
            worst = worst.max(solution_map_continuity_probe(&problem, 1e-3, seed).unwrap());
        }
        // Fitted bound for the quadratic scalar instance; generous margin.
        assert!(worst < 10.0, "continuity ratio {worst}");
    }

    #[test]
    fn gronwall_constant_case() {
        let alpha = vec![2.0; 11];
        let u = vec![2.0; 11];
        assert!(gronwall_bound(&alpha, 0.0, &u, 0.1));
    }

    #[test]
    fn gronwall_exponential_case() {
        let n = 101;
        let tau = 0.01;
        let alpha = vec![1.0; n];
        let u: Vec<f64> = (0..n).map(|i| (i as f64 * tau).exp()).collect();
        assert!(gronwall_bound(&alpha, 1.0, &u, tau));
    }

    #[test]
    fn gronwall_rejects_violating_sequence() {
        let n = 101;
        let tau = 0.01;
        let alpha = vec![1.0; n];
        let u: Vec<f64> = (0..n).map(|i| 2.0 + (i as f64 * tau).exp()).collect();
        assert!(!gronwall_bound(&alpha, 1.0, &u, tau));
    }

    #[test]
    fn strong_space_growth_rejected_for_state_map() {
        let space = Arc::new(DiscreteSpace::uniform_unit(9, 2.0, 2.0).unwrap());
        let problem = EvolutionProblem {
            space: space.clone(),
            grid: TimeGrid::new(0.1, 10).unwrap(),
            epsilon: 0.05,
            psi: make_p_power_dissipation(space.clone(), 2.0).unwrap(),
            phi1: make_power_energy(space.clone(), 2.0, 1.0).unwrap(),
            phi2: None,
            yosida: None,
            kappa: 0.0,
            perturbation: Some(
                crate::potentials::make_transport_perturbation(space.clone(), vec![0.5; 9])
                    .unwrap(),
            ),
            initial: space.zero_field(),
            mask: DofMask::all_free(9),
        };
        let err =
            solve_regularized(&problem, &FixedPointConfig::new(IterationVariant::S)).unwrap_err();
        assert!(matches!(err, Error::ConfigInvalid { .. }));
        // The dual-map variant accepts the same instance.
        let ok = solve_regularized(&problem, &FixedPointConfig::new(IterationVariant::STilde));
        assert!(ok.is_ok());
    }
}
