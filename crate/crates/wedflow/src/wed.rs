//! The exponentially weighted time-discrete functional, its optimality
//! system, and a damped Newton minimizer.
//!
//! For a time grid `t_n = n tau`, `n = 0..N`, discount `B_n = exp(-t_n/eps)`,
//! and velocities `v^n = (u^n - u^{n-1})/tau`, the functional is
//!
//! ```text
//! I(u) = sum_{n=1}^{N} tau * [ eps * c * B_n * psi(v^n)
//!                              + B_n * (phi1(u^n) - phi2(u^n) - <w^n, u^n>) ],
//! ```
//!
//! where `c = (tau/eps) / (1 - exp(-tau/eps))` normalizes the dissipation
//! weight so that the two scheme coefficients `a = c`, `b = c exp(-tau/eps)`
//! satisfy `(eps/tau)(a - b) = 1` exactly. That normalization keeps the
//! discrete optimality system consistent with the continuous one
//! (`xi - eps xi' + eta = w`, `xi = grad psi(u')`) to second order and makes
//! the discrete energy chain telescope exactly.
//!
//! The minimizer never works with the raw slice gradients
//! `tau * B_n * R_n` — the discount `B_n` underflows for `t_n >> eps` — but
//! with the normalized residuals
//!
//! ```text
//! R_n = eta1(u^n) - eta2(u^n) - w^n
//!       + (eps/tau) * [ a * grad psi(v^n) - b * grad psi(v^{n+1}) ],
//! ```
//!
//! (no successor term at `n = N`), whose vanishing is equivalent to
//! stationarity and stays well scaled uniformly in `eps`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::BlockTridiagonal;
use crate::parallel::try_indexed_map;
use crate::potentials::{EnergySplit, Potential};
use crate::spaces::{DiscreteSpace, DualField, Field};

/// Uniform time grid on `[0, t_final]` with `n_steps` steps.
#[derive(Debug, Clone, Copy)]
pub struct TimeGrid {
    pub t_final: f64,
    pub n_steps: usize,
}

impl TimeGrid {
    pub fn new(t_final: f64, n_steps: usize) -> Result<Self> {
        if !t_final.is_finite() || t_final <= 0.0 {
            return Err(Error::BadBounds {
                name: "t_final",
                detail: format!("must be positive and finite, got {t_final}"),
            });
        }
        if n_steps < 2 {
            return Err(Error::BadBounds {
                name: "n_steps",
                detail: format!("must be at least 2, got {n_steps}"),
            });
        }
        Ok(Self { t_final, n_steps })
    }

    pub fn tau(&self) -> f64 {
        self.t_final / self.n_steps as f64
    }

    pub fn time(&self, n: usize) -> f64 {
        n as f64 * self.tau()
    }
}

/// States at all grid times, `states[n] = u^n`, `n = 0..=N`.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub states: Vec<Field>,
}

impl Trajectory {
    /// Constant-in-time trajectory at the initial state.
    pub fn constant(u0: &Field, n_steps: usize) -> Self {
        Self {
            states: vec![u0.clone(); n_steps + 1],
        }
    }

    pub fn n_steps(&self) -> usize {
        self.states.len() - 1
    }

    /// Backward-difference velocity `(u^n - u^{n-1}) / tau`, `n >= 1`.
    pub fn velocity(&self, n: usize, tau: f64) -> Field {
        let cur = &self.states[n].values;
        let prev = &self.states[n - 1].values;
        Field {
            values: cur.iter().zip(prev).map(|(&c, &p)| (c - p) / tau).collect(),
        }
    }

    /// Largest nodal deviation from `other` over all slices.
    pub fn sup_distance(&self, other: &Trajectory) -> f64 {
        self.states
            .iter()
            .zip(&other.states)
            .map(|(a, b)| {
                a.values
                    .iter()
                    .zip(&b.values)
                    .fold(0.0_f64, |m, (&x, &y)| m.max((x - y).abs()))
            })
            .fold(0.0, f64::max)
    }
}

/// Dual-valued data at grid times; slot `0` is unused padding so that
/// `states[n]` aligns with `t_n`.
#[derive(Debug, Clone)]
pub struct DualTrajectory {
    pub states: Vec<DualField>,
}

impl DualTrajectory {
    pub fn zeros(space: &DiscreteSpace, n_steps: usize) -> Self {
        Self {
            states: vec![space.zero_dual(); n_steps + 1],
        }
    }

    pub fn from_fn(
        space: &DiscreteSpace,
        n_steps: usize,
        mut f: impl FnMut(usize) -> DualField,
    ) -> Self {
        let mut states = Vec::with_capacity(n_steps + 1);
        states.push(space.zero_dual());
        for n in 1..=n_steps {
            states.push(f(n));
        }
        Self { states }
    }
}

/// Marks which nodal unknowns the solver may vary; the rest stay at their
/// initial values (time-independent essential constraints).
#[derive(Debug, Clone)]
pub struct DofMask {
    pub free: Vec<bool>,
}

impl DofMask {
    pub fn all_free(dim: usize) -> Self {
        Self {
            free: vec![true; dim],
        }
    }

    pub fn from_free(free: Vec<bool>) -> Self {
        Self { free }
    }

    pub fn free_indices(&self) -> Vec<usize> {
        self.free
            .iter()
            .enumerate()
            .filter_map(|(i, &f)| if f { Some(i) } else { None })
            .collect()
    }

    pub fn is_trivial(&self) -> bool {
        self.free.iter().all(|&f| f)
    }

    /// Zeroes constrained entries in place.
    pub fn project_dual(&self, d: &mut DualField) {
        for (v, &f) in d.values.iter_mut().zip(&self.free) {
            if !f {
                *v = 0.0;
            }
        }
    }
}

/// A fully specified minimization instance.
pub struct WedProblem {
    pub space: Arc<DiscreteSpace>,
    pub grid: TimeGrid,
    pub epsilon: f64,
    /// Dissipation, evaluated on velocity fields.
    pub psi: Arc<dyn Potential>,
    /// Energy split; a present concave part must already be smooth (for
    /// example a regularized envelope).
    pub split: EnergySplit,
    pub forcing: DualTrajectory,
    pub initial: Field,
    pub mask: DofMask,
}

/// Precomputed discount and dissipation weights.
pub(crate) struct SchemeWeights {
    pub tau: f64,
    pub eps: f64,
    /// Normalization `c = x / (1 - e^{-x})`, `x = tau/eps`.
    pub c: f64,
    /// `e^{-tau/eps}`.
    pub decay: f64,
    /// `bulk[n] = e^{-t_n/eps}`.
    pub bulk: Vec<f64>,
}

impl SchemeWeights {
    pub fn new(grid: &TimeGrid, eps: f64) -> Result<Self> {
        if !eps.is_finite() || eps <= 0.0 {
            return Err(Error::BadBounds {
                name: "epsilon",
                detail: format!("must be positive and finite, got {eps}"),
            });
        }
        let tau = grid.tau();
        let x = tau / eps;
        let c = x / (-(-x).exp_m1());
        let decay = (-x).exp();
        let bulk = (0..=grid.n_steps)
            .map(|n| (-(n as f64) * x).exp())
            .collect();
        Ok(Self {
            tau,
            eps,
            c,
            decay,
            bulk,
        })
    }

    /// Predecessor-side coefficient `a` with `(eps/tau)(a - b) = 1`.
    pub fn a(&self) -> f64 {
        self.c
    }

    /// Successor-side coefficient `b = a e^{-tau/eps}`.
    pub fn b(&self) -> f64 {
        self.c * self.decay
    }
}

fn check_problem(problem: &WedProblem) -> Result<SchemeWeights> {
    let dim = problem.space.dim();
    if problem.initial.values.len() != dim {
        return Err(Error::DimensionMismatch {
            op: "initial state",
            expected: dim,
            got: problem.initial.values.len(),
        });
    }
    if problem.mask.free.len() != dim {
        return Err(Error::DimensionMismatch {
            op: "dof mask",
            expected: dim,
            got: problem.mask.free.len(),
        });
    }
    if problem.forcing.states.len() != problem.grid.n_steps + 1 {
        return Err(Error::DimensionMismatch {
            op: "forcing trajectory",
            expected: problem.grid.n_steps + 1,
            got: problem.forcing.states.len(),
        });
    }
    // The initial state must carry finite energy.
    let v0 = problem.split.phi1.value(&problem.initial)?;
    if !v0.is_finite() {
        return Err(Error::DomainViolation {
            what: "initial state has infinite energy",
        });
    }
    SchemeWeights::new(&problem.grid, problem.epsilon)
}

/// Value of the discounted functional along a trajectory.
pub fn wed_value(problem: &WedProblem, traj: &Trajectory) -> Result<f64> {
    let w = check_problem(problem)?;
    let n_steps = problem.grid.n_steps;
    let terms: Vec<f64> = try_indexed_map(n_steps, |i| -> Result<f64> {
        let n = i + 1;
        let u = &traj.states[n];
        let v = traj.velocity(n, w.tau);
        let mut val = w.eps * w.c * problem.psi.value(&v)?;
        val += problem.split.phi1.value(u)?;
        if let Some(phi2) = &problem.split.phi2 {
            val -= phi2.value(u)?;
        }
        val -= problem.space.pairing(&problem.forcing.states[n], u)?;
        Ok(w.tau * w.bulk[n] * val)
    })?;
    Ok(terms.iter().sum())
}

/// Raw slice gradients of the functional as dual densities:
/// `d I / d u^n_j = weight_j * G^n_j`, accumulated term by term.
///
/// Returned vector is indexed by slice with slot `0` unused. These entries
/// decay like `B_n` and underflow for `t_n >> eps`; prefer
/// [`normalized_residuals`] inside solvers.
pub fn wed_gradient(problem: &WedProblem, traj: &Trajectory) -> Result<Vec<DualField>> {
    let w = check_problem(problem)?;
    let n_steps = problem.grid.n_steps;
    let dim = problem.space.dim();
    let mut grads = vec![
        DualField {
            values: vec![0.0; dim]
        };
        n_steps + 1
    ];
    for n in 1..=n_steps {
        let u = &traj.states[n];
        let v = traj.velocity(n, w.tau);
        let dv = problem.psi.gradient(&v)?;
        // Dissipation term of slice n touches u^n (+) and u^{n-1} (-).
        let disc = w.eps * w.c * w.bulk[n];
        for j in 0..dim {
            grads[n].values[j] += disc * dv.values[j];
            grads[n - 1].values[j] -= disc * dv.values[j];
        }
        let mut eta = problem.split.phi1.gradient(u)?;
        if let Some(phi2) = &problem.split.phi2 {
            let eta2 = phi2.gradient(u)?;
            for (e, &g) in eta.values.iter_mut().zip(&eta2.values) {
                *e -= g;
            }
        }
        for j in 0..dim {
            grads[n].values[j] +=
                w.tau * w.bulk[n] * (eta.values[j] - problem.forcing.states[n].values[j]);
        }
    }
    grads[0].values.iter_mut().for_each(|v| *v = 0.0);
    Ok(grads)
}

/// Normalized optimality residuals `R_n`, `n = 1..N` (slot `0` unused),
/// with constrained entries zeroed.
pub fn normalized_residuals(problem: &WedProblem, traj: &Trajectory) -> Result<Vec<DualField>> {
    let w = check_problem(problem)?;
    residuals_with_weights(problem, traj, &w)
}

fn residuals_with_weights(
    problem: &WedProblem,
    traj: &Trajectory,
    w: &SchemeWeights,
) -> Result<Vec<DualField>> {
    let n_steps = problem.grid.n_steps;
    let a = w.a();
    let b = w.b();
    let scale = w.eps / w.tau;
    let mut rows = try_indexed_map(n_steps, |i| -> Result<DualField> {
        let n = i + 1;
        let u = &traj.states[n];
        let mut r = problem.split.phi1.gradient(u)?;
        if let Some(phi2) = &problem.split.phi2 {
            let eta2 = phi2.gradient(u)?;
            for (x, &g) in r.values.iter_mut().zip(&eta2.values) {
                *x -= g;
            }
        }
        for (x, &f) in r.values.iter_mut().zip(&problem.forcing.states[n].values) {
            *x -= f;
        }
        let dv = problem.psi.gradient(&traj.velocity(n, w.tau))?;
        for (x, &d) in r.values.iter_mut().zip(&dv.values) {
            *x += scale * a * d;
        }
        if n < n_steps {
            let dvn = problem.psi.gradient(&traj.velocity(n + 1, w.tau))?;
            for (x, &d) in r.values.iter_mut().zip(&dvn.values) {
                *x -= scale * b * d;
            }
        }
        Ok(r)
    })?;
    for r in rows.iter_mut() {
        problem.mask.project_dual(r);
    }
    rows.insert(0, problem.space.zero_dual());
    Ok(rows)
}

/// Discrete `L^{p'}(0,T; V*)` norm of the normalized residuals:
/// `( sum_n tau |R_n|_{p'}^{p'} )^{1/p'}`.
pub fn residual_norm(problem: &WedProblem, residuals: &[DualField]) -> Result<f64> {
    let q = problem.space.conjugate_p();
    let tau = problem.grid.tau();
    let mut acc = 0.0;
    for r in residuals.iter().skip(1) {
        acc += tau * problem.space.norm_dual(r)?.powf(q);
    }
    Ok(acc.powf(1.0 / q))
}

/// Terminal transversality defect `eps * |grad psi(v^N)|_{p'}` (constrained
/// entries excluded); vanishing discounts force it to zero at minimizers.
pub fn final_xi_norm(problem: &WedProblem, traj: &Trajectory) -> Result<f64> {
    let w = check_problem(problem)?;
    let mut xi = problem
        .psi
        .gradient(&traj.velocity(problem.grid.n_steps, w.tau))?;
    problem.mask.project_dual(&mut xi);
    Ok(w.eps * problem.space.norm_dual(&xi)?)
}

/// Slack of the discrete energy inequality,
///
/// ```text
/// sum_n tau <grad psi(v^n), v^n>
///   <= phi1(u^0) - phi1(u^N) + phi2(u^N) - phi2(u^0)
///      + sum_n tau <w^n, v^n>  (+ slack),
/// ```
///
/// returned as `RHS - LHS`. Because `(eps/tau)(a - b) = 1` holds exactly for
/// the scheme weights, the chain of convexity estimates behind the
/// inequality telescopes without quadrature error: at an exact minimizer the
/// slack is nonnegative, and a converged solve keeps it above
/// `-10 tau * scale`.
pub fn energy_slack(problem: &WedProblem, traj: &Trajectory) -> Result<f64> {
    let w = check_problem(problem)?;
    let n_steps = problem.grid.n_steps;
    let mut lhs = 0.0;
    let mut forcing_work = 0.0;
    for n in 1..=n_steps {
        let v = traj.velocity(n, w.tau);
        let xi = problem.psi.gradient(&v)?;
        lhs += w.tau * problem.space.pairing(&xi, &v)?;
        forcing_work += w.tau * problem.space.pairing(&problem.forcing.states[n], &v)?;
    }
    let u0 = &traj.states[0];
    let un = &traj.states[n_steps];
    let mut rhs = problem.split.phi1.value(u0)? - problem.split.phi1.value(un)? + forcing_work;
    if let Some(phi2) = &problem.split.phi2 {
        rhs += phi2.value(un)? - phi2.value(u0)?;
    }
    Ok(rhs - lhs)
}

/// Scale factor for energy-slack assertions: `10 tau * (data scale)`.
pub fn energy_slack_tolerance(problem: &WedProblem, traj: &Trajectory) -> Result<f64> {
    let mut scale = 1.0_f64 + problem.split.phi1.value(&traj.states[0])?.abs();
    for s in &traj.states {
        scale = scale.max(problem.space.norm_p(s)?);
    }
    Ok(10.0 * problem.grid.tau() * scale)
}

/// Newton solve parameters.
#[derive(Debug, Clone, Copy)]
pub struct SolveConfig {
    /// Convergence threshold on the normalized-residual norm.
    pub tol: f64,
    pub max_iter: usize,
    pub max_backtracks: usize,
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 60,
            max_backtracks: 40,
        }
    }
}

/// Convergence report of a minimization.
#[derive(Debug, Clone, Copy)]
pub struct WedReport {
    pub value: f64,
    pub el_residual: f64,
    pub final_xi_norm: f64,
    pub iterations: usize,
    pub backtracks_total: usize,
    pub converged: bool,
}

fn extract_block(m: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    let k = idx.len();
    DMatrix::from_fn(k, k, |r, c| m[(idx[r], idx[c])])
}

struct NewtonSystem {
    matrix: BlockTridiagonal,
    rhs: Vec<DVector<f64>>,
}

fn assemble_newton(
    problem: &WedProblem,
    traj: &Trajectory,
    w: &SchemeWeights,
    residuals: &[DualField],
    free: &[usize],
    levenberg: f64,
) -> Result<NewtonSystem> {
    let n_steps = problem.grid.n_steps;
    let scale = w.eps / (w.tau * w.tau);
    let a = w.a();
    let b = w.b();
    struct Row {
        diag: DMatrix<f64>,
        sub: Option<DMatrix<f64>>,
        sup: Option<DMatrix<f64>>,
        rhs: DVector<f64>,
    }
    let rows: Vec<Row> = try_indexed_map(n_steps, |i| -> Result<Row> {
        let n = i + 1;
        let u = &traj.states[n];
        let mut diag_full = problem.split.phi1.hessian(u)?;
        if let Some(phi2) = &problem.split.phi2 {
            diag_full -= phi2.hessian(u)?;
        }
        let hv = problem.psi.hessian(&traj.velocity(n, w.tau))?;
        let mut sub_full = hv;
        sub_full *= -scale * a;
        diag_full -= &sub_full; // adds +scale * a * hv
        let sup_full = if n < n_steps {
            let hvn = problem.psi.hessian(&traj.velocity(n + 1, w.tau))?;
            diag_full += &(scale * b * &hvn);
            Some(-scale * b * hvn)
        } else {
            None
        };
        let mut diag = extract_block(&diag_full, free);
        for j in 0..diag.nrows() {
            diag[(j, j)] += levenberg;
        }
        let rhs = DVector::from_fn(free.len(), |r, _| -residuals[n].values[free[r]]);
        Ok(Row {
            diag,
            sub: Some(extract_block(&sub_full, free)),
            sup: sup_full.map(|m| extract_block(&m, free)),
            rhs,
        })
    })?;
    let mut diag = Vec::with_capacity(n_steps);
    let mut sub = Vec::with_capacity(n_steps.saturating_sub(1));
    let mut sup = Vec::with_capacity(n_steps.saturating_sub(1));
    let mut rhs = Vec::with_capacity(n_steps);
    for (i, row) in rows.into_iter().enumerate() {
        diag.push(row.diag);
        rhs.push(row.rhs);
        if i > 0 {
            sub.push(row.sub.expect("interior row has a predecessor block"));
        }
        if let Some(s) = row.sup {
            sup.push(s);
        }
    }
    Ok(NewtonSystem {
        matrix: BlockTridiagonal::new(sub, diag, sup)?,
        rhs,
    })
}

/// Minimizes the discounted functional by damped Newton iteration on the
/// normalized optimality system.
///
/// Starts from `init` (default: the constant trajectory at the initial
/// state), backtracks on the residual norm, and escalates a Levenberg
/// diagonal shift when a bare Newton direction stalls.
pub fn minimize_wed(
    problem: &WedProblem,
    init: Option<Trajectory>,
    cfg: &SolveConfig,
) -> Result<(Trajectory, WedReport)> {
    let w = check_problem(problem)?;
    let n_steps = problem.grid.n_steps;
    let free = problem.mask.free_indices();
    if free.is_empty() {
        return Err(Error::ConfigInvalid {
            key: "mask".into(),
            detail: "no free unknowns".into(),
        });
    }
    let mut traj = match init {
        Some(t) => {
            if t.states.len() != n_steps + 1 {
                return Err(Error::DimensionMismatch {
                    op: "initial trajectory",
                    expected: n_steps + 1,
                    got: t.states.len(),
                });
            }
            t
        }
        None => Trajectory::constant(&problem.initial, n_steps),
    };
    traj.states[0] = problem.initial.clone();

    let mut residuals = residuals_with_weights(problem, &traj, &w)?;
    let mut merit = residual_norm(problem, &residuals)?;
    let mut backtracks_total = 0usize;
    let mut levenberg = 0.0_f64;
    let mut iterations = 0usize;

    // Convergence is relative to the data scale: forcing trajectories are
    // unbounded inputs (outer iterations may feed amplified iterates back
    // in), and an absolute tolerance would sit below the attainable roundoff
    // floor exactly when divergence guards most need a finished solve.
    let mut data_scale = 1.0_f64;
    for v in &problem.initial.values {
        data_scale = data_scale.max(v.abs());
    }
    for wn in &problem.forcing.states {
        for v in &wn.values {
            data_scale = data_scale.max(v.abs());
        }
    }
    let threshold = cfg.tol * data_scale;

    while merit > threshold {
        if iterations >= cfg.max_iter {
            return Err(Error::MaxIterExceeded {
                iters: iterations,
                residual: merit,
                tol: threshold,
            });
        }
        iterations += 1;
        let system = assemble_newton(problem, &traj, &w, &residuals, &free, levenberg)?;
        let step = system.matrix.solve(&system.rhs)?;
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..=cfg.max_backtracks {
            let mut trial = traj.clone();
            for n in 1..=n_steps {
                for (r, &j) in free.iter().enumerate() {
                    trial.states[n].values[j] += t * step[n - 1][r];
                }
            }
            let trial_res = residuals_with_weights(problem, &trial, &w)?;
            let trial_merit = residual_norm(problem, &trial_res)?;
            if trial_merit < merit * (1.0 - 1e-4 * t) || trial_merit < threshold {
                traj = trial;
                residuals = trial_res;
                merit = trial_merit;
                accepted = true;
                break;
            }
            backtracks_total += 1;
            t *= 0.5;
        }
        if accepted {
            levenberg *= 0.25;
            if levenberg < 1e-14 {
                levenberg = 0.0;
            }
        } else {
            // Stalled line search: escalate curvature damping and retry.
            levenberg = if levenberg == 0.0 {
                1e-6
            } else {
                levenberg * 10.0
            };
            if levenberg > 1e8 {
                return Err(Error::LineSearchFailed {
                    iter: iterations,
                    backtracks: cfg.max_backtracks,
                });
            }
        }
    }

    let report = WedReport {
        value: wed_value(problem, &traj)?,
        el_residual: merit,
        final_xi_norm: final_xi_norm(problem, &traj)?,
        iterations,
        backtracks_total,
        converged: true,
    };
    Ok((traj, report))
}

/// Discrete `L^p(0,T; V)` distance between two trajectories,
/// `( sum_{n=1}^N tau |a^n - b^n|_p^p )^{1/p}`.
pub fn trajectory_distance(
    space: &DiscreteSpace,
    tau: f64,
    a: &Trajectory,
    b: &Trajectory,
) -> Result<f64> {
    let p = space.exponent_p();
    let mut acc = 0.0;
    for (x, y) in a.states.iter().zip(&b.states).skip(1) {
        let d = Field {
            values: x
                .values
                .iter()
                .zip(&y.values)
                .map(|(&u, &v)| u - v)
                .collect(),
        };
        acc += tau * space.norm_p(&d)?.powf(p);
    }
    Ok(acc.powf(1.0 / p))
}

/// Discrete `L^{p'}(0,T; V*)` distance between two dual trajectories.
pub fn dual_distance(
    space: &DiscreteSpace,
    tau: f64,
    a: &DualTrajectory,
    b: &DualTrajectory,
) -> Result<f64> {
    let q = space.conjugate_p();
    let mut acc = 0.0;
    for (x, y) in a.states.iter().zip(&b.states).skip(1) {
        let d = DualField {
            values: x
                .values
                .iter()
                .zip(&y.values)
                .map(|(&u, &v)| u - v)
                .collect(),
        };
        acc += tau * space.norm_dual(&d)?.powf(q);
    }
    Ok(acc.powf(1.0 / q))
}
