//! Parameter sweeps over the discount parameter (causal limit) and the
//! concave-part regularization, plus empirical detection of the stability
//! threshold in the discount parameter.
//!
//! Each row solves the evolution problem at one parameter point and records
//! comparison metrics against the causal reference march: the sup-in-time
//! ambient-norm deviation, the residual of the unregularized target
//! equation, and the energy-inequality slack. Rows where the fixed-point
//! iteration diverges are recorded, not fatal — locating where that happens
//! is the point of the threshold detector.

use std::time::Instant;

use crate::error::{Error, Result};
use crate::fixed_point::{solve_regularized, EvolutionProblem, FixedPointConfig};
use crate::moreau_yosida::YosidaConfig;
use crate::oracle::{run as oracle_run, StepperConfig};
use crate::spaces::DualField;
use crate::wed::{energy_slack, Trajectory};

/// Parameter schedule for a sweep.
#[derive(Debug, Clone)]
pub struct SweepPlan {
    /// Discount parameters, strictly positive and strictly decreasing.
    pub epsilons: Vec<f64>,
    /// Regularization parameters, strictly positive and strictly
    /// decreasing; `None` for single-parameter sweeps.
    pub lambdas: Option<Vec<f64>>,
    /// Whether a threshold bisection should follow the sweep.
    pub epsilon0_bisection: bool,
}

impl SweepPlan {
    pub fn new(epsilons: Vec<f64>) -> Self {
        Self {
            epsilons,
            lambdas: None,
            epsilon0_bisection: false,
        }
    }

    pub fn with_lambdas(mut self, lambdas: Vec<f64>) -> Self {
        self.lambdas = Some(lambdas);
        self
    }

    pub fn validate(&self) -> Result<()> {
        check_descending("epsilons", &self.epsilons)?;
        if let Some(l) = &self.lambdas {
            check_descending("lambdas", l)?;
        }
        Ok(())
    }
}

fn check_descending(name: &'static str, xs: &[f64]) -> Result<()> {
    if xs.is_empty() {
        return Err(Error::BadBounds {
            name,
            detail: "schedule must be nonempty".into(),
        });
    }
    for (i, &x) in xs.iter().enumerate() {
        if !x.is_finite() || x <= 0.0 {
            return Err(Error::BadBounds {
                name,
                detail: format!("entry {i} is {x}, must be positive and finite"),
            });
        }
        if i > 0 && x >= xs[i - 1] {
            return Err(Error::BadBounds {
                name,
                detail: format!(
                    "entries must be strictly decreasing, got {} then {x}",
                    xs[i - 1]
                ),
            });
        }
    }
    Ok(())
}

/// One solved parameter point.
#[derive(Debug, Clone)]
pub struct SweepRow {
    pub epsilon: f64,
    pub lambda: Option<f64>,
    /// Sup over time slices of the ambient-norm deviation from the causal
    /// reference; for regularization sweeps, the Cauchy increment against
    /// the previous row (first row `NaN`).
    pub sup_error: f64,
    /// `( sum_n tau |psi'(v^n) + eta1 - eta2 - f(u^n)|_{p'}^{p'} )^{1/p'}`,
    /// the residual of the unregularized causal-limit equation.
    pub residual: f64,
    pub energy_slack: f64,
    pub outer_iters: usize,
    pub wall_ms: f64,
    pub diverged: bool,
}

/// Keyed sweep results plus CSV emission.
#[derive(Debug, Clone)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    pub has_lambda: bool,
}

impl SweepTable {
    /// Full CSV including wall-clock times.
    pub fn to_csv(&self) -> String {
        self.emit(true)
    }

    /// CSV without the wall-time column, byte-reproducible across runs with
    /// the same config.
    pub fn to_csv_deterministic(&self) -> String {
        self.emit(false)
    }

    fn emit(&self, with_wall: bool) -> String {
        let mut out = String::new();
        out.push_str("epsilon");
        if self.has_lambda {
            out.push_str(",lambda");
        }
        out.push_str(",sup_error,residual,energy_slack,outer_iters");
        if with_wall {
            out.push_str(",wall_ms");
        }
        out.push_str(",diverged\n");
        for row in &self.rows {
            out.push_str(&format!("{}", row.epsilon));
            if self.has_lambda {
                match row.lambda {
                    Some(l) => out.push_str(&format!(",{l}")),
                    None => out.push(','),
                }
            }
            out.push_str(&format!(
                ",{},{},{},{}",
                row.sup_error, row.residual, row.energy_slack, row.outer_iters
            ));
            if with_wall {
                out.push_str(&format!(",{}", row.wall_ms));
            }
            out.push_str(if row.diverged { ",true\n" } else { ",false\n" });
        }
        out
    }
}

/// Sup over time slices of the ambient-norm deviation between two
/// trajectories on the same grid.
pub fn sup_slice_error(problem: &EvolutionProblem, a: &Trajectory, b: &Trajectory) -> Result<f64> {
    if a.states.len() != b.states.len() {
        return Err(Error::DimensionMismatch {
            op: "trajectory comparison",
            expected: a.states.len(),
            got: b.states.len(),
        });
    }
    let mut sup: f64 = 0.0;
    for (x, y) in a.states.iter().zip(&b.states) {
        let d = crate::spaces::Field {
            values: x
                .values
                .iter()
                .zip(&y.values)
                .map(|(&u, &v)| u - v)
                .collect(),
        };
        sup = sup.max(problem.space.norm_p(&d)?);
    }
    Ok(sup)
}

/// Residual of the unregularized causal-limit equation
/// `psi'(u') + eta1 - eta2 - f(u) = 0` along a trajectory, aggregated as a
/// discrete dual-space norm in time. Masked unknowns are excluded.
pub fn unregularized_residual(problem: &EvolutionProblem, traj: &Trajectory) -> Result<f64> {
    let n_steps = problem.grid.n_steps;
    let tau = problem.grid.tau();
    let q = problem.space.conjugate_p();
    let mut acc = 0.0;
    for n in 1..=n_steps {
        let u = &traj.states[n];
        let v = traj.velocity(n, tau);
        let gpsi = problem.psi.gradient(&v)?;
        let g1 = problem.phi1.gradient(u)?;
        let g2 = match &problem.phi2 {
            Some(phi2) => Some(phi2.gradient(u)?),
            None => None,
        };
        let f = match &problem.perturbation {
            Some(f) => Some(f.apply(u, problem.grid.time(n))?),
            None => None,
        };
        let mut r = DualField {
            values: (0..problem.space.dim())
                .map(|j| {
                    let mut val = gpsi.values[j] + g1.values[j];
                    if let Some(g2) = &g2 {
                        val -= g2.values[j];
                    }
                    if let Some(f) = &f {
                        val -= f.values[j];
                    }
                    val
                })
                .collect(),
        };
        problem.mask.project_dual(&mut r);
        acc += tau * problem.space.norm_dual(&r)?.powf(q);
    }
    Ok(acc.powf(1.0 / q))
}

fn with_parameters(
    problem: &EvolutionProblem,
    epsilon: f64,
    lambda: Option<f64>,
) -> Result<EvolutionProblem> {
    let yosida = match lambda {
        Some(l) => Some(YosidaConfig::new(l, problem.space.exponent_p())?),
        None => problem.yosida,
    };
    Ok(EvolutionProblem {
        space: problem.space.clone(),
        grid: problem.grid,
        epsilon,
        psi: problem.psi.clone(),
        phi1: problem.phi1.clone(),
        phi2: problem.phi2.clone(),
        yosida,
        kappa: problem.kappa,
        perturbation: problem.perturbation.clone(),
        initial: problem.initial.clone(),
        mask: problem.mask.clone(),
    })
}

/// Solves one parameter point and fills a row; divergence becomes a flagged
/// row, any other failure aborts.
fn solve_row(
    problem: &EvolutionProblem,
    epsilon: f64,
    lambda: Option<f64>,
    cfg: &FixedPointConfig,
    reference: Option<&Trajectory>,
) -> Result<(SweepRow, Option<Trajectory>)> {
    let instance = with_parameters(problem, epsilon, lambda)?;
    let start = Instant::now();
    match solve_regularized(&instance, cfg) {
        Ok(report) => {
            let wall_ms = start.elapsed().as_secs_f64() * 1e3;
            let sup_error = match reference {
                Some(r) => sup_slice_error(&instance, &report.solution, r)?,
                None => f64::NAN,
            };
            let residual = unregularized_residual(&instance, &report.solution)?;
            let inner = instance.inner_problem(report.forcing.clone());
            let slack = energy_slack(&inner, &report.solution)?;
            Ok((
                SweepRow {
                    epsilon,
                    lambda,
                    sup_error,
                    residual,
                    energy_slack: slack,
                    outer_iters: report.iterate_distances.len(),
                    wall_ms,
                    diverged: false,
                },
                Some(report.solution),
            ))
        }
        Err(Error::DivergenceDetected { outer_iter, .. }) => {
            let wall_ms = start.elapsed().as_secs_f64() * 1e3;
            Ok((
                SweepRow {
                    epsilon,
                    lambda,
                    sup_error: f64::NAN,
                    residual: f64::NAN,
                    energy_slack: f64::NAN,
                    outer_iters: outer_iter,
                    wall_ms,
                    diverged: true,
                },
                None,
            ))
        }
        Err(e) => Err(e),
    }
}

/// Sweeps the discount parameter toward zero, comparing each solution with
/// the causal reference march on the same grid (and, when a regularization
/// schedule is present, crossing it with each discount value).
pub fn causal_limit_sweep(
    problem: &EvolutionProblem,
    plan: &SweepPlan,
    cfg: &FixedPointConfig,
) -> Result<SweepTable> {
    plan.validate()?;
    if plan.lambdas.is_some() && problem.phi2.is_none() {
        return Err(Error::ConfigInvalid {
            key: "lambdas".into(),
            detail: "regularization schedule requires a concave energy part".into(),
        });
    }
    let mut rows = Vec::new();
    let has_lambda = plan.lambdas.is_some();
    let lambda_axis: Vec<Option<f64>> = match &plan.lambdas {
        Some(ls) => ls.iter().map(|&l| Some(l)).collect(),
        None => vec![None],
    };
    for &eps in &plan.epsilons {
        for &lambda in &lambda_axis {
            let instance = with_parameters(problem, eps, lambda)?;
            let stepper = StepperConfig::new(problem.grid.n_steps);
            let reference = oracle_run(&instance, &stepper)?;
            let (row, _) = solve_row(problem, eps, lambda, cfg, Some(&reference))?;
            rows.push(row);
        }
    }
    Ok(SweepTable { rows, has_lambda })
}

/// Which parameter moves along the rows of a regularization sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepOrder {
    /// Rows walk the regularization schedule at the smallest discount value.
    LambdaInner,
    /// Rows walk the discount schedule at the smallest regularization value.
    EpsilonInner,
}

/// Sweeps the concave-part regularization toward zero, reporting Cauchy
/// increments between successive solutions (first row `NaN`); the returned
/// trajectory is the solution at the sweep corner (smallest parameters).
/// `order` picks which parameter moves, so running both orders probes the
/// joint limit from both sides.
pub fn lambda_sweep(
    problem: &EvolutionProblem,
    plan: &SweepPlan,
    cfg: &FixedPointConfig,
    order: SweepOrder,
) -> Result<(SweepTable, Trajectory)> {
    plan.validate()?;
    let lambdas = match &plan.lambdas {
        Some(l) => l.clone(),
        None => {
            return Err(Error::ConfigInvalid {
                key: "lambdas".into(),
                detail: "regularization sweep needs a schedule".into(),
            })
        }
    };
    if problem.phi2.is_none() {
        return Err(Error::ConfigInvalid {
            key: "lambdas".into(),
            detail: "regularization sweep requires a concave energy part".into(),
        });
    }
    let points: Vec<(f64, Option<f64>)> = match order {
        SweepOrder::LambdaInner => {
            let eps = *plan.epsilons.last().unwrap();
            lambdas.iter().map(|&l| (eps, Some(l))).collect()
        }
        SweepOrder::EpsilonInner => {
            let l = *lambdas.last().unwrap();
            plan.epsilons.iter().map(|&e| (e, Some(l))).collect()
        }
    };
    let mut rows = Vec::new();
    let mut previous: Option<Trajectory> = None;
    let mut last: Option<Trajectory> = None;
    for &(eps, lambda) in &points {
        let (mut row, solution) = solve_row(problem, eps, lambda, cfg, None)?;
        if let (Some(prev), Some(cur)) = (&previous, &solution) {
            row.sup_error = cur.sup_distance(prev);
        }
        rows.push(row);
        if let Some(cur) = solution {
            previous = Some(cur.clone());
            last = Some(cur);
        }
    }
    let corner = last.ok_or(Error::ConfigInvalid {
        key: "lambdas".into(),
        detail: "every sweep point diverged; no corner solution".into(),
    })?;
    Ok((
        SweepTable {
            rows,
            has_lambda: true,
        },
        corner,
    ))
}

/// Outcome of the empirical stability-threshold search.
#[derive(Debug, Clone, Copy)]
pub struct Epsilon0Detection {
    pub threshold: f64,
    /// Set when even the upper bracket endpoint is stable, in which case
    /// `threshold` is that endpoint and no bisection happened.
    pub no_instability: bool,
    /// Number of solves spent classifying.
    pub evaluations: usize,
}

/// Classification of one endpoint: `Ok`/slow non-convergence count as
/// stable (no norm blow-up observed), the norm guard firing counts as
/// unstable.
fn classify_stable(problem: &EvolutionProblem, eps: f64, cfg: &FixedPointConfig) -> Result<bool> {
    let instance = with_parameters(problem, eps, None)?;
    match solve_regularized(&instance, cfg) {
        Ok(_) => Ok(true),
        Err(Error::MaxOuterIterExceeded { .. }) => Ok(true),
        Err(Error::DivergenceDetected { .. }) => Ok(false),
        Err(e) => Err(e),
    }
}

/// Bisects the discount parameter between a stable and an unstable endpoint
/// until the bracket is within 10% relative width, returning the midpoint.
pub fn detect_epsilon0(
    problem: &EvolutionProblem,
    bracket: (f64, f64),
    cfg: &FixedPointConfig,
) -> Result<Epsilon0Detection> {
    let (mut lo, mut hi) = bracket;
    if !(lo > 0.0 && hi > lo && hi.is_finite()) {
        return Err(Error::BadBounds {
            name: "bracket",
            detail: format!("need 0 < lo < hi, got ({lo}, {hi})"),
        });
    }
    let mut evaluations = 0;
    let lo_stable = {
        evaluations += 1;
        classify_stable(problem, lo, cfg)?
    };
    let hi_stable = {
        evaluations += 1;
        classify_stable(problem, hi, cfg)?
    };
    if hi_stable && lo_stable {
        return Ok(Epsilon0Detection {
            threshold: hi,
            no_instability: true,
            evaluations,
        });
    }
    if !lo_stable {
        // Both endpoints blow up: nothing to bisect below.
        return Err(Error::BracketInvalid { lo, hi });
    }
    while (hi - lo) > 0.1 * (0.5 * (hi + lo)) {
        let mid = 0.5 * (lo + hi);
        evaluations += 1;
        if classify_stable(problem, mid, cfg)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(Epsilon0Detection {
        threshold: 0.5 * (lo + hi),
        no_instability: false,
        evaluations,
    })
}
