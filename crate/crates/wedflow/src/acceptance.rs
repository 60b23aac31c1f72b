//! Executable acceptance suite: eleven end-to-end checks of the library
//! against closed forms and derived reference solutions, each reporting one
//! pass/fail line. The instances and tolerances here are frozen; loosening
//! them to make a failing build green defeats their purpose.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::fixed_point::{solve_regularized, EvolutionProblem, FixedPointConfig, IterationVariant};
use crate::moreau_yosida::{
    moreau_envelope, resolvent, yosida_from_resolvent, EnvelopePotential, YosidaConfig,
};
use crate::oracle::{run as oracle_run, StepperConfig};
use crate::pde::{
    assemble_biharmonic, assemble_problem, Bc, BiharmonicSpec, ParabolicSystemSpec, RateSpec,
    Wiring,
};
use crate::potentials::{
    fenchel_conjugate_value, make_p_power_dissipation, make_power_energy,
    make_scaling_perturbation, EnergySplit, Potential,
};
use crate::spaces::{DiscreteSpace, Field};
use crate::sweeps::{sup_slice_error, unregularized_residual, SweepRow, SweepTable};
use crate::wed::{
    energy_slack, energy_slack_tolerance, minimize_wed, wed_gradient, DofMask, DualTrajectory,
    SolveConfig, TimeGrid, Trajectory, WedProblem,
};

/// Outcome of one acceptance criterion.
pub struct CriterionResult {
    pub index: usize,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl CriterionResult {
    pub fn line(&self) -> String {
        format!(
            "criterion {:02} {} {}: {}",
            self.index,
            if self.passed { "pass" } else { "FAIL" },
            self.name,
            self.detail
        )
    }
}

/// Full suite outcome plus the CSV artifacts the run produced.
pub struct AcceptanceReport {
    pub results: Vec<CriterionResult>,
    /// `(file name, contents)` pairs; byte-reproducible for a fixed build.
    pub artifacts: Vec<(String, String)>,
}

impl AcceptanceReport {
    pub fn all_passed(&self) -> bool {
        self.results.iter().all(|r| r.passed)
    }
}

pub const CRITERIA: [(usize, &str); 11] = [
    (1, "duality and conjugacy identities"),
    (2, "regularization closed forms"),
    (3, "functional gradient assembly"),
    (4, "scalar boundary-layer exactness"),
    (5, "fixed point with nonpotential coupling"),
    (6, "scalar causal limit"),
    (7, "heat-equation cross-validation"),
    (8, "concave-part regularization sweep"),
    (9, "discrete energy inequality"),
    (10, "fourth-order dual-map route"),
    (11, "artifact determinism"),
];

/// Energy-inequality observation from one converged solve.
struct SlackObs {
    context: String,
    slack: f64,
    tol: f64,
}

fn record_slack(
    obs: &mut Vec<SlackObs>,
    context: impl Into<String>,
    problem: &WedProblem,
    traj: &Trajectory,
) -> Result<()> {
    obs.push(SlackObs {
        context: context.into(),
        slack: energy_slack(problem, traj)?,
        tol: energy_slack_tolerance(problem, traj)?,
    });
    Ok(())
}

fn scalar_space() -> Arc<DiscreteSpace> {
    Arc::new(DiscreteSpace::single_point(2.0, 2.0).expect("scalar space"))
}

/// Closed form of `-eps u'' + u' + c0 u = 0`, `u(0) = 1`, `u'(T) = 0`,
/// written with decaying exponentials only so large `r T` cannot overflow.
fn damped_bvp(eps: f64, c0: f64, t_final: f64, t: f64) -> f64 {
    let disc = (1.0 + 4.0 * eps * c0).sqrt();
    let rm = (1.0 - disc) / (2.0 * eps);
    let rp = (1.0 + disc) / (2.0 * eps);
    let ratio = rm / rp;
    let c1 = 1.0 / (1.0 - ratio * (rm * t_final).exp() * (-rp * t_final).exp());
    let c2 = -c1 * ratio * (rm * t_final).exp();
    c1 * (rm * t).exp() + c2 * (rp * (t - t_final)).exp()
}

/// Scalar model problem: quadratic dissipation and energy, unit start.
fn scalar_evolution(eps: f64, n_steps: usize, f_coeff: Option<f64>) -> Result<EvolutionProblem> {
    let space = scalar_space();
    Ok(EvolutionProblem {
        space: space.clone(),
        grid: TimeGrid::new(1.0, n_steps)?,
        epsilon: eps,
        psi: make_p_power_dissipation(space.clone(), 2.0)?,
        phi1: make_power_energy(space.clone(), 2.0, 1.0)?,
        phi2: None,
        yosida: None,
        kappa: 0.0,
        perturbation: f_coeff.map(|c| make_scaling_perturbation(space.clone(), c)),
        initial: space.field(vec![1.0])?,
        mask: DofMask::all_free(1),
    })
}

// --- criterion 1 -----------------------------------------------------------

fn criterion_duality() -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst_identity: f64 = 0.0;
    for _ in 0..1000 {
        let nodes = rng.gen_range(1..=6usize);
        let p = rng.gen_range(1.2..4.0);
        let space = if nodes == 1 {
            Arc::new(DiscreteSpace::single_point(p, 2.0)?)
        } else {
            Arc::new(DiscreteSpace::uniform_unit(nodes, p, 2.0)?)
        };
        let u = space.field((0..nodes).map(|_| rng.gen_range(-2.0..2.0)).collect())?;
        let f = space.duality_map(&u, p)?;
        let pair = space.pairing(&f, &u)?;
        let primal = space.norm_p(&u)?.powf(p);
        let dual = space.norm_dual(&f)?.powf(space.conjugate_p());
        if primal > 0.0 {
            worst_identity = worst_identity
                .max((pair - primal).abs() / primal)
                .max((dual - primal).abs() / primal);
        }
    }
    let mut worst_fenchel: f64 = 0.0;
    for &p in &[1.5, 2.0, 3.0] {
        let space = Arc::new(DiscreteSpace::uniform_unit(5, p, 2.0)?);
        let psi = make_p_power_dissipation(space.clone(), p)?;
        for _ in 0..10 {
            let v = space.field(
                (0..5)
                    .map(|_| rng.gen_range(0.2..1.8) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 })
                    .collect(),
            )?;
            let xi = psi.gradient(&v)?;
            let conj = fenchel_conjugate_value(psi.as_ref(), &xi, 1e-12, 200)?;
            let gap = (psi.value(&v)? + conj - space.pairing(&xi, &v)?).abs();
            worst_fenchel = worst_fenchel.max(gap);
        }
    }
    let passed = worst_identity <= 1e-10 && worst_fenchel <= 1e-8;
    Ok((
        passed,
        format!(
            "worst pairing/norm identity deviation {worst_identity:.2e} (tol 1e-10), \
             worst conjugacy gap {worst_fenchel:.2e} (tol 1e-8)"
        ),
    ))
}

// --- criterion 2 -----------------------------------------------------------

fn criterion_envelope_closed_forms() -> Result<(bool, String)> {
    let space = scalar_space();
    let phi = make_power_energy(space.clone(), 2.0, 1.0)?;
    let mut worst_closed: f64 = 0.0;
    for &lambda in &[1.0, 0.1, 0.01] {
        let cfg = YosidaConfig::new(lambda, 2.0)?;
        for &u0 in &[-2.0, -0.3, 0.7, 3.5] {
            let u = space.field(vec![u0])?;
            let j = resolvent(phi.as_ref(), &u, &cfg)?;
            let a = yosida_from_resolvent(&u, &j, &cfg);
            let env = moreau_envelope(phi.as_ref(), &u, &cfg)?;
            let expected = u0 / (1.0 + lambda);
            worst_closed = worst_closed
                .max((j.values[0] - expected).abs())
                .max((a.values[0] - expected).abs())
                .max((env - u0 * u0 / (2.0 * (1.0 + lambda))).abs());
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst_identity: f64 = 0.0;
    for _ in 0..20 {
        let nodes = rng.gen_range(2..=5usize);
        let p = [1.5, 2.0, 3.0][rng.gen_range(0..3usize)];
        let space = Arc::new(DiscreteSpace::uniform_unit(nodes, p, 2.0)?);
        let e = rng.gen_range(1.6..3.5);
        let c = rng.gen_range(0.3..2.0);
        let phi = make_power_energy(space.clone(), e, c)?;
        let lambda = rng.gen_range(0.05..0.5);
        let cfg = YosidaConfig::new(lambda, p)?;
        let u = space.field((0..nodes).map(|_| rng.gen_range(-2.0..2.0)).collect())?;
        let j = resolvent(phi.as_ref(), &u, &cfg)?;
        let a = yosida_from_resolvent(&u, &j, &cfg);
        let rate = Field {
            values: u
                .values
                .iter()
                .zip(&j.values)
                .map(|(&x, &y)| (x - y) / lambda)
                .collect(),
        };
        let lhs = space.norm_dual(&a)?.powf(space.conjugate_p());
        let rhs = space.norm_p(&rate)?.powf(p);
        let scale = rhs.max(1e-12);
        worst_identity = worst_identity.max((lhs - rhs).abs() / scale);
    }
    let passed = worst_closed <= 1e-10 && worst_identity <= 1e-8;
    Ok((
        passed,
        format!(
            "worst closed-form deviation {worst_closed:.2e} (tol 1e-10), worst norm-identity \
             deviation {worst_identity:.2e} (tol 1e-8)"
        ),
    ))
}

// --- criterion 3 -----------------------------------------------------------

fn criterion_gradient_assembly() -> Result<(bool, String)> {
    let ps = [1.5, 2.0, 3.0];
    let ms = [2.0, 3.0];
    let mut worst_rel: f64 = 0.0;
    for i in 0..20usize {
        let mut rng = ChaCha8Rng::seed_from_u64(300 + i as u64);
        let p = ps[i % 3];
        let me = ms[i % 2];
        let nodes = 2 + i % 3;
        let n_steps = 3 + i % 2;
        let eps = 0.3 + 0.1 * (i % 5) as f64;
        let space = Arc::new(DiscreteSpace::uniform_unit(nodes, p, 2.0)?);
        let psi = make_p_power_dissipation(space.clone(), p)?;
        let phi1 = make_power_energy(space.clone(), me, rng.gen_range(0.5..1.5))?;
        let split = if i % 2 == 0 {
            EnergySplit::convex(phi1)
        } else {
            let phi2: Arc<dyn Potential> = Arc::new(EnvelopePotential::new(
                make_power_energy(space.clone(), 2.0, 0.4)?,
                YosidaConfig::new(0.2, p)?,
            ));
            EnergySplit::difference(phi1, phi2, 0.5)
        };
        let forcing = DualTrajectory::from_fn(&space, n_steps, |_n| crate::spaces::DualField {
            values: (0..nodes).map(|_| rng.gen_range(-0.8..0.8)).collect(),
        });
        let problem = WedProblem {
            space: space.clone(),
            grid: TimeGrid::new(1.0, n_steps)?,
            epsilon: eps,
            psi,
            split,
            forcing,
            initial: space.field((0..nodes).map(|_| rng.gen_range(-1.0..1.0)).collect())?,
            mask: DofMask::all_free(nodes),
        };
        let mut traj = Trajectory::constant(&problem.initial, n_steps);
        for n in 1..=n_steps {
            traj.states[n] = space.field((0..nodes).map(|_| rng.gen_range(-1.2..1.2)).collect())?;
        }
        let grad = wed_gradient(&problem, &traj)?;
        let mut scale: f64 = 0.0;
        for gn in grad.iter().skip(1) {
            for (j, &gv) in gn.values.iter().enumerate() {
                scale = scale.max((space.weight_at(j) * gv).abs());
            }
        }
        let mut worst_abs: f64 = 0.0;
        for (n, base) in traj.states.iter().enumerate().skip(1) {
            for (j, &bv) in base.values.iter().enumerate() {
                let delta = 1e-6 * (1.0 + bv.abs());
                let mut up = traj.clone();
                up.states[n].values[j] += delta;
                let mut dn = traj.clone();
                dn.states[n].values[j] -= delta;
                let fd = (crate::wed::wed_value(&problem, &up)?
                    - crate::wed::wed_value(&problem, &dn)?)
                    / (2.0 * delta);
                let want = space.weight_at(j) * grad[n].values[j];
                worst_abs = worst_abs.max((fd - want).abs());
            }
        }
        worst_rel = worst_rel.max(worst_abs / scale.max(1e-12));
    }
    let passed = worst_rel <= 1e-6;
    Ok((
        passed,
        format!("worst relative gradient deviation over 20 instances {worst_rel:.2e} (tol 1e-6)"),
    ))
}

// --- criterion 4 -----------------------------------------------------------

fn criterion_scalar_boundary_layer(obs: &mut Vec<SlackObs>, n: usize) -> Result<(bool, String)> {
    let eps = 1e-2;
    let ev = scalar_evolution(eps, n, None)?;
    let problem = ev.inner_problem(DualTrajectory::zeros(&ev.space, n));
    let (traj, report) = minimize_wed(&problem, None, &SolveConfig::default())?;
    let mut sup: f64 = 0.0;
    for k in 0..=n {
        let t = problem.grid.time(k);
        sup = sup.max((traj.states[k].values[0] - damped_bvp(eps, 1.0, 1.0, t)).abs());
    }
    record_slack(obs, "criterion 4 scalar boundary layer", &problem, &traj)?;
    let passed = sup <= 5e-4 && report.final_xi_norm <= 1e-3;
    Ok((
        passed,
        format!(
            "sup deviation from closed form {sup:.3e} (tol 5e-4), terminal dual slope \
             {:.3e} (tol 1e-3), stationarity residual {:.2e}",
            report.final_xi_norm, report.el_residual
        ),
    ))
}

// --- criterion 5 -----------------------------------------------------------

fn criterion_fixed_point_coupling(obs: &mut Vec<SlackObs>) -> Result<(bool, String)> {
    let eps = 1e-2;
    let n = 400;
    let ev = scalar_evolution(eps, n, Some(0.5))?;
    let cfg = FixedPointConfig::new(IterationVariant::S);
    let report = solve_regularized(&ev, &cfg)?;
    let outers = report.iterate_distances.len();
    let mut sup: f64 = 0.0;
    for k in 0..=n {
        let t = ev.grid.time(k);
        sup = sup.max((report.solution.states[k].values[0] - damped_bvp(eps, 0.5, 1.0, t)).abs());
    }
    let inner = ev.inner_problem(report.forcing.clone());
    record_slack(obs, "criterion 5 coupled scalar", &inner, &report.solution)?;
    let passed = report.converged && outers <= 50 && sup <= 5e-4;
    Ok((
        passed,
        format!(
            "converged in {outers} outer passes (budget 50), sup deviation from closed \
             form {sup:.3e} (tol 5e-4)"
        ),
    ))
}

// --- criterion 6 -----------------------------------------------------------

/// Solves the scalar instance across the discount schedule, comparing with
/// the causal-limit trajectory `e^{-t}`; shared with the determinism check.
fn scalar_causal_rows() -> Result<(SweepTable, Vec<f64>, Vec<SlackObs>)> {
    let n = 800;
    let mut rows = Vec::new();
    let mut sups = Vec::new();
    let mut obs = Vec::new();
    for &eps in &[0.2, 0.1, 0.05, 0.025] {
        let ev = scalar_evolution(eps, n, None)?;
        let problem = ev.inner_problem(DualTrajectory::zeros(&ev.space, n));
        let (traj, report) = minimize_wed(&problem, None, &SolveConfig::default())?;
        let mut sup: f64 = 0.0;
        for k in 0..=n {
            let t = problem.grid.time(k);
            sup = sup.max((traj.states[k].values[0] - (-t).exp()).abs());
        }
        let residual = unregularized_residual(&ev, &traj)?;
        let slack = energy_slack(&problem, &traj)?;
        obs.push(SlackObs {
            context: format!("criterion 6 discount {eps}"),
            slack,
            tol: energy_slack_tolerance(&problem, &traj)?,
        });
        rows.push(SweepRow {
            epsilon: eps,
            lambda: None,
            sup_error: sup,
            residual,
            energy_slack: slack,
            outer_iters: report.iterations,
            wall_ms: 0.0,
            diverged: false,
        });
        sups.push(sup);
    }
    Ok((
        SweepTable {
            rows,
            has_lambda: false,
        },
        sups,
        obs,
    ))
}

fn criterion_scalar_causal_limit(obs: &mut Vec<SlackObs>) -> Result<(bool, String, SweepTable)> {
    let (table, sups, mut new_obs) = scalar_causal_rows()?;
    obs.append(&mut new_obs);
    let mut monotone = true;
    for w in sups.windows(2) {
        if w[1] > 1.05 * w[0] {
            monotone = false;
        }
    }
    let last = *sups.last().unwrap();
    let passed = monotone && last <= 0.1;
    Ok((
        passed,
        format!(
            "sup deviations from e^(-t): {} (monotone with 5% slack: {monotone}, last \
             {last:.3e} vs tol 0.1)",
            sups.iter()
                .map(|s| format!("{s:.3e}"))
                .collect::<Vec<_>>()
                .join(", ")
        ),
        table,
    ))
}

// --- criterion 7 -----------------------------------------------------------

fn heat_system_spec(nodes: usize) -> Result<ParabolicSystemSpec> {
    let space = Arc::new(DiscreteSpace::uniform_unit(nodes, 2.0, 2.0)?);
    let u0 = space.field_from_fn(|_c, x| (std::f64::consts::PI * x).sin());
    Ok(ParabolicSystemSpec {
        space,
        rates: vec![RateSpec::power(2.0)?],
        coeff_a: vec![vec![1.0; nodes]],
        coeff_bounds: (0.5, 2.0),
        exponent_m: 2.0,
        coupling_g: None,
        bc: Bc::Dirichlet,
        u0,
    })
}

fn criterion_heat_cross_validation(obs: &mut Vec<SlackObs>) -> Result<(bool, String, SweepTable)> {
    let nodes = 65;
    let n_steps = 200;
    let t_final = 0.5;
    let pi = std::f64::consts::PI;
    let spec = heat_system_spec(nodes)?;
    let grid = TimeGrid::new(t_final, n_steps)?;
    let base = assemble_problem(&spec, grid, 0.02, None, Wiring::NonconvexSplit)?;
    let reference = oracle_run(&base, &StepperConfig::new(n_steps))?;
    let mut oracle_sup: f64 = 0.0;
    for k in 0..=n_steps {
        let t = grid.time(k);
        for (j, &x) in spec.space.coords().iter().enumerate() {
            let want = (-pi * pi * t).exp() * (pi * x).sin();
            oracle_sup = oracle_sup.max((reference.states[k].values[j] - want).abs());
        }
    }
    let cfg = FixedPointConfig::new(IterationVariant::S);
    let mut rows = Vec::new();
    let mut sups = Vec::new();
    for &eps in &[0.08, 0.04, 0.02] {
        let problem = assemble_problem(&spec, grid, eps, None, Wiring::NonconvexSplit)?;
        let report = solve_regularized(&problem, &cfg)?;
        let sup = sup_slice_error(&problem, &report.solution, &reference)?;
        let inner = problem.inner_problem(report.forcing.clone());
        let slack = energy_slack(&inner, &report.solution)?;
        obs.push(SlackObs {
            context: format!("criterion 7 heat discount {eps}"),
            slack,
            tol: energy_slack_tolerance(&inner, &report.solution)?,
        });
        rows.push(SweepRow {
            epsilon: eps,
            lambda: None,
            sup_error: sup,
            residual: unregularized_residual(&problem, &report.solution)?,
            energy_slack: slack,
            outer_iters: report.iterate_distances.len(),
            wall_ms: 0.0,
            diverged: false,
        });
        sups.push(sup);
    }
    let mut monotone = true;
    for w in sups.windows(2) {
        if w[1] > 1.05 * w[0] {
            monotone = false;
        }
    }
    let last = *sups.last().unwrap();
    let passed = oracle_sup <= 2e-2 && monotone && last <= 5e-2;
    Ok((
        passed,
        format!(
            "reference march vs separated solution {oracle_sup:.3e} (tol 2e-2); sweep sup \
             deviations {} (monotone: {monotone}, last tol 5e-2)",
            sups.iter()
                .map(|s| format!("{s:.3e}"))
                .collect::<Vec<_>>()
                .join(", ")
        ),
        SweepTable {
            rows,
            has_lambda: false,
        },
    ))
}

// --- criterion 8 -----------------------------------------------------------

fn neumann_spec(nodes: usize) -> Result<ParabolicSystemSpec> {
    let space = Arc::new(DiscreteSpace::uniform_unit(nodes, 2.0, 2.0)?);
    let u0 = space.field_from_fn(|_c, x| (std::f64::consts::PI * x).cos());
    Ok(ParabolicSystemSpec {
        space: space.clone(),
        rates: vec![RateSpec::power(2.0)?],
        coeff_a: vec![(0..nodes)
            .map(|j| {
                let x = j as f64 / (nodes - 1) as f64;
                1.0 + x * (1.0 - x)
            })
            .collect()],
        coeff_bounds: (1.0, 1.25),
        exponent_m: 2.0,
        coupling_g: None,
        bc: Bc::Neumann,
        u0,
    })
}

fn criterion_regularization_sweep(obs: &mut Vec<SlackObs>) -> Result<(bool, String, SweepTable)> {
    let nodes = 33;
    let eps = 0.05;
    let spec = neumann_spec(nodes)?;
    let grid = TimeGrid::new(0.1, 40)?;
    let cfg = FixedPointConfig::new(IterationVariant::S);
    let lambdas = [1e-1, 1e-2, 1e-3];
    let mut rows = Vec::new();
    let mut solutions: Vec<Trajectory> = Vec::new();
    for &lambda in &lambdas {
        let problem = assemble_problem(
            &spec,
            grid,
            eps,
            Some(YosidaConfig::new(lambda, 2.0)?),
            Wiring::NonconvexSplit,
        )?;
        let report = solve_regularized(&problem, &cfg)?;
        let inner = problem.inner_problem(report.forcing.clone());
        let slack = energy_slack(&inner, &report.solution)?;
        obs.push(SlackObs {
            context: format!("criterion 8 regularization {lambda}"),
            slack,
            tol: energy_slack_tolerance(&inner, &report.solution)?,
        });
        let increment = solutions
            .last()
            .map(|prev| report.solution.sup_distance(prev))
            .unwrap_or(f64::NAN);
        rows.push(SweepRow {
            epsilon: eps,
            lambda: Some(lambda),
            sup_error: increment,
            residual: unregularized_residual(&problem, &report.solution)?,
            energy_slack: slack,
            outer_iters: report.iterate_distances.len(),
            wall_ms: 0.0,
            diverged: false,
        });
        solutions.push(report.solution);
    }
    let inc1 = rows[1].sup_error;
    let inc2 = rows[2].sup_error;
    let increments_shrink = inc2 < inc1;

    // Cross-wiring agreement in the vanishing-regularization realization:
    // the concave part is smooth here, so its exact gradient (no envelope)
    // lags in the split wiring, against the nonpotential shift.
    let split = assemble_problem(&spec, grid, eps, None, Wiring::NonconvexSplit)?;
    let shift = assemble_problem(&spec, grid, eps, None, Wiring::NonpotentialShift)?;
    let a = solve_regularized(&split, &cfg)?;
    let b = solve_regularized(&shift, &cfg)?;
    for (label, problem, report) in [("split", &split, &a), ("shift", &shift, &b)] {
        let inner = problem.inner_problem(report.forcing.clone());
        obs.push(SlackObs {
            context: format!("criterion 8 wiring {label}"),
            slack: energy_slack(&inner, &report.solution)?,
            tol: energy_slack_tolerance(&inner, &report.solution)?,
        });
    }
    let gap = a.solution.sup_distance(&b.solution);
    let agree = gap <= 10.0 * cfg.outer_tol;
    let passed = increments_shrink && agree;
    Ok((
        passed,
        format!(
            "increments {inc1:.3e} then {inc2:.3e} (shrinking: {increments_shrink}); \
             wiring gap {gap:.2e} (tol {:.0e})",
            10.0 * cfg.outer_tol
        ),
        SweepTable {
            rows,
            has_lambda: true,
        },
    ))
}

// --- criterion 9 -----------------------------------------------------------

fn criterion_energy_inequality(obs: &[SlackObs]) -> (bool, String) {
    if obs.is_empty() {
        return (false, "no converged solves recorded".into());
    }
    let mut worst_margin = f64::INFINITY;
    let mut worst_context = String::new();
    let mut passed = true;
    for o in obs {
        let margin = o.slack + o.tol;
        if margin < worst_margin {
            worst_margin = margin;
            worst_context = o.context.clone();
        }
        if o.slack < -o.tol {
            passed = false;
        }
    }
    (
        passed,
        format!(
            "{} solves checked; tightest margin {worst_margin:.3e} ({worst_context})",
            obs.len()
        ),
    )
}

// --- criterion 10 ----------------------------------------------------------

fn criterion_fourth_order_route() -> Result<(bool, String, SweepTable)> {
    let nodes = 65;
    let n_steps = 200;
    let pi = std::f64::consts::PI;
    let space = Arc::new(DiscreteSpace::uniform_unit(nodes, 2.0, 2.0)?);
    let spec = BiharmonicSpec {
        space: space.clone(),
        beta: vec![0.5; nodes],
        u0: space.field_from_fn(|_c, x| (pi * x).sin().powi(2)),
    };
    let grid = TimeGrid::new(0.01, n_steps)?;
    let reference = {
        let problem = assemble_biharmonic(&spec, grid, 0.1)?;
        oracle_run(&problem, &StepperConfig::new(n_steps))?
    };
    let cfg = FixedPointConfig::new(IterationVariant::STilde);
    let mut rows = Vec::new();
    let mut sups = Vec::new();
    let mut all_converged = true;
    for &eps in &[0.1, 0.05, 0.025] {
        let problem = assemble_biharmonic(&spec, grid, eps)?;
        let report = solve_regularized(&problem, &cfg)?;
        all_converged &= report.converged;
        let sup = sup_slice_error(&problem, &report.solution, &reference)?;
        let inner = problem.inner_problem(report.forcing.clone());
        rows.push(SweepRow {
            epsilon: eps,
            lambda: None,
            sup_error: sup,
            residual: unregularized_residual(&problem, &report.solution)?,
            energy_slack: energy_slack(&inner, &report.solution)?,
            outer_iters: report.iterate_distances.len(),
            wall_ms: 0.0,
            diverged: false,
        });
        sups.push(sup);
    }
    let mut monotone = true;
    for w in sups.windows(2) {
        if w[1] > 1.05 * w[0] {
            monotone = false;
        }
    }
    let passed = all_converged && monotone;
    Ok((
        passed,
        format!(
            "dual-map iteration converged at every discount value: {all_converged}; sup \
             deviations from reference {} (monotone with 5% slack: {monotone})",
            sups.iter()
                .map(|s| format!("{s:.3e}"))
                .collect::<Vec<_>>()
                .join(", ")
        ),
        SweepTable {
            rows,
            has_lambda: false,
        },
    ))
}

// --- criterion 11 ----------------------------------------------------------

fn criterion_artifact_determinism() -> Result<(bool, String)> {
    let (first, _, _) = scalar_causal_rows()?;
    let (second, _, _) = scalar_causal_rows()?;
    let a = first.to_csv_deterministic();
    let b = second.to_csv_deterministic();
    let passed = a == b;
    Ok((
        passed,
        if passed {
            format!(
                "two independent runs emitted identical tables ({} bytes)",
                a.len()
            )
        } else {
            "independent runs emitted different bytes".into()
        },
    ))
}

// --- runner ----------------------------------------------------------------

fn push(results: &mut Vec<CriterionResult>, index: usize, outcome: Result<(bool, String)>) {
    let name = CRITERIA[index - 1].1;
    let (passed, detail) = match outcome {
        Ok(x) => x,
        Err(e) => (false, format!("errored: {e}")),
    };
    results.push(CriterionResult {
        index,
        name,
        passed,
        detail,
    });
}

/// Instance sizes the suite resolves its test problems at. The defaults are
/// the sizes every tolerance was calibrated against; loosening them is a
/// negative control — the affected criterion should fail and report the
/// measured error.
#[derive(Clone, Copy, Debug)]
pub struct SuiteOptions {
    /// Slice count of the scalar boundary-value instance.
    pub bvp_steps: usize,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        Self { bvp_steps: 400 }
    }
}

/// Runs the full suite at the calibrated instance sizes.
pub fn run_all() -> AcceptanceReport {
    run_all_with(SuiteOptions::default())
}

/// Runs the full suite in order, returning per-criterion outcomes and the
/// CSV artifacts.
pub fn run_all_with(opts: SuiteOptions) -> AcceptanceReport {
    let mut results = Vec::new();
    let mut artifacts = Vec::new();
    let mut slacks: Vec<SlackObs> = Vec::new();

    push(&mut results, 1, criterion_duality());
    push(&mut results, 2, criterion_envelope_closed_forms());
    push(&mut results, 3, criterion_gradient_assembly());
    push(
        &mut results,
        4,
        criterion_scalar_boundary_layer(&mut slacks, opts.bvp_steps),
    );
    push(&mut results, 5, criterion_fixed_point_coupling(&mut slacks));

    match criterion_scalar_causal_limit(&mut slacks) {
        Ok((passed, detail, table)) => {
            artifacts.push(("scalar_causal.csv".into(), table.to_csv_deterministic()));
            push(&mut results, 6, Ok((passed, detail)));
        }
        Err(e) => push(&mut results, 6, Err(e)),
    }
    match criterion_heat_cross_validation(&mut slacks) {
        Ok((passed, detail, table)) => {
            artifacts.push((
                "heat_cross_validation.csv".into(),
                table.to_csv_deterministic(),
            ));
            push(&mut results, 7, Ok((passed, detail)));
        }
        Err(e) => push(&mut results, 7, Err(e)),
    }
    match criterion_regularization_sweep(&mut slacks) {
        Ok((passed, detail, table)) => {
            artifacts.push(("neumann_lambda.csv".into(), table.to_csv_deterministic()));
            push(&mut results, 8, Ok((passed, detail)));
        }
        Err(e) => push(&mut results, 8, Err(e)),
    }

    let (passed9, detail9) = criterion_energy_inequality(&slacks);
    push(&mut results, 9, Ok((passed9, detail9)));

    match criterion_fourth_order_route() {
        Ok((passed, detail, table)) => {
            artifacts.push((
                "fourth_order_sweep.csv".into(),
                table.to_csv_deterministic(),
            ));
            push(&mut results, 10, Ok((passed, detail)));
        }
        Err(e) => push(&mut results, 10, Err(e)),
    }
    push(&mut results, 11, criterion_artifact_determinism());

    AcceptanceReport { results, artifacts }
}
