//! Problem assembly from a parsed config and the three commands: single
//! solve, sweep, acceptance suite. All file outputs are written atomically
//! (temp file + rename) under the configured output directory.

use std::fs;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::DMatrix;
use serde::Serialize;

use wedflow::acceptance;
use wedflow::fixed_point::{
    solve_regularized, EvolutionProblem, FixedPointConfig, IterationVariant,
};
use wedflow::moreau_yosida::YosidaConfig;
use wedflow::pde::{
    assemble_biharmonic, assemble_problem, boundary_pinned_mask, Bc, BiharmonicSpec,
    ParabolicSystemSpec, RateSpec, Wiring,
};
use wedflow::potentials::{
    make_p_power_dissipation, make_power_energy, make_scaling_perturbation, QuadraticFormEnergy,
};
use wedflow::spaces::DiscreteSpace;
use wedflow::sweeps::{causal_limit_sweep, lambda_sweep, SweepOrder, SweepPlan, SweepTable};
use wedflow::wed::{energy_slack, energy_slack_tolerance, DofMask, TimeGrid, Trajectory};

use crate::config::RunConfig;
use crate::CliError;

fn pi() -> f64 {
    std::f64::consts::PI
}

fn yosida_of(cfg: &RunConfig) -> Result<Option<YosidaConfig>, CliError> {
    match cfg.lambda {
        Some(lam) => Ok(Some(YosidaConfig::new(lam, cfg.exponent_p)?)),
        None => Ok(None),
    }
}

fn scalar_demo(cfg: &RunConfig) -> Result<EvolutionProblem, CliError> {
    let space = Arc::new(DiscreteSpace::single_point(cfg.exponent_p, cfg.exponent_m)?);
    Ok(EvolutionProblem {
        space: space.clone(),
        grid: TimeGrid::new(cfg.t_final, cfg.n_steps)?,
        epsilon: cfg.epsilon,
        psi: make_p_power_dissipation(space.clone(), cfg.exponent_p)?,
        phi1: make_power_energy(space.clone(), cfg.exponent_m, cfg.quad_coeff)?,
        phi2: None,
        yosida: yosida_of(cfg)?,
        kappa: 0.0,
        perturbation: (cfg.forcing_coeff != 0.0)
            .then(|| make_scaling_perturbation(space.clone(), cfg.forcing_coeff)),
        initial: space.field(vec![1.0])?,
        mask: DofMask::all_free(1),
    })
}

/// Non-separable quadratic energy `u -> quad_coeff/2 u' L u` with the 1D
/// stiffness `L`, walls pinned; exercises the dense-Newton code paths.
fn custom_quadratic(cfg: &RunConfig) -> Result<EvolutionProblem, CliError> {
    let nodes = cfg.m_nodes;
    let space = Arc::new(DiscreteSpace::uniform_unit(
        nodes,
        cfg.exponent_p,
        cfg.exponent_m,
    )?);
    let h = space.spacing()?;
    let mut l = DMatrix::zeros(nodes, nodes);
    for c in 0..nodes - 1 {
        l[(c, c)] += 1.0 / h;
        l[(c + 1, c + 1)] += 1.0 / h;
        l[(c, c + 1)] -= 1.0 / h;
        l[(c + 1, c)] -= 1.0 / h;
    }
    let mut k = l;
    for i in 0..nodes {
        for j in 0..nodes {
            k[(i, j)] *= cfg.quad_coeff / space.weight_at(i);
        }
    }
    Ok(EvolutionProblem {
        space: space.clone(),
        grid: TimeGrid::new(cfg.t_final, cfg.n_steps)?,
        epsilon: cfg.epsilon,
        psi: make_p_power_dissipation(space.clone(), cfg.exponent_p)?,
        phi1: Arc::new(QuadraticFormEnergy::new(space.clone(), k)?),
        phi2: None,
        yosida: yosida_of(cfg)?,
        kappa: 0.0,
        perturbation: (cfg.forcing_coeff != 0.0)
            .then(|| make_scaling_perturbation(space.clone(), cfg.forcing_coeff)),
        initial: space.field_from_fn(|_c, x| (pi() * x).sin()),
        mask: boundary_pinned_mask(&space),
    })
}

fn parabolic_system(cfg: &RunConfig) -> Result<EvolutionProblem, CliError> {
    let nodes = cfg.m_nodes;
    let space = Arc::new(DiscreteSpace::uniform_unit(
        nodes,
        cfg.exponent_p,
        cfg.exponent_m,
    )?);
    let bc = match cfg.bc.as_str() {
        "dirichlet" => Bc::Dirichlet,
        _ => Bc::Neumann,
    };
    let wiring = match cfg.wiring.as_str() {
        "nonconvex-split" => Wiring::NonconvexSplit,
        _ => Wiring::NonpotentialShift,
    };
    let coeff: Vec<f64> = (0..nodes)
        .map(|j| {
            let x = j as f64 / (nodes - 1) as f64;
            cfg.quad_coeff * (1.0 + x * (1.0 - x))
        })
        .collect();
    let lo = coeff.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = coeff.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let u0 = match bc {
        Bc::Dirichlet => space.field_from_fn(|_c, x| (pi() * x).sin()),
        Bc::Neumann => space.field_from_fn(|_c, x| (pi() * x).cos()),
    };
    let spec = ParabolicSystemSpec {
        space,
        rates: vec![RateSpec::power(cfg.exponent_p)?],
        coeff_a: vec![coeff],
        coeff_bounds: (lo, hi),
        exponent_m: cfg.exponent_m,
        coupling_g: None,
        bc,
        u0,
    };
    let grid = TimeGrid::new(cfg.t_final, cfg.n_steps)?;
    Ok(assemble_problem(
        &spec,
        grid,
        cfg.epsilon,
        yosida_of(cfg)?,
        wiring,
    )?)
}

fn biharmonic(cfg: &RunConfig) -> Result<EvolutionProblem, CliError> {
    let nodes = cfg.m_nodes;
    let space = Arc::new(DiscreteSpace::uniform_unit(
        nodes,
        cfg.exponent_p,
        cfg.exponent_m,
    )?);
    let spec = BiharmonicSpec {
        space: space.clone(),
        beta: vec![cfg.beta; nodes],
        u0: space.field_from_fn(|_c, x| (pi() * x).sin().powi(2)),
    };
    let grid = TimeGrid::new(cfg.t_final, cfg.n_steps)?;
    Ok(assemble_biharmonic(&spec, grid, cfg.epsilon)?)
}

pub fn build_problem(cfg: &RunConfig) -> Result<EvolutionProblem, CliError> {
    match cfg.problem.as_str() {
        "scalar-demo" => scalar_demo(cfg),
        "custom-quadratic" => custom_quadratic(cfg),
        "parabolic-system" => parabolic_system(cfg),
        "biharmonic" => biharmonic(cfg),
        other => Err(CliError::Config {
            key: "problem".into(),
            detail: format!("unknown selector `{other}`"),
        }),
    }
}

pub fn fixed_point_config(cfg: &RunConfig) -> FixedPointConfig {
    let variant = match cfg.variant.as_str() {
        "s-tilde" => IterationVariant::STilde,
        _ => IterationVariant::S,
    };
    let mut fp = FixedPointConfig::new(variant);
    fp.damping_theta = cfg.damping_theta;
    fp.outer_tol = cfg.outer_tol;
    fp.outer_max_iter = cfg.outer_max_iter;
    fp.bound_guard = cfg.bound_guard;
    fp.inner.tol = cfg.inner_tol;
    fp.inner.max_iter = cfg.inner_max_iter;
    fp
}

/// Writes `contents` to `dir/name` via a temp file and rename, so readers
/// never observe a partial file.
pub fn write_atomic(dir: &Path, name: &str, contents: &str) -> Result<(), CliError> {
    let io = |source: std::io::Error| CliError::Io {
        path: dir.join(name).display().to_string(),
        source,
    };
    fs::create_dir_all(dir).map_err(io)?;
    let tmp = dir.join(format!(".{name}.tmp"));
    fs::write(&tmp, contents).map_err(io)?;
    fs::rename(&tmp, dir.join(name)).map_err(io)?;
    Ok(())
}

/// Trajectory CSV: one row per (time, node), columns `t`, `x`, then one value
/// column per component. Shortest round-trip float formatting keeps reruns
/// byte-identical.
pub fn trajectory_csv(problem: &EvolutionProblem, traj: &Trajectory) -> String {
    let space = &problem.space;
    let k = space.components();
    let nodes = space.m_nodes();
    let mut out = String::from("t,x");
    if k == 1 {
        out.push_str(",u");
    } else {
        for c in 1..=k {
            out.push_str(&format!(",u{c}"));
        }
    }
    out.push('\n');
    for (n, state) in traj.states.iter().enumerate() {
        let t = problem.grid.time(n);
        for j in 0..nodes {
            out.push_str(&format!("{t},{}", space.coords()[j]));
            for c in 0..k {
                out.push_str(&format!(",{}", state.values[c * nodes + j]));
            }
            out.push('\n');
        }
    }
    out
}

#[derive(Serialize)]
struct Diagnostics {
    problem: String,
    seed: u64,
    converged: bool,
    el_residual: f64,
    final_xi_norm: f64,
    energy_slack: f64,
    energy_slack_tolerance: f64,
    outer_iterations: usize,
    inner_iterations_total: usize,
    wall_ms: f64,
}

pub fn cmd_solve(cfg: &RunConfig) -> Result<(), CliError> {
    let problem = build_problem(cfg)?;
    let fp = fixed_point_config(cfg);
    let start = Instant::now();
    let report = solve_regularized(&problem, &fp)?;
    let wall_ms = start.elapsed().as_secs_f64() * 1e3;
    let inner = problem.inner_problem(report.forcing.clone());
    let last = report
        .inner_reports
        .last()
        .expect("converged run has at least one inner report");
    let diag = Diagnostics {
        problem: cfg.problem.clone(),
        seed: cfg.seed,
        converged: report.converged,
        el_residual: last.el_residual,
        final_xi_norm: last.final_xi_norm,
        energy_slack: energy_slack(&inner, &report.solution)?,
        energy_slack_tolerance: energy_slack_tolerance(&inner, &report.solution)?,
        outer_iterations: report.iterate_distances.len(),
        inner_iterations_total: report.inner_reports.iter().map(|r| r.iterations).sum(),
        wall_ms,
    };
    let dir = Path::new(&cfg.output_dir);
    write_atomic(
        dir,
        "trajectory.csv",
        &trajectory_csv(&problem, &report.solution),
    )?;
    let json = serde_json::to_string_pretty(&diag).expect("diagnostics serialize");
    write_atomic(dir, "diagnostics.json", &(json + "\n"))?;
    println!(
        "solve: converged={} outer={} el_residual={:.3e} final_xi={:.3e}",
        diag.converged, diag.outer_iterations, diag.el_residual, diag.final_xi_norm
    );
    Ok(())
}

fn monotone_nonincreasing(xs: impl Iterator<Item = f64>) -> bool {
    let finite: Vec<f64> = xs.filter(|x| x.is_finite()).collect();
    finite.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12))
}

fn sweep_summary(kind: &str, table: &SweepTable) -> String {
    let mut out = String::new();
    out.push_str(&format!("sweep kind: {kind}\n"));
    out.push_str(&format!("rows: {}\n", table.rows.len()));
    out.push_str(&format!(
        "sup_error nonincreasing over finite rows: {}\n",
        monotone_nonincreasing(table.rows.iter().map(|r| r.sup_error))
    ));
    out.push_str(&format!(
        "residual nonincreasing over finite rows: {}\n",
        monotone_nonincreasing(table.rows.iter().map(|r| r.residual))
    ));
    let diverged: Vec<String> = table
        .rows
        .iter()
        .filter(|r| r.diverged)
        .map(|r| match r.lambda {
            Some(l) => format!("eps={} lambda={l}", r.epsilon),
            None => format!("eps={}", r.epsilon),
        })
        .collect();
    if diverged.is_empty() {
        out.push_str("diverged rows: none\n");
    } else {
        out.push_str(&format!("diverged rows: {}\n", diverged.join("; ")));
    }
    out
}

pub fn cmd_sweep(cfg: &RunConfig) -> Result<(), CliError> {
    let problem = build_problem(cfg)?;
    let fp = fixed_point_config(cfg);
    let mut plan = SweepPlan::new(cfg.sweep_epsilons.clone());
    if let Some(lams) = &cfg.sweep_lambdas {
        plan = plan.with_lambdas(lams.clone());
    }
    let table = match cfg.sweep_kind.as_str() {
        "lambda" => {
            if cfg.sweep_lambdas.is_none() {
                return Err(CliError::Config {
                    key: "sweep_lambdas".into(),
                    detail: "lambda sweep requires a regularization schedule".into(),
                });
            }
            let order = match cfg.sweep_order.as_str() {
                "epsilon-inner" => SweepOrder::EpsilonInner,
                _ => SweepOrder::LambdaInner,
            };
            lambda_sweep(&problem, &plan, &fp, order)?.0
        }
        _ => causal_limit_sweep(&problem, &plan, &fp)?,
    };
    let dir = Path::new(&cfg.output_dir);
    write_atomic(dir, "sweep.csv", &table.to_csv_deterministic())?;
    let summary = sweep_summary(&cfg.sweep_kind, &table);
    write_atomic(dir, "summary.txt", &summary)?;
    print!("{summary}");
    Ok(())
}

/// Runs the acceptance suite, printing one line per criterion and writing
/// the CSV artifacts; returns whether every criterion passed. The config's
/// `n_steps` sizes the scalar boundary-value instance (default 400, the
/// calibrated size), so a deliberately loosened config demonstrates that the
/// corresponding criterion can fail.
pub fn cmd_accept(cfg: &RunConfig) -> Result<bool, CliError> {
    let report = acceptance::run_all_with(acceptance::SuiteOptions {
        bvp_steps: cfg.n_steps,
    });
    for r in &report.results {
        println!("{}", r.line());
    }
    let dir = Path::new(&cfg.output_dir);
    for (name, contents) in &report.artifacts {
        write_atomic(dir, name, contents)?;
    }
    Ok(report.all_passed())
}

/// Prints the criteria without running them.
pub fn list_criteria() {
    for (index, name) in acceptance::CRITERIA {
        println!("criterion {index:02}: {name}");
    }
}
