//! Flat-key JSON run configuration: every numeric parameter of the shipped
//! problem selectors plus solver tolerances and the sweep plan. Parsing fills
//! documented defaults, so `parse(emit(c)) == c` for every valid config.

use serde::{Deserialize, Serialize};

use crate::CliError;

pub const PROBLEMS: [&str; 4] = [
    "scalar-demo",
    "parabolic-system",
    "biharmonic",
    "custom-quadratic",
];

fn d_output_dir() -> String {
    "out".into()
}
fn d_t_final() -> f64 {
    1.0
}
fn d_n_steps() -> usize {
    400
}
fn d_epsilon() -> f64 {
    1e-2
}
fn d_two() -> f64 {
    2.0
}
fn d_one() -> f64 {
    1.0
}
fn d_m_nodes() -> usize {
    65
}
fn d_bc() -> String {
    "dirichlet".into()
}
fn d_wiring() -> String {
    "nonconvex-split".into()
}
fn d_variant() -> String {
    "s".into()
}
fn d_theta() -> f64 {
    0.5
}
fn d_outer_tol() -> f64 {
    1e-6
}
fn d_outer_max() -> usize {
    200
}
fn d_guard() -> f64 {
    1e6
}
fn d_inner_tol() -> f64 {
    1e-8
}
fn d_inner_max() -> usize {
    60
}
fn d_sweep_epsilons() -> Vec<f64> {
    vec![0.2, 0.1, 0.05, 0.025]
}
fn d_sweep_kind() -> String {
    "causal".into()
}
fn d_sweep_order() -> String {
    "lambda-inner".into()
}

/// One run, fully specified. All outputs are functions of this struct (the
/// solvers are deterministic; `seed` is recorded in the diagnostics so runs
/// remain attributable).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// One of `scalar-demo`, `parabolic-system`, `biharmonic`,
    /// `custom-quadratic`.
    pub problem: String,
    #[serde(default = "d_output_dir")]
    pub output_dir: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "d_t_final")]
    pub t_final: f64,
    #[serde(default = "d_n_steps")]
    pub n_steps: usize,
    /// Discount scale of the elliptic-in-time functional.
    #[serde(default = "d_epsilon")]
    pub epsilon: f64,
    #[serde(default = "d_two")]
    pub exponent_p: f64,
    #[serde(default = "d_two")]
    pub exponent_m: f64,
    /// Spatial nodes for the grid-based selectors; ignored by `scalar-demo`.
    #[serde(default = "d_m_nodes")]
    pub m_nodes: usize,
    /// `dirichlet` or `neumann` (parabolic-system only).
    #[serde(default = "d_bc")]
    pub bc: String,
    /// `nonconvex-split` or `nonpotential-shift` (parabolic-system only).
    #[serde(default = "d_wiring")]
    pub wiring: String,
    /// Concave-part regularization scale; omitted means the smooth concave
    /// gradient is used directly.
    #[serde(default)]
    pub lambda: Option<f64>,
    /// Coefficient of the convex energy (scalar and quadratic selectors).
    #[serde(default = "d_one")]
    pub quad_coeff: f64,
    /// Strength of the nonpotential coupling `f(u) = c u`; `0` disables it.
    #[serde(default)]
    pub forcing_coeff: f64,
    /// Transport coefficient of the biharmonic selector.
    #[serde(default)]
    pub beta: f64,
    /// Outer iteration: `s` (state map) or `s-tilde` (dual map).
    #[serde(default = "d_variant")]
    pub variant: String,
    #[serde(default = "d_theta")]
    pub damping_theta: f64,
    #[serde(default = "d_outer_tol")]
    pub outer_tol: f64,
    #[serde(default = "d_outer_max")]
    pub outer_max_iter: usize,
    #[serde(default = "d_guard")]
    pub bound_guard: f64,
    #[serde(default = "d_inner_tol")]
    pub inner_tol: f64,
    #[serde(default = "d_inner_max")]
    pub inner_max_iter: usize,
    /// Strictly decreasing discount schedule for `sweep`.
    #[serde(default = "d_sweep_epsilons")]
    pub sweep_epsilons: Vec<f64>,
    /// Strictly decreasing regularization schedule; required when
    /// `sweep_kind` is `lambda`.
    #[serde(default)]
    pub sweep_lambdas: Option<Vec<f64>>,
    /// `causal` (against the reference stepper) or `lambda` (Cauchy
    /// increments in the regularization scale).
    #[serde(default = "d_sweep_kind")]
    pub sweep_kind: String,
    /// Traversal for `lambda` sweeps: `lambda-inner` or `epsilon-inner`.
    #[serde(default = "d_sweep_order")]
    pub sweep_order: String,
}

fn bad(key: &str, detail: impl Into<String>) -> CliError {
    CliError::Config {
        key: key.into(),
        detail: detail.into(),
    }
}

fn check_positive(key: &'static str, v: f64) -> Result<(), CliError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(bad(key, format!("must be positive and finite, got {v}")))
    }
}

fn check_schedule(key: &'static str, xs: &[f64]) -> Result<(), CliError> {
    if xs.is_empty() {
        return Err(bad(key, "schedule must be nonempty"));
    }
    for &x in xs {
        if !x.is_finite() || x <= 0.0 {
            return Err(bad(key, "entries must be positive and finite"));
        }
    }
    for w in xs.windows(2) {
        if w[1] >= w[0] {
            return Err(bad(key, format!("must be strictly decreasing, got {xs:?}")));
        }
    }
    Ok(())
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        if !PROBLEMS.contains(&self.problem.as_str()) {
            return Err(bad(
                "problem",
                format!(
                    "unknown selector `{}`, expected one of {PROBLEMS:?}",
                    self.problem
                ),
            ));
        }
        check_positive("t_final", self.t_final)?;
        if self.n_steps < 2 {
            return Err(bad(
                "n_steps",
                format!("need at least 2 steps, got {}", self.n_steps),
            ));
        }
        check_positive("epsilon", self.epsilon)?;
        for (key, v) in [
            ("exponent_p", self.exponent_p),
            ("exponent_m", self.exponent_m),
        ] {
            if !v.is_finite() || v <= 1.0 {
                return Err(bad(key, format!("must lie in (1, inf), got {v}")));
            }
        }
        if self.m_nodes < 2 {
            return Err(bad(
                "m_nodes",
                format!("need at least 2 nodes, got {}", self.m_nodes),
            ));
        }
        match self.bc.as_str() {
            "dirichlet" | "neumann" => {}
            other => return Err(bad("bc", format!("unknown boundary condition `{other}`"))),
        }
        match self.wiring.as_str() {
            "nonconvex-split" | "nonpotential-shift" => {}
            other => return Err(bad("wiring", format!("unknown wiring `{other}`"))),
        }
        match self.variant.as_str() {
            "s" | "s-tilde" => {}
            other => {
                return Err(bad(
                    "variant",
                    format!("unknown iteration variant `{other}`"),
                ))
            }
        }
        match self.sweep_kind.as_str() {
            "causal" | "lambda" => {}
            other => return Err(bad("sweep_kind", format!("unknown sweep kind `{other}`"))),
        }
        match self.sweep_order.as_str() {
            "lambda-inner" | "epsilon-inner" => {}
            other => return Err(bad("sweep_order", format!("unknown sweep order `{other}`"))),
        }
        if let Some(lam) = self.lambda {
            check_positive("lambda", lam)?;
        }
        check_positive("quad_coeff", self.quad_coeff)?;
        if !self.forcing_coeff.is_finite() {
            return Err(bad("forcing_coeff", "must be finite"));
        }
        if !self.beta.is_finite() {
            return Err(bad("beta", "must be finite"));
        }
        if !(self.damping_theta > 0.0 && self.damping_theta <= 1.0) {
            return Err(bad(
                "damping_theta",
                format!("must lie in (0, 1], got {}", self.damping_theta),
            ));
        }
        check_positive("outer_tol", self.outer_tol)?;
        check_positive("bound_guard", self.bound_guard)?;
        check_positive("inner_tol", self.inner_tol)?;
        if self.outer_max_iter == 0 {
            return Err(bad("outer_max_iter", "must be at least 1"));
        }
        if self.inner_max_iter == 0 {
            return Err(bad("inner_max_iter", "must be at least 1"));
        }
        check_schedule("sweep_epsilons", &self.sweep_epsilons)?;
        if let Some(lams) = &self.sweep_lambdas {
            check_schedule("sweep_lambdas", lams)?;
        }
        if self.output_dir.is_empty() {
            return Err(bad("output_dir", "must be nonempty"));
        }
        Ok(())
    }

    /// Parses and validates a JSON config; schema errors name the offending
    /// key.
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| {
            let msg = e.to_string();
            // serde_json wraps the field name in backticks.
            let key = msg.split('`').nth(1).unwrap_or("config").to_string();
            CliError::Config { key, detail: msg }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Serializes with every field explicit, so `parse(emit(c)) == c`.
    pub fn emit(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialization cannot fail")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal(problem: &str) -> RunConfig {
        RunConfig::parse(&format!("{{\"problem\": \"{problem}\"}}")).unwrap()
    }

    #[test]
    fn minimal_config_gets_documented_defaults() {
        let cfg = minimal("scalar-demo");
        assert_eq!(cfg.n_steps, 400);
        assert_eq!(cfg.epsilon, 1e-2);
        assert_eq!(cfg.sweep_epsilons, vec![0.2, 0.1, 0.05, 0.025]);
        assert_eq!(cfg.variant, "s");
    }

    #[test]
    fn round_trip_is_identity() {
        let mut cfg = minimal("parabolic-system");
        cfg.bc = "neumann".into();
        cfg.lambda = Some(0.03);
        cfg.sweep_lambdas = Some(vec![0.1, 0.01]);
        cfg.forcing_coeff = -0.75;
        let again = RunConfig::parse(&cfg.emit()).unwrap();
        assert_eq!(cfg, again);
    }

    #[test]
    fn unknown_key_is_named() {
        let err =
            RunConfig::parse("{\"problem\": \"scalar-demo\", \"epsilonn\": 1.0}").unwrap_err();
        match err {
            CliError::Config { key, .. } => assert_eq!(key, "epsilonn"),
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn nonpositive_epsilon_is_named() {
        let err =
            RunConfig::parse("{\"problem\": \"scalar-demo\", \"epsilon\": -1.0}").unwrap_err();
        match err {
            CliError::Config { key, .. } => assert_eq!(key, "epsilon"),
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn increasing_schedule_is_rejected() {
        let err =
            RunConfig::parse("{\"problem\": \"scalar-demo\", \"sweep_epsilons\": [0.1, 0.2]}")
                .unwrap_err();
        match err {
            CliError::Config { key, .. } => assert_eq!(key, "sweep_epsilons"),
            other => panic!("expected config error, got {other:?}"),
        }
    }
}
