//! Dissipation potentials, energy functionals, splits, and nonpotential
//! perturbations.
//!
//! Everything evaluating on fields implements [`Potential`]: value, gradient
//! (as a dual-density field), and a dense Hessian for Newton-type solvers.
//! Nodewise-separable potentials `phi(u) = sum_j w_j a(u_j)` additionally
//! expose their scalar density through [`NodewiseDensity`], which unlocks
//! closed nodewise solves (Fenchel conjugates, resolvents).
//!
//! Perturbations model the non-gradient forcing `f`: they map fields to dual
//! fields and carry growth metadata distinguishing maps bounded by the ambient
//! norm from maps controlled only through the stronger space.

use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::spaces::{pow_abs, signed_pow, DiscreteSpace, DualField, Field};

/// A functional on fields with first and second derivatives.
pub trait Potential: Send + Sync {
    fn space(&self) -> &Arc<DiscreteSpace>;

    fn value(&self, u: &Field) -> Result<f64>;

    /// Gradient as nodal dual densities (quadrature weights live in the
    /// pairing, not here).
    fn gradient(&self, u: &Field) -> Result<DualField>;

    /// Dense derivative of the gradient densities, `H[i][j] = d g_i / d u_j`.
    fn hessian(&self, u: &Field) -> Result<DMatrix<f64>>;

    /// Scalar density access for nodewise-separable potentials.
    fn nodewise(&self) -> Option<&dyn NodewiseDensity> {
        None
    }

    /// Effective-domain indicator; `value`/`gradient` reject fields outside.
    fn in_domain(&self, _u: &Field) -> bool {
        true
    }
}

/// Scalar density of a separable potential.
pub trait NodewiseDensity: Send + Sync {
    fn density(&self, s: f64) -> f64;

    fn derivative(&self, s: f64) -> f64;

    /// Second derivative, clamped to a large finite value at points where it
    /// blows up (only Newton-type solvers with safeguards consume it).
    fn second_derivative(&self, s: f64) -> f64;

    fn domain(&self, _s: f64) -> bool {
        true
    }
}

/// Large stand-in for infinite curvature at density kinks.
pub(crate) const CURVATURE_CLAMP: f64 = 1e16;

/// `a(s) = coeff * |s|^e / e`.
pub struct PowerDensity {
    pub exponent: f64,
    pub coeff: f64,
}

impl NodewiseDensity for PowerDensity {
    fn density(&self, s: f64) -> f64 {
        self.coeff * pow_abs(s, self.exponent) / self.exponent
    }

    fn derivative(&self, s: f64) -> f64 {
        self.coeff * signed_pow(s, self.exponent - 1.0)
    }

    fn second_derivative(&self, s: f64) -> f64 {
        let e = self.exponent;
        if s == 0.0 {
            if e > 2.0 {
                0.0
            } else if e == 2.0 {
                self.coeff
            } else {
                CURVATURE_CLAMP
            }
        } else {
            self.coeff * (e - 1.0) * pow_abs(s, e - 2.0)
        }
    }
}

/// Density built from a rate function `alpha` and its caller-supplied exact
/// primitive `A(s) = int_0^s alpha` (no numerical integration, so value and
/// gradient stay a consistent pair). The derivative of `alpha` falls back to
/// central differences when no closed form is supplied.
pub struct RateDensity {
    alpha: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    primitive: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    dalpha: Option<Arc<dyn Fn(f64) -> f64 + Send + Sync>>,
}

impl RateDensity {
    pub fn new(
        alpha: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
        primitive: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
        dalpha: Option<Arc<dyn Fn(f64) -> f64 + Send + Sync>>,
    ) -> Self {
        Self {
            alpha,
            primitive,
            dalpha,
        }
    }
}

impl NodewiseDensity for RateDensity {
    fn density(&self, s: f64) -> f64 {
        (self.primitive)(s)
    }

    fn derivative(&self, s: f64) -> f64 {
        (self.alpha)(s)
    }

    fn second_derivative(&self, s: f64) -> f64 {
        match &self.dalpha {
            Some(d) => d(s),
            None => {
                let h = 1e-6 * (1.0 + s.abs());
                ((self.alpha)(s + h) - (self.alpha)(s - h)) / (2.0 * h)
            }
        }
    }
}

/// Separable potential `phi(u) = sum_j w_j a(u_j)` over all components.
pub struct SeparableEnergy {
    space: Arc<DiscreteSpace>,
    density: Arc<dyn NodewiseDensity>,
}

impl SeparableEnergy {
    pub fn new(space: Arc<DiscreteSpace>, density: Arc<dyn NodewiseDensity>) -> Self {
        Self { space, density }
    }
}

impl Potential for SeparableEnergy {
    fn space(&self) -> &Arc<DiscreteSpace> {
        &self.space
    }

    fn value(&self, u: &Field) -> Result<f64> {
        if !self.in_domain(u) {
            return Err(Error::DomainViolation {
                what: "separable energy",
            });
        }
        let mut acc = 0.0;
        for (i, &v) in u.values.iter().enumerate() {
            acc += self.space.weight_at(i) * self.density.density(v);
        }
        Ok(acc)
    }

    fn gradient(&self, u: &Field) -> Result<DualField> {
        if !self.in_domain(u) {
            return Err(Error::DomainViolation {
                what: "separable energy",
            });
        }
        Ok(DualField {
            values: u
                .values
                .iter()
                .map(|&v| self.density.derivative(v))
                .collect(),
        })
    }

    fn hessian(&self, u: &Field) -> Result<DMatrix<f64>> {
        let n = u.values.len();
        let mut h = DMatrix::zeros(n, n);
        for (i, &v) in u.values.iter().enumerate() {
            h[(i, i)] = self.density.second_derivative(v);
        }
        Ok(h)
    }

    fn nodewise(&self) -> Option<&dyn NodewiseDensity> {
        Some(self.density.as_ref())
    }

    fn in_domain(&self, u: &Field) -> bool {
        u.values.iter().all(|&v| self.density.domain(v))
    }
}

/// Separable density restricted to an open scalar domain.
pub struct RestrictedDensity<D: NodewiseDensity> {
    pub inner: D,
    pub indicator: fn(f64) -> bool,
}

impl<D: NodewiseDensity> NodewiseDensity for RestrictedDensity<D> {
    fn density(&self, s: f64) -> f64 {
        self.inner.density(s)
    }

    fn derivative(&self, s: f64) -> f64 {
        self.inner.derivative(s)
    }

    fn second_derivative(&self, s: f64) -> f64 {
        self.inner.second_derivative(s)
    }

    fn domain(&self, s: f64) -> bool {
        (self.indicator)(s)
    }
}

/// Non-separable quadratic `phi(u) = 1/2 <K u, u>` with `K` mapping values to
/// dual densities; `W K` must be symmetric (e.g. `K = W^{-1} L` with `L` a
/// symmetric stiffness matrix) for the value/gradient pair to be consistent.
/// Exists mainly to exercise non-separable code paths.
pub struct QuadraticFormEnergy {
    space: Arc<DiscreteSpace>,
    pub k: DMatrix<f64>,
}

impl QuadraticFormEnergy {
    pub fn new(space: Arc<DiscreteSpace>, k: DMatrix<f64>) -> Result<Self> {
        if k.nrows() != space.dim() || k.ncols() != space.dim() {
            return Err(Error::DimensionMismatch {
                op: "quadratic form",
                expected: space.dim(),
                got: k.nrows(),
            });
        }
        Ok(Self { space, k })
    }
}

impl Potential for QuadraticFormEnergy {
    fn space(&self) -> &Arc<DiscreteSpace> {
        &self.space
    }

    fn value(&self, u: &Field) -> Result<f64> {
        let g = self.gradient(u)?;
        Ok(0.5 * self.space.pairing(&g, u)?)
    }

    fn gradient(&self, u: &Field) -> Result<DualField> {
        let v = nalgebra::DVector::from_column_slice(&u.values);
        let g = &self.k * v;
        Ok(DualField {
            values: g.iter().copied().collect(),
        })
    }

    fn hessian(&self, _u: &Field) -> Result<DMatrix<f64>> {
        Ok(self.k.clone())
    }
}

/// Dissipation `psi(v) = sum_j w_j |v_j|^p / p`; its gradient is the
/// `p`-modulus duality map.
pub fn make_p_power_dissipation(space: Arc<DiscreteSpace>, p: f64) -> Result<Arc<dyn Potential>> {
    if !p.is_finite() || p <= 1.0 {
        return Err(Error::BadExponent {
            name: "dissipation p",
            value: p,
        });
    }
    Ok(Arc::new(SeparableEnergy::new(
        space,
        Arc::new(PowerDensity {
            exponent: p,
            coeff: 1.0,
        }),
    )))
}

/// Range sampled when validating a rate function at construction.
const RATE_SAMPLE_RADIUS: f64 = 8.0;
const RATE_SAMPLE_COUNT: usize = 321;

/// Sampling check that a scalar rate vanishes at zero and is nondecreasing
/// on `[-8, 8]`.
pub(crate) fn validate_rate(alpha: &(dyn Fn(f64) -> f64 + Send + Sync)) -> Result<()> {
    let at_zero = alpha(0.0);
    if at_zero.abs() > 1e-10 {
        return Err(Error::MonotonicityViolation { at: 0.0 });
    }
    let n = RATE_SAMPLE_COUNT;
    let step = 2.0 * RATE_SAMPLE_RADIUS / (n - 1) as f64;
    let mut prev_s = -RATE_SAMPLE_RADIUS;
    let mut prev = alpha(prev_s);
    for i in 1..n {
        let s = -RATE_SAMPLE_RADIUS + i as f64 * step;
        let cur = alpha(s);
        let tol = 1e-10 * (1.0 + prev.abs().max(cur.abs()));
        if cur < prev - tol {
            return Err(Error::MonotonicityViolation { at: prev_s });
        }
        prev = cur;
        prev_s = s;
    }
    Ok(())
}

/// Dissipation built from a nondecreasing rate `alpha` with `alpha(0) = 0`
/// and its exact primitive: `psi(v) = sum_j w_j A(v_j)`, `A(s) = int_0^s
/// alpha`.
///
/// Monotonicity and the zero condition are checked by sampling `alpha` on a
/// fixed grid over `[-8, 8]`; a decreasing sample pair is rejected.
pub fn make_general_dissipation(
    space: Arc<DiscreteSpace>,
    alpha: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    primitive: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    dalpha: Option<Arc<dyn Fn(f64) -> f64 + Send + Sync>>,
) -> Result<Arc<dyn Potential>> {
    validate_rate(alpha.as_ref())?;
    Ok(Arc::new(SeparableEnergy::new(
        space,
        Arc::new(RateDensity {
            alpha,
            primitive,
            dalpha,
        }),
    )))
}

/// Separable energy `phi(u) = coeff * sum_j w_j |u_j|^e / e`.
pub fn make_power_energy(
    space: Arc<DiscreteSpace>,
    exponent: f64,
    coeff: f64,
) -> Result<Arc<dyn Potential>> {
    if !exponent.is_finite() || exponent <= 1.0 {
        return Err(Error::BadExponent {
            name: "energy exponent",
            value: exponent,
        });
    }
    Ok(Arc::new(SeparableEnergy::new(
        space,
        Arc::new(PowerDensity { exponent, coeff }),
    )))
}

/// Difference-of-convex energy `phi = phi1 - phi2` with the domination
/// constant `kappa` of the concave part.
#[derive(Clone)]
pub struct EnergySplit {
    pub phi1: Arc<dyn Potential>,
    pub phi2: Option<Arc<dyn Potential>>,
    pub kappa: f64,
}

impl std::fmt::Debug for EnergySplit {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EnergySplit")
            .field("has_phi2", &self.phi2.is_some())
            .field("kappa", &self.kappa)
            .finish()
    }
}

/// Result of sampling the domination bound `phi2 <= kappa phi1 + C(|u|^p + 1)`.
#[derive(Debug, Clone, Copy)]
pub struct DominationReport {
    pub kappa: f64,
    /// Fitted constant: the largest sampled `(phi2 - kappa phi1) / (|u|^p + 1)`.
    pub fitted_c: f64,
}

impl EnergySplit {
    pub fn convex(phi1: Arc<dyn Potential>) -> Self {
        Self {
            phi1,
            phi2: None,
            kappa: 0.0,
        }
    }

    pub fn difference(phi1: Arc<dyn Potential>, phi2: Arc<dyn Potential>, kappa: f64) -> Self {
        Self {
            phi1,
            phi2: Some(phi2),
            kappa,
        }
    }

    /// Samples the domination inequality; diagnostic only (callers decide
    /// whether a large fitted constant is a problem).
    pub fn domination_check(&self, samples: &[Field]) -> Result<DominationReport> {
        let mut fitted: f64 = 0.0;
        if let Some(phi2) = &self.phi2 {
            let space = self.phi1.space();
            let p = space.exponent_p();
            for u in samples {
                let v2 = phi2.value(u)?;
                let v1 = self.phi1.value(u)?;
                let np = space.norm_p(u)?.powf(p);
                fitted = fitted.max((v2 - self.kappa * v1) / (np + 1.0));
            }
        }
        Ok(DominationReport {
            kappa: self.kappa,
            fitted_c: fitted,
        })
    }
}

/// Growth class of a perturbation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GrowthClass {
    /// `|f(u)|_{V*}^{p'} <= c (|u|_V^p + 1)`: bounded through the ambient norm.
    Ambient { c: f64 },
    /// `|f(u)|_{V*}^{p'} <= c (1 + phi1(u) + |u|_V^p)`: controlled only
    /// through the stronger space; solved via the dual-side iteration.
    FromStrongSpace { c: f64 },
}

/// Nonpotential forcing term `f: V -> V*`; `t` supports non-autonomous
/// forcings (the shipped instances ignore it).
pub trait Perturbation: Send + Sync {
    fn apply(&self, u: &Field, t: f64) -> Result<DualField>;

    fn growth(&self) -> GrowthClass;
}

impl std::fmt::Debug for dyn Perturbation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Perturbation")
            .field("growth", &self.growth())
            .finish()
    }
}

/// Nodewise coupling map: reads the component values at one node, writes the
/// forcing values for the same node.
pub type CouplingFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

/// Nodewise coupling `f_i(u)_j = g_i(u_1(x_j), ..., u_k(x_j))`, optionally
/// plus the componentwise lower-order shift `|u_i|^{m-2} u_i`.
pub struct CouplingPerturbation {
    space: Arc<DiscreteSpace>,
    g: CouplingFn,
    shift_exponent: Option<f64>,
    growth: GrowthClass,
}

impl Perturbation for CouplingPerturbation {
    fn apply(&self, u: &Field, _t: f64) -> Result<DualField> {
        let k = self.space.components();
        let nodes = self.space.m_nodes();
        if u.values.len() != k * nodes {
            return Err(Error::DimensionMismatch {
                op: "coupling perturbation",
                expected: k * nodes,
                got: u.values.len(),
            });
        }
        let mut out = vec![0.0; k * nodes];
        let mut at_node = vec![0.0; k];
        let mut g_out = vec![0.0; k];
        for j in 0..nodes {
            for (c, slot) in at_node.iter_mut().enumerate() {
                *slot = u.values[c * nodes + j];
            }
            (self.g)(&at_node, &mut g_out);
            for c in 0..k {
                out[c * nodes + j] = g_out[c];
            }
        }
        if let Some(m) = self.shift_exponent {
            for (i, &v) in u.values.iter().enumerate() {
                out[i] += signed_pow(v, m - 1.0);
            }
        }
        Ok(DualField { values: out })
    }

    fn growth(&self) -> GrowthClass {
        self.growth
    }
}

/// Builds a nodewise coupling perturbation for a `k`-component space.
pub fn make_perturbation_coupling(
    space: Arc<DiscreteSpace>,
    g: CouplingFn,
    growth_c: f64,
) -> Arc<dyn Perturbation> {
    Arc::new(CouplingPerturbation {
        space,
        g,
        shift_exponent: None,
        growth: GrowthClass::Ambient { c: growth_c },
    })
}

/// Same as [`make_perturbation_coupling`] plus the componentwise shift
/// `|u_i|^{m-2} u_i` used to move a concave energy part into the forcing.
pub fn make_perturbation_coupling_shifted(
    space: Arc<DiscreteSpace>,
    g: CouplingFn,
    shift_exponent: f64,
    growth_c: f64,
) -> Arc<dyn Perturbation> {
    Arc::new(CouplingPerturbation {
        space,
        g,
        shift_exponent: Some(shift_exponent),
        growth: GrowthClass::Ambient { c: growth_c },
    })
}

/// `f(u) = c u`, the scalar-demo amplification term.
pub fn make_scaling_perturbation(space: Arc<DiscreteSpace>, c: f64) -> Arc<dyn Perturbation> {
    Arc::new(CouplingPerturbation {
        space,
        g: Arc::new(move |u, out| {
            for (o, &v) in out.iter_mut().zip(u) {
                *o = c * v;
            }
        }),
        shift_exponent: None,
        growth: GrowthClass::Ambient {
            c: pow_abs(c, 2.0).max(1.0),
        },
    })
}

/// Transport term `f(u) = beta * Du` with centered differences at interior
/// nodes and one-sided differences at the boundary; growth is declared
/// through the stronger space (first derivatives are not ambient-bounded).
pub struct TransportPerturbation {
    space: Arc<DiscreteSpace>,
    beta: Vec<f64>,
}

impl Perturbation for TransportPerturbation {
    fn apply(&self, u: &Field, _t: f64) -> Result<DualField> {
        let nodes = self.space.m_nodes();
        let k = self.space.components();
        if u.values.len() != k * nodes {
            return Err(Error::DimensionMismatch {
                op: "transport perturbation",
                expected: k * nodes,
                got: u.values.len(),
            });
        }
        let h = self.space.spacing()?;
        let mut out = vec![0.0; k * nodes];
        for c in 0..k {
            let comp = &u.values[c * nodes..(c + 1) * nodes];
            let dst = &mut out[c * nodes..(c + 1) * nodes];
            dst[0] = self.beta[0] * (comp[1] - comp[0]) / h;
            for j in 1..nodes - 1 {
                dst[j] = self.beta[j] * (comp[j + 1] - comp[j - 1]) / (2.0 * h);
            }
            dst[nodes - 1] = self.beta[nodes - 1] * (comp[nodes - 1] - comp[nodes - 2]) / h;
        }
        Ok(DualField { values: out })
    }

    fn growth(&self) -> GrowthClass {
        let c = self
            .beta
            .iter()
            .fold(0.0_f64, |a, &b| a.max(b.abs()))
            .max(1.0);
        GrowthClass::FromStrongSpace { c: c * c }
    }
}

/// Builds the transport perturbation; `beta` is one coefficient per node.
pub fn make_transport_perturbation(
    space: Arc<DiscreteSpace>,
    beta: Vec<f64>,
) -> Result<Arc<dyn Perturbation>> {
    if space.m_nodes() < 3 {
        return Err(Error::GridTooSmall {
            nodes: space.m_nodes(),
            required: 3,
        });
    }
    if beta.len() != space.m_nodes() {
        return Err(Error::DimensionMismatch {
            op: "transport coefficient",
            expected: space.m_nodes(),
            got: beta.len(),
        });
    }
    Ok(Arc::new(TransportPerturbation { space, beta }))
}

/// Solves `g(r) = 0` for strictly increasing `g` by safeguarded
/// Newton-bisection inside a sign-changing bracket.
pub(crate) fn solve_increasing(
    g: &dyn Fn(f64) -> f64,
    dg: &dyn Fn(f64) -> f64,
    mut lo: f64,
    mut hi: f64,
    tol: f64,
    max_iter: usize,
) -> Option<f64> {
    let mut glo = g(lo);
    let mut ghi = g(hi);
    if glo == 0.0 {
        return Some(lo);
    }
    if ghi == 0.0 {
        return Some(hi);
    }
    // Expand the bracket until the signs differ.
    let mut expand = 0;
    while glo > 0.0 || ghi < 0.0 {
        let width = (hi - lo).max(1e-12);
        if glo > 0.0 {
            lo -= width;
            glo = g(lo);
        }
        if ghi < 0.0 {
            hi += width;
            ghi = g(hi);
        }
        expand += 1;
        if expand > 200 {
            return None;
        }
    }
    let mut r = 0.5 * (lo + hi);
    // Safeguarded Newton: accept the Newton point only when it stays in the
    // bracket and its step is at most half the previous one, else bisect.
    // Without the halving condition, square-root-type roots (duality maps
    // with p < 2) trap plain Newton in a two-cycle that never tightens the
    // bracket.
    let mut step_prev = hi - lo;
    for _ in 0..max_iter {
        let gr = g(r);
        if gr.abs() <= tol {
            return Some(r);
        }
        if gr > 0.0 {
            hi = r;
        } else {
            lo = r;
        }
        let d = dg(r);
        let mut step = f64::NAN;
        if d.is_finite() && d > 0.0 {
            let cand = gr / d;
            let next = r - cand;
            if next > lo && next < hi && 2.0 * cand.abs() <= step_prev.abs() {
                step = cand;
            }
        }
        if step.is_finite() {
            r -= step;
        } else {
            step = r - 0.5 * (lo + hi);
            r = 0.5 * (lo + hi);
        }
        step_prev = step;
        if hi - lo <= f64::EPSILON * (1.0 + r.abs()) {
            return Some(r);
        }
    }
    let gr = g(r);
    if gr.abs() <= tol * 1e3 {
        Some(r)
    } else {
        None
    }
}

/// Nodewise inverse of a separable gradient: returns `u` with
/// `a'(u_j) = xi_j` at every node.
pub fn nodewise_gradient_inverse(
    potential: &dyn Potential,
    xi: &DualField,
    tol: f64,
    max_iter: usize,
) -> Result<Field> {
    let density = potential.nodewise().ok_or(Error::NonSeparable {
        op: "gradient inverse",
    })?;
    let mut values = Vec::with_capacity(xi.values.len());
    for (node, &t) in xi.values.iter().enumerate() {
        let g = |s: f64| density.derivative(s) - t;
        let dg = |s: f64| density.second_derivative(s);
        let r =
            solve_increasing(&g, &dg, -1.0, 1.0, tol, max_iter).ok_or(Error::InnerSolveFailed {
                node,
                residual: f64::NAN,
                iters: max_iter,
            })?;
        values.push(r);
    }
    Ok(Field { values })
}

/// Fenchel conjugate `phi*(xi) = sum_j w_j a*(xi_j)` of a separable
/// potential, with `a*(t) = sup_s (t s - a(s))` solved nodewise.
pub fn fenchel_conjugate_value(
    potential: &dyn Potential,
    xi: &DualField,
    tol: f64,
    max_iter: usize,
) -> Result<f64> {
    let density = potential.nodewise().ok_or(Error::NonSeparable {
        op: "fenchel conjugate",
    })?;
    let space = potential.space();
    let mut acc = 0.0;
    for (node, &t) in xi.values.iter().enumerate() {
        let g = |s: f64| density.derivative(s) - t;
        let dg = |s: f64| density.second_derivative(s);
        let s_star =
            solve_increasing(&g, &dg, -1.0, 1.0, tol, max_iter).ok_or(Error::InnerSolveFailed {
                node,
                residual: f64::NAN,
                iters: max_iter,
            })?;
        acc += space.weight_at(node) * (t * s_star - density.density(s_star));
    }
    Ok(acc)
}
