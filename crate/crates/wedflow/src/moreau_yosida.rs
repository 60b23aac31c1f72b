//! Resolvents, regularized gradients, and smoothed envelopes of convex
//! potentials, with the `p`-modulus duality map in place of the identity.
//!
//! For a convex potential `phi` and `lambda > 0`, the resolvent `J u` solves
//!
//! ```text
//! rho_p((J u - u) / lambda) + grad phi(J u) = 0,    rho_p(x) = |x|^{p-2} x,
//! ```
//!
//! the regularized gradient is `A_lambda(u) = rho_p((u - J u) / lambda)`, and
//! the envelope is
//!
//! ```text
//! phi_lambda(u) = (lambda / p) |(u - J u)/lambda|_p^p + phi(J u),
//! ```
//!
//! a smooth lower approximation of `phi` whose gradient is `A_lambda`.
//! Separable potentials are solved nodewise by safeguarded Newton-bisection;
//! non-separable ones by a damped Newton iteration on the vector optimality
//! system.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::potentials::{solve_increasing, Potential, CURVATURE_CLAMP};
use crate::spaces::{pow_abs, signed_pow, DualField, Field};

/// Parameters of the regularization.
#[derive(Debug, Clone, Copy)]
pub struct YosidaConfig {
    pub lambda: f64,
    pub exponent_p: f64,
    pub inner_tol: f64,
    pub inner_max_iter: usize,
}

impl YosidaConfig {
    pub fn new(lambda: f64, exponent_p: f64) -> Result<Self> {
        if !lambda.is_finite() || lambda <= 0.0 {
            return Err(Error::ConfigInvalid {
                key: "lambda".into(),
                detail: format!("must be positive and finite, got {lambda}"),
            });
        }
        if !exponent_p.is_finite() || exponent_p <= 1.0 {
            return Err(Error::BadExponent {
                name: "resolvent p",
                value: exponent_p,
            });
        }
        Ok(Self {
            lambda,
            exponent_p,
            inner_tol: 1e-10,
            inner_max_iter: 100,
        })
    }
}

/// Resolvent `J u`; nodewise for separable potentials, damped vector Newton
/// otherwise.
pub fn resolvent(potential: &dyn Potential, u: &Field, cfg: &YosidaConfig) -> Result<Field> {
    match potential.nodewise() {
        Some(density) => {
            let lam = cfg.lambda;
            let pm1 = cfg.exponent_p - 1.0;
            let mut values = Vec::with_capacity(u.values.len());
            for (node, &s) in u.values.iter().enumerate() {
                let g = |r: f64| signed_pow((r - s) / lam, pm1) + density.derivative(r);
                let dg = |r: f64| {
                    pm1 * pow_abs((r - s) / lam, cfg.exponent_p - 2.0) / lam
                        + density.second_derivative(r)
                };
                let lo = s.min(0.0) - 1.0;
                let hi = s.max(0.0) + 1.0;
                let r = solve_increasing(&g, &dg, lo, hi, cfg.inner_tol, cfg.inner_max_iter)
                    .ok_or(Error::InnerSolveFailed {
                        node,
                        residual: f64::NAN,
                        iters: cfg.inner_max_iter,
                    })?;
                values.push(r);
            }
            Ok(Field { values })
        }
        None => resolvent_vector(potential, u, cfg),
    }
}

fn resolvent_vector(potential: &dyn Potential, u: &Field, cfg: &YosidaConfig) -> Result<Field> {
    let n = u.values.len();
    let lam = cfg.lambda;
    let pm1 = cfg.exponent_p - 1.0;
    let mut r = u.clone();
    let residual = |r: &Field| -> Result<DVector<f64>> {
        let g = potential.gradient(r)?;
        let mut res = DVector::zeros(n);
        for j in 0..n {
            res[j] = signed_pow((r.values[j] - u.values[j]) / lam, pm1) + g.values[j];
        }
        Ok(res)
    };
    let mut res = residual(&r)?;
    for iter in 0..cfg.inner_max_iter {
        let norm = res.amax();
        if norm <= cfg.inner_tol {
            return Ok(r);
        }
        let mut jac = potential.hessian(&r)?;
        for j in 0..n {
            let d = pm1 * pow_abs((r.values[j] - u.values[j]) / lam, cfg.exponent_p - 2.0) / lam;
            jac[(j, j)] += d.min(CURVATURE_CLAMP);
        }
        let step = jac.lu().solve(&res).ok_or(Error::NewtonFailed {
            step: iter,
            reason: "singular resolvent jacobian",
        })?;
        // Backtrack on the max-norm of the optimality residual.
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let mut trial = r.clone();
            for j in 0..n {
                trial.values[j] -= t * step[j];
            }
            let trial_res = residual(&trial)?;
            if trial_res.amax() < norm {
                r = trial;
                res = trial_res;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            return Err(Error::InnerSolveFailed {
                node: 0,
                residual: norm,
                iters: iter,
            });
        }
    }
    let norm = res.amax();
    if norm <= cfg.inner_tol {
        Ok(r)
    } else {
        Err(Error::InnerSolveFailed {
            node: 0,
            residual: norm,
            iters: cfg.inner_max_iter,
        })
    }
}

/// Regularized gradient `A_lambda(u) = rho_p((u - J u)/lambda)` as dual
/// densities.
pub fn yosida_gradient(
    potential: &dyn Potential,
    u: &Field,
    cfg: &YosidaConfig,
) -> Result<DualField> {
    let j = resolvent(potential, u, cfg)?;
    Ok(yosida_from_resolvent(u, &j, cfg))
}

/// `A_lambda` given an already-computed resolvent.
pub fn yosida_from_resolvent(u: &Field, j: &Field, cfg: &YosidaConfig) -> DualField {
    let pm1 = cfg.exponent_p - 1.0;
    DualField {
        values: u
            .values
            .iter()
            .zip(&j.values)
            .map(|(&s, &r)| signed_pow((s - r) / cfg.lambda, pm1))
            .collect(),
    }
}

/// Smoothed envelope value `phi_lambda(u)`.
pub fn moreau_envelope(potential: &dyn Potential, u: &Field, cfg: &YosidaConfig) -> Result<f64> {
    let j = resolvent(potential, u, cfg)?;
    let space = potential.space();
    let p = cfg.exponent_p;
    let mut fit = 0.0;
    for (i, (&s, &r)) in u.values.iter().zip(&j.values).enumerate() {
        fit += space.weight_at(i) * pow_abs((s - r) / cfg.lambda, p);
    }
    Ok(cfg.lambda / p * fit + potential.value(&j)?)
}

/// Diagonal derivative of `A_lambda` for separable potentials:
/// `A'(s) = q a''(r) / (q + a''(r))` with
/// `q = (p-1) |(r-s)/lambda|^{p-2} / lambda` at `r = J s`, clamped where
/// either factor is effectively infinite.
pub fn yosida_derivative(
    potential: &dyn Potential,
    u: &Field,
    cfg: &YosidaConfig,
) -> Result<Vec<f64>> {
    let density = potential.nodewise().ok_or(Error::NonSeparable {
        op: "regularized gradient derivative",
    })?;
    let j = resolvent(potential, u, cfg)?;
    let pm1 = cfg.exponent_p - 1.0;
    let mut out = Vec::with_capacity(u.values.len());
    for (&s, &r) in u.values.iter().zip(&j.values) {
        let q = pm1 * pow_abs((r - s) / cfg.lambda, cfg.exponent_p - 2.0) / cfg.lambda;
        let app = density.second_derivative(r);
        let d = if q >= CURVATURE_CLAMP || !q.is_finite() {
            app.min(CURVATURE_CLAMP)
        } else if app >= CURVATURE_CLAMP || !app.is_finite() {
            q.min(CURVATURE_CLAMP)
        } else if q + app == 0.0 {
            0.0
        } else {
            q * app / (q + app)
        };
        out.push(d);
    }
    Ok(out)
}

/// The envelope packaged as a smooth [`Potential`], so regularized concave
/// parts plug into the same solver interfaces as exact ones.
pub struct EnvelopePotential {
    inner: Arc<dyn Potential>,
    cfg: YosidaConfig,
}

impl EnvelopePotential {
    pub fn new(inner: Arc<dyn Potential>, cfg: YosidaConfig) -> Self {
        Self { inner, cfg }
    }

    pub fn config(&self) -> &YosidaConfig {
        &self.cfg
    }

    pub fn inner(&self) -> &Arc<dyn Potential> {
        &self.inner
    }
}

impl Potential for EnvelopePotential {
    fn space(&self) -> &Arc<crate::spaces::DiscreteSpace> {
        self.inner.space()
    }

    fn value(&self, u: &Field) -> Result<f64> {
        moreau_envelope(self.inner.as_ref(), u, &self.cfg)
    }

    fn gradient(&self, u: &Field) -> Result<DualField> {
        yosida_gradient(self.inner.as_ref(), u, &self.cfg)
    }

    fn hessian(&self, u: &Field) -> Result<DMatrix<f64>> {
        let diag = yosida_derivative(self.inner.as_ref(), u, &self.cfg)?;
        let n = diag.len();
        let mut h = DMatrix::zeros(n, n);
        for (i, d) in diag.into_iter().enumerate() {
            h[(i, i)] = d;
        }
        Ok(h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potentials::{make_power_energy, QuadraticFormEnergy};
    use crate::spaces::DiscreteSpace;

    fn point_space() -> Arc<DiscreteSpace> {
        Arc::new(DiscreteSpace::single_point(2.0, 2.0).unwrap())
    }

    #[test]
    fn quadratic_closed_forms() {
        // phi(s) = s^2/2, p = 2: J u = u/(1+lambda),
        // A_lambda(u) = u/(1+lambda), phi_lambda(u) = u^2 / (2(1+lambda)).
        let s = point_space();
        let phi = make_power_energy(s.clone(), 2.0, 1.0).unwrap();
        for lambda in [1e-1, 1e-2, 1.0] {
            let cfg = YosidaConfig::new(lambda, 2.0).unwrap();
            for uval in [-2.0, 0.0, 0.7, 3.5] {
                let u = s.field(vec![uval]).unwrap();
                let j = resolvent(phi.as_ref(), &u, &cfg).unwrap();
                assert!(
                    (j.values[0] - uval / (1.0 + lambda)).abs() < 1e-10,
                    "resolvent at u={uval} lambda={lambda}"
                );
                let a = yosida_gradient(phi.as_ref(), &u, &cfg).unwrap();
                assert!((a.values[0] - uval / (1.0 + lambda)).abs() < 1e-10);
                let env = moreau_envelope(phi.as_ref(), &u, &cfg).unwrap();
                assert!(
                    (env - uval * uval / (2.0 * (1.0 + lambda))).abs() < 1e-10,
                    "envelope at u={uval} lambda={lambda}"
                );
            }
        }
    }

    #[test]
    fn yosida_norm_identity() {
        // |A_lambda(u)|_{p'}^{p'} = |(u - Ju)/lambda|_p^p with weights.
        let s = Arc::new(DiscreteSpace::uniform_unit(5, 3.0, 2.0).unwrap());
        let phi = make_power_energy(s.clone(), 4.0, 1.0).unwrap();
        let cfg = YosidaConfig::new(0.1, 3.0).unwrap();
        let u = s.field(vec![1.0, -2.0, 0.3, 4.0, -0.7]).unwrap();
        let j = resolvent(phi.as_ref(), &u, &cfg).unwrap();
        let a = yosida_from_resolvent(&u, &j, &cfg);
        let q = 1.5; // conjugate of p = 3
        let lhs: f64 = a
            .values
            .iter()
            .enumerate()
            .map(|(i, &t)| s.weight_at(i) * pow_abs(t, q))
            .sum();
        let rhs: f64 = u
            .values
            .iter()
            .zip(&j.values)
            .enumerate()
            .map(|(i, (&s_, &r))| s.weight_at(i) * pow_abs((s_ - r) / 0.1, 3.0))
            .sum();
        assert!(
            (lhs - rhs).abs() <= 1e-8 * (1.0 + rhs),
            "identity: {lhs} vs {rhs}"
        );
    }

    #[test]
    fn envelope_matches_grid_search() {
        // phi_lambda(u) = min_r [ (lambda/p)|(u-r)/lambda|^p + a(r) ]
        // via brute-force scan, a(s) = |s|^4/4, p = 3.
        let s = point_space();
        let phi = make_power_energy(s.clone(), 4.0, 1.0).unwrap();
        let cfg = YosidaConfig::new(0.2, 3.0).unwrap();
        let uval = 1.7;
        let u = s.field(vec![uval]).unwrap();
        let env = moreau_envelope(phi.as_ref(), &u, &cfg).unwrap();
        let mut best = f64::INFINITY;
        let n = 20_000;
        for i in 0..=n {
            let r = uval - 5.0 + 10.0 * i as f64 / n as f64;
            let val = 0.2 / 3.0 * pow_abs((uval - r) / 0.2, 3.0) + pow_abs(r, 4.0) / 4.0;
            best = best.min(val);
        }
        assert!(
            (env - best).abs() < 1e-5,
            "envelope {env} vs grid minimum {best}"
        );
    }

    #[test]
    fn envelope_below_potential_and_monotone_in_lambda() {
        let s = Arc::new(DiscreteSpace::uniform_unit(4, 2.0, 2.0).unwrap());
        let phi = make_power_energy(s.clone(), 3.0, 2.0).unwrap();
        let u = s.field(vec![0.5, -1.5, 2.0, 0.0]).unwrap();
        let exact = phi.value(&u).unwrap();
        let mut prev = f64::NEG_INFINITY;
        for lambda in [1.0, 0.3, 0.1, 0.01] {
            let cfg = YosidaConfig::new(lambda, 2.0).unwrap();
            let env = moreau_envelope(phi.as_ref(), &u, &cfg).unwrap();
            assert!(env <= exact + 1e-12, "envelope above potential at {lambda}");
            assert!(env >= prev - 1e-12, "envelope not monotone at {lambda}");
            prev = env;
        }
    }

    #[test]
    fn envelope_gradient_matches_finite_differences() {
        let s = point_space();
        let phi = make_power_energy(s.clone(), 4.0, 1.0).unwrap();
        let cfg = YosidaConfig::new(0.15, 2.0).unwrap();
        for uval in [-1.2, 0.4, 2.0] {
            let h = 1e-6;
            let up = s.field(vec![uval + h]).unwrap();
            let dn = s.field(vec![uval - h]).unwrap();
            let fd = (moreau_envelope(phi.as_ref(), &up, &cfg).unwrap()
                - moreau_envelope(phi.as_ref(), &dn, &cfg).unwrap())
                / (2.0 * h);
            let u = s.field(vec![uval]).unwrap();
            let a = yosida_gradient(phi.as_ref(), &u, &cfg).unwrap();
            assert!(
                (fd - a.values[0]).abs() < 1e-6 * (1.0 + a.values[0].abs()),
                "gradient at {uval}: fd {fd} vs {}",
                a.values[0]
            );
        }
    }

    #[test]
    fn yosida_derivative_matches_finite_differences() {
        let s = point_space();
        let phi = make_power_energy(s.clone(), 4.0, 1.0).unwrap();
        let cfg = YosidaConfig::new(0.15, 2.0).unwrap();
        for uval in [-1.2, 0.4, 2.0] {
            let h = 1e-5;
            let up = s.field(vec![uval + h]).unwrap();
            let dn = s.field(vec![uval - h]).unwrap();
            let fd = (yosida_gradient(phi.as_ref(), &up, &cfg).unwrap().values[0]
                - yosida_gradient(phi.as_ref(), &dn, &cfg).unwrap().values[0])
                / (2.0 * h);
            let u = s.field(vec![uval]).unwrap();
            let d = yosida_derivative(phi.as_ref(), &u, &cfg).unwrap()[0];
            assert!(
                (fd - d).abs() < 1e-5 * (1.0 + d.abs()),
                "derivative at {uval}: fd {fd} vs {d}"
            );
        }
    }

    #[test]
    fn nonseparable_resolvent_matches_linear_solve() {
        // For phi(u) = 1/2 <K u, u> and p = 2 the resolvent solves
        // (I + lambda K) J = u.
        let s = Arc::new(DiscreteSpace::uniform_unit(3, 2.0, 2.0).unwrap());
        let mut k = DMatrix::zeros(3, 3);
        k[(0, 0)] = 2.0;
        k[(1, 1)] = 1.5;
        k[(2, 2)] = 3.0;
        k[(0, 1)] = 0.4;
        k[(1, 0)] = 0.4;
        let q = QuadraticFormEnergy::new(s.clone(), k.clone()).unwrap();
        let cfg = YosidaConfig::new(0.3, 2.0).unwrap();
        let u = s.field(vec![1.0, -2.0, 0.5]).unwrap();
        let j = resolvent(&q, &u, &cfg).unwrap();
        let sys = DMatrix::identity(3, 3) + 0.3 * &k;
        let want = sys
            .lu()
            .solve(&DVector::from_column_slice(&u.values))
            .unwrap();
        for i in 0..3 {
            assert!(
                (j.values[i] - want[i]).abs() < 1e-9,
                "component {i}: {} vs {}",
                j.values[i],
                want[i]
            );
        }
    }

    #[test]
    fn starved_iteration_budget_reported() {
        let s = point_space();
        let phi = make_power_energy(s.clone(), 4.0, 1.0).unwrap();
        let mut cfg = YosidaConfig::new(1.0, 3.0).unwrap();
        cfg.inner_tol = 1e-14;
        cfg.inner_max_iter = 1;
        let u = s.field(vec![3.0]).unwrap();
        assert!(matches!(
            resolvent(phi.as_ref(), &u, &cfg),
            Err(Error::InnerSolveFailed { .. })
        ));
    }

    #[test]
    fn envelope_potential_wraps_consistently() {
        let s = point_space();
        let phi = make_power_energy(s.clone(), 2.0, 1.0).unwrap();
        let cfg = YosidaConfig::new(0.5, 2.0).unwrap();
        let env = EnvelopePotential::new(phi, cfg);
        let u = s.field(vec![3.0]).unwrap();
        assert!((env.value(&u).unwrap() - 3.0).abs() < 1e-10);
        assert!((env.gradient(&u).unwrap().values[0] - 2.0).abs() < 1e-10);
        assert!((env.hessian(&u).unwrap()[(0, 0)] - 1.0 / 1.5).abs() < 1e-8);
    }
}
