//! Discrete function spaces on the unit interval.
//!
//! A [`DiscreteSpace`] carries a 1-D nodal grid with quadrature weights, a
//! component count `k` for stacked systems, and two exponents: `p` for the
//! ambient Lebesgue space `V = (L^p)^k` and `m` for the stronger Sobolev space
//! `X = (W^{1,m})^k`. Fields store nodal values component-major; dual fields
//! store nodal densities, so quadrature weights live in the pairing
//! `<xi, u> = sum_j w_j xi_j u_j` and never inside field values.
//!
//! The `p`-modulus duality map `F = d(|.|_V^p / p)` acts nodewise,
//! `F(u)_j = |u_j|^{p-2} u_j`, and satisfies the exact relations
//! `<F(u), u> = |u|_V^p = |F(u)|_{V*}^{p'}` used as invariants throughout.

use std::sync::Arc;

use crate::error::{Error, Result};

/// `|x|^e` with fast paths for the common integer exponents.
#[inline]
pub(crate) fn pow_abs(x: f64, e: f64) -> f64 {
    let a = x.abs();
    if e == 2.0 {
        a * a
    } else if e == 1.0 {
        a
    } else {
        a.powf(e)
    }
}

/// Signed power `sign(x) |x|^e`, continuous at zero for `e > 0`.
#[inline]
pub(crate) fn signed_pow(x: f64, e: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else if x > 0.0 {
        pow_abs(x, e)
    } else {
        -pow_abs(x, e)
    }
}

fn check_exponent(name: &'static str, value: f64) -> Result<()> {
    if !value.is_finite() || value <= 1.0 {
        return Err(Error::BadExponent { name, value });
    }
    Ok(())
}

/// A 1-D nodal grid with quadrature weights and the space exponents.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteSpace {
    coords: Vec<f64>,
    weights: Vec<f64>,
    components: usize,
    exponent_p: f64,
    exponent_m: f64,
}

impl DiscreteSpace {
    /// Uniform grid of `m_nodes >= 2` nodes on `[0, 1]` with trapezoid
    /// weights (they sum to the domain measure 1).
    pub fn uniform_unit(m_nodes: usize, exponent_p: f64, exponent_m: f64) -> Result<Self> {
        check_exponent("p", exponent_p)?;
        check_exponent("m", exponent_m)?;
        if m_nodes < 2 {
            return Err(Error::GridTooSmall {
                nodes: m_nodes,
                required: 2,
            });
        }
        let h = 1.0 / (m_nodes - 1) as f64;
        let coords = (0..m_nodes).map(|j| j as f64 * h).collect();
        let mut weights = vec![h; m_nodes];
        weights[0] = 0.5 * h;
        weights[m_nodes - 1] = 0.5 * h;
        Ok(Self {
            coords,
            weights,
            components: 1,
            exponent_p,
            exponent_m,
        })
    }

    /// Degenerate single-node space (weight 1); models scalar ODE demos.
    pub fn single_point(exponent_p: f64, exponent_m: f64) -> Result<Self> {
        check_exponent("p", exponent_p)?;
        check_exponent("m", exponent_m)?;
        Ok(Self {
            coords: vec![0.0],
            weights: vec![1.0],
            components: 1,
            exponent_p,
            exponent_m,
        })
    }

    /// Same grid with `k` stacked components; per-component norms are summed
    /// in the `p`-th (resp. `m`-th) power.
    pub fn with_components(mut self, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::BadBounds {
                name: "components",
                detail: "component count must be positive".into(),
            });
        }
        self.components = k;
        Ok(self)
    }

    pub fn m_nodes(&self) -> usize {
        self.coords.len()
    }

    pub fn components(&self) -> usize {
        self.components
    }

    /// Total degrees of freedom, `k * m_nodes`.
    pub fn dim(&self) -> usize {
        self.components * self.coords.len()
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Uniform spacing; errors on the single-node space.
    pub fn spacing(&self) -> Result<f64> {
        if self.coords.len() < 2 {
            return Err(Error::GridTooSmall {
                nodes: self.coords.len(),
                required: 2,
            });
        }
        Ok(self.coords[1] - self.coords[0])
    }

    pub fn exponent_p(&self) -> f64 {
        self.exponent_p
    }

    pub fn exponent_m(&self) -> f64 {
        self.exponent_m
    }

    /// Conjugate exponent `p' = p / (p - 1)`.
    pub fn conjugate_p(&self) -> f64 {
        self.exponent_p / (self.exponent_p - 1.0)
    }

    /// Quadrature weight of flat index `i` (weights tile across components).
    #[inline]
    pub fn weight_at(&self, i: usize) -> f64 {
        self.weights[i % self.coords.len()]
    }

    fn check_len(&self, op: &'static str, len: usize) -> Result<()> {
        if len != self.dim() {
            return Err(Error::DimensionMismatch {
                op,
                expected: self.dim(),
                got: len,
            });
        }
        Ok(())
    }

    /// `|u|_V = (sum_j w_j |u_j|^p)^{1/p}` over all components.
    pub fn norm_p(&self, u: &Field) -> Result<f64> {
        self.check_len("norm_p", u.values.len())?;
        let p = self.exponent_p;
        let mut acc = 0.0;
        for (i, &v) in u.values.iter().enumerate() {
            acc += self.weight_at(i) * pow_abs(v, p);
        }
        Ok(acc.powf(1.0 / p))
    }

    /// `W^{1,m}`-type norm `(|u|_m^m + |Du|_m^m)^{1/m}` with forward
    /// differences on cells (cell measure = spacing).
    pub fn norm_sobolev_m(&self, u: &Field) -> Result<f64> {
        self.check_len("norm_sobolev_m", u.values.len())?;
        let h = self.spacing()?;
        let m = self.exponent_m;
        let nodes = self.coords.len();
        let mut acc = 0.0;
        for (i, &v) in u.values.iter().enumerate() {
            acc += self.weight_at(i) * pow_abs(v, m);
        }
        for c in 0..self.components {
            let comp = &u.values[c * nodes..(c + 1) * nodes];
            for j in 0..nodes - 1 {
                let d = (comp[j + 1] - comp[j]) / h;
                acc += h * pow_abs(d, m);
            }
        }
        Ok(acc.powf(1.0 / m))
    }

    /// Dual norm `|xi|_{V*} = (sum_j w_j |xi_j|^{p'})^{1/p'}`.
    pub fn norm_dual(&self, xi: &DualField) -> Result<f64> {
        self.check_len("norm_dual", xi.values.len())?;
        let q = self.conjugate_p();
        let mut acc = 0.0;
        for (i, &v) in xi.values.iter().enumerate() {
            acc += self.weight_at(i) * pow_abs(v, q);
        }
        Ok(acc.powf(1.0 / q))
    }

    /// Duality pairing `<xi, u> = sum_j w_j xi_j u_j`.
    pub fn pairing(&self, xi: &DualField, u: &Field) -> Result<f64> {
        self.check_len("pairing", u.values.len())?;
        self.check_len("pairing", xi.values.len())?;
        let mut acc = 0.0;
        for i in 0..u.values.len() {
            acc += self.weight_at(i) * xi.values[i] * u.values[i];
        }
        Ok(acc)
    }

    /// Nodewise `p`-modulus duality map `F(u)_j = |u_j|^{e-2} u_j` for the
    /// given exponent `e > 1`. With `e = p` this is the subdifferential of
    /// `|.|_V^p / p` and satisfies `<F(u), u> = |u|_V^p = |F(u)|_{V*}^{p'}`.
    pub fn duality_map(&self, u: &Field, exponent: f64) -> Result<DualField> {
        check_exponent("duality exponent", exponent)?;
        self.check_len("duality_map", u.values.len())?;
        let values = u
            .values
            .iter()
            .map(|&v| signed_pow(v, exponent - 1.0))
            .collect();
        Ok(DualField { values })
    }

    /// Builds a field after checking its length.
    pub fn field(self: &Arc<Self>, values: Vec<f64>) -> Result<Field> {
        self.check_len("field", values.len())?;
        Ok(Field { values })
    }

    /// Zero field of the right dimension.
    pub fn zero_field(&self) -> Field {
        Field {
            values: vec![0.0; self.dim()],
        }
    }

    /// Zero dual field of the right dimension.
    pub fn zero_dual(&self) -> DualField {
        DualField {
            values: vec![0.0; self.dim()],
        }
    }

    /// Field from a function of (component, coordinate).
    pub fn field_from_fn(self: &Arc<Self>, f: impl Fn(usize, f64) -> f64) -> Field {
        let nodes = self.coords.len();
        let mut values = Vec::with_capacity(self.dim());
        for c in 0..self.components {
            for j in 0..nodes {
                values.push(f(c, self.coords[j]));
            }
        }
        Field { values }
    }
}

/// Nodal values of a function in `V` (component-major layout).
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    pub values: Vec<f64>,
}

impl Field {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `self + s * other`, elementwise.
    pub fn axpy(&self, s: f64, other: &Field) -> Field {
        Field {
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a + s * b)
                .collect(),
        }
    }

    /// Convex-type combination `(1 - theta) self + theta other`.
    pub fn blend(&self, theta: f64, other: &Field) -> Field {
        Field {
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| (1.0 - theta) * a + theta * b)
                .collect(),
        }
    }
}

/// Nodal densities of a functional in `V*` (component-major layout).
#[derive(Debug, Clone, PartialEq)]
pub struct DualField {
    pub values: Vec<f64>,
}

impl DualField {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn axpy(&self, s: f64, other: &DualField) -> DualField {
        DualField {
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a + s * b)
                .collect(),
        }
    }

    pub fn blend(&self, theta: f64, other: &DualField) -> DualField {
        DualField {
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| (1.0 - theta) * a + theta * b)
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn space(m: usize, p: f64) -> Arc<DiscreteSpace> {
        Arc::new(DiscreteSpace::uniform_unit(m, p, 2.0).unwrap())
    }

    #[test]
    fn trapezoid_weights_sum_to_measure() {
        for m in [2, 3, 5, 64, 65, 641] {
            let s = DiscreteSpace::uniform_unit(m, 2.0, 2.0).unwrap();
            let total: f64 = s.weights().iter().sum();
            assert!(
                (total - 1.0).abs() <= 1e-14,
                "weights for {m} nodes sum to {total}"
            );
        }
        let s2 = DiscreteSpace::uniform_unit(2, 2.0, 2.0).unwrap();
        assert_eq!(s2.weights(), &[0.5, 0.5]);
    }

    #[test]
    fn norm_p_hand_values() {
        // 3 nodes, weights (0.25, 0.5, 0.25), u = (1, 2, 3):
        // |u|_2^2 = 0.25 + 2 + 2.25 = 4.5.
        let s = space(3, 2.0);
        let u = s.field(vec![1.0, 2.0, 3.0]).unwrap();
        assert!((s.norm_p(&u).unwrap() - 4.5_f64.sqrt()).abs() < 1e-15);
        // Constant field has unit L^p norm for every p (weights sum to 1).
        for p in [1.5, 2.0, 3.0, 4.0] {
            let sp = space(7, p);
            let one = sp.field(vec![1.0; 7]).unwrap();
            assert!((sp.norm_p(&one).unwrap() - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn sobolev_norm_hand_value() {
        // u = (1,2,3) on 3 nodes, h = 0.5: |u|_2^2 = 4.5,
        // |Du|_2^2 = 0.5 * 2^2 + 0.5 * 2^2 = 4, norm = sqrt(8.5).
        let s = space(3, 2.0);
        let u = s.field(vec![1.0, 2.0, 3.0]).unwrap();
        assert!((s.norm_sobolev_m(&u).unwrap() - 8.5_f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn sobolev_norm_needs_a_grid() {
        let s = Arc::new(DiscreteSpace::single_point(2.0, 2.0).unwrap());
        let u = s.field(vec![1.0]).unwrap();
        match s.norm_sobolev_m(&u) {
            Err(Error::GridTooSmall { nodes: 1, .. }) => {}
            other => panic!("expected GridTooSmall, got {other:?}"),
        }
    }

    #[test]
    fn bad_exponents_rejected() {
        assert!(matches!(
            DiscreteSpace::uniform_unit(4, 1.0, 2.0),
            Err(Error::BadExponent { .. })
        ));
        assert!(matches!(
            DiscreteSpace::uniform_unit(4, 2.0, 0.5),
            Err(Error::BadExponent { .. })
        ));
        let s = space(4, 2.0);
        let u = s.zero_field();
        assert!(matches!(
            s.duality_map(&u, 1.0),
            Err(Error::BadExponent { .. })
        ));
    }

    #[test]
    fn duality_map_single_node_example() {
        // Single node, weight 1, u = 2, exponent 4: F(u) = |2|^2 * 2 = 8,
        // <F(u), u> = 16 = |u|_V^4.
        let s = Arc::new(DiscreteSpace::single_point(4.0, 2.0).unwrap());
        let u = s.field(vec![2.0]).unwrap();
        let xi = s.duality_map(&u, 4.0).unwrap();
        assert_eq!(xi.values, vec![8.0]);
        assert!((s.pairing(&xi, &u).unwrap() - 16.0).abs() < 1e-15);
        let norm = s.norm_p(&u).unwrap();
        assert!((norm.powi(4) - 16.0).abs() < 1e-12);
    }

    #[test]
    fn duality_identity_various_p() {
        for p in [1.5, 2.0, 2.5, 3.0, 4.0] {
            let s = space(6, p);
            let u = s.field(vec![0.3, -1.2, 0.0, 2.4, -0.7, 1.1]).unwrap();
            let f = s.duality_map(&u, p).unwrap();
            let lhs = s.pairing(&f, &u).unwrap();
            let norm_p_pow = s.norm_p(&u).unwrap().powf(p);
            let dual_pow = s.norm_dual(&f).unwrap().powf(s.conjugate_p());
            let scale = norm_p_pow.abs().max(1e-300);
            assert!(
                ((lhs - norm_p_pow) / scale).abs() < 1e-12,
                "pairing identity failed at p={p}"
            );
            assert!(
                ((dual_pow - norm_p_pow) / scale).abs() < 1e-10,
                "dual norm identity failed at p={p}"
            );
        }
    }

    #[test]
    fn duality_map_homogeneity() {
        let s = space(5, 3.0);
        let u = s.field(vec![0.5, -1.5, 2.0, 0.0, -0.25]).unwrap();
        for sc in [-2.0, -0.5, 0.0, 0.7, 3.0] {
            let su = s.field(u.values.iter().map(|v| sc * v).collect()).unwrap();
            let lhs = s.duality_map(&su, 3.0).unwrap();
            let f = s.duality_map(&u, 3.0).unwrap();
            let factor = signed_pow(sc, 2.0); // |s|^{p-2} s with p = 3
            for (l, r) in lhs.values.iter().zip(&f.values) {
                let rr = factor * r;
                assert!(
                    (l - rr).abs() <= 1e-14 * rr.abs().max(1.0),
                    "homogeneity failed: {l} vs {rr}"
                );
            }
        }
    }

    #[test]
    fn stacked_components_tile_weights() {
        let s = Arc::new(
            DiscreteSpace::uniform_unit(3, 2.0, 2.0)
                .unwrap()
                .with_components(2)
                .unwrap(),
        );
        assert_eq!(s.dim(), 6);
        let u = s.field(vec![1.0, 1.0, 1.0, 1.0, 1.0, 1.0]).unwrap();
        // Two unit components: |u|_2^2 = 1 + 1 = 2.
        assert!((s.norm_p(&u).unwrap() - 2.0_f64.sqrt()).abs() < 1e-14);
        let f = s.duality_map(&u, 2.0).unwrap();
        assert!((s.pairing(&f, &u).unwrap() - 2.0).abs() < 1e-14);
    }

    #[test]
    fn dimension_mismatch_detected() {
        let s = space(4, 2.0);
        let u = Field {
            values: vec![1.0; 3],
        };
        assert!(matches!(s.norm_p(&u), Err(Error::DimensionMismatch { .. })));
    }
}
