//! Randomized structural invariants: norm/duality identities, convexity and
//! subgradient inequalities, envelope ordering, resolvent optimality, and
//! small algebraic contracts the solvers rely on.

use std::sync::Arc;

use proptest::prelude::*;

use wedflow::fixed_point::gronwall_bound;
use wedflow::moreau_yosida::{moreau_envelope, resolvent, YosidaConfig};
use wedflow::potentials::make_power_energy;
use wedflow::spaces::{DiscreteSpace, Field};
use wedflow::wed::{DofMask, TimeGrid};

fn space_with(nodes: usize, p: f64) -> Arc<DiscreteSpace> {
    if nodes == 1 {
        Arc::new(DiscreteSpace::single_point(p, 2.0).unwrap())
    } else {
        Arc::new(DiscreteSpace::uniform_unit(nodes, p, 2.0).unwrap())
    }
}

fn field_of(space: &Arc<DiscreteSpace>, values: Vec<f64>) -> Field {
    space.field(values).unwrap()
}

proptest! {
    /// `<F(u), u> = |u|_p^p = |F(u)|_{p'}^{p'}` for the p-modulus duality map.
    #[test]
    fn duality_pairing_identity(
        values in prop::collection::vec(-10.0f64..10.0, 1..7),
        p in 1.2f64..4.0,
    ) {
        let space = space_with(values.len(), p);
        let u = field_of(&space, values);
        let primal = space.norm_p(&u).unwrap().powf(p);
        prop_assume!(primal > 1e-8);
        let f = space.duality_map(&u, p).unwrap();
        let pair = space.pairing(&f, &u).unwrap();
        let dual = space.norm_dual(&f).unwrap().powf(space.conjugate_p());
        prop_assert!((pair - primal).abs() <= 1e-9 * primal,
            "pairing {pair} vs primal power {primal}");
        prop_assert!((dual - primal).abs() <= 1e-9 * primal,
            "dual power {dual} vs primal power {primal}");
    }

    /// Separable power energies are midpoint convex.
    #[test]
    fn power_energy_is_midpoint_convex(
        x in prop::collection::vec(-5.0f64..5.0, 3),
        y in prop::collection::vec(-5.0f64..5.0, 3),
        e in 1.5f64..3.5,
        c in 0.2f64..2.0,
    ) {
        let space = space_with(3, 2.0);
        let phi = make_power_energy(space.clone(), e, c).unwrap();
        let ux = field_of(&space, x);
        let uy = field_of(&space, y);
        let mid = ux.blend(0.5, &uy);
        let lhs = phi.value(&mid).unwrap();
        let rhs = 0.5 * (phi.value(&ux).unwrap() + phi.value(&uy).unwrap());
        prop_assert!(lhs <= rhs + 1e-10 * (1.0 + rhs.abs()),
            "midpoint value {lhs} above chord {rhs}");
    }

    /// Convex energies sit above their tangent planes.
    #[test]
    fn power_energy_obeys_subgradient_inequality(
        x in prop::collection::vec(-5.0f64..5.0, 3),
        y in prop::collection::vec(-5.0f64..5.0, 3),
        e in 1.5f64..3.5,
        c in 0.2f64..2.0,
    ) {
        let space = space_with(3, 2.0);
        let phi = make_power_energy(space.clone(), e, c).unwrap();
        let ux = field_of(&space, x);
        let uy = field_of(&space, y);
        let g = phi.gradient(&ux).unwrap();
        let diff = uy.axpy(-1.0, &ux);
        let lhs = phi.value(&uy).unwrap();
        let rhs = phi.value(&ux).unwrap() + space.pairing(&g, &diff).unwrap();
        prop_assert!(lhs >= rhs - 1e-9 * (1.0 + lhs.abs() + rhs.abs()),
            "tangent plane {rhs} above value {lhs}");
    }

    /// The regularized value sits below the original and decreases in lambda.
    #[test]
    fn envelope_is_below_and_monotone_in_lambda(
        values in prop::collection::vec(-3.0f64..3.0, 3),
        e in 1.6f64..3.0,
        lam_lo in 0.05f64..0.3,
        bump in 1.5f64..4.0,
        p in prop::sample::select(vec![1.5f64, 2.0, 3.0]),
    ) {
        let space = space_with(3, p);
        let phi = make_power_energy(space.clone(), e, 1.0).unwrap();
        let u = field_of(&space, values);
        let raw = phi.value(&u).unwrap();
        let lam_hi = lam_lo * bump;
        let env_lo = moreau_envelope(phi.as_ref(), &u, &YosidaConfig::new(lam_lo, p).unwrap()).unwrap();
        let env_hi = moreau_envelope(phi.as_ref(), &u, &YosidaConfig::new(lam_hi, p).unwrap()).unwrap();
        let slack = 1e-8 * (1.0 + raw.abs());
        prop_assert!(env_lo <= raw + slack, "envelope {env_lo} above value {raw}");
        prop_assert!(env_hi <= env_lo + slack,
            "stronger regularization raised the value: {env_lo} -> {env_hi}");
    }

    /// First-order optimality of the resolvent: the duality image of the
    /// regularization rate matches the gradient at the resolvent point.
    #[test]
    fn resolvent_satisfies_first_order_optimality(
        values in prop::collection::vec(-3.0f64..3.0, 3),
        e in 1.8f64..3.0,
        lam in 0.05f64..0.5,
        p in prop::sample::select(vec![1.5f64, 2.0, 3.0]),
    ) {
        let space = space_with(3, p);
        let phi = make_power_energy(space.clone(), e, 1.0).unwrap();
        let u = field_of(&space, values);
        let cfg = YosidaConfig::new(lam, p).unwrap();
        let j = resolvent(phi.as_ref(), &u, &cfg).unwrap();
        let rate = Field {
            values: u.values
                .iter()
                .zip(&j.values)
                .map(|(&a, &b)| (a - b) / lam)
                .collect(),
        };
        let lhs = space.duality_map(&rate, p).unwrap();
        let rhs = phi.gradient(&j).unwrap();
        let gap = space.norm_dual(&lhs.axpy(-1.0, &rhs)).unwrap();
        let scale = 1.0 + space.norm_dual(&rhs).unwrap();
        prop_assert!(gap <= 1e-6 * scale, "optimality gap {gap} vs scale {scale}");
    }

    /// The extremal sequence saturating the discrete integral hypothesis is
    /// accepted by the exponential-bound check.
    #[test]
    fn gronwall_accepts_extremal_sequences(
        alphas in prop::collection::vec(0.1f64..5.0, 2..30),
        b in 0.0f64..4.0,
        tau in 0.01f64..0.5,
    ) {
        let mut u = Vec::with_capacity(alphas.len());
        let mut acc = 0.0;
        for &a in &alphas {
            let ui = a + b * acc;
            u.push(ui);
            acc += tau * ui;
        }
        prop_assert!(gronwall_bound(&alphas, b, &u, tau),
            "extremal sequence rejected: alphas {alphas:?}, b {b}, tau {tau}");
    }

    /// Grid times are the affine images of the step index.
    #[test]
    fn grid_times_are_affine(
        t_final in 0.01f64..10.0,
        n in 2usize..500,
    ) {
        let grid = TimeGrid::new(t_final, n).unwrap();
        let tau = grid.tau();
        for k in 0..=n {
            let t = grid.time(k);
            prop_assert!((t - k as f64 * tau).abs() <= 1e-12 * (1.0 + t.abs()));
        }
        prop_assert!((grid.time(n) - t_final).abs() <= 1e-12 * (1.0 + t_final));
    }

    /// Projecting a dual field onto the free set is idempotent.
    #[test]
    fn mask_projection_is_idempotent(
        free in prop::collection::vec(any::<bool>(), 1..9),
        seedvals in prop::collection::vec(-4.0f64..4.0, 9),
    ) {
        let n = free.len();
        let mask = DofMask::from_free(free.clone());
        let space = space_with(n, 2.0);
        let mut d = space.duality_map(&field_of(&space, seedvals[..n].to_vec()), 2.0).unwrap();
        mask.project_dual(&mut d);
        let once = d.clone();
        mask.project_dual(&mut d);
        prop_assert_eq!(&once, &d);
        for (j, &is_free) in free.iter().enumerate() {
            if !is_free {
                prop_assert_eq!(once.values[j], 0.0);
            }
        }
    }

    /// `blend` interpolates linearly between its endpoints.
    #[test]
    fn blend_is_affine_interpolation(
        a in prop::collection::vec(-4.0f64..4.0, 4),
        bvals in prop::collection::vec(-4.0f64..4.0, 4),
        theta in 0.0f64..1.0,
    ) {
        let space = space_with(4, 2.0);
        let ua = field_of(&space, a);
        let ub = field_of(&space, bvals);
        let mix = ua.blend(theta, &ub);
        for j in 0..4 {
            let want = (1.0 - theta) * ua.values[j] + theta * ub.values[j];
            prop_assert!((mix.values[j] - want).abs() <= 1e-12 * (1.0 + want.abs()));
        }
        let full = ua.blend(1.0, &ub);
        prop_assert_eq!(&full.values, &ub.values);
    }
}
