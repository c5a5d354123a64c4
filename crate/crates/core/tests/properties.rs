use grushin_core::control::{catalog, CatalogOverrides};
use grushin_core::grid_pde::{discretize, solve_discounted, stationary_density};
use grushin_core::perturb::{solve_effective, SlowGrid};
use grushin_core::simulate::euler_step;
use grushin_core::{DynamicsSpec, Field, Grid2D, Point2};
use proptest::prelude::*;

fn odd(n: usize) -> usize {
    2 * n + 1
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn generator_is_monotone_and_kills_constants(alpha in 0.5f64..5.0, rho in 0.0f64..0.3, n in 5usize..15, c in -5.0f64..5.0) {
        let spec = DynamicsSpec::new(alpha, rho).unwrap();
        let grid = Grid2D::square(5.0 / alpha.sqrt(), odd(n)).unwrap();
        let gen = discretize(&spec, &grid).unwrap();
        prop_assert!(gen.min_coupling() >= 0.0);
        let lc = gen.apply(&Field::constant(grid, c));
        prop_assert!(lc.sup_norm() <= 1e-12 * (1.0 + c.abs()) * lc.values.len() as f64);
    }

    #[test]
    fn discounted_solutions_obey_the_maximum_principle(
        alpha in 0.7f64..4.0,
        delta in 0.005f64..1.0,
        a in -2.0f64..2.0,
        b in -2.0f64..2.0,
        k in 0.2f64..3.0,
    ) {
        let spec = DynamicsSpec::new(alpha, 0.0).unwrap();
        let grid = Grid2D::square(4.0, 21).unwrap();
        let gen = discretize(&spec, &grid).unwrap();
        let f = Field::from_fn(grid, |y| a * (k * y.y1).sin() + b * (y.y2 * y.y1).cos());
        let u = solve_discounted(&gen, delta, &f).unwrap();
        prop_assert!(delta * u.sup_norm() <= f.sup_norm() * (1.0 + 1e-10));
        prop_assert!(delta * u.max() <= f.max().max(0.0) + 1e-10 * f.sup_norm());
    }

    #[test]
    fn density_is_reflection_symmetric(alpha in 0.7f64..4.0, rho in 0.0f64..0.2, n in 6usize..12) {
        let spec = DynamicsSpec::new(alpha, rho).unwrap();
        let grid = Grid2D::square(5.0 / alpha.sqrt(), odd(n)).unwrap();
        let m = stationary_density(&discretize(&spec, &grid).unwrap()).unwrap();
        let (n1, n2) = (grid.n1(), grid.n2());
        let scale = m.max();
        for i in 0..n1 {
            for j in 0..n2 {
                prop_assert!((m.at(i, j) - m.at(n1 - 1 - i, j)).abs() <= 1e-9 * scale);
                prop_assert!((m.at(i, j) - m.at(i, n2 - 1 - j)).abs() <= 1e-9 * scale);
            }
        }
        prop_assert!((m.integral() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn euler_step_commutes_with_reflections(
        alpha in 0.5f64..4.0,
        rho in 0.0f64..0.5,
        y1 in -3.0f64..3.0,
        y2 in -3.0f64..3.0,
        w in prop::array::uniform3(-0.1f64..0.1),
    ) {
        let spec = DynamicsSpec::new(alpha, rho).unwrap();
        let dt = 1e-3;
        let base = euler_step(&spec, Point2::new(y1, y2), dt, w);
        let flip1 = euler_step(&spec, Point2::new(-y1, y2), dt, [-w[0], -w[1], w[2]]);
        let flip2 = euler_step(&spec, Point2::new(y1, -y2), dt, [w[0], -w[1], -w[2]]);
        prop_assert!((flip1.y1 + base.y1).abs() < 1e-14 && (flip1.y2 - base.y2).abs() < 1e-14);
        prop_assert!((flip2.y1 - base.y1).abs() < 1e-14 && (flip2.y2 + base.y2).abs() < 1e-14);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn effective_solution_shifts_with_the_terminal_datum(shift in 0.0f64..1.0, discount in 0.0f64..2.0) {
        let spec = DynamicsSpec::new(2.0, 0.0).unwrap();
        let fast = Grid2D::square(3.0, 15).unwrap();
        let m = stationary_density(&discretize(&spec, &fast).unwrap()).unwrap();
        let overrides = CatalogOverrides { discount: Some(discount), ..CatalogOverrides::default() };
        let prob = catalog("bench-A", &overrides).unwrap();
        let slow = SlowGrid { half_width: 3.0, count: 21, horizon: 1.0, n_steps: 100 };
        let base = solve_effective(&prob, &m, &slow).unwrap();
        // Same problem with g + shift: the answer moves by exactly
        // shift * (1 - a dt)^n in the discrete scheme.
        let g = prob.terminal.clone();
        let mut shifted = prob.clone();
        shifted.terminal = std::sync::Arc::new(move |x, y| g(x, y) + shift);
        let up = solve_effective(&shifted, &m, &slow).unwrap();
        for (n, (a, b)) in base.values.iter().zip(&up.values).enumerate() {
            let expect = shift * (1.0 - discount * slow.dt()).powi(n as i32);
            for (x, y) in a.iter().zip(b) {
                prop_assert!((y - x - expect).abs() < 1e-12);
            }
        }
    }
}
