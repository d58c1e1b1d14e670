mod common;

use common::sv;
use mixvar::grid::APolynomial;
use mixvar::smoothness::{kernel_monomials, Rect};
use mixvar::solver::{solve_dirichlet, Datum, DirichletProblem, SolveOptions};
use mixvar::youngmeasure::{decompose, empirical_measure, moments, sliced_w1, DecomposeOptions};
use mixvar::{builtin, Grid, GridField, IntegrandSpec};
use proptest::prelude::*;

fn field(grid: &Grid, values: &[f64]) -> GridField {
    let mut f = GridField::from_values(grid.clone(), 1, values[..grid.num_nodes()].to_vec()).unwrap();
    f.clear_collar();
    f
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn zero_boundary_measures_are_centred(values in prop::collection::vec(-5.0f64..5.0, 11 * 13)) {
        let grid = Grid::new(sv(&[1, 2]), Rect::cube(2), vec![11, 13]).unwrap();
        let d = field(&grid, &values).a_gradient().unwrap();
        let nu = empirical_measure(&d);
        prop_assert!((nu.weights.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        let (bary, _) = moments(&nu, 2.0);
        let scale = d.l1_sum() / d.num_nodes() as f64;
        prop_assert!(bary.iter().all(|b| b.abs() <= 1e-12 * (scale + f64::MIN_POSITIVE)));
    }

    #[test]
    fn kernel_shifts_leave_gradients(values in prop::collection::vec(-1.0f64..1.0, 9 * 9), c in -3.0f64..3.0) {
        let a = sv(&[2, 2]);
        let grid = Grid::cube(a.clone(), 9).unwrap();
        let u = GridField::from_values(grid.clone(), 1, values).unwrap();
        let mut shifted = u.clone();
        for gamma in kernel_monomials(&a) {
            let p = APolynomial::new(1, vec![0.0, 0.0], vec![(gamma, vec![c])]).unwrap();
            shifted.axpy(1.0, &p.to_field(&grid));
        }
        let (d0, d1) = (u.a_gradient().unwrap(), shifted.a_gradient().unwrap());
        for (x, y) in d0.values().iter().zip(d1.values()) {
            prop_assert!((x - y).abs() <= 1e-9 * (1.0 + x.abs()));
        }
    }

    #[test]
    fn decomposition_recombines(values in prop::collection::vec(-2.0f64..2.0, 2 * 9 * 9)) {
        let grid = Grid::cube(sv(&[1, 2]), 9).unwrap();
        let fields = vec![field(&grid, &values[..81]), field(&grid, &values[81..])];
        let dec = decompose(&fields, &DecomposeOptions::default()).unwrap();
        for (k, u) in fields.iter().enumerate() {
            let v = u.full_gradient().unwrap();
            let sum = dec.oscillation[k].full_gradient().unwrap().add(&dec.concentration[k]);
            for (x, y) in sum.values().iter().zip(v.values()) {
                prop_assert!((x - y).abs() <= 1e-10 * (1.0 + y.abs()));
            }
            prop_assert!(dec.oscillation[k].is_zero_boundary());
        }
    }

    #[test]
    fn sliced_distance_is_symmetric(values in prop::collection::vec(-2.0f64..2.0, 2 * 9 * 9)) {
        let grid = Grid::cube(sv(&[1, 2]), 9).unwrap();
        let mu = empirical_measure(&field(&grid, &values[..81]).a_gradient().unwrap());
        let nu = empirical_measure(&field(&grid, &values[81..]).a_gradient().unwrap());
        let (d1, d2) = (sliced_w1(&mu, &nu, 32, 5).unwrap(), sliced_w1(&nu, &mu, 32, 5).unwrap());
        prop_assert!((d1 - d2).abs() <= 1e-12 * (1.0 + d1));
        prop_assert_eq!(sliced_w1(&mu, &mu, 32, 5).unwrap(), 0.0);
    }

    #[test]
    fn solver_traces_decrease_and_pin_the_collar(values in prop::collection::vec(-1.0f64..1.0, 9 * 11)) {
        let grid = Grid::new(sv(&[1, 2]), Rect::cube(2), vec![9, 11]).unwrap();
        let g = GridField::from_values(grid, 1, values).unwrap();
        let prob = DirichletProblem {
            a: sv(&[1, 2]),
            domain: Rect::cube(2),
            integrand: builtin(&IntegrandSpec::Pnorm { p: 3.0 }, 1, 2).unwrap(),
            datum: Datum::Field(g.clone()),
            p: 3.0,
            resolution: vec![9, 11],
        };
        let sol = solve_dirichlet(&prob, &SolveOptions { restarts: 1, ..Default::default() }).unwrap();
        for w in sol.trace.energies.windows(2) {
            prop_assert!(w[1] <= w[0]);
        }
        let grid = sol.u.grid().clone();
        for node in (0..grid.num_nodes()).filter(|&k| grid.is_collar(k)) {
            prop_assert_eq!(sol.u.at(node), g.at(node));
        }
    }
}
