mod common;

use common::{double_well_1d, pantographic_oracle, sv};
use mixvar::envelope::{tabulate_envelope, EnvelopeOptions, Lattice};
use mixvar::grid::APolynomial;
use mixvar::smoothness::{kernel_monomials, MultiIndex, Rect};
use mixvar::solver::{relax_compare, solve_dirichlet, Datum, DirichletProblem, RelaxOptions, SolveOptions};
use mixvar::{builtin, Grid, GridField, IntegrandSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn poly(terms: &[(&[u32], f64)]) -> APolynomial {
    let dim = terms[0].0.len();
    APolynomial::new(1, vec![0.0; dim], terms.iter().map(|(g, c)| (MultiIndex(g.to_vec()), vec![*c])).collect())
        .unwrap()
}

#[test]
fn convex_quadratic_keeps_affine_datum() {
    let a = sv(&[1, 2]);
    let f = builtin(&IntegrandSpec::Quadratic { matrix: vec![vec![2.0, 0.5], vec![0.5, 1.0]] }, 1, 2).unwrap();
    let domain = Rect::new(vec![0.0, 0.0], vec![1.5, 2.0]).unwrap();
    let datum = poly(&[(&[1, 0], 0.7), (&[0, 2], -0.4), (&[0, 1], 3.0)]);
    let x = [0.7, -0.8];
    let prob = DirichletProblem {
        a,
        domain: domain.clone(),
        integrand: f.clone(),
        datum: Datum::Polynomial(datum),
        p: 2.0,
        resolution: vec![13, 17],
    };
    let opts = SolveOptions { restarts: 2, ..Default::default() };
    let sol = solve_dirichlet(&prob, &opts).unwrap();
    let expected = domain.volume() * f.eval(&x);
    assert!((sol.energy - expected).abs() <= 1e-10 * expected, "{} vs {expected}", sol.energy);
    let g = prob.datum_on(sol.u.grid()).unwrap();
    for (u, g) in sol.u.values().iter().zip(g.values()) {
        assert!((u - g).abs() <= 1e-8 * (1.0 + g.abs()));
    }
}

fn random_datum(grid: &Grid, seed: u64) -> GridField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = (0..grid.num_nodes()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    GridField::from_values(grid.clone(), 1, values).unwrap()
}

#[test]
fn pantographic_matches_linear_solve() {
    let a = sv(&[1, 2]);
    let domain = Rect::new(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap();
    let grid = Grid::new(a.clone(), domain.clone(), vec![17, 17]).unwrap();
    let g = random_datum(&grid, 11);
    let prob = DirichletProblem {
        a,
        domain,
        integrand: builtin(&IntegrandSpec::Pantographic, 1, 2).unwrap(),
        datum: Datum::Field(g.clone()),
        p: 2.0,
        resolution: vec![17, 17],
    };
    let sol = solve_dirichlet(&prob, &SolveOptions::default()).unwrap();
    let oracle = pantographic_oracle(g.values(), 17, 17, 1.0, 1.0);
    assert!((sol.energy - oracle).abs() <= 1e-8 * oracle, "{} vs {oracle}", sol.energy);
    // Collar is pinned bit-exactly.
    for node in 0..grid.num_nodes() {
        if grid.is_collar(node) {
            assert_eq!(sol.u.at(node), g.at(node));
        }
    }
    for w in sol.trace.energies.windows(2) {
        assert!(w[1] <= w[0]);
    }
}

#[test]
fn constant_energy_is_volume_times_c() {
    let prob = DirichletProblem {
        a: sv(&[2]),
        domain: Rect::new(vec![-1.0], vec![2.0]).unwrap(),
        integrand: builtin(&IntegrandSpec::Constant { c: 0.25 }, 1, 1).unwrap(),
        datum: Datum::Polynomial(poly(&[(&[2], 1.0), (&[0], -3.0)])),
        p: 2.0,
        resolution: vec![21],
    };
    let sol = solve_dirichlet(&prob, &SolveOptions::default()).unwrap();
    assert!((sol.energy - 0.75).abs() < 1e-14);
    assert_eq!(sol.trace.iterations, 0);
}

#[test]
fn kernel_polynomials_do_not_change_the_energy() {
    let a = sv(&[1, 2]);
    let domain = Rect::cube(2);
    let grid = Grid::new(a.clone(), domain.clone(), vec![9, 11]).unwrap();
    let base = random_datum(&grid, 3);
    let f = builtin(&IntegrandSpec::Pnorm { p: 3.0 }, 1, 2).unwrap();
    let solve = |g: GridField| {
        let prob = DirichletProblem {
            a: a.clone(),
            domain: domain.clone(),
            integrand: f.clone(),
            datum: Datum::Field(g),
            p: 3.0,
            resolution: vec![9, 11],
        };
        solve_dirichlet(&prob, &SolveOptions::default()).unwrap().energy
    };
    let e0 = solve(base.clone());
    let kernel = kernel_monomials(&a);
    assert!(!kernel.is_empty());
    let mut shifted = base.clone();
    for (k, gamma) in kernel.iter().enumerate() {
        let p = APolynomial::new(1, vec![0.0, 0.0], vec![(gamma.clone(), vec![1.5 - k as f64])]).unwrap();
        shifted.axpy(1.0, &p.to_field(&grid));
    }
    let e1 = solve(shifted);
    assert!((e0 - e1).abs() <= 1e-9 * (1.0 + e0.abs()), "{e0} vs {e1}");
}

#[test]
fn datum_outside_lower_set_is_rejected() {
    let prob = DirichletProblem {
        a: sv(&[1, 2]),
        domain: Rect::cube(2),
        integrand: builtin(&IntegrandSpec::Pnorm { p: 2.0 }, 1, 2).unwrap(),
        datum: Datum::Polynomial(poly(&[(&[1, 1], 1.0)])),
        p: 2.0,
        resolution: vec![9, 9],
    };
    assert!(solve_dirichlet(&prob, &SolveOptions::default()).is_err());
}

#[test]
fn barrier_start_is_reported() {
    let wall = mixvar::Integrand::from_fn(
        "wall",
        1,
        1,
        |v| if v[0].abs() > 1.0 { f64::INFINITY } else { v[0] * v[0] },
        None,
        mixvar::Growth::upper(2.0, 1.0),
    );
    let prob = DirichletProblem {
        a: sv(&[2]),
        domain: Rect::cube(1),
        integrand: wall,
        datum: Datum::Polynomial(poly(&[(&[2], 2.0)])),
        p: 2.0,
        resolution: vec![17],
    };
    let err = solve_dirichlet(&prob, &SolveOptions::default()).unwrap_err();
    assert!(err.to_string().contains("restart"), "{err}");
}

#[test]
fn convex_relaxation_has_no_gap() {
    let a = sv(&[2]);
    let f = builtin(&IntegrandSpec::Pnorm { p: 2.0 }, 1, 1).unwrap();
    let lattice = Lattice::new(vec![-3.0], vec![3.0], vec![13]).unwrap();
    let table =
        tabulate_envelope(&f, &a, &lattice, &EnvelopeOptions { resolution: 17, multistart: 2, ..Default::default() })
            .unwrap();
    let prob = DirichletProblem {
        a,
        domain: Rect::cube(1),
        integrand: f,
        datum: Datum::Polynomial(poly(&[(&[2], 0.6), (&[1], -1.0)])),
        p: 2.0,
        resolution: vec![9],
    };
    let report = relax_compare(&prob, &table, 3, &RelaxOptions::default()).unwrap();
    assert!(report.no_gap_detected, "{:?}", report.gaps);
    for (level, gap) in report.levels.iter().zip(&report.gaps) {
        assert!(gap.abs() <= 1e-8, "level {} gap {gap}", level.level);
        assert!((level.e_f - 2.0 * 1.44).abs() <= 1e-8, "{level:?}");
    }
    assert_eq!(report.csv_rows().len(), 3);
}

#[test]
fn double_well_relaxation_gap_closes() {
    let a = sv(&[2]);
    let f = double_well_1d();
    let lattice = Lattice::new(vec![-3.0], vec![3.0], vec![61]).unwrap();
    let opts = EnvelopeOptions { resolution: 65, multistart: 8, seed: 1, ..Default::default() };
    let table = tabulate_envelope(&f, &a, &lattice, &opts).unwrap();
    let prob = DirichletProblem {
        a,
        domain: Rect::cube(1),
        integrand: f,
        datum: Datum::Polynomial(poly(&[(&[0], 0.0)])),
        p: 4.0,
        resolution: vec![17],
    };
    let report = relax_compare(&prob, &table, 3, &RelaxOptions::default()).unwrap();
    let e: Vec<f64> = report.levels.iter().map(|l| l.e_f).collect();
    println!("E_F {e:?} E_QF {} gaps {:?}", report.e_qf, report.gaps);
    for w in e.windows(2) {
        assert!(w[1] <= w[0] + 1e-10, "{e:?}");
    }
    for gap in &report.gaps {
        assert!(*gap >= -1e-8);
    }
    assert!(report.e_qf.abs() <= 0.05, "E_QF = {}", report.e_qf);
    assert!(*report.gaps.last().unwrap() <= 0.1 * (1.0 + e[0]), "{:?}", report.gaps);
    assert!(!report.no_gap_detected);
}
