mod common;

use common::sv;
use mixvar::grid::{piecewise_gradient_approx, PiecewiseOptions};
use mixvar::{Grid, GridField};

#[test]
fn piecewise_approximation_of_sine_refines_with_eps() {
    let grid = Grid::cube(sv(&[1, 2]), 257).unwrap();
    let f = GridField::from_scalar_fn(grid.clone(), |x| x[0].sin());
    let run = |eps: f64| piecewise_gradient_approx(&f, eps, &PiecewiseOptions::default()).unwrap();
    let (coarse, fine) = std::thread::scope(|s| {
        let coarse = s.spawn(|| run(0.1));
        let fine = s.spawn(|| run(0.05));
        (coarse.join().unwrap(), fine.join().unwrap())
    });
    assert!(fine.error < coarse.error, "{} vs {}", fine.error, coarse.error);
    for (out, eps) in [(&coarse, 0.1), (&fine, 0.05)] {
        assert!(out.relative_constant <= 1.0);
        assert!(out.uncovered_volume <= eps + 1e-12);
        let collar_diff = (0..grid.num_nodes())
            .filter(|&k| grid.is_collar(k))
            .fold(0.0f64, |m, k| m.max((out.field.at(k)[0] - f.at(k)[0]).abs()));
        assert_eq!(collar_diff, 0.0);
        // ∇ₐu_ε is constant on each core, on evaluation nodes whose stencil
        // stays inside the core and off the collar.
        let d = out.field.a_gradient().unwrap();
        let eval = grid.eval_nodes();
        let a = grid.a().orders().to_vec();
        let clean = |e: usize| {
            let idx = grid.node_index(eval[e]);
            (0..2).all(|i| idx[i] >= a[i] as usize && idx[i] + 2 * (a[i] as usize) < grid.counts()[i])
        };
        let mut checked = 0;
        for core in &out.boxes {
            let inside: Vec<usize> = (0..eval.len())
                .filter(|&e| {
                    let mut x = grid.node_coords(eval[e]);
                    let start = core.contains(&x);
                    for (i, h) in grid.spacing().iter().enumerate() {
                        x[i] += a[i] as f64 * h;
                    }
                    clean(e) && start && core.contains(&x)
                })
                .collect();
            checked += inside.len();
            for pair in inside.windows(2) {
                for (u, v) in d.at(pair[0]).iter().zip(d.at(pair[1])) {
                    assert!((u - v).abs() <= 1e-8, "{u} vs {v}");
                }
            }
        }
        assert!(checked as f64 >= 0.5 * eval.len() as f64, "{checked} of {}", eval.len());
    }
}

#[test]
fn piecewise_with_oversized_eps_keeps_one_box() {
    let grid = Grid::cube(sv(&[1, 2]), 33).unwrap();
    let f = GridField::from_scalar_fn(grid, |x| x[0].sin());
    // ε above |Q| = 4: coverage is vacuous and the error target loose.
    let out = piecewise_gradient_approx(&f, 8.0, &PiecewiseOptions::default()).unwrap();
    assert_eq!(out.boxes.len(), 1);
}
