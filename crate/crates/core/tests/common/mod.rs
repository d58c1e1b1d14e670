#![allow(dead_code)]

use mixvar::{builtin, smoothness::SmoothnessVector, Integrand, IntegrandSpec};

pub fn sv(a: &[u32]) -> SmoothnessVector {
    SmoothnessVector::new(a.to_vec()).unwrap()
}

pub fn double_well_1d() -> Integrand {
    builtin(&IntegrandSpec::DoubleWell { col: 1, w: 1.0 }, 1, 1).unwrap()
}

/// Lower convex hull of a scalar function sampled at `samples` points on
/// `[lo, hi]`, evaluated by linear interpolation between hull vertices.
pub struct HullOracle {
    pts: Vec<(f64, f64)>,
}

impl HullOracle {
    pub fn new(f: impl Fn(f64) -> f64, lo: f64, hi: f64, samples: usize) -> Self {
        let mut hull: Vec<(f64, f64)> = Vec::new();
        for i in 0..samples {
            let x = lo + (hi - lo) * i as f64 / (samples - 1) as f64;
            let p = (x, f(x));
            while hull.len() >= 2 {
                let (o, a) = (hull[hull.len() - 2], hull[hull.len() - 1]);
                let cross = (a.0 - o.0) * (p.1 - o.1) - (a.1 - o.1) * (p.0 - o.0);
                if cross <= 0.0 {
                    hull.pop();
                } else {
                    break;
                }
            }
            hull.push(p);
        }
        Self { pts: hull }
    }

    pub fn eval(&self, x: f64) -> f64 {
        let j = self.pts.partition_point(|p| p.0 < x).clamp(1, self.pts.len() - 1);
        let (a, b) = (self.pts[j - 1], self.pts[j]);
        a.1 + (b.1 - a.1) * (x - a.0) / (b.0 - a.0)
    }
}

/// Minimum of `w Σ (u_x² + u_yy²)` over the interior of a 2-D grid with the
/// boundary pinned to `g`, by forward differences assembled here and a dense
/// Cholesky solve of the normal equations. `g` is row-major, y fastest.
pub fn pantographic_oracle(g: &[f64], rx: usize, ry: usize, lx: f64, ly: f64) -> f64 {
    let (hx, hy) = (lx / (rx - 1) as f64, ly / (ry - 1) as f64);
    let node = |i: usize, j: usize| i * ry + j;
    let free = |i: usize, j: usize| i >= 1 && i + 1 < rx && j >= 2 && j + 2 < ry;
    let col = |i: usize, j: usize| (i - 1) * (ry - 4) + (j - 2);
    let nfree = (rx - 2) * (ry - 4);
    let (ex, ey) = (rx - 1, ry - 2);
    let w = lx * ly / (ex * ey) as f64;
    // Each row is one difference at one evaluation node.
    let mut rows: Vec<(Vec<(usize, f64)>, f64)> = Vec::new();
    for i in 0..ex {
        for j in 0..ey {
            let dx = [((i + 1, j), 1.0 / hx), ((i, j), -1.0 / hx)];
            let h2 = hy * hy;
            let dyy = [((i, j + 2), 1.0 / h2), ((i, j + 1), -2.0 / h2), ((i, j), 1.0 / h2)];
            for stencil in [&dx[..], &dyy[..]] {
                let mut entries = Vec::new();
                let mut rhs = 0.0;
                for &((a, b), c) in stencil {
                    if free(a, b) {
                        entries.push((col(a, b), c));
                    } else {
                        rhs += c * g[node(a, b)];
                    }
                }
                rows.push((entries, rhs));
            }
        }
    }
    let mut normal = nalgebra::DMatrix::<f64>::zeros(nfree, nfree);
    let mut b = nalgebra::DVector::<f64>::zeros(nfree);
    for (entries, rhs) in &rows {
        for &(p, cp) in entries {
            b[p] -= cp * rhs;
            for &(q, cq) in entries {
                normal[(p, q)] += cp * cq;
            }
        }
    }
    let x = normal.cholesky().expect("normal equations are SPD").solve(&b);
    w * rows
        .iter()
        .map(|(entries, rhs)| {
            let r = rhs + entries.iter().map(|&(p, c)| c * x[p]).sum::<f64>();
            r * r
        })
        .sum::<f64>()
}

/// Smooth zero-boundary field on `grid`: a random trigonometric sum times
/// a polynomial bump vanishing to order `aᵢ + 1` on the boundary.
pub fn smooth_bump(grid: &mixvar::Grid, amplitude: f64, seed: u64) -> mixvar::GridField {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let dim = grid.dim();
    let modes: Vec<(Vec<f64>, f64, f64)> = (0..4)
        .map(|_| {
            let k = (0..dim).map(|_| rng.gen_range(0.5..2.5)).collect();
            (k, rng.gen_range(0.0..6.3), rng.gen_range(-1.0..1.0))
        })
        .collect();
    let a: Vec<i32> = grid.a().orders().iter().map(|&o| o as i32).collect();
    let lo = grid.domain().lower.clone();
    let hi = grid.domain().upper.clone();
    let mut f = mixvar::GridField::from_scalar_fn(grid.clone(), |x| {
        let bump: f64 = (0..dim)
            .map(|i| {
                let t = 2.0 * (x[i] - lo[i]) / (hi[i] - lo[i]) - 1.0;
                (1.0 - t * t).max(0.0).powi(a[i] + 1)
            })
            .product();
        let wave: f64 = modes
            .iter()
            .map(|(k, phase, c)| c * (k.iter().zip(x).map(|(k, x)| k * x).sum::<f64>() + phase).cos())
            .sum();
        amplitude * bump * (1.0 + wave)
    });
    f.clear_collar();
    f
}
