//! Upper estimates of the auxiliary function
//! `θ(t) = inf { ⟨F(∇ₐφ)⟩ : φ zero-boundary, ⟨|∇ₐφ|^q⟩ ≥ t }`,
//! linear minorant fits, and the point criterion `F − c|·|^q` a-qc at `V₀`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::energy::EnergyAssembly;
use crate::envelope::{is_aqc_at, laminate_start, random_start, AqcVerdict, EnvelopeOptions};
use crate::error::{invalid, Error, Result};
use crate::grid::Grid;
use crate::integrand::{minus_power, Integrand};
use crate::optim::{lbfgs, LbfgsOptions};
use crate::smoothness::{Rect, SmoothnessVector};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ThetaOptions {
    pub resolution: usize,
    /// Nonzero starting profiles per `t`.
    pub multistart: usize,
    pub seed: u64,
    pub tol: f64,
    pub max_iter: usize,
    /// Penalty weight of the first continuation stage.
    pub mu0: f64,
    pub stages: usize,
    /// Domain of the auxiliary problem; `None` means `Q = [−1,1]^N`.
    pub domain: Option<Rect>,
    pub threads: Option<usize>,
}

impl Default for ThetaOptions {
    fn default() -> Self {
        Self {
            resolution: 17,
            multistart: 4,
            seed: 0,
            tol: 1e-6,
            max_iter: 1500,
            mu0: 1.0,
            stages: 4,
            domain: None,
            threads: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThetaPoint {
    pub t: f64,
    pub theta_hat: f64,
    /// `⟨|∇ₐφ|^q⟩ − t` of the reported incumbent (nonnegative up to 1e−9).
    pub feasibility_gap: f64,
    pub iterations: usize,
    /// Whether the incumbent was inherited from a larger `t`.
    pub inherited: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThetaCurve {
    pub q: f64,
    pub points: Vec<ThetaPoint>,
}

impl ThetaCurve {
    pub fn t_values(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.t).collect()
    }

    pub fn theta_hat(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.theta_hat).collect()
    }

    /// `max_i θ̂(tᵢ) − ½(θ̂(tᵢ₋₁) + θ̂(tᵢ₊₁))` relative to `1 + |θ̂(tᵢ)|`;
    /// meaningful for equispaced `t`.
    pub fn convexity_defect(&self) -> f64 {
        let th = self.theta_hat();
        (1..th.len().saturating_sub(1))
            .map(|i| (th[i] - 0.5 * (th[i - 1] + th[i + 1])) / (1.0 + th[i].abs()))
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

fn moment(mats: &[f64], block: usize, q: f64, weight: f64) -> f64 {
    weight * mats.chunks_exact(block).map(|x| x.iter().map(|v| v * v).sum::<f64>().sqrt().powf(q)).sum::<f64>()
}

struct Incumbent {
    value: f64,
    gap: f64,
    x: Vec<f64>,
}

/// Scales `x` so that the moment reaches `t` (q-homogeneity) and evaluates.
fn make_feasible(asm: &EnergyAssembly, f: &Integrand, q: f64, t: f64, x: &[f64]) -> Option<Incumbent> {
    let block = asm.n() * asm.m();
    let mom = moment(&asm.matrices(x), block, q, asm.weight());
    if t <= 0.0 {
        return Some(Incumbent { value: asm.energy(f, x), gap: mom - t, x: x.to_vec() });
    }
    if !(mom > 0.0) || !mom.is_finite() {
        return None;
    }
    let mut s = (t / mom).powf(1.0 / q);
    for _ in 0..8 {
        let y: Vec<f64> = x.iter().map(|v| v * s).collect();
        let m = moment(&asm.matrices(&y), block, q, asm.weight());
        if m >= t {
            let value = asm.energy(f, &y);
            return value.is_finite().then_some(Incumbent { value, gap: m - t, x: y });
        }
        s *= 1.0 + 1e-12;
    }
    None
}

fn theta_at(
    f: &Integrand,
    asm: &EnergyAssembly,
    q: f64,
    t: f64,
    opts: &ThetaOptions,
    seed: u64,
) -> Result<(Incumbent, usize)> {
    let grid = asm.grid();
    let n = asm.n();
    let block = n * asm.m();
    let weight = asm.weight();
    let pre = asm.preconditioner()?;
    let lopts = LbfgsOptions { max_iter: opts.max_iter, memory: 12, grad_tol: opts.tol, stop_below: None };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<Incumbent> = None;
    let mut iterations = 0;
    let consider = |cand: Option<Incumbent>, best: &mut Option<Incumbent>| {
        if let Some(c) = cand {
            if best.as_ref().is_none_or(|b| c.value < b.value) {
                *best = Some(c);
            }
        }
    };
    if t <= 0.0 {
        consider(make_feasible(asm, f, q, t, &vec![0.0; asm.dofs()]), &mut best);
    }
    for k in 0..opts.multistart.max(1) {
        let mut start = if k % 2 == 0 {
            laminate_start(grid, n, k / 2, &mut rng)
        } else {
            random_start(grid, n, &mut rng)
        };
        start.clear_collar();
        let x0 = asm.gather(start.values());
        let target = if t > 0.0 { t } else { 1.0 };
        let Some(scaled) = make_feasible(asm, f, q, target, &x0) else { continue };
        if t > 0.0 {
            consider(make_feasible(asm, f, q, t, &scaled.x), &mut best);
        }
        let mut x = scaled.x;
        let mut mu = opts.mu0;
        for _ in 0..opts.stages.max(1) {
            let objective = |y: &[f64], g: &mut [f64]| -> f64 {
                let mut mats = asm.matrices(y);
                let mut fsum = 0.0;
                let mut msum = 0.0;
                for xk in mats.chunks_exact(block) {
                    let v = f.eval(xk);
                    if !v.is_finite() {
                        return v;
                    }
                    fsum += v;
                    msum += xk.iter().map(|v| v * v).sum::<f64>().sqrt().powf(q);
                }
                let deficit = (t - weight * msum).max(0.0);
                let mut buf = vec![0.0; block];
                for xk in mats.chunks_exact_mut(block) {
                    f.grad(xk, &mut buf);
                    let r = xk.iter().map(|v| v * v).sum::<f64>().sqrt();
                    let dm = if r > 0.0 { q * r.powf(q - 2.0) } else { 0.0 };
                    for (o, b) in xk.iter_mut().zip(&buf) {
                        *o = b - 2.0 * mu * deficit * dm * *o;
                    }
                }
                g.copy_from_slice(&asm.pullback(&mats));
                weight * fsum + mu * deficit * deficit
            };
            let res = lbfgs(objective, x.clone(), Some(&pre), &lopts)?;
            iterations += res.iterations;
            x = res.x;
            mu *= 10.0;
        }
        consider(make_feasible(asm, f, q, t, &x), &mut best);
    }
    best.map(|b| (b, iterations)).ok_or_else(|| {
        Error::NotConverged { iterations, residual: f64::INFINITY }
    })
}

fn theta_grid(a: &SmoothnessVector, opts: &ThetaOptions) -> Result<Grid> {
    let domain = opts.domain.clone().unwrap_or_else(|| Rect::cube(a.dim()));
    Grid::new(a.clone(), domain, vec![opts.resolution; a.dim()])
}

/// Upper estimates `θ̂(t)` by exterior quadratic penalty with ×10
/// continuation; every reported incumbent is rescaled to be feasible, and
/// incumbents for larger `t` are reused for smaller `t`.
pub fn theta_estimate(
    f: &Integrand,
    a: &SmoothnessVector,
    q: f64,
    t_values: &[f64],
    opts: &ThetaOptions,
) -> Result<ThetaCurve> {
    f.require_growth()?;
    if !(q >= 1.0 && q <= f.growth().p) {
        return Err(invalid("q", format!("q must lie in [1, p] = [1, {}], got {q}", f.growth().p)));
    }
    if f.m() != a.m() {
        return Err(invalid("a", "integrand column count does not match a"));
    }
    if t_values.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
        return Err(invalid("t", "t values must be finite and nonnegative"));
    }
    if t_values.windows(2).any(|w| w[1] <= w[0]) {
        return Err(invalid("t", "t values must be strictly increasing"));
    }
    let grid = theta_grid(a, opts)?;
    let asm = EnergyAssembly::new(&grid, f.n(), &vec![0.0; f.dim()], 1.0 / grid.num_eval() as f64)?;
    if asm.dofs() == 0 && t_values.iter().any(|&t| t > 0.0) {
        return Err(invalid("resolution", "grid has no interior nodes; t > 0 is infeasible"));
    }
    let work = || -> Vec<Result<(Incumbent, usize)>> {
        t_values
            .par_iter()
            .enumerate()
            .map(|(i, &t)| theta_at(f, &asm, q, t, opts, opts.seed.wrapping_add(i as u64)))
            .collect()
    };
    let results = match opts.threads {
        Some(k) => rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build()
            .map_err(|e| invalid("threads", e.to_string()))?
            .install(work),
        None => work(),
    };
    let mut points = Vec::with_capacity(t_values.len());
    for (&t, r) in t_values.iter().zip(results) {
        let (inc, iterations) = r?;
        points.push(ThetaPoint { t, theta_hat: inc.value, feasibility_gap: inc.gap, iterations, inherited: false });
    }
    // an incumbent feasible for t_j is feasible for every t_i < t_j
    for i in (0..points.len().saturating_sub(1)).rev() {
        let next = points[i + 1].clone();
        if next.theta_hat < points[i].theta_hat {
            let t = points[i].t;
            points[i].theta_hat = next.theta_hat;
            points[i].feasibility_gap = next.feasibility_gap + (next.t - t);
            points[i].inherited = true;
        }
    }
    Ok(ThetaCurve { q, points })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoercivityFit {
    pub c1: f64,
    pub c2: f64,
    pub coercive: bool,
    /// All points lie on one line.
    pub degenerate: bool,
}

/// Lower support line `c₁t + c₂ ≤ θ̂(t)` along the last edge of the lower
/// convex hull (largest admissible asymptotic slope), clamped to `c₁ ≥ 0`.
pub fn mean_coercivity_fit(curve: &ThetaCurve, c_min: f64) -> Result<CoercivityFit> {
    let pts: Vec<(f64, f64)> = curve.points.iter().map(|p| (p.t, p.theta_hat)).collect();
    if pts.len() < 3 {
        return Err(invalid("curve", format!("need at least 3 points, got {}", pts.len())));
    }
    if pts.iter().any(|p| !p.1.is_finite()) {
        return Err(invalid("curve", "theta_hat must be finite"));
    }
    let mut hull: Vec<(f64, f64)> = Vec::new();
    for &p in &pts {
        while hull.len() >= 2 {
            let (o, a) = (hull[hull.len() - 2], hull[hull.len() - 1]);
            if (a.0 - o.0) * (p.1 - o.1) - (a.1 - o.1) * (p.0 - o.0) <= 0.0 {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(p);
    }
    let (p0, p1) = (hull[hull.len() - 2], hull[hull.len() - 1]);
    let slope = (p1.1 - p0.1) / (p1.0 - p0.0);
    let scale = pts.iter().map(|p| p.1.abs()).fold(1.0, f64::max);
    let degenerate = pts.iter().all(|&(t, th)| (th - (p0.1 + slope * (t - p0.0))).abs() <= 1e-12 * scale);
    let (c1, c2) = if slope > 0.0 {
        (slope, p1.1 - slope * p1.0)
    } else {
        (0.0, pts.iter().map(|p| p.1).fold(f64::INFINITY, f64::min))
    };
    Ok(CoercivityFit { c1, c2, coercive: c1 >= c_min, degenerate })
}

/// `X ↦ F(X) − c|X|^q` tested for a-quasiconvexity at `V₀`.
pub fn strong_qc_test(
    f: &Integrand,
    a: &SmoothnessVector,
    c: f64,
    q: f64,
    v0: &[f64],
    opts: &EnvelopeOptions,
) -> Result<AqcVerdict> {
    if !(c > 0.0) {
        return Err(invalid("c", format!("c must be positive, got {c}")));
    }
    is_aqc_at(&minus_power(f, c, q)?, a, v0, opts)
}
