//! Limited-memory BFGS with backtracking Armijo search, plus a banded
//! Cholesky factorization used as the initial inverse-Hessian model.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Applies `z = M⁻¹ r` for a fixed symmetric positive definite `M`.
pub trait Preconditioner {
    fn apply(&self, r: &[f64], z: &mut [f64]);
}

/// Cholesky factor of a symmetric positive definite band matrix, stored by
/// rows as `band[i·(bw+1) + k] = L[i][i−k]`.
#[derive(Clone, Debug)]
pub struct BandedCholesky {
    size: usize,
    bw: usize,
    band: Vec<f64>,
}

impl BandedCholesky {
    /// Factors the matrix whose lower band is given in the same layout as
    /// the factor (`band[i·(bw+1) + k] = A[i][i−k]`).
    pub fn factor(size: usize, bw: usize, mut band: Vec<f64>) -> Result<Self> {
        let w = bw + 1;
        assert_eq!(band.len(), size * w);
        for i in 0..size {
            let kmax = bw.min(i);
            for k in (1..=kmax).rev() {
                let j = i - k;
                // L[i][j] = (A[i][j] − Σ_{l<j} L[i][l] L[j][l]) / L[j][j]
                let mut s = band[i * w + k];
                let lmax = bw.min(j).min(bw - k);
                for d in 1..=lmax {
                    s -= band[i * w + k + d] * band[j * w + d];
                }
                band[i * w + k] = s / band[j * w];
            }
            let mut d = band[i * w];
            for k in 1..=kmax {
                d -= band[i * w + k] * band[i * w + k];
            }
            if !(d > 0.0) {
                return Err(Error::RankDeficient(format!("band matrix not positive definite at row {i}")));
            }
            band[i * w] = d.sqrt();
        }
        Ok(Self { size, bw, band })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn solve_in_place(&self, x: &mut [f64]) {
        let w = self.bw + 1;
        for i in 0..self.size {
            let mut s = x[i];
            for k in 1..=self.bw.min(i) {
                s -= self.band[i * w + k] * x[i - k];
            }
            x[i] = s / self.band[i * w];
        }
        for i in (0..self.size).rev() {
            let mut s = x[i];
            for k in 1..=self.bw.min(self.size - 1 - i) {
                s -= self.band[(i + k) * w + k] * x[i + k];
            }
            x[i] = s / self.band[i * w];
        }
    }
}

/// A scalar banded factor applied independently to each of `n` interleaved
/// components (`x[j·n + c]`).
#[derive(Clone, Debug)]
pub struct BlockPreconditioner {
    pub factor: BandedCholesky,
    pub n: usize,
}

impl Preconditioner for BlockPreconditioner {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        let size = self.factor.size();
        let mut buf = vec![0.0; size];
        for c in 0..self.n {
            for j in 0..size {
                buf[j] = r[j * self.n + c];
            }
            self.factor.solve_in_place(&mut buf);
            for j in 0..size {
                z[j * self.n + c] = buf[j];
            }
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LbfgsOptions {
    pub max_iter: usize,
    pub memory: usize,
    /// Stop once the (preconditioned) gradient norm is `≤ grad_tol·(1+|f|)`.
    pub grad_tol: f64,
    /// Stop as soon as an iterate reaches an energy strictly below this.
    pub stop_below: Option<f64>,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        Self { max_iter: 2000, memory: 12, grad_tol: 1e-8, stop_below: None }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Gradient,
    StopBelow,
    MaxIterations,
    LineSearch,
    Stagnation,
}

#[derive(Clone, Debug)]
pub struct LbfgsResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub evaluations: usize,
    /// Energy after every accepted step, starting with the initial value.
    pub energies: Vec<f64>,
    pub grad_norms: Vec<f64>,
    pub termination: Termination,
}

impl LbfgsResult {
    pub fn converged(&self) -> bool {
        matches!(self.termination, Termination::Gradient | Termination::StopBelow)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Minimizes `f` from `x0`; `fg(x, g)` returns `f(x)` and writes `∇f(x)`
/// into `g` whenever the value is finite.
pub fn lbfgs(
    fg: impl FnMut(&[f64], &mut [f64]) -> f64,
    x0: Vec<f64>,
    precond: Option<&dyn Preconditioner>,
    opts: &LbfgsOptions,
) -> Result<LbfgsResult> {
    lbfgs_observed(fg, x0, precond, opts, |_, _, _| {})
}

/// [`lbfgs`] calling `observe(iteration, x, f)` after every accepted step.
pub fn lbfgs_observed(
    mut fg: impl FnMut(&[f64], &mut [f64]) -> f64,
    x0: Vec<f64>,
    precond: Option<&dyn Preconditioner>,
    opts: &LbfgsOptions,
    mut observe: impl FnMut(usize, &[f64], f64),
) -> Result<LbfgsResult> {
    let dim = x0.len();
    let mut x = x0;
    let mut g = vec![0.0; dim];
    let mut f = fg(&x, &mut g);
    let mut evaluations = 1;
    if !f.is_finite() {
        return Err(Error::Diverged(format!("initial energy is {f}")));
    }
    let mut hg = vec![0.0; dim];
    let dual_norm = |g: &[f64], hg: &mut [f64]| -> f64 {
        match precond {
            Some(p) => {
                p.apply(g, hg);
                dot(g, hg).max(0.0).sqrt()
            }
            None => {
                hg.copy_from_slice(g);
                dot(g, g).sqrt()
            }
        }
    };
    let mut gnorm = dual_norm(&g, &mut hg);
    let mut energies = vec![f];
    let mut grad_norms = vec![gnorm];
    let mut s_hist: Vec<Vec<f64>> = Vec::new();
    let mut y_hist: Vec<Vec<f64>> = Vec::new();
    let mut rho_hist: Vec<f64> = Vec::new();
    let mut gamma = 1.0;
    let mut stagnant = 0;
    let mut iterations = 0;
    let mut x_new = vec![0.0; dim];
    let mut g_new = vec![0.0; dim];
    let mut d = vec![0.0; dim];
    let mut alpha = vec![0.0; opts.memory];

    let termination = loop {
        if opts.stop_below.is_some_and(|s| f < s) {
            break Termination::StopBelow;
        }
        if dim == 0 || gnorm <= opts.grad_tol * (1.0 + f.abs()) {
            break Termination::Gradient;
        }
        if iterations >= opts.max_iter {
            break Termination::MaxIterations;
        }

        // two-loop recursion: d = −H g
        d.copy_from_slice(&g);
        let k = s_hist.len();
        for i in (0..k).rev() {
            alpha[i] = rho_hist[i] * dot(&s_hist[i], &d);
            for (dj, yj) in d.iter_mut().zip(&y_hist[i]) {
                *dj -= alpha[i] * yj;
            }
        }
        match precond {
            Some(p) => {
                let r = d.clone();
                p.apply(&r, &mut d);
            }
            None => {}
        }
        d.iter_mut().for_each(|v| *v *= gamma);
        for i in 0..k {
            let beta = rho_hist[i] * dot(&y_hist[i], &d);
            for (dj, sj) in d.iter_mut().zip(&s_hist[i]) {
                *dj += (alpha[i] - beta) * sj;
            }
        }
        d.iter_mut().for_each(|v| *v = -*v);
        let mut slope = dot(&g, &d);
        if !(slope < 0.0) {
            // fall back to steepest descent in the preconditioned metric
            s_hist.clear();
            y_hist.clear();
            rho_hist.clear();
            for (dj, hj) in d.iter_mut().zip(&hg) {
                *dj = -hj;
            }
            slope = dot(&g, &d);
            if !(slope < 0.0) {
                break Termination::Gradient;
            }
        }

        let mut t = if k == 0 && precond.is_none() { 1.0 / gnorm.max(1e-300) } else { 1.0 };
        let mut accepted = false;
        for _ in 0..60 {
            for i in 0..dim {
                x_new[i] = x[i] + t * d[i];
            }
            let f_try = fg(&x_new, &mut g_new);
            evaluations += 1;
            if f_try.is_nan() || f_try == f64::NEG_INFINITY {
                return Err(Error::Diverged(format!("energy became {f_try} during the line search")));
            }
            if f_try.is_finite() && f_try <= f + 1e-4 * t * slope {
                accepted = true;
                let f_old = f;
                let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
                let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
                let sy = dot(&s, &y);
                if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() && sy > 0.0 {
                    let mut hy = vec![0.0; dim];
                    let yhy = match precond {
                        Some(p) => {
                            p.apply(&y, &mut hy);
                            dot(&y, &hy)
                        }
                        None => dot(&y, &y),
                    };
                    gamma = sy / yhy;
                    if s_hist.len() == opts.memory {
                        s_hist.remove(0);
                        y_hist.remove(0);
                        rho_hist.remove(0);
                    }
                    s_hist.push(s);
                    y_hist.push(y);
                    rho_hist.push(1.0 / sy);
                }
                std::mem::swap(&mut x, &mut x_new);
                std::mem::swap(&mut g, &mut g_new);
                f = f_try;
                if f_old - f <= 1e-15 * (1.0 + f.abs()) {
                    stagnant += 1;
                } else {
                    stagnant = 0;
                }
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break Termination::LineSearch;
        }
        iterations += 1;
        observe(iterations, &x, f);
        gnorm = dual_norm(&g, &mut hg);
        energies.push(f);
        grad_norms.push(gnorm);
        if stagnant >= 10 {
            break Termination::Stagnation;
        }
    };
    Ok(LbfgsResult { x, f, grad_norm: gnorm, iterations, evaluations, energies, grad_norms, termination })
}
