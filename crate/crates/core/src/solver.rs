//! Direct-method minimization of `u ↦ ∫_Ω F(∇ₐu)` over discrete Dirichlet
//! classes `g + W₀`, and the relaxation comparison against a tabulated
//! envelope.

use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::energy::EnergyAssembly;
use crate::envelope::{envelope_interpolate, laminate_start, prolongate, random_start, EnvelopeTable};
use crate::error::{invalid, Error, Result};
use crate::grid::{lp_norm, AGradientField, APolynomial, Grid, GridField};
use crate::integrand::{Growth, Integrand};
use crate::optim::{lbfgs_observed, LbfgsOptions, Termination};
use crate::smoothness::{MultiIndex, Rect, SmoothnessVector};

/// Boundary datum, evaluable on the whole closed domain.
#[derive(Clone, Debug)]
pub enum Datum {
    Polynomial(APolynomial),
    /// Resampled (tensor cubic) when its grid differs from the solve grid.
    Field(GridField),
}

#[derive(Clone, Debug)]
pub struct DirichletProblem {
    pub a: SmoothnessVector,
    pub domain: Rect,
    pub integrand: Integrand,
    pub datum: Datum,
    pub p: f64,
    /// Nodes per axis.
    pub resolution: Vec<usize>,
}

impl DirichletProblem {
    pub fn grid(&self) -> Result<Grid> {
        Grid::new(self.a.clone(), self.domain.clone(), self.resolution.clone())
    }

    pub fn datum_on(&self, grid: &Grid) -> Result<GridField> {
        let n = self.integrand.n();
        let g = match &self.datum {
            Datum::Polynomial(poly) => {
                poly.check_lower_set(&self.a)?;
                if poly.n != n {
                    return Err(invalid("datum", format!("datum has {} components, F expects {n}", poly.n)));
                }
                poly.to_field(grid)
            }
            Datum::Field(f) => {
                if f.n() != n {
                    return Err(invalid("datum", format!("datum has {} components, F expects {n}", f.n())));
                }
                if f.grid() == grid {
                    f.clone()
                } else {
                    f.resample(grid)
                }
            }
        };
        Ok(g)
    }

    fn validate(&self) -> Result<()> {
        if self.integrand.m() != self.a.m() {
            return Err(invalid("a", "integrand column count does not match a"));
        }
        if !(self.p > 1.0) {
            return Err(invalid("p", format!("exponent must exceed 1, got {}", self.p)));
        }
        Ok(())
    }
}

/// Exact nodal evaluation of `Σ c_γ x^γ`; exponents must satisfy `⟨γ, a⁻¹⟩ ≤ 1`.
pub fn apolynomial_datum(coeffs: &[(MultiIndex, Vec<f64>)], n: usize, grid: &Grid) -> Result<GridField> {
    let poly = APolynomial::new(n, vec![0.0; grid.dim()], coeffs.to_vec())?;
    poly.check_lower_set(grid.a())?;
    Ok(poly.to_field(grid))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolveOptions {
    /// First-order stationarity `‖∇E‖ ≤ tol·(1+|E|)` in the preconditioned norm.
    pub tol: f64,
    pub max_iter: usize,
    /// Additional descents from seeded perturbations of the datum.
    pub restarts: usize,
    /// RMS of `∇ₐ` of each restart perturbation.
    pub perturbation: f64,
    pub seed: u64,
    /// Snapshot `∇ₐu` every this many accepted steps (0 disables).
    pub snapshot_every: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self { tol: 1e-10, max_iter: 5000, restarts: 0, perturbation: 0.5, seed: 0, snapshot_every: 0 }
    }
}

#[derive(Clone, Debug)]
pub struct SolveTrace {
    /// Energies of the accepted steps of the selected descent.
    pub energies: Vec<f64>,
    pub grad_norms: Vec<f64>,
    pub snapshots: Vec<(usize, AGradientField)>,
    pub termination: Termination,
    pub iterations: usize,
}

#[derive(Clone, Debug)]
pub struct Solution {
    pub u: GridField,
    pub energy: f64,
    pub trace: SolveTrace,
}

fn perturbation(grid: &Grid, n: usize, k: usize, amplitude: f64, rng: &mut ChaCha8Rng) -> Result<GridField> {
    let mut field = if k % 2 == 0 { laminate_start(grid, n, k / 2, rng) } else { random_start(grid, n, rng) };
    field.clear_collar();
    let d = field.a_gradient()?;
    let rms = (d.values().iter().map(|v| v * v).sum::<f64>() / d.num_nodes() as f64).sqrt();
    Ok(if rms > 0.0 { field.scaled(amplitude / rms) } else { field })
}

/// Descends from each start in turn and keeps the lowest energy.
fn solve_with_starts(
    f: &Integrand,
    g: &GridField,
    starts: Vec<Vec<f64>>,
    opts: &SolveOptions,
) -> Result<Solution> {
    let grid = g.grid().clone();
    let dg = g.a_gradient()?;
    let asm = EnergyAssembly::new(&grid, g.n(), dg.values(), grid.quadrature_weight())?;
    let pre = asm.preconditioner()?;
    let lopts = LbfgsOptions { max_iter: opts.max_iter, memory: 12, grad_tol: opts.tol, stop_below: None };
    let mut best: Option<(f64, Vec<f64>, SolveTrace)> = None;
    let mut first_error = None;
    for x0 in starts {
        if !asm.energy(f, &x0).is_finite() {
            first_error.get_or_insert(Error::Diverged(
                "start lies on the +∞ barrier; restart from a finite configuration".into(),
            ));
            continue;
        }
        let mut snapshots = Vec::new();
        let every = opts.snapshot_every;
        let res = lbfgs_observed(|x, gr| asm.energy_grad(f, x, gr), x0, Some(&pre), &lopts, |it, x, _| {
            if every > 0 && it % every == 0 {
                let mats = asm.matrices(x);
                if let Ok(field) = AGradientField::from_values(grid.clone(), asm.n(), dg.columns().to_vec(), mats) {
                    snapshots.push((it, field));
                }
            }
        });
        let res = match res {
            Ok(r) => r,
            Err(e) => {
                first_error.get_or_insert(e);
                continue;
            }
        };
        if best.as_ref().is_none_or(|b| res.f < b.0) {
            let trace = SolveTrace {
                energies: res.energies,
                grad_norms: res.grad_norms,
                snapshots,
                termination: res.termination,
                iterations: res.iterations,
            };
            best = Some((res.f, res.x, trace));
        }
    }
    let Some((energy, x, trace)) = best else {
        return Err(first_error.unwrap_or_else(|| Error::Diverged("no start produced a finite energy".into())));
    };
    let mut u = g.clone();
    u.axpy(1.0, &asm.field(&x));
    Ok(Solution { u, energy, trace })
}

/// Minimizes the discrete energy over `g + W₀` (collar pinned to `g`).
pub fn solve_dirichlet(prob: &DirichletProblem, opts: &SolveOptions) -> Result<Solution> {
    prob.validate()?;
    let grid = prob.grid()?;
    let g = prob.datum_on(&grid)?;
    let n = prob.integrand.n();
    let dofs = grid.free_nodes().len() * n;
    let mut starts = vec![vec![0.0; dofs]];
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    for k in 0..opts.restarts {
        let pert = perturbation(&grid, n, k, opts.perturbation, &mut rng)?;
        starts.push(gather_free(&grid, &pert));
    }
    solve_with_starts(&prob.integrand, &g, starts, opts)
}

fn gather_free(grid: &Grid, field: &GridField) -> Vec<f64> {
    let n = field.n();
    let mut x = Vec::with_capacity(grid.free_nodes().len() * n);
    for node in grid.free_nodes() {
        x.extend_from_slice(field.at(node));
    }
    x
}

/// `∫ F(∇ₐu)` with the solver's quadrature.
pub fn energy_of(f: &Integrand, u: &GridField) -> Result<f64> {
    let d = u.a_gradient()?;
    let w = u.grid().quadrature_weight();
    let block = d.n() * d.m();
    Ok(w * d.values().chunks_exact(block).map(|x| f.eval(x)).sum::<f64>())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RelaxLevel {
    pub level: usize,
    pub counts: Vec<usize>,
    pub e_f: f64,
    /// `∫ Q̃F(∇ₐu_ℓ)` for the level's F-minimizer.
    pub e_qf_at_level: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub wallclock: f64,
    /// Barycentre and p-th moment of the pushforward of `∇ₐu_ℓ`.
    pub barycentre: Vec<f64>,
    pub p_moment: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RelaxReport {
    pub levels: Vec<RelaxLevel>,
    pub e_qf: f64,
    /// `E_F^{(ℓ)} − E_QF` per level.
    pub gaps: Vec<f64>,
    pub no_gap_detected: bool,
    pub gap_tol: f64,
    pub wallclock_qf: f64,
}

impl RelaxReport {
    /// Rows of `level, E_F, E_QF, gap, grad_norm, wallclock`.
    pub fn csv_rows(&self) -> Vec<[String; 6]> {
        self.levels
            .iter()
            .zip(&self.gaps)
            .map(|(l, gap)| {
                [
                    l.level.to_string(),
                    format!("{:e}", l.e_f),
                    format!("{:e}", self.e_qf),
                    format!("{:e}", gap),
                    format!("{:e}", l.grad_norm),
                    format!("{:.6}", l.wallclock),
                ]
            })
            .collect()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RelaxOptions {
    pub solve: SolveOptions,
    /// Fresh perturbed starts per level besides the prolongated warm start.
    pub restarts: usize,
    /// RMS of `∇ₐ` of the perturbation added to the prolongated warm start.
    pub warm_perturbation: f64,
    /// Absolute gap below which (after scaling by `1+|E_F^{(0)}|`) no gap is reported.
    pub gap_tol: f64,
}

impl Default for RelaxOptions {
    fn default() -> Self {
        Self {
            solve: SolveOptions { tol: 1e-9, ..Default::default() },
            restarts: 4,
            warm_perturbation: 0.05,
            gap_tol: 1e-8,
        }
    }
}

/// `Q̃F = min(interpolated table, F)`, `+∞` outside the table hull.
pub fn relaxed_integrand(f: &Integrand, table: &EnvelopeTable) -> Result<Integrand> {
    if table.header.n != f.n() || table.header.m != f.m() {
        return Err(invalid("table", "table shape does not match the integrand"));
    }
    let table = Arc::new(table.clone());
    let fc = f.clone();
    Ok(Integrand::from_fn(
        format!("relaxed({})", f.name()),
        f.n(),
        f.m(),
        move |v| match envelope_interpolate(&table, v) {
            Ok(q) => q.min(fc.eval(v)),
            Err(_) => f64::INFINITY,
        },
        None,
        Growth { p: f.growth().p, c_upper: f.growth().c_upper, c_lower: None, c_const: None },
    ))
}

fn checked_relaxed_energy(f: &Integrand, table: &EnvelopeTable, u: &GridField) -> Result<f64> {
    let d = u.a_gradient()?;
    let block = d.n() * d.m();
    let w = u.grid().quadrature_weight();
    let mut sum = 0.0;
    for x in d.values().chunks_exact(block) {
        sum += envelope_interpolate(table, x)?.min(f.eval(x));
    }
    Ok(w * sum)
}

fn measure_summary(u: &GridField, p: f64) -> Result<(Vec<f64>, f64)> {
    let d = u.a_gradient()?;
    let moment = lp_norm(&d, p).powf(p) / u.grid().domain().volume();
    Ok((d.mean(), moment))
}

/// Solves with `F` on `levels` nested grids (`r_ℓ = (r₀−1)2^ℓ + 1`), then
/// with the relaxed integrand on the finest grid, and reports the gaps.
pub fn relax_compare(
    prob: &DirichletProblem,
    table: &EnvelopeTable,
    levels: usize,
    opts: &RelaxOptions,
) -> Result<RelaxReport> {
    prob.validate()?;
    if levels == 0 {
        return Err(invalid("levels", "at least one refinement level is required"));
    }
    let f = &prob.integrand;
    let n = f.n();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.solve.seed);
    let mut out: Vec<RelaxLevel> = Vec::new();
    let mut prev_phi: Option<GridField> = None;
    let mut finest: Option<(GridField, GridField)> = None;
    for level in 0..levels {
        let counts: Vec<usize> = prob.resolution.iter().map(|&r| (r - 1) * (1 << level) + 1).collect();
        let grid = Grid::new(prob.a.clone(), prob.domain.clone(), counts.clone())?;
        let g = prob.datum_on(&grid)?;
        let clock = Instant::now();
        let mut starts = vec![vec![0.0; grid.free_nodes().len() * n]];
        if let Some(phi) = &prev_phi {
            for warm in prolongate(phi, &grid) {
                starts.push(gather_free(&grid, &warm));
                let mut kicked = warm.clone();
                kicked.axpy(1.0, &perturbation(&grid, n, rng.gen_range(0..8), opts.warm_perturbation, &mut rng)?);
                starts.push(gather_free(&grid, &kicked));
            }
        }
        for k in 0..opts.restarts {
            let pert = perturbation(&grid, n, k, opts.solve.perturbation, &mut rng)?;
            starts.push(gather_free(&grid, &pert));
        }
        let sol = solve_with_starts(f, &g, starts, &opts.solve)?;
        let wallclock = clock.elapsed().as_secs_f64();
        let e_qf_at_level = checked_relaxed_energy(f, table, &sol.u)?;
        let (barycentre, p_moment) = measure_summary(&sol.u, prob.p)?;
        out.push(RelaxLevel {
            level,
            counts,
            e_f: sol.energy,
            e_qf_at_level,
            grad_norm: *sol.trace.grad_norms.last().unwrap_or(&0.0),
            iterations: sol.trace.iterations,
            wallclock,
            barycentre,
            p_moment,
        });
        let phi = sol.u.sub(&g);
        prev_phi = Some(phi.clone());
        finest = Some((g, phi));
    }

    let (g, phi) = finest.expect("at least one level");
    let clock = Instant::now();
    let qf = relaxed_integrand(f, table)?;
    let starts = vec![vec![0.0; g.grid().free_nodes().len() * n], gather_free(g.grid(), &phi)];
    let qf_opts = SolveOptions { tol: opts.solve.tol.max(1e-8), ..opts.solve.clone() };
    let solved = solve_with_starts(&qf, &g, starts, &qf_opts).ok().map(|s| checked_relaxed_energy(f, table, &s.u));
    let wallclock_qf = clock.elapsed().as_secs_f64();
    let mut e_qf = out.iter().map(|l| l.e_qf_at_level).fold(f64::INFINITY, f64::min);
    if let Some(Ok(v)) = solved {
        e_qf = e_qf.min(v);
    }
    let gaps: Vec<f64> = out.iter().map(|l| l.e_f - e_qf).collect();
    let scale = 1.0 + out[0].e_f.abs();
    let no_gap_detected = gaps.iter().all(|g| g.abs() <= opts.gap_tol * scale);
    Ok(RelaxReport { levels: out, e_qf, gaps, no_gap_detected, gap_tol: opts.gap_tol, wallclock_qf })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrand::{builtin, IntegrandSpec};

    fn sv(a: &[u32]) -> SmoothnessVector {
        SmoothnessVector::new(a.to_vec()).unwrap()
    }

    #[test]
    fn polynomial_datum_examples() {
        let grid = Grid::cube(sv(&[1, 2]), 9).unwrap();
        let g = apolynomial_datum(
            &[(MultiIndex(vec![1, 0]), vec![1.0]), (MultiIndex(vec![0, 2]), vec![2.0])],
            1,
            &grid,
        )
        .unwrap();
        let d = g.a_gradient().unwrap();
        // ∂ₓ(x) = 1 and ∂²_yy(2y²) = 4, i.e. α!·c_α
        for k in 0..d.num_nodes() {
            assert!((d.at(k)[0] - 1.0).abs() < 1e-12 && (d.at(k)[1] - 4.0).abs() < 1e-10);
        }
        let c = apolynomial_datum(&[(MultiIndex(vec![0, 0]), vec![5.0])], 1, &grid).unwrap();
        assert!(c.values().iter().all(|&v| v == 5.0));
        assert!(c.a_gradient().unwrap().values().iter().all(|&v| v == 0.0));
        assert!(apolynomial_datum(&[(MultiIndex(vec![1, 1]), vec![1.0])], 1, &grid).is_err());
    }

    #[test]
    fn constant_integrand_exits_immediately() {
        let a = sv(&[1, 2]);
        let prob = DirichletProblem {
            a: a.clone(),
            domain: Rect::new(vec![0.0, 0.0], vec![2.0, 3.0]).unwrap(),
            integrand: builtin(&IntegrandSpec::Constant { c: 1.5 }, 1, 2).unwrap(),
            datum: Datum::Polynomial(APolynomial::new(1, vec![0.0, 0.0], vec![(MultiIndex(vec![1, 0]), vec![2.0])]).unwrap()),
            p: 2.0,
            resolution: vec![9, 9],
        };
        let sol = solve_dirichlet(&prob, &SolveOptions::default()).unwrap();
        assert!((sol.energy - 9.0).abs() <= 1e-12 * 9.0);
        assert_eq!(sol.trace.iterations, 0);
    }
}
