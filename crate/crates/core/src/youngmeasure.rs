//! Empirical Young-measure diagnostics.

use std::io::Write;

use num_integer::Integer;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::envelope::{envelope_interpolate, random_start, EnvelopeTable};
use crate::error::{invalid, Error, Result};
use crate::grid::{lp_norm, project_to_gradients, truncate, AGradientField, Grid, GridField, ProjectionOptions};
use crate::integrand::Integrand;
use crate::smoothness::{box_cover, cube_lattice, AnisoBox, CoverOptions, Rect};

/// Weighted atoms in `ℝ^{n×m}`, weights summing to one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalMeasure {
    pub n: usize,
    pub m: usize,
    /// Row-major matrices, one per atom.
    pub atoms: Vec<f64>,
    pub weights: Vec<f64>,
}

impl EmpiricalMeasure {
    pub fn new(n: usize, m: usize, atoms: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        let d = n * m;
        if d == 0 || atoms.len() != d * weights.len() || weights.is_empty() {
            return Err(invalid("atoms", "atom and weight counts disagree"));
        }
        if weights.iter().any(|w| !(*w >= 0.0)) || atoms.iter().any(|x| !x.is_finite()) {
            return Err(invalid("weights", "weights must be nonnegative and atoms finite"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(invalid("weights", format!("weights sum to {total}, not 1")));
        }
        Ok(Self { n, m, atoms, weights })
    }

    pub fn dim(&self) -> usize {
        self.n * self.m
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn atom(&self, k: usize) -> &[f64] {
        let d = self.dim();
        &self.atoms[k * d..(k + 1) * d]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], f64)> {
        self.atoms.chunks_exact(self.dim()).zip(self.weights.iter().copied())
    }

    /// `⟨ν, g⟩`.
    pub fn integrate(&self, g: impl Fn(&[f64]) -> f64) -> f64 {
        self.iter().map(|(x, w)| w * g(x)).sum()
    }

    /// One row per atom: coordinates, then weight.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header: Vec<String> = (0..self.dim()).map(|k| format!("x{}", k + 1)).collect();
        header.push("weight".into());
        out.write_record(&header).map_err(csv_err)?;
        for (x, wt) in self.iter() {
            let row: Vec<String> = x.iter().chain(std::iter::once(&wt)).map(|v| format!("{v:e}")).collect();
            out.write_record(&row).map_err(csv_err)?;
        }
        out.flush()?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(e.to_string())
}

/// Pushforward of normalized volume under the field: one atom per
/// evaluation node, uniform weights, node order.
pub fn empirical_measure(v: &AGradientField) -> EmpiricalMeasure {
    let count = v.num_nodes();
    EmpiricalMeasure { n: v.n(), m: v.m(), atoms: v.values().to_vec(), weights: vec![1.0 / count as f64; count] }
}

/// Barycentre and `∫ |X|^p dν`.
pub fn moments(nu: &EmpiricalMeasure, p: f64) -> (Vec<f64>, f64) {
    let mut bary = vec![0.0; nu.dim()];
    let mut moment = 0.0;
    for (x, w) in nu.iter() {
        for (b, xi) in bary.iter_mut().zip(x) {
            *b += w * xi;
        }
        moment += w * frob(x).powf(p);
    }
    (bary, moment)
}

fn frob(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Weighted 1-D Wasserstein-1 distance, `∫ |F_μ − F_ν|`.
fn w1_line(mut a: Vec<(f64, f64)>, mut b: Vec<(f64, f64)>) -> f64 {
    a.sort_by(|x, y| x.0.total_cmp(&y.0));
    b.sort_by(|x, y| x.0.total_cmp(&y.0));
    let (mut i, mut j) = (0, 0);
    let (mut fa, mut fb) = (0.0f64, 0.0f64);
    let mut last: Option<f64> = None;
    let mut dist = 0.0;
    while i < a.len() || j < b.len() {
        let x = match (a.get(i), b.get(j)) {
            (Some(p), Some(q)) => p.0.min(q.0),
            (Some(p), None) => p.0,
            (None, Some(q)) => q.0,
            (None, None) => unreachable!(),
        };
        if let Some(prev) = last {
            dist += (fa - fb).abs() * (x - prev);
        }
        while i < a.len() && a[i].0 == x {
            fa += a[i].1;
            i += 1;
        }
        while j < b.len() && b[j].0 == x {
            fb += b[j].1;
            j += 1;
        }
        last = Some(x);
    }
    dist
}

/// Sliced distance: the largest `W₁` between projections onto `directions`
/// seeded random unit directions.
pub fn sliced_w1(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure, directions: usize, seed: u64) -> Result<f64> {
    if mu.dim() != nu.dim() {
        return Err(invalid("nu", "measures live in different spaces"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: f64 = 0.0;
    for _ in 0..directions.max(1) {
        let mut dir: Vec<f64> = (0..mu.dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let norm = frob(&dir);
        if norm == 0.0 {
            continue;
        }
        dir.iter_mut().for_each(|d| *d /= norm);
        let project = |m: &EmpiricalMeasure| -> Vec<(f64, f64)> {
            m.iter().map(|(x, w)| (x.iter().zip(&dir).map(|(a, b)| a * b).sum(), w)).collect()
        };
        best = best.max(w1_line(project(mu), project(nu)));
    }
    Ok(best)
}

#[derive(Clone, Debug)]
pub struct Tiling {
    pub field: GridField,
    pub boxes: Vec<AnisoBox>,
    /// Volume fraction of the domain covered by the boxes.
    pub covered_fraction: f64,
}

/// Fills `target` with copies `r·φ(r⁻¹⊙(x − x₀))` of a zero-boundary `φ` on
/// `Q`, one per box of a disjoint cover at radius at most `2^{−j}`.
///
/// On `Q` the cover is an exact lattice with radius `K^{−L}`, `L = lcm(a)`
/// and `K = ⌈2^{j/L}⌉`, so every box side count is an integer. Other domains
/// use the greedy cover and leave its remainder at zero.
pub fn scale_and_tile(phi: &GridField, j: u32, target: &Grid) -> Result<Tiling> {
    let a = target.a();
    if phi.grid().a() != a {
        return Err(invalid("phi", "smoothness vectors differ"));
    }
    if phi.grid().domain() != &Rect::cube(a.dim()) {
        return Err(invalid("phi", "the generator must live on Q = [-1, 1]^N"));
    }
    if !phi.is_zero_boundary() {
        return Err(invalid("phi", "the generator must vanish on the collar"));
    }
    let dim = a.dim();
    let domain = target.domain();
    let (boxes, covered_fraction) = if domain == &Rect::cube(dim) {
        let l = a.orders().iter().fold(1u64, |acc, &ai| acc.lcm(&(ai as u64)));
        let k = 2f64.powf(j as f64 / l as f64).ceil() as u64;
        let boxes = cube_lattice(a, k);
        (boxes, 1.0)
    } else {
        let cover = box_cover(domain, 2f64.powi(-(j as i32)), a, &CoverOptions::default())?;
        (cover.boxes, cover.covered_fraction)
    };

    for b in &boxes {
        for axis in 0..dim {
            let nodes = 2.0 * b.half_width(axis) / target.spacing()[axis];
            if nodes < 4.0 * a.order(axis) as f64 {
                return Err(Error::StencilTooWide {
                    what: format!("scale {j}"),
                    reason: format!("a tile spans {nodes:.1} intervals on axis {axis}; refine the target grid"),
                });
            }
        }
    }

    let n = phi.n();
    let mut field = GridField::zeros(target.clone(), n);
    let mut local = vec![0.0; dim];
    let mut buf = vec![0.0; n];
    for b in &boxes {
        let bounds = b.bounds();
        let (lo, hi): (Vec<usize>, Vec<usize>) = (0..dim)
            .map(|i| {
                let h = target.spacing()[i];
                let x0 = domain.lower[i];
                let last = target.counts()[i] - 1;
                let lo = (((bounds.lower[i] - x0) / h) - 1e-9).ceil().max(0.0) as usize;
                let hi = ((((bounds.upper[i] - x0) / h) + 1e-9).floor() as usize).min(last);
                (lo, hi)
            })
            .unzip();
        let half: Vec<f64> = (0..dim).map(|i| b.half_width(i)).collect();
        for node in target.box_nodes(&lo, &hi) {
            let x = target.node_coords(node);
            for i in 0..dim {
                local[i] = ((x[i] - b.center[i]) / half[i]).clamp(-1.0, 1.0);
            }
            phi.sample(&local, &mut buf);
            let out = &mut field.values_mut()[node * n..(node + 1) * n];
            for (o, v) in out.iter_mut().zip(&buf) {
                *o = b.radius * v;
            }
        }
    }
    field.clear_collar();
    Ok(Tiling { field, boxes, covered_fraction })
}

/// Seeded smooth zero-boundary generator on `Q`, suitable for [`scale_and_tile`].
pub fn random_generator(grid: &Grid, n: usize, amplitude: f64, seed: u64) -> Result<GridField> {
    if grid.domain() != &Rect::cube(grid.dim()) {
        return Err(invalid("grid", "generators live on Q = [-1, 1]^N"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut phi = random_start(grid, n, &mut rng).scaled(amplitude);
    phi.clear_collar();
    Ok(phi)
}

/// `⟨ν, g⟩ − 𝒬ĝ(barycentre)`, with `𝒬ĝ = min(table, g)`.
pub fn jensen_gap(nu: &EmpiricalMeasure, g: &Integrand, table: &EnvelopeTable) -> Result<f64> {
    if nu.dim() != g.dim() || table.header.n != g.n() || table.header.m != g.m() {
        return Err(invalid("nu", "measure, integrand and table shapes disagree"));
    }
    let (bary, _) = moments(nu, 1.0);
    let q = envelope_interpolate(table, &bary)?.min(g.eval(&bary));
    Ok(nu.integrate(|x| g.eval(x)) - q)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecomposeOptions {
    /// Exponent of the tail-mass and p-mass diagnostics.
    pub p: f64,
    /// Threshold of the residual volume-fraction proxy.
    pub delta: f64,
    pub projection_tol: f64,
}

impl Default for DecomposeOptions {
    fn default() -> Self {
        Self { p: 2.0, delta: 1e-6, projection_tol: 1e-13 }
    }
}

pub const TAIL_LEVELS: [f64; 3] = [2.0, 4.0, 8.0];

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DecomposeEntry {
    /// Truncation level `k_ℓ = 2^ℓ`.
    pub k: f64,
    /// `∫_{|∇̃g|>M} |∇̃g|^p` for `M` in [`TAIL_LEVELS`].
    pub tail_mass: [f64; 3],
    /// Volume fraction where `|residual| > δ`.
    pub residual_fraction: f64,
    pub input_p_mass: f64,
    pub oscillation_p_mass: f64,
    pub concentration_p_mass: f64,
    pub projection_iterations: usize,
}

#[derive(Clone, Debug)]
pub struct Decomposition {
    /// Zero-boundary fields `g_ℓ`.
    pub oscillation: Vec<GridField>,
    /// `∇̃u_ℓ − ∇̃g_ℓ`.
    pub concentration: Vec<AGradientField>,
    pub report: Vec<DecomposeEntry>,
}

fn p_mass(field: &AGradientField, p: f64) -> f64 {
    lp_norm(field, p).powf(p)
}

fn tail_mass(field: &AGradientField, p: f64, level: f64) -> f64 {
    let w = field.n() * field.m();
    field.grid().quadrature_weight()
        * field
            .values()
            .chunks_exact(w)
            .map(frob)
            .filter(|&r| r > level)
            .map(|r| r.powf(p))
            .sum::<f64>()
}

/// Splits each `∇̃u_ℓ` into the full gradient of the projection of its
/// truncation at `2^ℓ` (oscillation) and the remainder (concentration).
pub fn decompose(fields: &[GridField], opts: &DecomposeOptions) -> Result<Decomposition> {
    if !(opts.p >= 1.0) || !(opts.delta > 0.0) {
        return Err(invalid("opts", "need p ≥ 1 and δ > 0"));
    }
    let popts = ProjectionOptions { tol: opts.projection_tol, max_iter: None };
    let parts: Vec<Result<(GridField, AGradientField, DecomposeEntry)>> = fields
        .par_iter()
        .enumerate()
        .map(|(l, u)| {
            let k = 2f64.powi(l as i32);
            let v = u.full_gradient()?;
            let proj = project_to_gradients(&truncate(&v, k)?, &popts)?;
            let osc = proj.u.full_gradient()?;
            let conc = v.sub(&osc);
            let w = conc.n() * conc.m();
            let over = conc.values().chunks_exact(w).filter(|x| frob(x) > opts.delta).count();
            let entry = DecomposeEntry {
                k,
                tail_mass: TAIL_LEVELS.map(|m| tail_mass(&osc, opts.p, m)),
                residual_fraction: over as f64 / conc.num_nodes() as f64,
                input_p_mass: p_mass(&v, opts.p),
                oscillation_p_mass: p_mass(&osc, opts.p),
                concentration_p_mass: p_mass(&conc, opts.p),
                projection_iterations: proj.iterations,
            };
            Ok((proj.u, conc, entry))
        })
        .collect();
    let mut out = Decomposition { oscillation: Vec::new(), concentration: Vec::new(), report: Vec::new() };
    for part in parts {
        let (g, b, e) = part?;
        out.oscillation.push(g);
        out.concentration.push(b);
        out.report.push(e);
    }
    Ok(out)
}

/// `V_j = ∇ₐu_j + v_j` with seeded noise scaled so that `‖v_j‖_p = ε_j`.
pub fn approximate_gradient_sequence(
    fields: &[GridField],
    eps: &[f64],
    p: f64,
    seed: u64,
) -> Result<Vec<AGradientField>> {
    if eps.len() != fields.len() {
        return Err(invalid("eps", "one noise level per field is required"));
    }
    if eps.iter().any(|e| !(*e >= 0.0)) || eps.windows(2).any(|w| w[1] > w[0]) {
        return Err(invalid("eps", "noise levels must be nonnegative and nonincreasing"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    fields
        .iter()
        .zip(eps)
        .map(|(u, &e)| {
            let d = u.a_gradient()?;
            let noise: Vec<f64> = d.values().iter().map(|_| rng.gen_range(-1.0..1.0)).collect();
            if e == 0.0 {
                return Ok(d);
            }
            let raw = d.with_values(noise);
            let s = e / lp_norm(&raw, p);
            let values = d.values().iter().zip(raw.values()).map(|(x, v)| x + s * v).collect();
            Ok(d.with_values(values))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_w1_of_shifted_atoms() {
        let a = vec![(0.0, 0.5), (1.0, 0.5)];
        let b = vec![(0.5, 0.5), (1.5, 0.5)];
        assert!((w1_line(a.clone(), b) - 0.5).abs() < 1e-15);
        assert_eq!(w1_line(a.clone(), a), 0.0);
    }

    #[test]
    fn moment_examples() {
        let x = [3.0, 4.0];
        let single = EmpiricalMeasure::new(1, 2, x.to_vec(), vec![1.0]).unwrap();
        let (b, m) = moments(&single, 3.0);
        assert_eq!(b, x.to_vec());
        assert!((m - 125.0).abs() < 1e-12);
        let pair = EmpiricalMeasure::new(1, 2, vec![3.0, 4.0, -3.0, -4.0], vec![0.5, 0.5]).unwrap();
        let (b, m) = moments(&pair, 2.0);
        assert_eq!(b, vec![0.0, 0.0]);
        assert!((m - 25.0).abs() < 1e-12);
        assert!(EmpiricalMeasure::new(1, 1, vec![0.0, 1.0], vec![0.5, 0.6]).is_err());
    }
}
