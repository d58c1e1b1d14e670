//! Numerical `a`-quasiconvex envelopes by direct minimization of
//! `φ ↦ ⟨F(V + ∇ₐφ)⟩` over zero-boundary fields on `Q = [−1,1]^N`.

use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::container::{read_container, write_container, QFT_MAGIC};
use crate::energy::EnergyAssembly;
use crate::error::{invalid, Error, Result};
use crate::grid::{Grid, GridField};
use crate::integrand::{Integrand, IntegrandSpec};
use crate::optim::{lbfgs, LbfgsOptions, Termination};
use crate::smoothness::SmoothnessVector;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvelopeOptions {
    /// Nodes per axis of the test grid on `Q`.
    pub resolution: usize,
    /// Number of descents, the `φ = 0` start included.
    pub multistart: usize,
    pub tol: f64,
    pub seed: u64,
    pub max_iter: usize,
    /// Resolutions used by [`dacorogna_ladder`].
    pub ladder: Vec<usize>,
    /// Worker threads for tabulation; `None` uses the global pool.
    pub threads: Option<usize>,
}

impl Default for EnvelopeOptions {
    fn default() -> Self {
        Self {
            resolution: 33,
            multistart: 8,
            tol: 1e-6,
            seed: 0,
            max_iter: 3000,
            ladder: vec![17, 33, 65],
            threads: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StartKind {
    Zero,
    Random,
    Laminate,
    Warm,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StartRecord {
    pub kind: StartKind,
    pub value: f64,
    pub iterations: usize,
    pub termination: Option<Termination>,
}

#[derive(Clone, Debug)]
pub struct Dacorogna {
    /// `min(F(V), best descent value)`.
    pub value: f64,
    pub f_at_v: f64,
    /// Argmin; zero when no descent beat `F(V)`.
    pub phi: GridField,
    pub starts: Vec<StartRecord>,
}

fn check_shapes(f: &Integrand, a: &SmoothnessVector, v: &[f64]) -> Result<()> {
    f.require_growth()?;
    if f.m() != a.m() {
        return Err(invalid("a", format!("integrand has m = {} columns but a has {}", f.m(), a.m())));
    }
    if v.len() != f.dim() {
        return Err(invalid("V", format!("expected {} entries, got {}", f.dim(), v.len())));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(invalid("V", "entries must be finite"));
    }
    Ok(())
}

/// Smooth window vanishing to order `aᵢ` at both ends of every axis.
fn window(a: &SmoothnessVector, x: &[f64]) -> f64 {
    x.iter().enumerate().map(|(i, &xi)| (1.0 - xi * xi).max(0.0).powi(a.order(i) as i32)).product()
}

pub(crate) fn random_start(grid: &Grid, n: usize, rng: &mut ChaCha8Rng) -> GridField {
    let dim = grid.dim();
    let modes: Vec<(Vec<f64>, Vec<f64>, f64)> = (0..4)
        .map(|_| {
            let k: Vec<f64> = (0..dim).map(|_| rng.gen_range(1..=6) as f64 * PI / 2.0).collect();
            let c: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            (k, c, rng.gen_range(0.0..2.0 * PI))
        })
        .collect();
    let a = grid.a().clone();
    GridField::from_fn(grid.clone(), n, |x, out| {
        out.fill(0.0);
        let w = window(&a, x);
        for (k, c, ph) in &modes {
            let s: f64 = k.iter().zip(x).map(|(ki, xi)| ki * (xi + 1.0)).sum::<f64>() + ph;
            for (o, ci) in out.iter_mut().zip(c) {
                *o += w * ci * s.sin();
            }
        }
    })
}

pub(crate) fn laminate_start(grid: &Grid, n: usize, which: usize, rng: &mut ChaCha8Rng) -> GridField {
    let dim = grid.dim();
    let mut xi: Vec<f64> = if which < dim {
        (0..dim).map(|i| if i == which { 1.0 } else { 0.0 }).collect()
    } else {
        (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect()
    };
    let norm = xi.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
    xi.iter_mut().for_each(|v| *v /= norm);
    let omega = PI * 2f64.powi(rng.gen_range(0..4)) * rng.gen_range(1.0..2.0);
    let phase = rng.gen_range(0.0..2.0 * PI);
    let amp: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let a = grid.a().clone();
    GridField::from_fn(grid.clone(), n, |x, out| {
        let s: f64 = xi.iter().zip(x).map(|(k, xv)| k * xv).sum();
        let c = window(&a, x) * (omega * s + phase).cos();
        for (o, ai) in out.iter_mut().zip(&amp) {
            *o = ai * c;
        }
    })
}

/// Prolongation candidates of a coarse argmin onto a finer grid on `Q`:
/// interpolation, and for isotropic `a` with `r_fine − 1 = 2(r_coarse − 1)`
/// the `2^N`-fold tiling by copies scaled by `2^{−a}`, which reproduces the
/// coarse `∇ₐ` values exactly inside each tile.
pub fn prolongate(phi: &GridField, fine: &Grid) -> Vec<GridField> {
    let mut out = Vec::new();
    let mut interp = phi.resample(fine);
    interp.clear_collar();
    out.push(interp);
    let coarse = phi.grid();
    let a = coarse.a();
    let nested = (0..fine.dim()).all(|i| fine.counts()[i] - 1 == 2 * (coarse.counts()[i] - 1));
    if a.is_isotropic() && nested && fine.domain() == coarse.domain() {
        let n = phi.n();
        let scale = 0.5f64.powi(a.order(0) as i32);
        let span: Vec<usize> = coarse.counts().iter().map(|c| c - 1).collect();
        let mut values = vec![0.0; fine.num_nodes() * n];
        for node in 0..fine.num_nodes() {
            let idx = fine.node_index(node);
            let local: Vec<usize> = idx.iter().zip(&span).map(|(&k, &s)| k - (k / s).min(1) * s).collect();
            let src = coarse.linear_index(&local);
            for c in 0..n {
                values[node * n + c] = scale * phi.at(src)[c];
            }
        }
        let mut tiled = GridField::from_values(fine.clone(), n, values).expect("finite");
        tiled.clear_collar();
        out.push(tiled);
    }
    out
}

fn run_on_grid(
    f: &Integrand,
    v: &[f64],
    grid: &Grid,
    opts: &EnvelopeOptions,
    warm: &[GridField],
    stop_below: Option<f64>,
) -> Result<Dacorogna> {
    let n = f.n();
    let f_at_v = f.eval(v);
    if !f_at_v.is_finite() {
        return Err(invalid("V", format!("F(V) = {f_at_v} is not finite")));
    }
    let asm = EnergyAssembly::new(grid, n, v, 1.0 / grid.num_eval() as f64)?;
    let pre = asm.preconditioner()?;
    let lopts = LbfgsOptions { max_iter: opts.max_iter, memory: 12, grad_tol: opts.tol, stop_below };
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);

    // descents must beat F(V) by more than summation round-off
    let roundoff_floor = f_at_v - 1e3 * f64::EPSILON * (1.0 + f_at_v.abs());
    let mut best_value = f_at_v;
    let mut best_x = vec![0.0; asm.dofs()];
    let mut starts = vec![StartRecord { kind: StartKind::Zero, value: f_at_v, iterations: 0, termination: None }];

    let mut candidates: Vec<(StartKind, GridField)> =
        warm.iter().map(|w| (StartKind::Warm, w.clone())).collect();
    let mut laminates = 0;
    for k in 1..opts.multistart.max(1) {
        let amplitude = [0.5, 1.0, 2.0][k % 3];
        let (kind, mut field) = if k % 2 == 1 {
            laminates += 1;
            (StartKind::Laminate, laminate_start(grid, n, laminates - 1, &mut rng))
        } else {
            (StartKind::Random, random_start(grid, n, &mut rng))
        };
        field.clear_collar();
        let x = asm.gather(field.values());
        let mats = asm.matrices(&x);
        let rms = (mats.iter().zip(v.iter().cycle()).map(|(m, c)| (m - c).powi(2)).sum::<f64>()
            / asm.num_eval() as f64)
            .sqrt();
        if rms > 0.0 {
            field = field.scaled(amplitude / rms);
        }
        candidates.push((kind, field));
    }

    for (kind, field) in candidates {
        let x0 = asm.gather(field.values());
        let res = lbfgs(|x, g| asm.energy_grad(f, x, g), x0, Some(&pre), &lopts)?;
        starts.push(StartRecord {
            kind,
            value: res.f,
            iterations: res.iterations,
            termination: Some(res.termination),
        });
        if res.f < best_value && res.f < roundoff_floor {
            best_value = res.f;
            best_x = res.x;
        }
        if stop_below.is_some_and(|s| best_value < s) {
            break;
        }
    }
    Ok(Dacorogna { value: best_value, f_at_v, phi: asm.field(&best_x), starts })
}

fn test_grid(a: &SmoothnessVector, resolution: usize) -> Result<Grid> {
    Grid::cube(a.clone(), resolution)
}

/// Upper estimate of `𝒬F(V)` on the test grid of `opts.resolution` nodes.
pub fn dacorogna_min(f: &Integrand, a: &SmoothnessVector, v: &[f64], opts: &EnvelopeOptions) -> Result<Dacorogna> {
    check_shapes(f, a, v)?;
    run_on_grid(f, v, &test_grid(a, opts.resolution)?, opts, &[], None)
}

#[derive(Clone, Debug)]
pub struct LadderLevel {
    pub resolution: usize,
    pub result: Dacorogna,
}

/// [`dacorogna_min`] along `opts.ladder`, warm-starting each level from the
/// prolongated argmin of the previous one.
pub fn dacorogna_ladder(
    f: &Integrand,
    a: &SmoothnessVector,
    v: &[f64],
    opts: &EnvelopeOptions,
) -> Result<Vec<LadderLevel>> {
    check_shapes(f, a, v)?;
    if opts.ladder.is_empty() {
        return Err(invalid("ladder", "at least one resolution is required"));
    }
    let mut levels: Vec<LadderLevel> = Vec::new();
    for &resolution in &opts.ladder {
        let grid = test_grid(a, resolution)?;
        let warm = levels.last().map(|l| prolongate(&l.result.phi, &grid)).unwrap_or_default();
        let result = run_on_grid(f, v, &grid, opts, &warm, None)?;
        levels.push(LadderLevel { resolution, result });
    }
    Ok(levels)
}

#[derive(Clone, Debug)]
pub struct AqcVerdict {
    pub holds: bool,
    pub value: f64,
    pub f_at_v: f64,
    /// Present when violated: a zero-boundary `φ` with `⟨F(V+∇ₐφ)⟩ < F(V) − tol`.
    pub witness: Option<GridField>,
}

/// Tests `F(V) ≤ ⟨F(V + ∇ₐφ)⟩` over the multistart portfolio.
pub fn is_aqc_at(f: &Integrand, a: &SmoothnessVector, v: &[f64], opts: &EnvelopeOptions) -> Result<AqcVerdict> {
    check_shapes(f, a, v)?;
    let f_at_v = f.eval(v);
    let stop = f_at_v - 10.0 * opts.tol * (1.0 + f_at_v.abs());
    let res = run_on_grid(f, v, &test_grid(a, opts.resolution)?, opts, &[], Some(stop))?;
    let holds = res.value >= f_at_v - opts.tol;
    Ok(AqcVerdict { holds, value: res.value, f_at_v, witness: (!holds).then_some(res.phi) })
}

/// Tensor lattice in `ℝ^{n×m}`: per flattened coordinate `(min, max, count)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Lattice {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
    pub count: Vec<usize>,
}

impl Lattice {
    pub fn new(min: Vec<f64>, max: Vec<f64>, count: Vec<usize>) -> Result<Self> {
        let l = Self { min, max, count };
        l.validate()?;
        Ok(l)
    }

    pub fn validate(&self) -> Result<()> {
        if self.min.len() != self.max.len() || self.min.len() != self.count.len() || self.min.is_empty() {
            return Err(invalid("lattice", "min, max and count must have the same nonzero length"));
        }
        for i in 0..self.dim() {
            if self.count[i] == 0 {
                return Err(invalid("lattice.count", format!("coordinate {i} has no nodes")));
            }
            if !(self.min[i].is_finite() && self.max[i].is_finite()) || self.max[i] < self.min[i] {
                return Err(invalid("lattice", format!("coordinate {i} has an invalid range")));
            }
            if self.count[i] == 1 && self.max[i] != self.min[i] {
                return Err(invalid("lattice", format!("coordinate {i} has one node but a nonzero range")));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.count.len()
    }

    pub fn len(&self) -> usize {
        self.count.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn coordinate(&self, axis: usize, k: usize) -> f64 {
        if k + 1 == self.count[axis] {
            self.max[axis]
        } else {
            let h = (self.max[axis] - self.min[axis]) / (self.count[axis] - 1) as f64;
            self.min[axis] + k as f64 * h
        }
    }

    /// Coordinates of node `node` in row-major order (last coordinate fastest).
    pub fn node(&self, node: usize) -> Vec<f64> {
        let mut rest = node;
        let mut out = vec![0.0; self.dim()];
        for axis in (0..self.dim()).rev() {
            let k = rest % self.count[axis];
            rest /= self.count[axis];
            out[axis] = self.coordinate(axis, k);
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableHeader {
    pub a: SmoothnessVector,
    pub n: usize,
    pub m: usize,
    pub p: f64,
    pub lattice: Lattice,
    pub integrand: String,
    pub spec: Option<IntegrandSpec>,
    pub options: EnvelopeOptions,
    pub failed: Vec<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

/// Tabulated `𝒬F̂` on a lattice, with a per-node failure mask.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvelopeTable {
    pub header: TableHeader,
    pub values: Vec<f64>,
}

impl EnvelopeTable {
    pub fn lattice(&self) -> &Lattice {
        &self.header.lattice
    }

    pub fn failures(&self) -> usize {
        self.header.failed.iter().filter(|&&b| b).count()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_container(BufWriter::new(File::create(path)?), QFT_MAGIC, &self.header, &self.values)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let (header, values): (TableHeader, Vec<f64>) = read_container(BufReader::new(File::open(path)?), QFT_MAGIC)?;
        header.lattice.validate()?;
        if values.len() != header.lattice.len() || header.failed.len() != values.len() {
            return Err(Error::Format(format!(
                "lattice has {} nodes but the file holds {} values and {} mask entries",
                header.lattice.len(),
                values.len(),
                header.failed.len()
            )));
        }
        Ok(Self { header, values })
    }
}

/// Runs [`dacorogna_min`] at every lattice node (node `i` uses seed
/// `opts.seed + i`). Failed nodes keep the safe upper estimate `F(V)`.
pub fn tabulate_envelope(
    f: &Integrand,
    a: &SmoothnessVector,
    lattice: &Lattice,
    opts: &EnvelopeOptions,
) -> Result<EnvelopeTable> {
    lattice.validate()?;
    if lattice.dim() != f.dim() {
        return Err(invalid("lattice", format!("lattice has {} coordinates, F takes {}", lattice.dim(), f.dim())));
    }
    check_shapes(f, a, &lattice.node(0))?;
    let grid = test_grid(a, opts.resolution)?;
    let work = || -> Vec<(f64, bool)> {
        (0..lattice.len())
            .into_par_iter()
            .map(|i| {
                let v = lattice.node(i);
                let node_opts = EnvelopeOptions { seed: opts.seed.wrapping_add(i as u64), ..opts.clone() };
                match run_on_grid(f, &v, &grid, &node_opts, &[], None) {
                    Ok(r) => (r.value, false),
                    Err(_) => (f.eval(&v), true),
                }
            })
            .collect()
    };
    let results = match opts.threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| invalid("threads", e.to_string()))?
            .install(work),
        None => work(),
    };
    let (values, failed): (Vec<f64>, Vec<bool>) = results.into_iter().unzip();
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::Diverged(format!("non-finite envelope value at lattice node {i}")));
    }
    Ok(EnvelopeTable {
        header: TableHeader {
            a: a.clone(),
            n: f.n(),
            m: f.m(),
            p: f.growth().p,
            lattice: lattice.clone(),
            integrand: f.name().to_owned(),
            spec: f.spec().cloned(),
            options: opts.clone(),
            failed,
            config_hash: None,
        },
        values,
    })
}

/// Multilinear interpolation of a table; errors outside the lattice hull.
pub fn envelope_interpolate(table: &EnvelopeTable, v: &[f64]) -> Result<f64> {
    let lat = table.lattice();
    let dim = lat.dim();
    if v.len() != dim {
        return Err(invalid("V", format!("expected {dim} entries, got {}", v.len())));
    }
    let mut base = vec![0usize; dim];
    let mut frac = vec![0.0; dim];
    for i in 0..dim {
        let (lo, hi) = (lat.min[i], lat.max[i]);
        let slack = 1e-12 * (1.0 + lo.abs().max(hi.abs()));
        if !(v[i] >= lo - slack && v[i] <= hi + slack) {
            return Err(Error::OutsideHull { coordinate: i, value: v[i], min: lo, max: hi });
        }
        let c = lat.count[i];
        if c == 1 {
            continue;
        }
        let h = (hi - lo) / (c - 1) as f64;
        let k = (((v[i] - lo) / h).floor().max(0.0) as usize).min(c - 2);
        base[i] = k;
        frac[i] = ((v[i] - lat.coordinate(i, k)) / (lat.coordinate(i, k + 1) - lat.coordinate(i, k))).clamp(0.0, 1.0);
    }
    let mut strides = vec![1usize; dim];
    for i in (0..dim.saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * lat.count[i + 1];
    }
    // fold one axis at a time so node queries stay exact
    let mut corners: Vec<f64> = Vec::with_capacity(1 << dim);
    for mask in 0..(1usize << dim) {
        let mut node = 0;
        for i in 0..dim {
            let bit = (mask >> (dim - 1 - i)) & 1;
            let k = if lat.count[i] == 1 { 0 } else { base[i] + bit };
            node += k * strides[i];
        }
        corners.push(table.values[node]);
    }
    for i in (0..dim).rev() {
        let t = frac[i];
        let half = corners.len() / 2;
        let next: Vec<f64> = (0..half)
            .map(|j| {
                let (lo, hi) = (corners[2 * j], corners[2 * j + 1]);
                if t == 0.0 {
                    lo
                } else if t == 1.0 {
                    hi
                } else {
                    lo + t * (hi - lo)
                }
            })
            .collect();
        corners = next;
    }
    Ok(corners[0])
}
