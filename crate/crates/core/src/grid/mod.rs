//! Discrete fields on axis-aligned rectangular grids and the
//! forward-difference stencils realising `∂^α` and `∇ₐ`.
//!
//! Nodes are stored in row-major order (last axis fastest). Every derivative
//! is evaluated on the *evaluation set* `E`: the nodes whose index along axis
//! `i` lies in `[0, countᵢ − 1 − aᵢ]`, so every stencil with `αᵢ ≤ aᵢ` fits.
//! A zero-boundary field vanishes on the collar of width `aᵢ` at both ends of
//! each axis; summing a forward difference of such a field over `E` then
//! telescopes to exactly zero.

mod approx;
mod norms;
mod polynomial;
mod projection;

pub use approx::{
    cutoff, piecewise_gradient_approx, polynomial_approx, Cutoff, PiecewiseApprox, PiecewiseOptions,
    PolynomialApprox,
};
pub use norms::{lp_norm, sobolev_norm, truncate, truncate_matrix, NormVariant};
pub use polynomial::APolynomial;
pub use projection::{project_to_gradients, Projection, ProjectionOptions};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::smoothness::{homogeneity_set, lower_set, MultiIndex, Rect, SmoothnessVector};

/// A rectangular grid carrying the smoothness vector it is built for.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GridSpec", into = "GridSpec")]
pub struct Grid {
    a: SmoothnessVector,
    domain: Rect,
    counts: Vec<usize>,
    spacing: Vec<f64>,
    strides: Vec<usize>,
}

/// Serialized form of a [`Grid`].
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub a: SmoothnessVector,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub counts: Vec<usize>,
}

impl TryFrom<GridSpec> for Grid {
    type Error = Error;
    fn try_from(spec: GridSpec) -> Result<Self> {
        Grid::new(spec.a, Rect::new(spec.lower, spec.upper)?, spec.counts)
    }
}

impl From<Grid> for GridSpec {
    fn from(g: Grid) -> Self {
        GridSpec { a: g.a, lower: g.domain.lower, upper: g.domain.upper, counts: g.counts }
    }
}

impl Grid {
    pub fn new(a: SmoothnessVector, domain: Rect, counts: Vec<usize>) -> Result<Self> {
        let dim = a.dim();
        if domain.dim() != dim || counts.len() != dim {
            return Err(invalid("grid", format!("domain, counts and a must share dimension {dim}")));
        }
        for i in 0..dim {
            let need = 2 * a.order(i) as usize + 1;
            if counts[i] < need {
                return Err(invalid(
                    "resolution",
                    format!("axis {i} has {} nodes; at least 2·a{i}+1 = {need} are required", counts[i]),
                ));
            }
            if !(domain.width(i) > 0.0) {
                return Err(invalid("domain", format!("axis {i} has zero width")));
            }
        }
        let spacing = (0..dim).map(|i| domain.width(i) / (counts[i] - 1) as f64).collect();
        let mut strides = vec![1usize; dim];
        for i in (0..dim.saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * counts[i + 1];
        }
        Ok(Self { a, domain, counts, spacing, strides })
    }

    /// `Q = [-1,1]^N` with `resolution` nodes per axis.
    pub fn cube(a: SmoothnessVector, resolution: usize) -> Result<Self> {
        let dim = a.dim();
        Self::new(a, Rect::cube(dim), vec![resolution; dim])
    }

    pub fn a(&self) -> &SmoothnessVector {
        &self.a
    }

    pub fn domain(&self) -> &Rect {
        &self.domain
    }

    pub fn dim(&self) -> usize {
        self.counts.len()
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }

    pub fn strides(&self) -> &[usize] {
        &self.strides
    }

    pub fn num_nodes(&self) -> usize {
        self.counts.iter().product()
    }

    /// Collar widths (`aᵢ` nodes per axis).
    pub fn collar(&self) -> Vec<usize> {
        self.a.orders().iter().map(|&k| k as usize).collect()
    }

    pub fn coordinate(&self, axis: usize, index: usize) -> f64 {
        if index + 1 == self.counts[axis] {
            self.domain.upper[axis]
        } else {
            self.domain.lower[axis] + index as f64 * self.spacing[axis]
        }
    }

    pub fn node_index(&self, node: usize) -> Vec<usize> {
        let mut rest = node;
        self.strides
            .iter()
            .map(|&s| {
                let k = rest / s;
                rest %= s;
                k
            })
            .collect()
    }

    pub fn linear_index(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.strides).map(|(i, s)| i * s).sum()
    }

    pub fn node_coords(&self, node: usize) -> Vec<f64> {
        self.node_index(node)
            .iter()
            .enumerate()
            .map(|(axis, &k)| self.coordinate(axis, k))
            .collect()
    }

    pub fn is_collar(&self, node: usize) -> bool {
        self.node_index(node)
            .iter()
            .enumerate()
            .any(|(i, &k)| {
                let w = self.a.order(i) as usize;
                k < w || k + w >= self.counts[i]
            })
    }

    /// Nodes off the collar, i.e. the degrees of freedom of a zero-boundary field.
    pub fn free_nodes(&self) -> Vec<usize> {
        let lo: Vec<usize> = self.collar();
        let hi: Vec<usize> = (0..self.dim()).map(|i| self.counts[i] - 1 - lo[i]).collect();
        self.box_nodes(&lo, &hi)
    }

    /// Per-axis number of evaluation nodes, `countᵢ − aᵢ`.
    pub fn eval_counts(&self) -> Vec<usize> {
        (0..self.dim()).map(|i| self.counts[i] - self.a.order(i) as usize).collect()
    }

    /// Evaluation nodes in row-major order.
    pub fn eval_nodes(&self) -> Vec<usize> {
        let lo = vec![0; self.dim()];
        let hi: Vec<usize> = self.eval_counts().iter().map(|c| c - 1).collect();
        self.box_nodes(&lo, &hi)
    }

    pub fn num_eval(&self) -> usize {
        self.eval_counts().iter().product()
    }

    /// Quadrature weight of one evaluation node: `|Ω| / #E`.
    pub fn quadrature_weight(&self) -> f64 {
        self.domain.volume() / self.num_eval() as f64
    }

    /// Nodes whose index lies in the closed index box `[lo, hi]`, row-major.
    pub fn box_nodes(&self, lo: &[usize], hi: &[usize]) -> Vec<usize> {
        let dim = self.dim();
        if (0..dim).any(|i| lo[i] > hi[i]) {
            return Vec::new();
        }
        let mut out = Vec::with_capacity((0..dim).map(|i| hi[i] - lo[i] + 1).product());
        let mut idx = lo.to_vec();
        loop {
            out.push(self.linear_index(&idx));
            let mut axis = dim;
            loop {
                if axis == 0 {
                    return out;
                }
                axis -= 1;
                if idx[axis] < hi[axis] {
                    idx[axis] += 1;
                    break;
                }
                idx[axis] = lo[axis];
            }
        }
    }

    /// The nested grid with `2·countᵢ − 1` nodes per axis.
    pub fn refine(&self) -> Grid {
        let counts = self.counts.iter().map(|c| 2 * c - 1).collect();
        Grid::new(self.a.clone(), self.domain.clone(), counts).expect("refinement of a valid grid is valid")
    }

    /// Builds the forward-difference stencil of `∂^α`.
    pub fn stencil(&self, alpha: &MultiIndex) -> Result<Stencil> {
        if alpha.dim() != self.dim() {
            return Err(invalid("alpha", format!("expected {} entries, got {}", self.dim(), alpha.dim())));
        }
        for (i, &k) in alpha.as_slice().iter().enumerate() {
            if k > self.a.order(i) {
                return Err(Error::StencilTooWide {
                    what: format!("∂^{alpha}"),
                    reason: format!("order {k} on axis {i} exceeds a{i} = {}", self.a.order(i)),
                });
            }
        }
        let mut offsets = vec![0isize];
        let mut weights = vec![1.0f64];
        for (axis, &k) in alpha.as_slice().iter().enumerate() {
            if k == 0 {
                continue;
            }
            let h = self.spacing[axis].powi(k as i32);
            let stride = self.strides[axis] as isize;
            let mut new_offsets = Vec::with_capacity(offsets.len() * (k as usize + 1));
            let mut new_weights = Vec::with_capacity(weights.len() * (k as usize + 1));
            for s in 0..=k {
                let sign = if (k - s) % 2 == 0 { 1.0 } else { -1.0 };
                let c = sign * binomial(k, s) / h;
                for (&o, &w) in offsets.iter().zip(&weights) {
                    new_offsets.push(o + s as isize * stride);
                    new_weights.push(w * c);
                }
            }
            offsets = new_offsets;
            weights = new_weights;
        }
        Ok(Stencil { alpha: alpha.clone(), offsets, weights })
    }
}

fn binomial(n: u32, k: u32) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Weights and linear node offsets of a forward-difference stencil.
#[derive(Clone, Debug)]
pub struct Stencil {
    pub alpha: MultiIndex,
    pub offsets: Vec<isize>,
    pub weights: Vec<f64>,
}

impl Stencil {
    #[inline]
    fn apply(&self, values: &[f64], n: usize, node: usize, comp: usize) -> f64 {
        self.offsets
            .iter()
            .zip(&self.weights)
            .map(|(&o, &w)| w * values[(node as isize + o) as usize * n + comp])
            .sum()
    }
}

/// An `n`-component field sampled on every node of a grid.
#[derive(Clone, Debug, PartialEq)]
pub struct GridField {
    grid: Grid,
    n: usize,
    values: Vec<f64>,
}

impl GridField {
    pub fn zeros(grid: Grid, n: usize) -> Self {
        let len = grid.num_nodes() * n;
        Self { grid, n, values: vec![0.0; len] }
    }

    pub fn from_values(grid: Grid, n: usize, values: Vec<f64>) -> Result<Self> {
        if n == 0 {
            return Err(invalid("n", "a field needs at least one component"));
        }
        if values.len() != grid.num_nodes() * n {
            return Err(invalid(
                "values",
                format!("expected {} values, got {}", grid.num_nodes() * n, values.len()),
            ));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(invalid("values", format!("non-finite value at flat index {pos}")));
        }
        Ok(Self { grid, n, values })
    }

    /// Samples `f(x, out)` at every node.
    pub fn from_fn(grid: Grid, n: usize, mut f: impl FnMut(&[f64], &mut [f64])) -> Self {
        let mut values = vec![0.0; grid.num_nodes() * n];
        for node in 0..grid.num_nodes() {
            let x = grid.node_coords(node);
            f(&x, &mut values[node * n..(node + 1) * n]);
        }
        Self { grid, n, values }
    }

    /// Scalar convenience around [`GridField::from_fn`].
    pub fn from_scalar_fn(grid: Grid, f: impl Fn(&[f64]) -> f64) -> Self {
        Self::from_fn(grid, 1, |x, out| out[0] = f(x))
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn at(&self, node: usize) -> &[f64] {
        &self.values[node * self.n..(node + 1) * self.n]
    }

    /// True when the field vanishes identically on the collar.
    pub fn is_zero_boundary(&self) -> bool {
        (0..self.grid.num_nodes())
            .filter(|&node| self.grid.is_collar(node))
            .all(|node| self.at(node).iter().all(|&v| v == 0.0))
    }

    /// Sets every collar value to zero.
    pub fn clear_collar(&mut self) {
        for node in 0..self.grid.num_nodes() {
            if self.grid.is_collar(node) {
                self.values[node * self.n..(node + 1) * self.n].fill(0.0);
            }
        }
    }

    pub fn scaled(&self, s: f64) -> GridField {
        GridField { grid: self.grid.clone(), n: self.n, values: self.values.iter().map(|v| v * s).collect() }
    }

    pub fn axpy(&mut self, s: f64, other: &GridField) {
        debug_assert_eq!(self.values.len(), other.values.len());
        for (x, y) in self.values.iter_mut().zip(&other.values) {
            *x += s * y;
        }
    }

    pub fn sub(&self, other: &GridField) -> GridField {
        let mut out = self.clone();
        out.axpy(-1.0, other);
        out
    }

    /// `∂^α` of each component on the evaluation set.
    /// Tensor cubic Lagrange interpolation at `x` (linear on axes with
    /// fewer than four nodes); `x` is clamped to the domain.
    pub fn sample(&self, x: &[f64], out: &mut [f64]) {
        let g = &self.grid;
        let dim = g.dim();
        let mut idx: Vec<Vec<usize>> = Vec::with_capacity(dim);
        let mut wts: Vec<Vec<f64>> = Vec::with_capacity(dim);
        for axis in 0..dim {
            let count = g.counts[axis];
            let lo = g.domain.lower[axis];
            let h = g.spacing[axis];
            let t = ((x[axis].clamp(lo, g.domain.upper[axis]) - lo) / h).min((count - 1) as f64);
            let width = count.min(4);
            let base = (t.floor() as isize - (width as isize - 1) / 2).clamp(0, (count - width) as isize) as usize;
            let nodes: Vec<usize> = (base..base + width).collect();
            let w: Vec<f64> = nodes
                .iter()
                .map(|&j| {
                    nodes
                        .iter()
                        .filter(|&&k| k != j)
                        .map(|&k| (t - k as f64) / (j as f64 - k as f64))
                        .product()
                })
                .collect();
            idx.push(nodes);
            wts.push(w);
        }
        out.fill(0.0);
        let mut pos = vec![0usize; dim];
        loop {
            let mut w = 1.0;
            let mut node = 0;
            for axis in 0..dim {
                w *= wts[axis][pos[axis]];
                node += idx[axis][pos[axis]] * g.strides[axis];
            }
            if w != 0.0 {
                for (o, v) in out.iter_mut().zip(self.at(node)) {
                    *o += w * v;
                }
            }
            let mut axis = dim;
            loop {
                if axis == 0 {
                    return;
                }
                axis -= 1;
                pos[axis] += 1;
                if pos[axis] < idx[axis].len() {
                    break;
                }
                pos[axis] = 0;
            }
        }
    }

    /// Interpolates onto every node of `target`.
    pub fn resample(&self, target: &Grid) -> GridField {
        GridField::from_fn(target.clone(), self.n, |x, out| self.sample(x, out))
    }

    pub fn mixed_derivative(&self, alpha: &MultiIndex) -> Result<AGradientField> {
        let a = self.grid.a();
        if a.weight(alpha) > crate::smoothness::Rational::from_integer(1) {
            return Err(invalid("alpha", format!("{alpha} lies outside the lower set of {a:?}")));
        }
        self.derivatives(vec![alpha.clone()])
    }

    /// `∇ₐu`: hyperplane columns in the global order.
    pub fn a_gradient(&self) -> Result<AGradientField> {
        self.derivatives(homogeneity_set(self.grid.a()))
    }

    /// `∇̃u`: all columns with `⟨α, a⁻¹⟩ ≤ 1`.
    pub fn full_gradient(&self) -> Result<AGradientField> {
        self.derivatives(lower_set(self.grid.a(), false))
    }

    /// Columns with `⟨α, a⁻¹⟩ < 1`.
    pub fn lower_gradient(&self) -> Result<AGradientField> {
        self.derivatives(lower_set(self.grid.a(), true))
    }

    pub fn derivatives(&self, columns: Vec<MultiIndex>) -> Result<AGradientField> {
        let op = DiffOperator::new(&self.grid, self.n, columns)?;
        let mut values = vec![0.0; op.output_len()];
        op.apply(&self.values, &mut values);
        Ok(AGradientField { grid: self.grid.clone(), n: self.n, columns: op.columns, values })
    }
}

/// Per-evaluation-node matrices in `ℝ^{n×m}`, stored row-major
/// (`values[node·n·m + i·m + c]`), with one column per multi-index.
#[derive(Clone, Debug, PartialEq)]
pub struct AGradientField {
    grid: Grid,
    n: usize,
    columns: Vec<MultiIndex>,
    values: Vec<f64>,
}

impl AGradientField {
    /// Direct synthesis of a gradient-like field on the evaluation set.
    pub fn from_values(grid: Grid, n: usize, columns: Vec<MultiIndex>, values: Vec<f64>) -> Result<Self> {
        let expected = grid.num_eval() * n * columns.len();
        if values.len() != expected {
            return Err(invalid("values", format!("expected {expected} values, got {}", values.len())));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(invalid("values", "non-finite entry"));
        }
        Ok(Self { grid, n, columns, values })
    }

    /// The constant field `X` on every evaluation node.
    pub fn constant(grid: Grid, n: usize, columns: Vec<MultiIndex>, x: &[f64]) -> Self {
        assert_eq!(x.len(), n * columns.len());
        let values = x.iter().copied().cycle().take(grid.num_eval() * x.len()).collect();
        Self { grid, n, columns, values }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.columns.len()
    }

    pub fn columns(&self) -> &[MultiIndex] {
        &self.columns
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn num_nodes(&self) -> usize {
        self.grid.num_eval()
    }

    /// Matrix entries at evaluation node `k` (0-based within `E`).
    pub fn at(&self, k: usize) -> &[f64] {
        let w = self.n * self.columns.len();
        &self.values[k * w..(k + 1) * w]
    }

    /// Node-average of the field.
    pub fn mean(&self) -> Vec<f64> {
        let w = self.n * self.columns.len();
        let mut acc = vec![0.0; w];
        for chunk in self.values.chunks_exact(w) {
            for (s, v) in acc.iter_mut().zip(chunk) {
                *s += v;
            }
        }
        let count = self.num_nodes() as f64;
        acc.iter().map(|s| s / count).collect()
    }

    /// `Σ_nodes |X|` (Frobenius), unweighted.
    pub fn l1_sum(&self) -> f64 {
        let w = self.n * self.columns.len();
        self.values.chunks_exact(w).map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt()).sum()
    }

    pub fn sub(&self, other: &AGradientField) -> AGradientField {
        let values = self.values.iter().zip(&other.values).map(|(x, y)| x - y).collect();
        AGradientField { grid: self.grid.clone(), n: self.n, columns: self.columns.clone(), values }
    }

    pub fn add(&self, other: &AGradientField) -> AGradientField {
        let values = self.values.iter().zip(&other.values).map(|(x, y)| x + y).collect();
        AGradientField { grid: self.grid.clone(), n: self.n, columns: self.columns.clone(), values }
    }

    pub fn with_values(&self, values: Vec<f64>) -> AGradientField {
        assert_eq!(values.len(), self.values.len());
        AGradientField { grid: self.grid.clone(), n: self.n, columns: self.columns.clone(), values }
    }

    /// Keeps only the columns listed in `keep` (which must be a subset).
    pub fn select_columns(&self, keep: &[MultiIndex]) -> Result<AGradientField> {
        let pos: Vec<usize> = keep
            .iter()
            .map(|k| {
                self.columns
                    .iter()
                    .position(|c| c == k)
                    .ok_or_else(|| invalid("columns", format!("{k} is not a column of this field")))
            })
            .collect::<Result<_>>()?;
        let m = self.columns.len();
        let mut values = Vec::with_capacity(self.num_nodes() * self.n * keep.len());
        for k in 0..self.num_nodes() {
            let x = self.at(k);
            for i in 0..self.n {
                for &p in &pos {
                    values.push(x[i * m + p]);
                }
            }
        }
        Ok(AGradientField { grid: self.grid.clone(), n: self.n, columns: keep.to_vec(), values })
    }
}

/// The linear map `u ↦ (∂^α u)_α` from full-grid fields to evaluation-set
/// matrices, together with its adjoint.
#[derive(Clone, Debug)]
pub struct DiffOperator {
    n: usize,
    columns: Vec<MultiIndex>,
    stencils: Vec<Stencil>,
    eval_nodes: Vec<usize>,
    num_nodes: usize,
}

impl DiffOperator {
    pub fn new(grid: &Grid, n: usize, columns: Vec<MultiIndex>) -> Result<Self> {
        let stencils = columns.iter().map(|c| grid.stencil(c)).collect::<Result<Vec<_>>>()?;
        Ok(Self { n, columns, stencils, eval_nodes: grid.eval_nodes(), num_nodes: grid.num_nodes() })
    }

    pub fn a_gradient(grid: &Grid, n: usize) -> Result<Self> {
        Self::new(grid, n, homogeneity_set(grid.a()))
    }

    pub fn columns(&self) -> &[MultiIndex] {
        &self.columns
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn num_eval(&self) -> usize {
        self.eval_nodes.len()
    }

    pub fn input_len(&self) -> usize {
        self.num_nodes * self.n
    }

    pub fn output_len(&self) -> usize {
        self.eval_nodes.len() * self.n * self.columns.len()
    }

    /// `out ← D u`.
    pub fn apply(&self, u: &[f64], out: &mut [f64]) {
        let (n, m) = (self.n, self.columns.len());
        for (k, &node) in self.eval_nodes.iter().enumerate() {
            let base = k * n * m;
            for i in 0..n {
                for (c, st) in self.stencils.iter().enumerate() {
                    out[base + i * m + c] = st.apply(u, n, node, i);
                }
            }
        }
    }

    /// `out ← out + Dᵀ g`.
    pub fn apply_transpose_add(&self, g: &[f64], out: &mut [f64]) {
        let (n, m) = (self.n, self.columns.len());
        for (k, &node) in self.eval_nodes.iter().enumerate() {
            let base = k * n * m;
            for i in 0..n {
                for (c, st) in self.stencils.iter().enumerate() {
                    let gv = g[base + i * m + c];
                    if gv == 0.0 {
                        continue;
                    }
                    for (&o, &w) in st.offsets.iter().zip(&st.weights) {
                        out[(node as isize + o) as usize * n + i] += w * gv;
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sv(a: &[u32]) -> SmoothnessVector {
        SmoothnessVector::new(a.to_vec()).unwrap()
    }

    #[test]
    fn resolution_invariant_enforced() {
        assert!(Grid::cube(sv(&[1, 2]), 4).is_err());
        assert!(Grid::cube(sv(&[1, 2]), 5).is_ok());
    }

    #[test]
    fn derivative_examples() {
        let grid = Grid::cube(sv(&[1, 2]), 9).unwrap();
        let fx = GridField::from_scalar_fn(grid.clone(), |x| x[0]);
        let d = fx.mixed_derivative(&MultiIndex(vec![1, 0])).unwrap();
        assert!(d.values().iter().all(|v| (v - 1.0).abs() < 1e-12));
        let fyy = GridField::from_scalar_fn(grid.clone(), |x| x[1] * x[1]);
        let d = fyy.mixed_derivative(&MultiIndex(vec![0, 2])).unwrap();
        assert!(d.values().iter().all(|v| (v - 2.0).abs() < 1e-10));
        let zero = GridField::zeros(grid, 1);
        assert!(zero.a_gradient().unwrap().values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn a_gradient_of_monomials_and_kernel() {
        let grid = Grid::cube(sv(&[1, 2]), 11).unwrap();
        let f = GridField::from_scalar_fn(grid.clone(), |x| x[0] + x[1] * x[1]);
        let g = f.a_gradient().unwrap();
        assert_eq!(g.m(), 2);
        for k in 0..g.num_nodes() {
            assert!((g.at(k)[0] - 1.0).abs() < 1e-11 && (g.at(k)[1] - 2.0).abs() < 1e-9);
        }
        let kernel = GridField::from_scalar_fn(grid.clone(), |x| 3.0 - 2.0 * x[1]);
        assert!(kernel.a_gradient().unwrap().values().iter().all(|v| v.abs() < 1e-11));
        assert_eq!(f.full_gradient().unwrap().m(), 4);
        assert_eq!(f.lower_gradient().unwrap().m(), 2);
    }

    #[test]
    fn stencil_outside_lower_set_or_too_wide() {
        let grid = Grid::cube(sv(&[1, 2]), 9).unwrap();
        let f = GridField::zeros(grid.clone(), 1);
        assert!(f.mixed_derivative(&MultiIndex(vec![1, 1])).is_err());
        assert!(matches!(grid.stencil(&MultiIndex(vec![2, 0])), Err(Error::StencilTooWide { .. })));
    }

    #[test]
    fn adjoint_matches_forward_operator() {
        let grid = Grid::new(sv(&[2, 1]), Rect::new(vec![0.0, -1.0], vec![1.5, 2.0]).unwrap(), vec![7, 6]).unwrap();
        let op = DiffOperator::new(&grid, 2, lower_set(grid.a(), false)).unwrap();
        let u: Vec<f64> = (0..op.input_len()).map(|i| ((i * 37 % 11) as f64).sin()).collect();
        let g: Vec<f64> = (0..op.output_len()).map(|i| ((i * 13 % 7) as f64).cos()).collect();
        let mut du = vec![0.0; op.output_len()];
        op.apply(&u, &mut du);
        let mut dtg = vec![0.0; op.input_len()];
        op.apply_transpose_add(&g, &mut dtg);
        let lhs: f64 = du.iter().zip(&g).map(|(x, y)| x * y).sum();
        let rhs: f64 = u.iter().zip(&dtg).map(|(x, y)| x * y).sum();
        assert!((lhs - rhs).abs() < 1e-9 * lhs.abs().max(1.0));
    }

    #[test]
    fn zero_boundary_field_has_zero_mean_gradient() {
        let grid = Grid::cube(sv(&[1, 2]), 12).unwrap();
        let mut f = GridField::from_scalar_fn(grid, |x| (3.0 * x[0]).sin() * (2.0 * x[1]).cos() + x[1]);
        f.clear_collar();
        assert!(f.is_zero_boundary());
        let g = f.a_gradient().unwrap();
        let mean = g.mean();
        let scale = g.l1_sum();
        assert!(mean.iter().all(|v| v.abs() * g.num_nodes() as f64 <= 1e-12 * scale));
    }
}
