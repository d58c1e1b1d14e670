//! Discrete energies `x ↦ w Σ_{k∈E} F(X_k + (Dφ)_k)` over the free nodes of
//! a zero-boundary field `φ`, with gradients by the chain rule through `Dᵀ`.

use crate::error::Result;
use crate::grid::{DiffOperator, Grid, GridField};
use crate::integrand::Integrand;
use crate::optim::{BandedCholesky, BlockPreconditioner};

#[derive(Clone, Debug)]
pub struct EnergyAssembly {
    grid: Grid,
    op: DiffOperator,
    free: Vec<usize>,
    n: usize,
    offset: Vec<f64>,
    weight: f64,
}

impl EnergyAssembly {
    /// `offset` holds one matrix per evaluation node (or a single matrix
    /// broadcast to all of them).
    pub fn new(grid: &Grid, n: usize, offset: &[f64], weight: f64) -> Result<Self> {
        let op = DiffOperator::a_gradient(grid, n)?;
        let block = n * op.columns().len();
        let offset = if offset.len() == block {
            offset.iter().copied().cycle().take(op.output_len()).collect()
        } else {
            assert_eq!(offset.len(), op.output_len(), "offset must be one matrix or one per evaluation node");
            offset.to_vec()
        };
        Ok(Self { grid: grid.clone(), op, free: grid.free_nodes(), n, offset, weight })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.op.columns().len()
    }

    pub fn weight(&self) -> f64 {
        self.weight
    }

    pub fn num_eval(&self) -> usize {
        self.op.num_eval()
    }

    pub fn dofs(&self) -> usize {
        self.free.len() * self.n
    }

    pub fn scatter(&self, x: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut full = vec![0.0; self.op.input_len()];
        for (j, &node) in self.free.iter().enumerate() {
            full[node * n..(node + 1) * n].copy_from_slice(&x[j * n..(j + 1) * n]);
        }
        full
    }

    pub fn gather(&self, full: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut x = vec![0.0; self.dofs()];
        for (j, &node) in self.free.iter().enumerate() {
            x[j * n..(j + 1) * n].copy_from_slice(&full[node * n..(node + 1) * n]);
        }
        x
    }

    pub fn field(&self, x: &[f64]) -> GridField {
        GridField::from_values(self.grid.clone(), self.n, self.scatter(x)).expect("finite iterate")
    }

    /// `X + Dφ` at every evaluation node.
    pub fn matrices(&self, x: &[f64]) -> Vec<f64> {
        let full = self.scatter(x);
        let mut out = vec![0.0; self.op.output_len()];
        self.op.apply(&full, &mut out);
        for (o, c) in out.iter_mut().zip(&self.offset) {
            *o += c;
        }
        out
    }

    /// Gradient in `x` of `w Σ_k ⟨G_k, (Dφ)_k⟩`.
    pub fn pullback(&self, g: &[f64]) -> Vec<f64> {
        let mut full = vec![0.0; self.op.input_len()];
        self.op.apply_transpose_add(g, &mut full);
        let mut x = self.gather(&full);
        x.iter_mut().for_each(|v| *v *= self.weight);
        x
    }

    /// Energy and gradient; returns `+∞` (gradient untouched) when `F` is
    /// infinite at some node.
    pub fn energy_grad(&self, f: &Integrand, x: &[f64], grad: &mut [f64]) -> f64 {
        let mut mats = self.matrices(x);
        let block = self.n * self.m();
        let mut sum = 0.0;
        for k in 0..self.num_eval() {
            let v = f.eval(&mats[k * block..(k + 1) * block]);
            if !v.is_finite() {
                return if v.is_nan() { f64::NAN } else { v };
            }
            sum += v;
        }
        let mut buf = vec![0.0; block];
        for k in 0..self.num_eval() {
            f.grad(&mats[k * block..(k + 1) * block], &mut buf);
            mats[k * block..(k + 1) * block].copy_from_slice(&buf);
        }
        grad.copy_from_slice(&self.pullback(&mats));
        self.weight * sum
    }

    pub fn energy(&self, f: &Integrand, x: &[f64]) -> f64 {
        let mats = self.matrices(x);
        let block = self.n * self.m();
        self.weight * mats.chunks_exact(block).map(|v| f.eval(v)).sum::<f64>()
    }

    /// `w·DᵀD` on the free nodes, factored in band form (row-major node
    /// order keeps the band narrow).
    pub fn preconditioner(&self) -> Result<BlockPreconditioner> {
        let size = self.free.len();
        let mut pos = vec![usize::MAX; self.grid.num_nodes()];
        for (j, &node) in self.free.iter().enumerate() {
            pos[node] = j;
        }
        let stencils: Vec<_> =
            self.op.columns().iter().map(|c| self.grid.stencil(c)).collect::<Result<Vec<_>>>()?;
        let mut bw = 0;
        for st in &stencils {
            let lo = *st.offsets.iter().min().unwrap_or(&0);
            let hi = *st.offsets.iter().max().unwrap_or(&0);
            bw = bw.max((hi - lo) as usize);
        }
        // free-node indices shrink the offsets, so the node bandwidth bounds it
        let w = bw + 1;
        let mut band = vec![0.0; size * w];
        for node in self.grid.eval_nodes() {
            for st in &stencils {
                for (&oi, &wi) in st.offsets.iter().zip(&st.weights) {
                    let pi = pos[(node as isize + oi) as usize];
                    if pi == usize::MAX {
                        continue;
                    }
                    for (&oj, &wj) in st.offsets.iter().zip(&st.weights) {
                        let pj = pos[(node as isize + oj) as usize];
                        if pj == usize::MAX || pj > pi {
                            continue;
                        }
                        band[pi * w + (pi - pj)] += self.weight * wi * wj;
                    }
                }
            }
        }
        Ok(BlockPreconditioner { factor: BandedCholesky::factor(size, bw, band)?, n: self.n })
    }
}
