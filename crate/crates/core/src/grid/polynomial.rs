use serde::{Deserialize, Serialize};

use super::{Grid, GridField};
use crate::error::{invalid, Result};
use crate::smoothness::{MultiIndex, Rational, SmoothnessVector};

/// A vector-valued polynomial `Σ_γ c_γ (x − x₀)^γ` with `c_γ ∈ ℝⁿ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct APolynomial {
    pub n: usize,
    pub center: Vec<f64>,
    pub terms: Vec<(MultiIndex, Vec<f64>)>,
}

impl APolynomial {
    pub fn new(n: usize, center: Vec<f64>, terms: Vec<(MultiIndex, Vec<f64>)>) -> Result<Self> {
        for (gamma, c) in &terms {
            if gamma.dim() != center.len() {
                return Err(invalid("coeffs", format!("exponent {gamma} has wrong dimension")));
            }
            if c.len() != n {
                return Err(invalid("coeffs", format!("coefficient of {gamma} must have {n} components")));
            }
        }
        Ok(Self { n, center, terms })
    }

    pub fn zero(n: usize, dim: usize) -> Self {
        Self { n, center: vec![0.0; dim], terms: Vec::new() }
    }

    /// Rejects exponents outside the lower set `⟨γ, a⁻¹⟩ ≤ 1`.
    pub fn check_lower_set(&self, a: &SmoothnessVector) -> Result<()> {
        for (gamma, _) in &self.terms {
            if a.weight(gamma) > Rational::from_integer(1) {
                return Err(invalid(
                    "coeffs",
                    format!("exponent {gamma} has ⟨γ, a⁻¹⟩ = {} > 1", a.weight(gamma)),
                ));
            }
        }
        Ok(())
    }

    pub fn eval(&self, x: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        for (gamma, c) in &self.terms {
            let mono: f64 = gamma
                .as_slice()
                .iter()
                .zip(x.iter().zip(&self.center))
                .map(|(&k, (&xi, &ci))| (xi - ci).powi(k as i32))
                .product();
            for (o, ci) in out.iter_mut().zip(c) {
                *o += ci * mono;
            }
        }
    }

    /// Exact nodal evaluation on `grid`.
    pub fn to_field(&self, grid: &Grid) -> GridField {
        GridField::from_fn(grid.clone(), self.n, |x, out| self.eval(x, out))
    }

    /// The constant `∇ₐ` matrix read off the hyperplane coefficients
    /// (`α! · c_α` in column `α`).
    pub fn a_gradient(&self, hyperplane: &[MultiIndex]) -> Vec<f64> {
        let m = hyperplane.len();
        let mut x = vec![0.0; self.n * m];
        for (gamma, c) in &self.terms {
            if let Some(col) = hyperplane.iter().position(|h| h == gamma) {
                let f = gamma.factorial();
                for i in 0..self.n {
                    x[i * m + col] += f * c[i];
                }
            }
        }
        x
    }
}
