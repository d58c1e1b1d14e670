use serde::{Deserialize, Serialize};

use super::{AGradientField, GridField};
use crate::error::{invalid, Result};
use crate::smoothness::{homogeneity_set, lower_set, MultiIndex};

/// Which derivatives enter a discrete `W^{a,p}` norm.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormVariant {
    /// `‖u‖ + Σᵢ ‖∂ᵢ^{aᵢ} u‖`
    Pure,
    /// `‖u‖ + Σ_{⟨α,a⁻¹⟩=1} ‖∂^α u‖`
    Hyperplane,
    /// `Σ_{⟨β,a⁻¹⟩≤1} ‖∂^β u‖`
    Full,
}

fn check_p(p: f64) -> Result<()> {
    if !(p > 1.0) || !p.is_finite() {
        return Err(invalid("p", format!("exponent must lie in (1, ∞), got {p}")));
    }
    Ok(())
}

/// Discrete `Lᵖ` norm of a matrix field, `(|Ω|/#E · Σ |X|^p)^{1/p}` with the
/// Frobenius norm on each node.
pub fn lp_norm(field: &AGradientField, p: f64) -> f64 {
    let w = field.n() * field.m();
    let sum: f64 = field
        .values()
        .chunks_exact(w)
        .map(|x| x.iter().map(|v| v * v).sum::<f64>().sqrt().powf(p))
        .sum();
    (field.grid().quadrature_weight() * sum).powf(1.0 / p)
}

/// Discrete Sobolev norm of `f` in one of three equivalent forms.
pub fn sobolev_norm(f: &GridField, p: f64, variant: NormVariant) -> Result<f64> {
    check_p(p)?;
    let a = f.grid().a();
    let dim = a.dim();
    let columns: Vec<MultiIndex> = match variant {
        NormVariant::Pure => {
            let mut cols = vec![MultiIndex::zero(dim)];
            for i in 0..dim {
                let mut alpha = vec![0; dim];
                alpha[i] = a.order(i);
                cols.push(MultiIndex(alpha));
            }
            cols
        }
        NormVariant::Hyperplane => {
            let mut cols = vec![MultiIndex::zero(dim)];
            cols.extend(homogeneity_set(a));
            cols
        }
        NormVariant::Full => lower_set(a, false),
    };
    let mut total = 0.0;
    for col in columns {
        let d = f.derivatives(vec![col])?;
        total += lp_norm(&d, p);
    }
    Ok(total)
}

/// In-place `τ_k` on one matrix (Frobenius norm).
pub fn truncate_matrix(x: &mut [f64], k: f64) {
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    // slack keeps τ_k idempotent under rounding
    if norm > k * (1.0 + 4.0 * f64::EPSILON) {
        let s = k / norm;
        x.iter_mut().for_each(|v| *v *= s);
    }
}

/// Pointwise truncation `τ_k(X) = X` if `|X| ≤ k`, else `kX/|X|`.
pub fn truncate(field: &AGradientField, k: f64) -> Result<AGradientField> {
    if !(k > 0.0) || !k.is_finite() {
        return Err(invalid("k", format!("truncation level must be positive, got {k}")));
    }
    let w = field.n() * field.m();
    let mut values = field.values().to_vec();
    values.chunks_exact_mut(w).for_each(|x| truncate_matrix(x, k));
    Ok(field.with_values(values))
}
