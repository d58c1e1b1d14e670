//! Multi-index combinatorics of a smoothness vector `a` and the anisotropic
//! geometry it induces (scaling `R ⊙ v`, boxes `Q_R(x₀)`, box covers).
//!
//! All comparisons of `⟨α, a⁻¹⟩` against 1 are carried out in exact rational
//! arithmetic. The global column convention for `ℝ^{n×m}` is the order
//! returned by [`homogeneity_set`]: descending lexicographic order on `α`.

use std::cmp::Ordering;
use std::fmt;

use num_integer::Integer;
use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

pub type Rational = Ratio<u64>;

/// The vector `a = (a₁, …, a_N)` of per-axis maximal derivative orders.
#[derive(Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<u32>", into = "Vec<u32>")]
pub struct SmoothnessVector {
    a: Vec<u32>,
    a_inv: Vec<Rational>,
}

impl SmoothnessVector {
    pub fn new(a: Vec<u32>) -> Result<Self> {
        if a.is_empty() {
            return Err(invalid("a", "smoothness vector must have at least one entry"));
        }
        if let Some(pos) = a.iter().position(|&ai| ai == 0) {
            return Err(invalid("a", format!("entry a[{pos}] is 0; every entry must be a positive integer")));
        }
        let a_inv = a.iter().map(|&ai| Rational::new(1, ai as u64)).collect();
        Ok(Self { a, a_inv })
    }

    pub fn dim(&self) -> usize {
        self.a.len()
    }

    pub fn orders(&self) -> &[u32] {
        &self.a
    }

    pub fn order(&self, axis: usize) -> u32 {
        self.a[axis]
    }

    pub fn inverse(&self) -> &[Rational] {
        &self.a_inv
    }

    /// `|a⁻¹| = Σ 1/aᵢ`, exact.
    pub fn inverse_sum(&self) -> Rational {
        self.a_inv.iter().copied().sum()
    }

    pub fn max_order(&self) -> u32 {
        self.a.iter().copied().max().unwrap_or(1)
    }

    /// True when every axis carries the same order.
    pub fn is_isotropic(&self) -> bool {
        self.a.windows(2).all(|w| w[0] == w[1])
    }

    /// `⟨α, a⁻¹⟩ = Σ αⱼ/aⱼ`, exact.
    pub fn weight(&self, alpha: &MultiIndex) -> Rational {
        debug_assert_eq!(alpha.dim(), self.dim());
        alpha
            .0
            .iter()
            .zip(&self.a_inv)
            .map(|(&k, &inv)| inv * k as u64)
            .sum()
    }

    /// Number of columns `m` of the a-gradient.
    pub fn m(&self) -> usize {
        homogeneity_set(self).len()
    }
}

impl TryFrom<Vec<u32>> for SmoothnessVector {
    type Error = Error;
    fn try_from(a: Vec<u32>) -> Result<Self> {
        Self::new(a)
    }
}

impl From<SmoothnessVector> for Vec<u32> {
    fn from(a: SmoothnessVector) -> Self {
        a.a
    }
}

impl fmt::Debug for SmoothnessVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "a{:?}", self.a)
    }
}

/// A multi-index `α ∈ ℤ^N_{≥0}`.
#[derive(Clone, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MultiIndex(pub Vec<u32>);

impl MultiIndex {
    pub fn new(alpha: Vec<u32>) -> Self {
        Self(alpha)
    }

    pub fn zero(dim: usize) -> Self {
        Self(vec![0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    /// `|α| = Σ αⱼ`.
    pub fn order(&self) -> u32 {
        self.0.iter().sum()
    }

    /// Componentwise `self ≤ other`.
    pub fn le(&self, other: &MultiIndex) -> bool {
        self.0.iter().zip(&other.0).all(|(x, y)| x <= y)
    }

    /// `α! = Π αⱼ!`.
    pub fn factorial(&self) -> f64 {
        self.0
            .iter()
            .map(|&k| (1..=k).map(f64::from).product::<f64>())
            .product()
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.0
    }
}

impl fmt::Display for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, k) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{k}")?;
        }
        write!(f, ")")
    }
}

fn descending_lex(x: &MultiIndex, y: &MultiIndex) -> Ordering {
    y.0.cmp(&x.0)
}

/// All α with `αⱼ ≤ boundⱼ`, in descending lexicographic order.
fn enumerate_box(bound: &[u32]) -> Vec<MultiIndex> {
    let mut out = Vec::new();
    let mut cur = vec![0u32; bound.len()];
    loop {
        out.push(MultiIndex(cur.clone()));
        let mut axis = bound.len();
        loop {
            if axis == 0 {
                out.sort_by(descending_lex);
                return out;
            }
            axis -= 1;
            if cur[axis] < bound[axis] {
                cur[axis] += 1;
                break;
            }
            cur[axis] = 0;
        }
    }
}

/// The hyperplane of homogeneity `{α : ⟨α, a⁻¹⟩ = 1}`, in descending
/// lexicographic order. Its length is `m`.
pub fn homogeneity_set(a: &SmoothnessVector) -> Vec<MultiIndex> {
    let one = Rational::from_integer(1);
    enumerate_box(a.orders())
        .into_iter()
        .filter(|alpha| a.weight(alpha) == one)
        .collect()
}

/// The lower set `{α : ⟨α, a⁻¹⟩ ≤ 1}` (or `< 1` when `strict`), descending
/// lexicographic order.
pub fn lower_set(a: &SmoothnessVector, strict: bool) -> Vec<MultiIndex> {
    let one = Rational::from_integer(1);
    enumerate_box(a.orders())
        .into_iter()
        .filter(|alpha| {
            let w = a.weight(alpha);
            if strict {
                w < one
            } else {
                w <= one
            }
        })
        .collect()
}

/// Exponents `γ` of monomials annihilated by every hyperplane derivative,
/// i.e. no hyperplane `α` satisfies `α ≤ γ` componentwise.
pub fn kernel_monomials(a: &SmoothnessVector) -> Vec<MultiIndex> {
    let hyperplane = homogeneity_set(a);
    // aᵢeᵢ lies on the hyperplane, so every kernel exponent has γᵢ < aᵢ.
    let bound: Vec<u32> = a.orders().iter().map(|&ai| ai - 1).collect();
    enumerate_box(&bound)
        .into_iter()
        .filter(|gamma| !hyperplane.iter().any(|alpha| alpha.le(gamma)))
        .collect()
}

/// Anisotropic scaling `R ⊙ v = (R^{1/a₁} v₁, …, R^{1/a_N} v_N)`.
pub fn aniso_scale(radius: f64, v: &[f64], a: &SmoothnessVector) -> Result<Vec<f64>> {
    if !(radius > 0.0) || !radius.is_finite() {
        return Err(invalid("R", format!("anisotropic radius must be positive, got {radius}")));
    }
    if v.len() != a.dim() {
        return Err(invalid("v", format!("expected {} coordinates, got {}", a.dim(), v.len())));
    }
    Ok(v.iter()
        .zip(a.orders())
        .map(|(&vi, &ai)| radius.powf(1.0 / ai as f64) * vi)
        .collect())
}

/// An axis-aligned rectangle `Π [lowerᵢ, upperᵢ]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Rect {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(invalid("domain", "lower and upper corners must have the same positive dimension"));
        }
        for (i, (l, u)) in lower.iter().zip(&upper).enumerate() {
            if !l.is_finite() || !u.is_finite() || l > u {
                return Err(invalid("domain", format!("axis {i}: [{l}, {u}] is not an interval")));
            }
        }
        Ok(Self { lower, upper })
    }

    /// The reference cube `Q = [-1, 1]^N`.
    pub fn cube(dim: usize) -> Self {
        Self { lower: vec![-1.0; dim], upper: vec![1.0; dim] }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn width(&self, axis: usize) -> f64 {
        self.upper[axis] - self.lower[axis]
    }

    pub fn volume(&self) -> f64 {
        (0..self.dim()).map(|i| self.width(i)).product()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(&xi, (&l, &u))| xi >= l && xi <= u)
    }
}

/// The open box `Q_R(x₀) = {x : |xⁱ − x₀ⁱ|^{aᵢ} < R}`.
#[derive(Clone, Debug, PartialEq)]
pub struct AnisoBox {
    pub center: Vec<f64>,
    pub radius: f64,
    pub a: SmoothnessVector,
}

impl AnisoBox {
    pub fn new(center: Vec<f64>, radius: f64, a: SmoothnessVector) -> Result<Self> {
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(invalid("radius", format!("box radius must be positive, got {radius}")));
        }
        if center.len() != a.dim() {
            return Err(invalid("center", format!("expected {} coordinates, got {}", a.dim(), center.len())));
        }
        Ok(Self { center, radius, a })
    }

    /// Half-width `R^{1/aᵢ}` along `axis`.
    pub fn half_width(&self, axis: usize) -> f64 {
        self.radius.powf(1.0 / self.a.order(axis) as f64)
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(&self.center)
            .zip(self.a.orders())
            .all(|((&xi, &ci), &ai)| (xi - ci).abs().powi(ai as i32) < self.radius)
    }

    /// `|Q_R| = 2^N R^{|a⁻¹|}`.
    pub fn volume(&self) -> f64 {
        let s = self.a.inverse_sum();
        let exponent = *s.numer() as f64 / *s.denom() as f64;
        2f64.powi(self.a.dim() as i32) * self.radius.powf(exponent)
    }

    /// The concentric box of radius `(1 − σ) R`.
    pub fn shrink(&self, sigma: f64) -> AnisoBox {
        AnisoBox { center: self.center.clone(), radius: (1.0 - sigma) * self.radius, a: self.a.clone() }
    }

    /// Bounding rectangle of the closure.
    pub fn bounds(&self) -> Rect {
        let dim = self.a.dim();
        let lower = (0..dim).map(|i| self.center[i] - self.half_width(i)).collect();
        let upper = (0..dim).map(|i| self.center[i] + self.half_width(i)).collect();
        Rect { lower, upper }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct CoverOptions {
    /// Admissible uncovered volume, as a fraction of the domain volume.
    pub tolerance: f64,
    /// Box-count budget.
    pub max_boxes: usize,
    /// Number of radius halvings before giving up.
    pub max_levels: usize,
}

impl Default for CoverOptions {
    fn default() -> Self {
        Self { tolerance: 1e-2, max_boxes: 200_000, max_levels: 48 }
    }
}

#[derive(Clone, Debug)]
pub struct BoxCover {
    pub boxes: Vec<AnisoBox>,
    /// Total box volume over domain volume.
    pub covered_fraction: f64,
}

/// Covers `domain` (up to `opts.tolerance` of its volume) by pairwise
/// disjoint anisotropic boxes of radius at most `max_radius`.
///
/// Each level packs a lattice of equal boxes into every pending rectangle,
/// anchored at its lower corner; the leftover slabs are passed to the next
/// level with the radius halved, so every axis shrinks by `2^{1/aᵢ}`.
pub fn box_cover(domain: &Rect, max_radius: f64, a: &SmoothnessVector, opts: &CoverOptions) -> Result<BoxCover> {
    if domain.dim() != a.dim() {
        return Err(invalid("domain", format!("dimension {} does not match a {:?}", domain.dim(), a)));
    }
    let total = domain.volume();
    if !(total > 0.0) {
        return Err(invalid("domain", "domain has zero volume"));
    }
    if !(max_radius > 0.0) || !max_radius.is_finite() {
        return Err(invalid("max_radius", format!("must be positive, got {max_radius}")));
    }

    let dim = a.dim();
    let slack: Vec<f64> = (0..dim).map(|i| 1e-12 * domain.width(i)).collect();
    let mut boxes = Vec::new();
    let mut pending = vec![domain.clone()];
    let mut radius = max_radius;

    for _ in 0..=opts.max_levels {
        let half: Vec<f64> = a.orders().iter().map(|&ai| radius.powf(1.0 / ai as f64)).collect();
        let mut next = Vec::new();
        for rect in pending {
            let counts: Vec<usize> = (0..dim)
                .map(|i| ((rect.width(i) + slack[i]) / (2.0 * half[i])).floor() as usize)
                .collect();
            if counts.iter().any(|&c| c == 0) {
                next.push(rect);
                continue;
            }
            let placed: usize = counts.iter().product();
            if boxes.len() + placed > opts.max_boxes {
                return Err(Error::BoxBudgetExceeded { budget: opts.max_boxes });
            }
            let mut idx = vec![0usize; dim];
            'lattice: loop {
                let center = (0..dim)
                    .map(|i| rect.lower[i] + (2 * idx[i] + 1) as f64 * half[i])
                    .collect();
                boxes.push(AnisoBox { center, radius, a: a.clone() });
                let mut axis = dim;
                loop {
                    if axis == 0 {
                        break 'lattice;
                    }
                    axis -= 1;
                    idx[axis] += 1;
                    if idx[axis] < counts[axis] {
                        break;
                    }
                    idx[axis] = 0;
                }
            }
            // Leftover slabs: slab i spans the covered range on axes < i, the
            // uncovered tail on axis i and the full range on axes > i.
            for i in 0..dim {
                let covered_end = rect.lower[i] + counts[i] as f64 * 2.0 * half[i];
                if rect.upper[i] - covered_end <= slack[i] {
                    continue;
                }
                let mut lower = rect.lower.clone();
                let mut upper = rect.upper.clone();
                for j in 0..i {
                    upper[j] = rect.lower[j] + counts[j] as f64 * 2.0 * half[j];
                }
                lower[i] = covered_end;
                next.push(Rect { lower, upper });
            }
        }
        pending = next;
        let uncovered: f64 = pending.iter().map(Rect::volume).sum();
        if uncovered <= opts.tolerance * total {
            let covered: f64 = boxes.iter().map(AnisoBox::volume).sum();
            return Ok(BoxCover { boxes, covered_fraction: covered / total });
        }
        radius *= 0.5;
    }
    Err(Error::BoxBudgetExceeded { budget: opts.max_boxes })
}

/// Exact tiling of `Q = [-1, 1]^N` by `k^{L/aᵢ}` boxes per axis of radius
/// `k^{-L}`, `L = lcm(a)`, in row-major order.
pub fn cube_lattice(a: &SmoothnessVector, k: u64) -> Vec<AnisoBox> {
    let dim = a.dim();
    let l = a.orders().iter().fold(1u64, |acc, &ai| acc.lcm(&(ai as u64)));
    let radius = (k as f64).powf(-(l as f64));
    let per_axis: Vec<u64> = a.orders().iter().map(|&ai| k.pow((l / ai as u64) as u32)).collect();
    let total: u64 = per_axis.iter().product();
    (0..total)
        .map(|lin| {
            let mut rest = lin;
            let mut center = vec![0.0; dim];
            for axis in (0..dim).rev() {
                let c = rest % per_axis[axis];
                rest /= per_axis[axis];
                center[axis] = -1.0 + (2 * c + 1) as f64 / per_axis[axis] as f64;
            }
            AnisoBox { center, radius, a: a.clone() }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sv(a: &[u32]) -> SmoothnessVector {
        SmoothnessVector::new(a.to_vec()).unwrap()
    }

    fn mi(list: &[&[u32]]) -> Vec<MultiIndex> {
        list.iter().map(|x| MultiIndex(x.to_vec())).collect()
    }

    #[test]
    fn hyperplane_examples() {
        assert_eq!(homogeneity_set(&sv(&[1, 2])), mi(&[&[1, 0], &[0, 2]]));
        assert_eq!(homogeneity_set(&sv(&[2, 2])), mi(&[&[2, 0], &[1, 1], &[0, 2]]));
        assert_eq!(
            homogeneity_set(&sv(&[1, 1, 1])),
            mi(&[&[1, 0, 0], &[0, 1, 0], &[0, 0, 1]])
        );
    }

    #[test]
    fn lower_set_examples() {
        let a = sv(&[1, 2]);
        let full = lower_set(&a, false);
        assert_eq!(full.len(), 4);
        for alpha in mi(&[&[0, 0], &[1, 0], &[0, 1], &[0, 2]]) {
            assert!(full.contains(&alpha));
        }
        let strict = lower_set(&a, true);
        assert_eq!(strict.len(), 2);
        assert!(strict.contains(&MultiIndex(vec![0, 0])));
        assert!(strict.contains(&MultiIndex(vec![0, 1])));
        assert_eq!(lower_set(&sv(&[2, 2]), false).len(), 6);
    }

    #[test]
    fn kernel_examples() {
        let k = kernel_monomials(&sv(&[1, 2]));
        assert_eq!(k.len(), 2);
        assert!(k.contains(&MultiIndex(vec![0, 0])) && k.contains(&MultiIndex(vec![0, 1])));
        let k = kernel_monomials(&sv(&[2, 2]));
        assert_eq!(k.len(), 3);
        for g in mi(&[&[0, 0], &[1, 0], &[0, 1]]) {
            assert!(k.contains(&g));
        }
        assert_eq!(kernel_monomials(&sv(&[1])), mi(&[&[0]]));
    }

    #[test]
    fn boundary_index_is_classified_exactly() {
        // 1/2 + 1/3 = 5/6 < 1, while 0.1 + 0.2 style rounding is never involved.
        let a = sv(&[2, 3]);
        let w = a.weight(&MultiIndex(vec![1, 1]));
        assert_eq!(w, Rational::new(5, 6));
        assert!(lower_set(&a, true).contains(&MultiIndex(vec![1, 1])));
        let a = sv(&[3, 6]);
        // 1/3 + 4/6 = 1 exactly
        assert!(homogeneity_set(&a).contains(&MultiIndex(vec![1, 4])));
    }

    #[test]
    fn zero_entry_is_rejected() {
        let err = SmoothnessVector::new(vec![1, 0]).unwrap_err();
        assert!(err.to_string().contains("a[1]"));
        assert!(serde_json::from_str::<SmoothnessVector>("[2, 0]").is_err());
        let ok: SmoothnessVector = serde_json::from_str("[1,2]").unwrap();
        assert_eq!(serde_json::to_string(&ok).unwrap(), "[1,2]");
    }

    #[test]
    fn scaling_examples() {
        let a = sv(&[1, 2]);
        let v = aniso_scale(4.0, &[1.0, 1.0], &a).unwrap();
        assert_eq!(v, vec![4.0, 2.0]);
        assert_eq!(aniso_scale(1.0, &[0.3, -2.0], &a).unwrap(), vec![0.3, -2.0]);
        let v = aniso_scale(0.25, &[2.0, 2.0], &a).unwrap();
        assert!((v[0] - 0.5).abs() < 1e-15 && (v[1] - 1.0).abs() < 1e-15);
        assert!(aniso_scale(0.0, &[1.0, 1.0], &a).is_err());
        assert!(aniso_scale(-1.0, &[1.0, 1.0], &a).is_err());
    }

    #[test]
    fn box_volume_formula() {
        let b = AnisoBox::new(vec![0.0, 0.0], 0.25, sv(&[1, 2])).unwrap();
        // 4 · 0.25^{3/2}
        assert!((b.volume() - 0.5).abs() < 1e-15);
        assert!(b.contains(&[0.2, 0.45]));
        assert!(!b.contains(&[0.2, 0.55]));
    }

    #[test]
    fn cover_unit_cube_single_box() {
        let a = sv(&[1, 2]);
        let cover = box_cover(&Rect::cube(2), 1.0, &a, &CoverOptions::default()).unwrap();
        assert_eq!(cover.boxes.len(), 1);
        assert!((cover.covered_fraction - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cover_dyadic_quarter_radius() {
        let a = sv(&[1, 2]);
        let cover = box_cover(&Rect::cube(2), 0.25, &a, &CoverOptions::default()).unwrap();
        let summed: f64 = cover.boxes.iter().map(AnisoBox::volume).sum();
        assert!(1.0 - summed / 4.0 < 0.05);
        assert!(cover.boxes.iter().all(|b| b.radius <= 0.25));
    }

    #[test]
    fn cover_rejects_degenerate_domain_and_budget() {
        let a = sv(&[1, 2]);
        let flat = Rect::new(vec![0.0, 0.0], vec![1.0, 0.0]).unwrap();
        assert!(box_cover(&flat, 0.5, &a, &CoverOptions::default()).is_err());
        let opts = CoverOptions { max_boxes: 10, ..CoverOptions::default() };
        assert!(matches!(
            box_cover(&Rect::cube(2), 1e-4, &a, &opts),
            Err(Error::BoxBudgetExceeded { .. })
        ));
    }

    #[test]
    fn cover_awkward_rectangle_is_disjoint_and_inside() {
        let a = sv(&[2, 3]);
        let domain = Rect::new(vec![0.0, -0.3], vec![1.7, 1.1]).unwrap();
        let cover = box_cover(&domain, 0.3, &a, &CoverOptions { tolerance: 0.02, ..Default::default() }).unwrap();
        assert!(cover.covered_fraction >= 0.98);
        let rects: Vec<Rect> = cover.boxes.iter().map(AnisoBox::bounds).collect();
        for r in &rects {
            for i in 0..2 {
                assert!(r.lower[i] >= domain.lower[i] - 1e-12 && r.upper[i] <= domain.upper[i] + 1e-12);
            }
        }
        for (i, r) in rects.iter().enumerate() {
            for s in &rects[i + 1..] {
                let overlap = (0..2).all(|k| r.lower[k].max(s.lower[k]) < r.upper[k].min(s.upper[k]) - 1e-12);
                assert!(!overlap);
            }
        }
    }
}
