//! Cut-off functions, local polynomial approximation and the piecewise
//! constant a-gradient approximation built from them.

use nalgebra::DMatrix;
use num_integer::Integer;

use super::{sobolev_norm, APolynomial, Grid, GridField, NormVariant};
use crate::error::{invalid, Error, Result};
use crate::smoothness::{
    box_cover, cube_lattice, homogeneity_set, kernel_monomials, lower_set, AnisoBox, CoverOptions, MultiIndex, Rect,
};

fn check_inside(bx: &AnisoBox, grid: &Grid) -> Result<()> {
    let b = bx.bounds();
    let d = grid.domain();
    for i in 0..grid.dim() {
        let slack = 1e-12 * d.width(i);
        if b.lower[i] < d.lower[i] - slack || b.upper[i] > d.upper[i] + slack {
            return Err(invalid("box", format!("box leaves the grid domain along axis {i}")));
        }
    }
    Ok(())
}

/// Grid nodes inside the closed rectangle `r`.
fn nodes_in_rect(grid: &Grid, r: &Rect) -> Vec<usize> {
    let dim = grid.dim();
    let mut lo = vec![0; dim];
    let mut hi = vec![0; dim];
    for i in 0..dim {
        let l = grid.domain().lower[i];
        let h = grid.spacing()[i];
        let last = grid.counts()[i] as isize - 1;
        let a = ((r.lower[i] - l) / h - 1e-9).ceil().max(0.0) as isize;
        let b = (((r.upper[i] - l) / h + 1e-9).floor() as isize).min(last);
        if a > b {
            return Vec::new();
        }
        lo[i] = a as usize;
        hi[i] = b as usize;
    }
    grid.box_nodes(&lo, &hi)
}

fn smooth_step(t: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    if t >= 1.0 {
        return 1.0;
    }
    let psi = |s: f64| if s > 0.0 { (-1.0 / s).exp() } else { 0.0 };
    let (u, v) = (psi(t), psi(1.0 - t));
    u / (u + v)
}

/// Tensor-product cut-off value: 1 on `Q_{(1−σ)R}`, 0 off `Q_R`.
fn cutoff_value(bx: &AnisoBox, sigma: f64, x: &[f64]) -> f64 {
    let inner = bx.shrink(sigma);
    let mut eta = 1.0;
    for i in 0..x.len() {
        let d = (x[i] - bx.center[i]).abs();
        let w_out = bx.half_width(i);
        let w_in = inner.half_width(i);
        let f = if d <= w_in {
            1.0
        } else if d >= w_out {
            0.0
        } else {
            smooth_step((w_out - d) / (w_out - w_in))
        };
        if f == 0.0 {
            return 0.0;
        }
        eta *= f;
    }
    eta
}

/// Partition-of-unity weight of one cover box. Across a face shared with
/// another box the smooth step is centred on the face, so neighbouring
/// weights sum to 1; across an exposed face it runs inside the box, down to
/// 0 on the face. Either way the weight is 1 exactly on the σ-shrunk core;
/// only the collar reset can override it there.
struct Profile {
    /// Per axis: core interval, lower and upper transition widths.
    core: Vec<(f64, f64)>,
    width: Vec<(f64, f64)>,
    support: Rect,
}

impl Profile {
    fn new(bx: &AnisoBox, sigma: f64, all: &[AnisoBox]) -> Self {
        let inner = bx.shrink(sigma);
        let b = bx.bounds();
        let dim = b.lower.len();
        let shared = |axis: usize, face: f64, outward: f64| {
            let mut probe = bx.center.clone();
            probe[axis] = face + outward * 1e-9 * (b.upper[axis] - b.lower[axis]);
            all.iter().any(|o| o != bx && o.bounds().contains(&probe))
        };
        let (mut core, mut width, mut lower, mut upper) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for i in 0..dim {
            let t = bx.half_width(i) - inner.half_width(i);
            let lo = if shared(i, b.lower[i], -1.0) { (b.lower[i] - t, 2.0 * t) } else { (b.lower[i], t) };
            let hi = if shared(i, b.upper[i], 1.0) { (b.upper[i] + t, 2.0 * t) } else { (b.upper[i], t) };
            core.push((lo.0 + lo.1, hi.0 - hi.1));
            width.push((lo.1, hi.1));
            lower.push(lo.0);
            upper.push(hi.0);
        }
        Self { core, width, support: Rect { lower, upper } }
    }

    fn value(&self, x: &[f64]) -> f64 {
        let mut eta = 1.0;
        for (i, &xi) in x.iter().enumerate() {
            let (c0, c1) = self.core[i];
            let (w0, w1) = self.width[i];
            let f = if xi < c0 {
                smooth_step((xi - (c0 - w0)) / w0)
            } else if xi > c1 {
                smooth_step(((c1 + w1) - xi) / w1)
            } else {
                1.0
            };
            if f == 0.0 {
                return 0.0;
            }
            eta *= f;
        }
        eta
    }
}

#[derive(Clone, Debug)]
pub struct Cutoff {
    pub field: GridField,
    /// Measured `max_β ‖∂^β η‖_∞ r^{⟨β,a⁻¹⟩} σ^{|β|}` over the lower set.
    pub constant: f64,
    /// `‖∂^β η‖_∞` per `β` in the lower set.
    pub sup_norms: Vec<(MultiIndex, f64)>,
}

/// Smooth cut-off `η ∈ [0,1]`, `≡ 1` on the `(1−σ)`-shrunk box and `≡ 0`
/// outside `bx`, sampled on `grid`.
pub fn cutoff(bx: &AnisoBox, sigma: f64, grid: &Grid) -> Result<Cutoff> {
    if !(sigma > 0.0 && sigma < 0.5) {
        return Err(invalid("sigma", format!("σ must lie in (0, 1/2), got {sigma}")));
    }
    check_inside(bx, grid)?;
    let field = GridField::from_scalar_fn(grid.clone(), |x| cutoff_value(bx, sigma, x));
    let a = grid.a();
    let mut constant: f64 = 1.0;
    let mut sup_norms = Vec::new();
    for beta in lower_set(a, false) {
        let d = field.derivatives(vec![beta.clone()])?;
        let sup = d.values().iter().fold(0.0f64, |s, v| s.max(v.abs()));
        let w = a.weight(&beta);
        let w = *w.numer() as f64 / *w.denom() as f64;
        constant = constant.max(sup * bx.radius.powf(w) * sigma.powi(beta.order() as i32));
        sup_norms.push((beta, sup));
    }
    Ok(Cutoff { field, constant, sup_norms })
}

#[derive(Clone, Debug)]
pub struct PolynomialApprox {
    pub poly: APolynomial,
    /// `‖∂^β(f−P)‖_p · r^{⟨β,a⁻¹⟩−1} / ‖∇ₐ(f−P)‖_p` on the box, per `β`.
    pub poincare: Vec<(MultiIndex, f64)>,
}

/// Local a-polynomial with `∇ₐP` equal to the box average of `∇ₐf`; the
/// kernel part is fitted to the remainder by least squares.
pub fn polynomial_approx(f: &GridField, bx: &AnisoBox, p: f64) -> Result<PolynomialApprox> {
    let grid = f.grid();
    check_inside(bx, grid)?;
    let a = grid.a();
    let n = f.n();
    let hyperplane = homogeneity_set(a);
    let kernel = kernel_monomials(a);
    let m = hyperplane.len();

    let in_box = |node: usize| bx.contains(&grid.node_coords(node));
    let eval_nodes = grid.eval_nodes();
    let inside_eval: Vec<usize> =
        eval_nodes.iter().enumerate().filter(|(_, &node)| in_box(node)).map(|(k, _)| k).collect();
    let inside_all: Vec<usize> = nodes_in_rect(grid, &bx.bounds()).into_iter().filter(|&nd| in_box(nd)).collect();
    if inside_eval.is_empty() || inside_all.len() < kernel.len() {
        return Err(Error::RankDeficient(format!(
            "box of radius {} holds {} evaluation nodes and {} grid nodes",
            bx.radius,
            inside_eval.len(),
            inside_all.len()
        )));
    }

    let grad = f.a_gradient()?;
    let mut avg = vec![0.0; n * m];
    for &k in &inside_eval {
        for (s, v) in avg.iter_mut().zip(grad.at(k)) {
            *s += v;
        }
    }
    avg.iter_mut().for_each(|s| *s /= inside_eval.len() as f64);

    let mut terms: Vec<(MultiIndex, Vec<f64>)> = hyperplane
        .iter()
        .enumerate()
        .map(|(col, alpha)| {
            let fact = alpha.factorial();
            (alpha.clone(), (0..n).map(|i| avg[i * m + col] / fact).collect())
        })
        .collect();
    let hyper_part = APolynomial::new(n, bx.center.clone(), terms.clone())?;

    // Kernel monomials in box-normalised coordinates for conditioning.
    let half: Vec<f64> = (0..grid.dim()).map(|i| bx.half_width(i)).collect();
    let rows = inside_all.len();
    let cols = kernel.len();
    let mut design = DMatrix::<f64>::zeros(rows, cols);
    let mut rhs = DMatrix::<f64>::zeros(rows, n);
    let mut buf = vec![0.0; n];
    for (r, &node) in inside_all.iter().enumerate() {
        let x = grid.node_coords(node);
        for (c, gamma) in kernel.iter().enumerate() {
            design[(r, c)] = gamma
                .as_slice()
                .iter()
                .enumerate()
                .map(|(i, &k)| ((x[i] - bx.center[i]) / half[i]).powi(k as i32))
                .product();
        }
        hyper_part.eval(&x, &mut buf);
        for i in 0..n {
            rhs[(r, i)] = f.at(node)[i] - buf[i];
        }
    }
    let svd = design.svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smin > 1e-10 * smax) {
        return Err(Error::RankDeficient(format!(
            "kernel fit on box of radius {} has singular values in [{smin:e}, {smax:e}]",
            bx.radius
        )));
    }
    let sol = svd.solve(&rhs, 0.0).map_err(|e| Error::RankDeficient(e.to_string()))?;
    for (c, gamma) in kernel.iter().enumerate() {
        let scale: f64 = gamma.as_slice().iter().zip(&half).map(|(&k, h)| h.powi(k as i32)).product();
        terms.push((gamma.clone(), (0..n).map(|i| sol[(c, i)] / scale).collect()));
    }
    let poly = APolynomial::new(n, bx.center.clone(), terms)?;

    let diff = f.sub(&poly.to_field(grid));
    let box_lp = |field: &super::AGradientField| -> f64 {
        let w = field.n() * field.m();
        inside_eval
            .iter()
            .map(|&k| field.values()[k * w..(k + 1) * w].iter().map(|v| v * v).sum::<f64>().sqrt().powf(p))
            .sum::<f64>()
            .powf(1.0 / p)
    };
    let denom = box_lp(&diff.a_gradient()?);
    let scale = box_lp(&grad).max(f64::MIN_POSITIVE);
    let mut poincare = Vec::new();
    for beta in lower_set(a, false) {
        let num = box_lp(&diff.derivatives(vec![beta.clone()])?);
        let w = a.weight(&beta);
        let w = *w.numer() as f64 / *w.denom() as f64;
        let ratio = if denom <= 1e-12 * scale { 0.0 } else { num * bx.radius.powf(w - 1.0) / denom };
        poincare.push((beta, ratio));
    }
    Ok(PolynomialApprox { poly, poincare })
}

#[derive(Clone, Copy, Debug)]
pub struct PiecewiseOptions {
    pub p: f64,
    /// Number of refinements tried (lattice steps on `Q`, radius halvings elsewhere).
    pub max_levels: usize,
    /// Cut-off parameter; derived from the coverage target when `None`.
    pub sigma: Option<f64>,
}

impl Default for PiecewiseOptions {
    fn default() -> Self {
        Self { p: 2.0, max_levels: 12, sigma: None }
    }
}

#[derive(Clone, Debug)]
pub struct PiecewiseApprox {
    pub field: GridField,
    /// Cores `(1−σ)⊙Q_i` on which `∇ₐu_ε` is constant.
    pub boxes: Vec<AnisoBox>,
    /// Polynomial used on each core, parallel to `boxes`.
    pub polynomials: Vec<APolynomial>,
    /// `‖f − u_ε‖_{W^{a,p}}` (full variant).
    pub error: f64,
    /// `error / (ε (1 + ‖f‖))`.
    pub relative_constant: f64,
    /// Domain volume not covered by cores.
    pub uncovered_volume: f64,
    pub sigma: f64,
    pub radius: f64,
}

/// `u_ε = f + Σᵢ ψᵢ (Pᵢ − f)` with a partition of unity `ψᵢ` over a box
/// cover, refined until `‖f − u_ε‖ ≤ ε (1 + ‖f‖)` while the cores miss at
/// most `ε` of the volume. The cover is an exact lattice on `Q` and the
/// greedy dyadic cover on other rectangles.
pub fn piecewise_gradient_approx(f: &GridField, eps: f64, opts: &PiecewiseOptions) -> Result<PiecewiseApprox> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(invalid("eps", format!("ε must be positive, got {eps}")));
    }
    let grid = f.grid();
    let a = grid.a();
    let domain = grid.domain();
    let volume = domain.volume();
    let s = a.inverse_sum();
    let s = *s.numer() as f64 / *s.denom() as f64;

    // On Q the exact lattices leave no remainder and σ gets the whole
    // coverage budget; elsewhere the greedy cover takes half of it.
    let on_cube = domain == &Rect::cube(grid.dim());
    let frac = if on_cube { eps / volume } else { eps / (2.0 * volume) }.min(0.5);
    let sigma = match opts.sigma {
        Some(sg) if sg > 0.0 && sg < 0.5 => sg,
        Some(sg) => return Err(invalid("sigma", format!("σ must lie in (0, 1/2), got {sg}"))),
        None => (1.0 - (1.0 - frac).powf(1.0 / s)).min(0.25),
    };
    let norm_f = sobolev_norm(f, opts.p, NormVariant::Full)?;
    let target = eps * (1.0 + norm_f);
    let r0 = (0..grid.dim())
        .map(|i| (domain.width(i) / 2.0).powi(a.order(i) as i32))
        .fold(f64::INFINITY, f64::min);

    let mut best: Option<PiecewiseApprox> = None;
    let l = a.orders().iter().fold(1u64, |acc, &ai| acc.lcm(&(ai as u64)));
    for level in 0..=opts.max_levels {
        let radius = if on_cube { ((level + 1) as f64).powf(-(l as f64)) } else { r0 * 0.5f64.powi(level as i32) };
        let too_small = (0..grid.dim()).any(|i| {
            radius.powf(1.0 / a.order(i) as f64) < (a.order(i) as f64 + 1.0) * grid.spacing()[i]
        });
        if too_small {
            break;
        }
        let boxes = if on_cube {
            cube_lattice(a, level as u64 + 1)
        } else {
            match box_cover(domain, radius, a, &CoverOptions { tolerance: frac, ..Default::default() }) {
                Ok(c) => c.boxes,
                Err(Error::BoxBudgetExceeded { .. }) => break,
                Err(e) => return Err(e),
            }
        };
        let n = f.n();
        // Boxes too thin to carry a polynomial fit stay uncovered.
        let mut kept = Vec::with_capacity(boxes.len());
        let mut polys = Vec::with_capacity(boxes.len());
        for bx in &boxes {
            match polynomial_approx(f, bx, opts.p) {
                Ok(pa) => {
                    kept.push(bx.clone());
                    polys.push(pa.poly);
                }
                Err(Error::RankDeficient(_)) => {}
                Err(e) => return Err(e),
            }
        }
        let profiles: Vec<Profile> = kept.iter().map(|bx| Profile::new(bx, sigma, &kept)).collect();
        let mut total = vec![0.0; grid.num_nodes()];
        for pr in &profiles {
            for node in nodes_in_rect(grid, &pr.support) {
                total[node] += pr.value(&grid.node_coords(node));
            }
        }
        let mut values = f.values().to_vec();
        let mut buf = vec![0.0; n];
        for (pr, poly) in profiles.iter().zip(&polys) {
            for node in nodes_in_rect(grid, &pr.support) {
                let x = grid.node_coords(node);
                let eta = pr.value(&x);
                if eta == 0.0 {
                    continue;
                }
                let psi = eta / total[node].max(1.0);
                poly.eval(&x, &mut buf);
                for i in 0..n {
                    values[node * n + i] += psi * (buf[i] - f.at(node)[i]);
                }
            }
        }
        for node in 0..grid.num_nodes() {
            if grid.is_collar(node) {
                values[node * n..(node + 1) * n].copy_from_slice(f.at(node));
            }
        }
        let field = GridField::from_values(grid.clone(), n, values)?;
        let error = sobolev_norm(&f.sub(&field), opts.p, NormVariant::Full)?;
        let cores: Vec<AnisoBox> = kept.iter().map(|b| b.shrink(sigma)).collect();
        let covered: f64 = cores.iter().map(AnisoBox::volume).sum();
        let candidate = PiecewiseApprox {
            field,
            boxes: cores,
            polynomials: polys,
            error,
            relative_constant: error / (eps * (1.0 + norm_f)),
            uncovered_volume: (volume - covered).max(0.0),
            sigma,
            radius,
        };
        if error <= target && candidate.uncovered_volume <= eps * (1.0 + 1e-12) {
            return Ok(candidate);
        }
        if best.as_ref().map_or(true, |b| candidate.error < b.error) {
            best = Some(candidate);
        }
    }
    let reason = match best {
        Some(b) => format!(
            "best error {:.3e} at radius {:.3e} against target {target:.3e} (relative constant {:.2}), uncovered volume {:.3e}",
            b.error, b.radius, b.relative_constant, b.uncovered_volume
        ),
        None => "no box cover fits the grid".to_string(),
    };
    Err(Error::Unattainable { eps, reason })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::smoothness::SmoothnessVector;

    fn sv(a: &[u32]) -> SmoothnessVector {
        SmoothnessVector::new(a.to_vec()).unwrap()
    }

    #[test]
    fn cutoff_center_and_outside() {
        let a = sv(&[1, 2]);
        let grid = Grid::cube(a.clone(), 41).unwrap();
        let bx = AnisoBox::new(vec![0.0, 0.0], 0.25, a).unwrap();
        let c = cutoff(&bx, 0.2, &grid).unwrap();
        let center = grid.linear_index(&[20, 20]);
        assert_eq!(c.field.at(center)[0], 1.0);
        let outside = grid.linear_index(&[0, 20]);
        assert_eq!(c.field.at(outside)[0], 0.0);
        assert!(c.field.values().iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert!(cutoff(&bx, 0.5, &grid).is_err());
        assert!(cutoff(&bx, 0.0, &grid).is_err());
    }

    #[test]
    fn polynomial_reproduces_a_polynomials() {
        let a = sv(&[1, 2]);
        let grid = Grid::cube(a.clone(), 17).unwrap();
        let f = GridField::from_scalar_fn(grid.clone(), |x| 2.0 + 0.5 * x[1] + x[0] + x[1] * x[1]);
        let bx = AnisoBox::new(vec![0.0, 0.0], 1.0, a).unwrap();
        let pa = polynomial_approx(&f, &bx, 2.0).unwrap();
        let err = f.sub(&pa.poly.to_field(&grid)).values().iter().fold(0.0f64, |s, v| s.max(v.abs()));
        assert!(err < 1e-9);
        let hyper = homogeneity_set(grid.a());
        let x = pa.poly.a_gradient(&hyper);
        assert!((x[0] - 1.0).abs() < 1e-9 && (x[1] - 2.0).abs() < 1e-9);
        for (alpha, c) in &pa.poly.terms {
            if hyper.contains(alpha) {
                assert!((c[0] - 1.0).abs() < 1e-9, "{alpha}: {c:?}");
            }
        }
        assert!(pa.poincare.iter().all(|(_, r)| *r == 0.0));
    }

    #[test]
    fn polynomial_rank_deficiency_detected() {
        let a = sv(&[1, 2]);
        let grid = Grid::cube(a.clone(), 9).unwrap();
        let f = GridField::zeros(grid, 1);
        let tiny = AnisoBox::new(vec![0.01, 0.01], 1e-3, a).unwrap();
        assert!(matches!(polynomial_approx(&f, &tiny, 2.0), Err(Error::RankDeficient(_))));
    }

    #[test]
    fn piecewise_reproduces_polynomial_with_one_box() {
        let a = sv(&[1, 2]);
        let grid = Grid::cube(a, 17).unwrap();
        let f = GridField::from_scalar_fn(grid, |x| x[0] - 3.0 * x[1] * x[1] + x[1]);
        let out = piecewise_gradient_approx(&f, 0.1, &PiecewiseOptions::default()).unwrap();
        assert_eq!(out.boxes.len(), 1);
        assert!(out.error < 1e-9);
        let diff = out.field.sub(&f).values().iter().fold(0.0f64, |s, v| s.max(v.abs()));
        assert!(diff < 1e-10);
    }
}
