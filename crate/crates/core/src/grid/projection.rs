use super::{AGradientField, DiffOperator, GridField};
use crate::error::{invalid, Error, Result};
use crate::smoothness::lower_set;

#[derive(Clone, Copy, Debug)]
pub struct ProjectionOptions {
    /// Relative residual of the normal equations.
    pub tol: f64,
    /// Iteration budget; `None` means `20·dofs + 200`.
    pub max_iter: Option<usize>,
}

impl Default for ProjectionOptions {
    fn default() -> Self {
        Self { tol: 1e-13, max_iter: None }
    }
}

#[derive(Clone, Debug)]
pub struct Projection {
    /// Zero-boundary field whose full gradient is closest to the target.
    pub u: GridField,
    /// `V − ∇̃u`.
    pub residual: AGradientField,
    pub iterations: usize,
}

/// Least-squares projection of a full-gradient-shaped field onto the image
/// of `∇̃` over zero-boundary fields, by preconditioned conjugate gradients
/// on the normal equations `DᵀD u = Dᵀ V`.
pub fn project_to_gradients(target: &AGradientField, opts: &ProjectionOptions) -> Result<Projection> {
    let grid = target.grid().clone();
    let full = lower_set(grid.a(), false);
    if target.columns() != full.as_slice() {
        return Err(invalid("V", "target must carry exactly the full lower-set columns"));
    }
    let n = target.n();
    let op = DiffOperator::new(&grid, n, full)?;
    let free = grid.free_nodes();
    let dofs = free.len() * n;

    // Diagonal of DᵀD restricted to the free nodes.
    let mut diag_full = vec![0.0; grid.num_nodes()];
    for st in &op.stencils {
        for &node in &op.eval_nodes {
            for (&o, &w) in st.offsets.iter().zip(&st.weights) {
                diag_full[(node as isize + o) as usize] += w * w;
            }
        }
    }
    let inv_diag: Vec<f64> = free
        .iter()
        .flat_map(|&node| std::iter::repeat(1.0 / diag_full[node]).take(n))
        .collect();

    let scatter = |x: &[f64], buf: &mut [f64]| {
        buf.fill(0.0);
        for (j, &node) in free.iter().enumerate() {
            buf[node * n..(node + 1) * n].copy_from_slice(&x[j * n..(j + 1) * n]);
        }
    };
    let gather = |buf: &[f64], x: &mut [f64]| {
        for (j, &node) in free.iter().enumerate() {
            x[j * n..(j + 1) * n].copy_from_slice(&buf[node * n..(node + 1) * n]);
        }
    };

    let mut full_buf = vec![0.0; op.input_len()];
    let mut out_buf = vec![0.0; op.output_len()];
    let mut adj_buf = vec![0.0; op.input_len()];
    let mut normal = |x: &[f64], y: &mut [f64]| {
        scatter(x, &mut full_buf);
        op.apply(&full_buf, &mut out_buf);
        adj_buf.fill(0.0);
        op.apply_transpose_add(&out_buf, &mut adj_buf);
        gather(&adj_buf, y);
    };

    let mut rhs_full = vec![0.0; op.input_len()];
    op.apply_transpose_add(target.values(), &mut rhs_full);
    let mut b = vec![0.0; dofs];
    gather(&rhs_full, &mut b);
    let b_norm = b.iter().map(|v| v * v).sum::<f64>().sqrt();

    let mut x = vec![0.0; dofs];
    let mut iterations = 0;
    if b_norm > 0.0 {
        let max_iter = opts.max_iter.unwrap_or(20 * dofs + 200);
        let mut r = b.clone();
        let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(a, d)| a * d).collect();
        let mut p = z.clone();
        let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let mut ap = vec![0.0; dofs];
        loop {
            let res = r.iter().map(|v| v * v).sum::<f64>().sqrt() / b_norm;
            if res <= opts.tol {
                break;
            }
            if iterations >= max_iter {
                return Err(Error::NotConverged { iterations, residual: res });
            }
            normal(&p, &mut ap);
            let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
            let alpha = rz / pap;
            for i in 0..dofs {
                x[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            for i in 0..dofs {
                z[i] = r[i] * inv_diag[i];
            }
            let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..dofs {
                p[i] = z[i] + beta * p[i];
            }
            iterations += 1;
        }
    }

    let mut u_values = vec![0.0; op.input_len()];
    scatter(&x, &mut u_values);
    let u = GridField::from_values(grid, n, u_values)?;
    let residual = target.sub(&u.full_gradient()?);
    Ok(Projection { u, residual, iterations })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use crate::smoothness::SmoothnessVector;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid() -> Grid {
        Grid::cube(SmoothnessVector::new(vec![1, 2]).unwrap(), 13).unwrap()
    }

    fn random_zero_boundary(rng: &mut ChaCha8Rng) -> GridField {
        let g = grid();
        let len = g.num_nodes();
        let mut f = GridField::from_values(g, 1, (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        f.clear_collar();
        f
    }

    fn dot(x: &AGradientField, y: &AGradientField) -> f64 {
        x.values().iter().zip(y.values()).map(|(a, b)| a * b).sum()
    }

    #[test]
    fn recovers_gradient_fields() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let w = random_zero_boundary(&mut rng);
        let v = w.full_gradient().unwrap();
        let proj = project_to_gradients(&v, &ProjectionOptions::default()).unwrap();
        let err = proj.u.sub(&w).values().iter().map(|x| x.abs()).fold(0.0, f64::max);
        assert!(err < 1e-8);
        let rel = proj.residual.values().iter().map(|x| x * x).sum::<f64>().sqrt()
            / v.values().iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(rel <= 1e-8);
    }

    #[test]
    fn zero_target_projects_to_zero() {
        let g = grid();
        let cols = lower_set(g.a(), false);
        let v = AGradientField::from_values(g.clone(), 1, cols.clone(), vec![0.0; g.num_eval() * cols.len()]).unwrap();
        let proj = project_to_gradients(&v, &ProjectionOptions::default()).unwrap();
        assert!(proj.u.values().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn residual_is_orthogonal_to_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let g = grid();
        let cols = lower_set(g.a(), false);
        let vals = (0..g.num_eval() * cols.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let v = AGradientField::from_values(g, 1, cols, vals).unwrap();
        let proj = project_to_gradients(&v, &ProjectionOptions::default()).unwrap();
        let rnorm = dot(&proj.residual, &proj.residual).sqrt();
        for _ in 0..10 {
            let phi = random_zero_boundary(&mut rng).full_gradient().unwrap();
            let ip = dot(&proj.residual, &phi);
            assert!(ip.abs() <= 1e-8 * rnorm * dot(&phi, &phi).sqrt());
        }
        // idempotence: projecting ∇̃u again returns u with zero residual
        let again = project_to_gradients(&proj.u.full_gradient().unwrap(), &ProjectionOptions::default()).unwrap();
        let diff = again.u.sub(&proj.u).values().iter().map(|x| x.abs()).fold(0.0, f64::max);
        assert!(diff < 1e-8);
    }

    #[test]
    fn wrong_columns_rejected() {
        let g = grid();
        let v = GridField::zeros(g, 1).a_gradient().unwrap();
        assert!(project_to_gradients(&v, &ProjectionOptions::default()).is_err());
    }
}
