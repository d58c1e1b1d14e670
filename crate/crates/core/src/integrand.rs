//! Integrands `F: ℝ^{n×m} → ℝ ∪ {+∞}` with growth metadata.
//!
//! Matrices are passed as flat row-major slices of length `n·m`; column `c`
//! of row `i` sits at `i·m + c`, with columns ordered as the hyperplane of
//! homogeneity.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

type EvalFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
type GradFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

/// Growth bounds `|F(V)| ≤ C_upper (|V|^p + 1)` and
/// `F(V) ≥ c_lower |V|^p − C_const`, each optional.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Growth {
    pub p: f64,
    pub c_upper: Option<f64>,
    pub c_lower: Option<f64>,
    pub c_const: Option<f64>,
}

impl Growth {
    pub fn upper(p: f64, c_upper: f64) -> Self {
        Self { p, c_upper: Some(c_upper), c_lower: None, c_const: None }
    }
}

/// Declarative integrand description, as found in run configurations:
/// `{"name": "...", "params": {...}}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", content = "params", rename_all = "snake_case", deny_unknown_fields)]
pub enum IntegrandSpec {
    Pnorm { p: f64 },
    Quadratic { matrix: Vec<Vec<f64>> },
    Pantographic,
    DoubleWell { col: usize, w: f64 },
    Constant { c: f64 },
    Shifted { inner: Box<IntegrandSpec>, x0: Vec<f64> },
    MinusPower { inner: Box<IntegrandSpec>, c: f64, q: f64 },
}

/// An energy density with optional analytic gradient.
#[derive(Clone)]
pub struct Integrand {
    name: String,
    spec: Option<IntegrandSpec>,
    n: usize,
    m: usize,
    eval: EvalFn,
    grad: Option<GradFn>,
    growth: Growth,
    convex: Option<bool>,
}

impl fmt::Debug for Integrand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Integrand")
            .field("name", &self.name)
            .field("n", &self.n)
            .field("m", &self.m)
            .field("growth", &self.growth)
            .field("convex", &self.convex)
            .finish()
    }
}

fn frob(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

impl Integrand {
    /// Wraps arbitrary closures without running the registration checks.
    pub fn from_fn(
        name: impl Into<String>,
        n: usize,
        m: usize,
        eval: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        grad: Option<Box<dyn Fn(&[f64], &mut [f64]) + Send + Sync>>,
        growth: Growth,
    ) -> Self {
        Self {
            name: name.into(),
            spec: None,
            n,
            m,
            eval: Arc::new(eval),
            grad: grad.map(Arc::from),
            growth,
            convex: None,
        }
    }

    pub fn with_convexity(mut self, convex: Option<bool>) -> Self {
        self.convex = convex;
        self
    }

    /// Runs the registration checks (gradient against finite differences at
    /// 20 points, sampled upper growth bound at 10³ points).
    pub fn validated(self) -> Result<Self> {
        if self.grad.is_some() {
            let err = grad_check(&self, 20, 0x5eed)?;
            if err > 1e-4 {
                return Err(Error::IntegrandCheck(format!(
                    "`{}`: analytic gradient disagrees with finite differences (relative error {err:.2e})",
                    self.name
                )));
            }
        }
        if let Some(c) = self.growth.c_upper {
            let mut rng = ChaCha8Rng::seed_from_u64(0x9_0075);
            let dim = self.dim();
            for _ in 0..1000 {
                let radius = rng.gen_range(0.0..10.0f64);
                let mut v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let norm = frob(&v).max(f64::MIN_POSITIVE);
                v.iter_mut().for_each(|x| *x *= radius / norm);
                let val = self.eval(&v);
                if val.is_finite() && val.abs() > c * (frob(&v).powf(self.growth.p) + 1.0) * (1.0 + 1e-12) {
                    return Err(Error::IntegrandCheck(format!(
                        "`{}`: |F(V)| = {val:.3e} exceeds the declared bound at |V| = {radius:.3}",
                        self.name
                    )));
                }
            }
        }
        Ok(self)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn spec(&self) -> Option<&IntegrandSpec> {
        self.spec.as_ref()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn dim(&self) -> usize {
        self.n * self.m
    }

    pub fn growth(&self) -> &Growth {
        &self.growth
    }

    pub fn convex(&self) -> Option<bool> {
        self.convex
    }

    pub fn has_grad(&self) -> bool {
        self.grad.is_some()
    }

    #[inline]
    pub fn eval(&self, v: &[f64]) -> f64 {
        (self.eval)(v)
    }

    /// Writes `∇F(V)` into `out`, falling back to central differences.
    pub fn grad(&self, v: &[f64], out: &mut [f64]) {
        match &self.grad {
            Some(g) => g(v, out),
            None => fd_grad(self, v, out),
        }
    }

    /// Errors unless a finite upper p-growth bound is declared.
    pub fn require_growth(&self) -> Result<()> {
        match self.growth.c_upper {
            Some(c) if c.is_finite() => Ok(()),
            _ => Err(Error::MissingGrowth { name: self.name.clone() }),
        }
    }
}

/// Central differences with step `1e-5·(1+|V|)`.
pub fn fd_grad(f: &Integrand, v: &[f64], out: &mut [f64]) {
    let h = 1e-5 * (1.0 + frob(v));
    let mut x = v.to_vec();
    for k in 0..v.len() {
        x[k] = v[k] + h;
        let fp = f.eval(&x);
        x[k] = v[k] - h;
        let fm = f.eval(&x);
        x[k] = v[k];
        out[k] = (fp - fm) / (2.0 * h);
    }
}

/// Max over random samples of `‖grad(V) − FD(V)‖ / (1 + ‖grad(V)‖)`.
pub fn grad_check(f: &Integrand, samples: usize, seed: u64) -> Result<f64> {
    let g = f
        .grad
        .as_ref()
        .ok_or_else(|| invalid("integrand", format!("`{}` has no analytic gradient", f.name)))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = f.dim();
    let mut analytic = vec![0.0; dim];
    let mut numeric = vec![0.0; dim];
    let mut worst: f64 = 0.0;
    let mut done = 0;
    let mut attempts = 0;
    while done < samples {
        attempts += 1;
        if attempts > 10 * samples.max(1) {
            return Err(Error::IntegrandCheck(format!("`{}` is infinite at too many sample points", f.name)));
        }
        let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect();
        if !f.eval(&v).is_finite() {
            continue;
        }
        g(&v, &mut analytic);
        fd_grad(f, &v, &mut numeric);
        let diff = analytic.iter().zip(&numeric).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        worst = worst.max(diff / (1.0 + frob(&analytic)));
        done += 1;
    }
    Ok(worst)
}

/// Builds (and registers) a built-in integrand on `ℝ^{n×m}`.
pub fn builtin(spec: &IntegrandSpec, n: usize, m: usize) -> Result<Integrand> {
    let mut f = build(spec, n, m)?;
    f.spec = Some(spec.clone());
    f.validated()
}

fn build(spec: &IntegrandSpec, n: usize, m: usize) -> Result<Integrand> {
    let dim = n * m;
    if dim == 0 {
        return Err(invalid("integrand", "n·m must be positive"));
    }
    let f = match spec {
        IntegrandSpec::Pnorm { p } => {
            let p = *p;
            if !(p >= 1.0) || !p.is_finite() {
                return Err(invalid("integrand.params.p", format!("pnorm needs p ≥ 1, got {p}")));
            }
            Integrand::from_fn(
                format!("pnorm({p})"),
                n,
                m,
                move |v| frob(v).powf(p),
                Some(Box::new(move |v: &[f64], out: &mut [f64]| {
                    let r = frob(v);
                    let s = if r > 0.0 { p * r.powf(p - 2.0) } else { 0.0 };
                    for (o, x) in out.iter_mut().zip(v) {
                        *o = s * x;
                    }
                })),
                Growth { p, c_upper: Some(1.0), c_lower: Some(1.0), c_const: Some(0.0) },
            )
            .with_convexity(Some(true))
        }
        IntegrandSpec::Quadratic { matrix } => {
            if matrix.len() != dim || matrix.iter().any(|row| row.len() != dim) {
                return Err(invalid("integrand.params.matrix", format!("quadratic needs a {dim}×{dim} matrix")));
            }
            let a = DMatrix::from_fn(dim, dim, |i, j| matrix[i][j]);
            let scale = a.abs().max().max(f64::MIN_POSITIVE);
            if (&a - a.transpose()).abs().max() > 1e-12 * scale {
                return Err(invalid("integrand.params.matrix", "matrix is not symmetric"));
            }
            if a.clone().cholesky().is_none() {
                return Err(invalid("integrand.params.matrix", "matrix is not positive definite"));
            }
            let eig = a.clone().symmetric_eigen();
            let lmax = eig.eigenvalues.max();
            let lmin = eig.eigenvalues.min();
            let a1 = a.clone();
            let a2 = a;
            Integrand::from_fn(
                "quadratic",
                n,
                m,
                move |v| {
                    let mut s = 0.0;
                    for i in 0..v.len() {
                        for j in 0..v.len() {
                            s += a1[(i, j)] * v[i] * v[j];
                        }
                    }
                    s
                },
                Some(Box::new(move |v: &[f64], out: &mut [f64]| {
                    for i in 0..v.len() {
                        out[i] = 2.0 * (0..v.len()).map(|j| a2[(i, j)] * v[j]).sum::<f64>();
                    }
                })),
                Growth { p: 2.0, c_upper: Some(lmax), c_lower: Some(lmin), c_const: Some(0.0) },
            )
            .with_convexity(Some(true))
        }
        IntegrandSpec::Pantographic => {
            if n != 1 || m != 2 {
                return Err(invalid("integrand", format!("pantographic needs n=1, m=2 (a=(1,2)); got n={n}, m={m}")));
            }
            Integrand::from_fn(
                "pantographic",
                n,
                m,
                |v| v[0] * v[0] + v[1] * v[1],
                Some(Box::new(|v: &[f64], out: &mut [f64]| {
                    out[0] = 2.0 * v[0];
                    out[1] = 2.0 * v[1];
                })),
                Growth { p: 2.0, c_upper: Some(1.0), c_lower: Some(1.0), c_const: Some(0.0) },
            )
            .with_convexity(Some(true))
        }
        IntegrandSpec::DoubleWell { col, w } => {
            // `col` counts entries of the flattened matrix from 1
            let (label, w) = (*col, *w);
            if label == 0 || label > dim {
                return Err(invalid("integrand.params.col", format!("column {label} out of range 1..={dim}")));
            }
            let col = label - 1;
            if !w.is_finite() {
                return Err(invalid("integrand.params.w", "well position must be finite"));
            }
            let w2 = w * w;
            let (c_lower, c_const) = if dim == 1 { (Some(0.5), Some(w2 * w2)) } else { (None, None) };
            Integrand::from_fn(
                format!("double_well({label},{w})"),
                n,
                m,
                move |v| {
                    let d = v[col] * v[col] - w2;
                    let rest: f64 = v.iter().enumerate().filter(|&(k, _)| k != col).map(|(_, x)| x * x).sum();
                    d * d + rest
                },
                Some(Box::new(move |v: &[f64], out: &mut [f64]| {
                    for (k, (o, x)) in out.iter_mut().zip(v).enumerate() {
                        *o = if k == col { 4.0 * x * (x * x - w2) } else { 2.0 * x };
                    }
                })),
                Growth { p: 4.0, c_upper: Some((2.0 * w2 * w2 + 0.5).max(2.5)), c_lower, c_const },
            )
            .with_convexity(Some(false))
        }
        IntegrandSpec::Constant { c } => {
            let c = *c;
            if !c.is_finite() {
                return Err(invalid("integrand.params.c", "constant must be finite"));
            }
            Integrand::from_fn(
                format!("constant({c})"),
                n,
                m,
                move |_| c,
                Some(Box::new(|_: &[f64], out: &mut [f64]| out.fill(0.0))),
                Growth { p: 2.0, c_upper: Some(c.abs()), c_lower: Some(0.0), c_const: Some((-c).max(0.0)) },
            )
            .with_convexity(Some(true))
        }
        IntegrandSpec::Shifted { inner, x0 } => shifted(&build(inner, n, m)?, x0.clone())?,
        IntegrandSpec::MinusPower { inner, c, q } => minus_power(&build(inner, n, m)?, *c, *q)?,
    };
    Ok(f)
}

/// `V ↦ F(X₀ + V)`.
pub fn shifted(f: &Integrand, x0: Vec<f64>) -> Result<Integrand> {
    if x0.len() != f.dim() {
        return Err(invalid("x0", format!("shift must have {} entries", f.dim())));
    }
    let p = f.growth.p;
    let r = frob(&x0).powf(p);
    let k = 2f64.powf(p - 1.0);
    let growth = Growth {
        p,
        c_upper: f.growth.c_upper.map(|c| c * k.max(k * r + 1.0)),
        c_lower: f.growth.c_lower.map(|c| c / k),
        c_const: match (f.growth.c_lower, f.growth.c_const) {
            (Some(cl), Some(cc)) => Some(cl * r + cc),
            _ => None,
        },
    };
    let (fe, fg) = (f.clone(), f.clone());
    let (xa, xb) = (x0.clone(), x0);
    let has_grad = f.grad.is_some();
    let mut out = Integrand::from_fn(
        format!("shifted({})", f.name),
        f.n,
        f.m,
        move |v| {
            let y: Vec<f64> = v.iter().zip(&xa).map(|(a, b)| a + b).collect();
            fe.eval(&y)
        },
        has_grad.then(|| {
            Box::new(move |v: &[f64], o: &mut [f64]| {
                let y: Vec<f64> = v.iter().zip(&xb).map(|(a, b)| a + b).collect();
                fg.grad(&y, o);
            }) as Box<dyn Fn(&[f64], &mut [f64]) + Send + Sync>
        }),
        growth,
    );
    out.convex = f.convex;
    Ok(out)
}

/// `V ↦ F(V) − c|V|^q`.
pub fn minus_power(f: &Integrand, c: f64, q: f64) -> Result<Integrand> {
    if !(q >= 1.0) || !q.is_finite() {
        return Err(invalid("q", format!("exponent must be ≥ 1, got {q}")));
    }
    if !(c >= 0.0) || !c.is_finite() {
        return Err(invalid("c", format!("coefficient must be nonnegative, got {c}")));
    }
    let p = f.growth.p.max(q);
    let growth = if c == 0.0 {
        f.growth
    } else {
        Growth { p, c_upper: f.growth.c_upper.map(|cu| cu + c), c_lower: None, c_const: None }
    };
    let (fe, fg) = (f.clone(), f.clone());
    let has_grad = f.grad.is_some();
    let mut out = Integrand::from_fn(
        format!("minus_power({}, {c}, {q})", f.name),
        f.n,
        f.m,
        move |v| fe.eval(v) - c * frob(v).powf(q),
        has_grad.then(|| {
            Box::new(move |v: &[f64], o: &mut [f64]| {
                fg.grad(v, o);
                let r = frob(v);
                if r > 0.0 {
                    let s = c * q * r.powf(q - 2.0);
                    for (oi, x) in o.iter_mut().zip(v) {
                        *oi -= s * x;
                    }
                }
            }) as Box<dyn Fn(&[f64], &mut [f64]) + Send + Sync>
        }),
        growth,
    );
    out.convex = if c == 0.0 { f.convex } else { None };
    Ok(out)
}

/// A finite dictionary of test integrands from `𝓔_p`, each with a declared
/// upper growth constant.
#[derive(Clone, Debug, Default)]
pub struct TestIntegrandClass {
    members: BTreeMap<String, Integrand>,
}

impl TestIntegrandClass {
    pub fn insert(&mut self, key: impl Into<String>, f: Integrand) -> Result<()> {
        f.require_growth()?;
        self.members.insert(key.into(), f);
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&Integrand> {
        self.members.get(key)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Integrand)> {
        self.members.iter()
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn spec(json: &str) -> IntegrandSpec {
        serde_json::from_str(json).unwrap()
    }

    #[test]
    fn builtin_examples() {
        let pant = builtin(&IntegrandSpec::Pantographic, 1, 2).unwrap();
        assert_eq!(pant.eval(&[1.0, 2.0]), 5.0);
        let dw = builtin(&IntegrandSpec::DoubleWell { col: 1, w: 1.0 }, 1, 3).unwrap();
        assert_eq!(dw.eval(&[1.0, 0.0, 0.0]), 0.0);
        assert_eq!(dw.eval(&[-1.0, 0.0, 0.0]), 0.0);
        let p2 = builtin(&IntegrandSpec::Pnorm { p: 2.0 }, 2, 2).unwrap();
        let v = [0.3, -1.2, 0.7, 2.0];
        let mut g = [0.0; 4];
        p2.grad(&v, &mut g);
        for k in 0..4 {
            assert!((g[k] - 2.0 * v[k]).abs() < 1e-14);
        }
    }

    #[test]
    fn config_schema_round_trip() {
        let s = spec(r#"{"name": "double_well", "params": {"col": 1, "w": 1.0}}"#);
        assert_eq!(s, IntegrandSpec::DoubleWell { col: 1, w: 1.0 });
        assert_eq!(spec(r#"{"name": "pantographic"}"#), IntegrandSpec::Pantographic);
        let nested = spec(
            r#"{"name": "minus_power", "params": {"inner": {"name": "pnorm", "params": {"p": 2}}, "c": 0.5, "q": 2}}"#,
        );
        let f = builtin(&nested, 1, 2).unwrap();
        assert!((f.eval(&[1.0, 1.0]) - 1.0).abs() < 1e-14);
        assert!(serde_json::from_str::<IntegrandSpec>(r#"{"name": "banana"}"#).is_err());
    }

    #[test]
    fn construction_errors() {
        let not_spd = IntegrandSpec::Quadratic { matrix: vec![vec![1.0, 2.0], vec![2.0, 1.0]] };
        assert!(builtin(&not_spd, 1, 2).is_err());
        let asym = IntegrandSpec::Quadratic { matrix: vec![vec![1.0, 0.5], vec![0.0, 1.0]] };
        assert!(builtin(&asym, 1, 2).is_err());
        assert!(builtin(&IntegrandSpec::Pantographic, 1, 3).is_err());
        assert!(builtin(&IntegrandSpec::DoubleWell { col: 3, w: 1.0 }, 1, 2).is_err());
        assert!(builtin(&IntegrandSpec::DoubleWell { col: 0, w: 1.0 }, 1, 2).is_err());
    }

    #[test]
    fn grad_check_examples() {
        let p2 = builtin(&IntegrandSpec::Pnorm { p: 2.0 }, 1, 2).unwrap();
        assert!(grad_check(&p2, 50, 1).unwrap() <= 1e-6);
        let dw = builtin(&IntegrandSpec::DoubleWell { col: 2, w: 1.0 }, 1, 2).unwrap();
        assert!(grad_check(&dw, 50, 2).unwrap() <= 1e-4);
        let wrong = Integrand::from_fn(
            "wrong",
            1,
            2,
            |v| v[0] * v[0] + v[1] * v[1],
            Some(Box::new(|v: &[f64], o: &mut [f64]| {
                o[0] = v[0];
                o[1] = -v[1];
            })),
            Growth::upper(2.0, 1.0),
        );
        assert!(grad_check(&wrong, 20, 3).unwrap() > 0.1);
        assert!(wrong.validated().is_err());
    }

    #[test]
    fn grad_check_skips_infinite_points() {
        let barrier = Integrand::from_fn(
            "barrier",
            1,
            1,
            |v| if v[0] > 1.5 { f64::INFINITY } else { v[0] * v[0] },
            Some(Box::new(|v: &[f64], o: &mut [f64]| o[0] = 2.0 * v[0])),
            Growth::upper(2.0, 1.0),
        );
        assert!(grad_check(&barrier, 20, 4).unwrap() < 1e-6);
        let nowhere = Integrand::from_fn(
            "nowhere",
            1,
            1,
            |_| f64::INFINITY,
            Some(Box::new(|_: &[f64], o: &mut [f64]| o[0] = 0.0)),
            Growth::upper(2.0, 1.0),
        );
        assert!(grad_check(&nowhere, 5, 5).is_err());
    }

    #[test]
    fn growth_violation_detected() {
        let liar = Integrand::from_fn("liar", 1, 1, |v| v[0].powi(4), None, Growth::upper(2.0, 1.0));
        assert!(liar.validated().is_err());
    }

    #[test]
    fn test_class_requires_growth() {
        let mut class = TestIntegrandClass::default();
        class.insert("p2", builtin(&IntegrandSpec::Pnorm { p: 2.0 }, 1, 1).unwrap()).unwrap();
        let unbounded = Integrand::from_fn(
            "exp",
            1,
            1,
            |v| v[0].exp(),
            None,
            Growth { p: 2.0, c_upper: None, c_lower: None, c_const: None },
        );
        assert!(class.insert("exp", unbounded).is_err());
        assert_eq!(class.len(), 1);
    }

    proptest! {
        #[test]
        fn shift_and_minus_power_identities(v in proptest::collection::vec(-3.0f64..3.0, 2), q in 1.0f64..4.0) {
            let dw = builtin(&IntegrandSpec::DoubleWell { col: 1, w: 1.0 }, 1, 2).unwrap();
            let s0 = shifted(&dw, vec![0.0, 0.0]).unwrap();
            prop_assert_eq!(s0.eval(&v), dw.eval(&v));
            let mp0 = minus_power(&dw, 0.0, q).unwrap();
            prop_assert_eq!(mp0.eval(&v), dw.eval(&v));
            prop_assert!(dw.eval(&v) >= 0.0);
            let x0 = vec![0.5, -0.25];
            let sh = shifted(&dw, x0.clone()).unwrap();
            let y: Vec<f64> = v.iter().zip(&x0).map(|(a, b)| a + b).collect();
            prop_assert_eq!(sh.eval(&v), dw.eval(&y));
        }

        #[test]
        fn double_well_vanishes_only_at_wells(v in proptest::collection::vec(-3.0f64..3.0, 3)) {
            let dw = builtin(&IntegrandSpec::DoubleWell { col: 3, w: 1.5 }, 1, 3).unwrap();
            let val = dw.eval(&v);
            prop_assert!(val >= 0.0);
            if val == 0.0 {
                prop_assert!(v[0] == 0.0 && v[1] == 0.0 && v[2].abs() == 1.5);
            }
        }
    }
}
