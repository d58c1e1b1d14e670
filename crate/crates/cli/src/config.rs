//! Run configuration: schema, defaults and validation.

use std::path::{Path, PathBuf};

use mixvar::envelope::{EnvelopeOptions, Lattice};
use mixvar::grid::APolynomial;
use mixvar::smoothness::{MultiIndex, Rect};
use mixvar::solver::Datum;
use mixvar::{builtin, Integrand, IntegrandSpec, SmoothnessVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub a: Vec<u32>,
    /// Defaults to `Q = [-1, 1]^N`.
    #[serde(default)]
    pub domain: Option<Rect>,
    /// Nodes per axis of the solve grid (coarsest level for `relax`).
    #[serde(default)]
    pub resolution: Option<Vec<usize>>,
    #[serde(default = "one")]
    pub n: usize,
    pub integrand: IntegrandSpec,
    /// Exponent of the Dirichlet class; defaults to the integrand's growth exponent.
    #[serde(default)]
    pub p: Option<f64>,
    #[serde(default)]
    pub datum: Option<DatumSpec>,
    /// Required by every subcommand; there is no implicit seeding.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub threads: Option<usize>,
    #[serde(default)]
    pub envelope: Option<EnvelopeSection>,
    #[serde(default)]
    pub coerce: Option<CoerceSection>,
    #[serde(default)]
    pub solve: Option<SolveSection>,
    #[serde(default)]
    pub relax: Option<RelaxSection>,
    #[serde(default)]
    pub ym: Option<YmSection>,
}

fn one() -> usize {
    1
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatumSpec {
    Zero,
    Polynomial { terms: Vec<Term> },
    Field { path: PathBuf },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Term {
    pub alpha: Vec<u32>,
    pub coeff: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvelopeSection {
    pub lattice: Option<Lattice>,
    pub resolution: usize,
    pub multistart: usize,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for EnvelopeSection {
    fn default() -> Self {
        let d = EnvelopeOptions::default();
        Self { lattice: None, resolution: d.resolution, multistart: d.multistart, tol: d.tol, max_iter: d.max_iter }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoerceSection {
    pub q: Option<f64>,
    pub t: Option<Vec<f64>>,
    pub resolution: usize,
    pub multistart: usize,
    pub tol: f64,
    pub max_iter: usize,
    /// Slope below which the fit reports "not coercive".
    pub c_min: f64,
}

impl Default for CoerceSection {
    fn default() -> Self {
        let d = mixvar::coercivity::ThetaOptions::default();
        Self { q: None, t: None, resolution: d.resolution, multistart: d.multistart, tol: d.tol, max_iter: d.max_iter, c_min: 1e-3 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolveSection {
    pub tol: f64,
    pub max_iter: usize,
    pub restarts: usize,
    pub perturbation: f64,
    pub snapshot_every: usize,
}

impl Default for SolveSection {
    fn default() -> Self {
        let d = mixvar::solver::SolveOptions::default();
        Self {
            tol: d.tol,
            max_iter: d.max_iter,
            restarts: d.restarts,
            perturbation: d.perturbation,
            snapshot_every: d.snapshot_every,
        }
    }
}

impl SolveSection {
    pub fn options(&self, seed: u64) -> mixvar::solver::SolveOptions {
        mixvar::solver::SolveOptions {
            tol: self.tol,
            max_iter: self.max_iter,
            restarts: self.restarts,
            perturbation: self.perturbation,
            seed,
            snapshot_every: self.snapshot_every,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RelaxSection {
    pub levels: Option<usize>,
    pub tol: f64,
    pub max_iter: usize,
    pub restarts: usize,
    pub perturbation: f64,
    pub warm_perturbation: f64,
    pub gap_tol: f64,
}

impl Default for RelaxSection {
    fn default() -> Self {
        let d = mixvar::solver::RelaxOptions::default();
        Self {
            levels: None,
            tol: d.solve.tol,
            max_iter: d.solve.max_iter,
            restarts: d.restarts,
            perturbation: d.solve.perturbation,
            warm_perturbation: d.warm_perturbation,
            gap_tol: d.gap_tol,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct YmSection {
    /// Nodes per axis of each generator on `Q`.
    pub generator_resolution: usize,
    pub generators: usize,
    pub amplitude: f64,
    pub scales: Vec<u32>,
    /// Nodes per axis of the tiled fields; defaults to `resolution`.
    pub target_resolution: Option<Vec<usize>>,
    /// Moment exponent; defaults to the integrand's growth exponent.
    pub p: Option<f64>,
    pub directions: usize,
}

impl Default for YmSection {
    fn default() -> Self {
        Self {
            generator_resolution: 33,
            generators: 1,
            amplitude: 1.0,
            scales: vec![0, 1, 2],
            target_resolution: None,
            p: None,
            directions: 32,
        }
    }
}

/// Validated objects shared by the subcommands.
pub struct Resolved {
    pub config: RunConfig,
    pub hash: String,
    pub a: SmoothnessVector,
    pub domain: Rect,
    pub integrand: Integrand,
    pub seed: u64,
}

fn bad(field: &str, reason: impl std::fmt::Display) -> CliError {
    CliError::Validation(format!("config field `{field}`: {reason}"))
}

fn lift(field: &str) -> impl Fn(mixvar::Error) -> CliError + '_ {
    move |e| match e {
        mixvar::Error::InvalidArgument { field: inner, reason } if inner != field => {
            bad(&format!("{field}.{inner}"), reason)
        }
        other => bad(field, other),
    }
}

pub fn load(path: &Path) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Validation(format!("cannot read config {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Validation(format!("config schema: {e}")))
}

impl RunConfig {
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn resolve(self) -> Result<Resolved, CliError> {
        let a = SmoothnessVector::new(self.a.clone()).map_err(lift("a"))?;
        let domain = match &self.domain {
            Some(r) => Rect::new(r.lower.clone(), r.upper.clone()).map_err(lift("domain"))?,
            None => Rect::cube(a.dim()),
        };
        if domain.dim() != a.dim() {
            return Err(bad("domain", format!("has dimension {}, a has {}", domain.dim(), a.dim())));
        }
        if self.n == 0 {
            return Err(bad("n", "must be at least 1"));
        }
        let integrand = builtin(&self.integrand, self.n, a.m()).map_err(|e| bad("integrand", e))?;
        let seed = self.seed.ok_or_else(|| bad("seed", "a seed is mandatory"))?;
        if self.threads == Some(0) {
            return Err(bad("threads", "must be at least 1"));
        }
        if let Some(res) = &self.resolution {
            if res.len() != a.dim() || res.iter().any(|&r| r < 2) {
                return Err(bad("resolution", format!("needs {} entries of at least 2", a.dim())));
            }
        }
        if let Some(p) = self.p {
            if !(p > 1.0) {
                return Err(bad("p", "must exceed 1"));
            }
        }
        let hash = self.hash();
        Ok(Resolved { config: self, hash, a, domain, integrand, seed })
    }
}

impl Resolved {
    pub fn resolution(&self) -> Result<Vec<usize>, CliError> {
        self.config.resolution.clone().ok_or_else(|| bad("resolution", "required by this subcommand"))
    }

    pub fn p(&self) -> f64 {
        self.config.p.unwrap_or(self.integrand.growth().p)
    }

    pub fn datum(&self) -> Result<Datum, CliError> {
        let dim = self.a.dim();
        match self.config.datum.as_ref().unwrap_or(&DatumSpec::Zero) {
            DatumSpec::Zero => Ok(Datum::Polynomial(APolynomial::zero(self.config.n, dim))),
            DatumSpec::Polynomial { terms } => {
                let terms = terms.iter().map(|t| (MultiIndex(t.alpha.clone()), t.coeff.clone())).collect();
                let poly = APolynomial::new(self.config.n, vec![0.0; dim], terms).map_err(lift("datum"))?;
                poly.check_lower_set(&self.a).map_err(lift("datum"))?;
                Ok(Datum::Polynomial(poly))
            }
            DatumSpec::Field { path } => {
                let (field, _) = mixvar::container::load_field(path).map_err(|e| bad("datum.path", e))?;
                if field.grid().a() != &self.a || field.grid().domain() != &self.domain {
                    return Err(bad("datum.path", "field grid does not match a and domain"));
                }
                Ok(Datum::Field(field))
            }
        }
    }
}
