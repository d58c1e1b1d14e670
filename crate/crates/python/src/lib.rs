//! Python bindings. Option structs and reports cross the boundary as plain
//! dicts through their serde representation.

use mixvar_core as mv;
use mv::envelope::{EnvelopeOptions, EnvelopeTable as CoreTable, Lattice};
use mv::grid::APolynomial;
use mv::smoothness::Rect;
use mv::solver::{Datum, DirichletProblem, RelaxOptions, SolveOptions};
use mv::youngmeasure::EmpiricalMeasure;
use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use serde::de::DeserializeOwned;
use serde::Serialize;

fn err(e: mv::Error) -> PyErr {
    match e {
        mv::Error::InvalidArgument { .. }
        | mv::Error::StencilTooWide { .. }
        | mv::Error::UnknownIntegrand(_)
        | mv::Error::MissingGrowth { .. }
        | mv::Error::Json(_) => PyValueError::new_err(e.to_string()),
        mv::Error::Io(_) => PyOSError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn from_py<T: DeserializeOwned + Default>(obj: Option<&Bound<'_, PyAny>>) -> PyResult<T> {
    let Some(obj) = obj else { return Ok(T::default()) };
    let text: String = obj.py().import("json")?.call_method1("dumps", (obj,))?.extract()?;
    serde_json::from_str(&text).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn smoothness(a: Vec<u32>) -> PyResult<mv::SmoothnessVector> {
    mv::SmoothnessVector::new(a).map_err(err)
}

/// Rectangular grid on `[lower, upper]`, defaulting to `[-1, 1]^N`.
#[pyclass(name = "Grid", module = "mixvar", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyGrid(mv::Grid);

#[pymethods]
impl PyGrid {
    #[new]
    #[pyo3(signature = (a, counts, lower=None, upper=None))]
    fn new(a: Vec<u32>, counts: Vec<usize>, lower: Option<Vec<f64>>, upper: Option<Vec<f64>>) -> PyResult<Self> {
        let a = smoothness(a)?;
        let domain = match (lower, upper) {
            (None, None) => Rect::cube(a.dim()),
            (Some(l), Some(u)) => Rect::new(l, u).map_err(err)?,
            _ => return Err(PyValueError::new_err("give both lower and upper, or neither")),
        };
        mv::Grid::new(a, domain, counts).map(Self).map_err(err)
    }

    #[getter]
    fn a(&self) -> Vec<u32> {
        self.0.a().orders().to_vec()
    }

    #[getter]
    fn counts(&self) -> Vec<usize> {
        self.0.counts().to_vec()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.0.dim()
    }

    #[getter]
    fn num_nodes(&self) -> usize {
        self.0.num_nodes()
    }

    #[getter]
    fn quadrature_weight(&self) -> f64 {
        self.0.quadrature_weight()
    }

    fn coordinates(&self, axis: usize) -> PyResult<Vec<f64>> {
        if axis >= self.0.dim() {
            return Err(PyValueError::new_err(format!("axis {axis} out of range")));
        }
        Ok((0..self.0.counts()[axis]).map(|k| self.0.coordinate(axis, k)).collect())
    }

    fn __repr__(&self) -> String {
        format!("Grid(a={:?}, counts={:?})", self.a(), self.counts())
    }
}

/// `ℝⁿ`-valued nodal field, row-major with the last axis fastest.
#[pyclass(name = "Field", module = "mixvar", frozen, from_py_object)]
#[derive(Clone)]
struct PyField(mv::GridField);

#[pymethods]
impl PyField {
    #[new]
    #[pyo3(signature = (grid, values, n=1))]
    fn new(grid: &PyGrid, values: Vec<f64>, n: usize) -> PyResult<Self> {
        mv::GridField::from_values(grid.0.clone(), n, values).map(Self).map_err(err)
    }

    #[staticmethod]
    #[pyo3(signature = (grid, n=1))]
    fn zeros(grid: &PyGrid, n: usize) -> Self {
        Self(mv::GridField::zeros(grid.0.clone(), n))
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        mv::container::load_field(path).map(|(f, _)| Self(f)).map_err(err)
    }

    #[pyo3(signature = (path, config_hash=None))]
    fn save(&self, path: &str, config_hash: Option<&str>) -> PyResult<()> {
        mv::container::save_field(path, &self.0, config_hash).map_err(err)
    }

    #[getter]
    fn grid(&self) -> PyGrid {
        PyGrid(self.0.grid().clone())
    }

    #[getter]
    fn n(&self) -> usize {
        self.0.n()
    }

    #[getter]
    fn values(&self) -> Vec<f64> {
        self.0.values().to_vec()
    }

    fn is_zero_boundary(&self) -> bool {
        self.0.is_zero_boundary()
    }

    /// Returns `(columns, rows)`: one `n·m` row per evaluation node.
    fn a_gradient(&self) -> PyResult<(Vec<Vec<u32>>, Vec<Vec<f64>>)> {
        let d = self.0.a_gradient().map_err(err)?;
        let columns = d.columns().iter().map(|c| c.0.clone()).collect();
        let rows = (0..d.num_nodes()).map(|k| d.at(k).to_vec()).collect();
        Ok((columns, rows))
    }

    fn sample(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        if x.len() != self.0.grid().dim() {
            return Err(PyValueError::new_err("point dimension does not match the grid"));
        }
        let mut out = vec![0.0; self.0.n()];
        self.0.sample(&x, &mut out);
        Ok(out)
    }
}

/// Built-in energy density, e.g. `Integrand({"name": "pnorm", "params": {"p": 2}}, n=1, m=2)`.
#[pyclass(name = "Integrand", module = "mixvar", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyIntegrand(mv::Integrand);

#[pymethods]
impl PyIntegrand {
    #[new]
    fn new(spec: &Bound<'_, PyAny>, n: usize, m: usize) -> PyResult<Self> {
        let spec: mv::IntegrandSpec = {
            let text: String = spec.py().import("json")?.call_method1("dumps", (spec,))?.extract()?;
            serde_json::from_str(&text).map_err(|e| PyValueError::new_err(e.to_string()))?
        };
        mv::builtin(&spec, n, m).map(Self).map_err(err)
    }

    #[getter]
    fn name(&self) -> &str {
        self.0.name()
    }

    #[getter]
    fn n(&self) -> usize {
        self.0.n()
    }

    #[getter]
    fn m(&self) -> usize {
        self.0.m()
    }

    #[getter]
    fn growth_exponent(&self) -> f64 {
        self.0.growth().p
    }

    fn __call__(&self, v: Vec<f64>) -> PyResult<f64> {
        self.check(&v)?;
        Ok(self.0.eval(&v))
    }

    fn grad(&self, v: Vec<f64>) -> PyResult<Vec<f64>> {
        self.check(&v)?;
        let mut out = vec![0.0; v.len()];
        self.0.grad(&v, &mut out);
        Ok(out)
    }
}

impl PyIntegrand {
    fn check(&self, v: &[f64]) -> PyResult<()> {
        if v.len() != self.0.dim() {
            return Err(PyValueError::new_err(format!("expected {} entries, got {}", self.0.dim(), v.len())));
        }
        Ok(())
    }
}

/// Tabulated quasiconvex envelope on a lattice (`.qft` files).
#[pyclass(name = "EnvelopeTable", module = "mixvar", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyTable(CoreTable);

#[pymethods]
impl PyTable {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        CoreTable::load(path).map(Self).map_err(err)
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.0.save(path).map_err(err)
    }

    fn __call__(&self, v: Vec<f64>) -> PyResult<f64> {
        mv::envelope::envelope_interpolate(&self.0, &v).map_err(err)
    }

    #[getter]
    fn values(&self) -> Vec<f64> {
        self.0.values.clone()
    }

    #[getter]
    fn failures(&self) -> usize {
        self.0.failures()
    }

    #[getter]
    fn header<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.0.header)
    }
}

/// Empirical measure on `ℝ^{n×m}` with atoms stored row-wise.
#[pyclass(name = "Measure", module = "mixvar", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyMeasure(EmpiricalMeasure);

#[pymethods]
impl PyMeasure {
    #[new]
    fn new(n: usize, m: usize, atoms: Vec<Vec<f64>>, weights: Vec<f64>) -> PyResult<Self> {
        let flat = atoms.concat();
        EmpiricalMeasure::new(n, m, flat, weights).map(Self).map_err(err)
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    #[getter]
    fn atoms(&self) -> Vec<Vec<f64>> {
        (0..self.0.len()).map(|k| self.0.atom(k).to_vec()).collect()
    }

    #[getter]
    fn weights(&self) -> Vec<f64> {
        self.0.weights.clone()
    }

    /// `(barycentre, ∫|A|^p dν)`.
    fn moments(&self, p: f64) -> (Vec<f64>, f64) {
        mv::youngmeasure::moments(&self.0, p)
    }
}

#[pyfunction]
fn kernel_monomials(a: Vec<u32>) -> PyResult<Vec<Vec<u32>>> {
    Ok(mv::smoothness::kernel_monomials(&smoothness(a)?).into_iter().map(|g| g.0).collect())
}

#[pyfunction]
fn homogeneity_set(a: Vec<u32>) -> PyResult<Vec<Vec<u32>>> {
    Ok(mv::smoothness::homogeneity_set(&smoothness(a)?).into_iter().map(|g| g.0).collect())
}

/// Returns `(value, F(V), phi)`.
#[pyfunction]
#[pyo3(signature = (integrand, a, v, options=None))]
fn dacorogna_min(
    py: Python<'_>,
    integrand: &PyIntegrand,
    a: Vec<u32>,
    v: Vec<f64>,
    options: Option<&Bound<'_, PyAny>>,
) -> PyResult<(f64, f64, PyField)> {
    let opts: EnvelopeOptions = from_py(options)?;
    let a = smoothness(a)?;
    let f = integrand.0.clone();
    let d = py.detach(|| mv::envelope::dacorogna_min(&f, &a, &v, &opts)).map_err(err)?;
    Ok((d.value, d.f_at_v, PyField(d.phi)))
}

#[pyfunction]
#[pyo3(signature = (integrand, a, lower, upper, counts, options=None))]
fn tabulate_envelope(
    py: Python<'_>,
    integrand: &PyIntegrand,
    a: Vec<u32>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    counts: Vec<usize>,
    options: Option<&Bound<'_, PyAny>>,
) -> PyResult<PyTable> {
    let opts: EnvelopeOptions = from_py(options)?;
    let a = smoothness(a)?;
    let lattice = Lattice::new(lower, upper, counts).map_err(err)?;
    let f = integrand.0.clone();
    py.detach(|| mv::envelope::tabulate_envelope(&f, &a, &lattice, &opts)).map(PyTable).map_err(err)
}

/// Returns `(curve, fit)` as dicts.
#[pyfunction]
#[pyo3(signature = (integrand, a, q, t, c_min=1e-3, options=None))]
fn coercivity<'py>(
    py: Python<'py>,
    integrand: &PyIntegrand,
    a: Vec<u32>,
    q: f64,
    t: Vec<f64>,
    c_min: f64,
    options: Option<&Bound<'py, PyAny>>,
) -> PyResult<(Bound<'py, PyAny>, Bound<'py, PyAny>)> {
    let opts: mv::coercivity::ThetaOptions = from_py(options)?;
    let a = smoothness(a)?;
    let f = integrand.0.clone();
    let curve = py.detach(|| mv::coercivity::theta_estimate(&f, &a, q, &t, &opts)).map_err(err)?;
    let fit = mv::coercivity::mean_coercivity_fit(&curve, c_min).map_err(err)?;
    Ok((to_py(py, &curve)?, to_py(py, &fit)?))
}

fn datum(n: usize, dim: usize, datum: Option<&Bound<'_, PyAny>>) -> PyResult<Datum> {
    let Some(d) = datum else { return Ok(Datum::Polynomial(APolynomial::zero(n, dim))) };
    if let Ok(field) = d.cast::<PyField>() {
        return Ok(Datum::Field(field.get().0.clone()));
    }
    let terms: Vec<(Vec<u32>, Vec<f64>)> = d.extract().map_err(|_| {
        PyValueError::new_err("datum must be a Field or a list of (alpha, coeff) pairs")
    })?;
    let terms = terms.into_iter().map(|(alpha, c)| (mv::MultiIndex(alpha), c)).collect();
    APolynomial::new(n, vec![0.0; dim], terms).map(Datum::Polynomial).map_err(err)
}

fn problem(
    integrand: &PyIntegrand,
    a: Vec<u32>,
    resolution: Vec<usize>,
    datum_obj: Option<&Bound<'_, PyAny>>,
    p: Option<f64>,
) -> PyResult<DirichletProblem> {
    let a = smoothness(a)?;
    let f = integrand.0.clone();
    Ok(DirichletProblem {
        datum: datum(f.n(), a.dim(), datum_obj)?,
        domain: Rect::cube(a.dim()),
        p: p.unwrap_or(f.growth().p),
        integrand: f,
        a,
        resolution,
    })
}

/// Minimizes over `g + W₀^{a,p}(Q)`. `datum` is a Field or a list of
/// `(alpha, coeff)` monomials. Returns `(u, energy, trace dict)`.
#[pyfunction]
#[pyo3(signature = (integrand, a, resolution, datum=None, p=None, options=None))]
fn solve<'py>(
    py: Python<'py>,
    integrand: &PyIntegrand,
    a: Vec<u32>,
    resolution: Vec<usize>,
    datum: Option<&Bound<'py, PyAny>>,
    p: Option<f64>,
    options: Option<&Bound<'py, PyAny>>,
) -> PyResult<(PyField, f64, Bound<'py, PyAny>)> {
    let opts: SolveOptions = from_py(options)?;
    let prob = problem(integrand, a, resolution, datum, p)?;
    let sol = py.detach(|| mv::solver::solve_dirichlet(&prob, &opts)).map_err(err)?;
    let trace = PyDict::new(py);
    trace.set_item("energies", &sol.trace.energies)?;
    trace.set_item("grad_norms", &sol.trace.grad_norms)?;
    trace.set_item("iterations", sol.trace.iterations)?;
    trace.set_item("termination", to_py(py, &sol.trace.termination)?)?;
    Ok((PyField(sol.u), sol.energy, trace.into_any()))
}

#[pyfunction]
#[pyo3(signature = (integrand, a, resolution, table, levels, datum=None, p=None, options=None))]
#[allow(clippy::too_many_arguments)]
fn relax<'py>(
    py: Python<'py>,
    integrand: &PyIntegrand,
    a: Vec<u32>,
    resolution: Vec<usize>,
    table: &PyTable,
    levels: usize,
    datum: Option<&Bound<'py, PyAny>>,
    p: Option<f64>,
    options: Option<&Bound<'py, PyAny>>,
) -> PyResult<Bound<'py, PyAny>> {
    let opts: RelaxOptions = from_py(options)?;
    let prob = problem(integrand, a, resolution, datum, p)?;
    let report = py.detach(|| mv::solver::relax_compare(&prob, &table.0, levels, &opts)).map_err(err)?;
    to_py(py, &report)
}

#[pyfunction]
#[pyo3(signature = (grid, amplitude=1.0, seed=0, n=1))]
fn random_generator(grid: &PyGrid, amplitude: f64, seed: u64, n: usize) -> PyResult<PyField> {
    mv::youngmeasure::random_generator(&grid.0, n, amplitude, seed).map(PyField).map_err(err)
}

/// Returns `(tiled field, covered fraction)`.
#[pyfunction]
fn scale_and_tile(phi: &PyField, j: u32, target: &PyGrid) -> PyResult<(PyField, f64)> {
    let t = mv::youngmeasure::scale_and_tile(&phi.0, j, &target.0).map_err(err)?;
    Ok((PyField(t.field), t.covered_fraction))
}

/// Pushforward of the uniform measure on the evaluation set by `∇ₐu`.
#[pyfunction]
fn empirical_measure(u: &PyField) -> PyResult<PyMeasure> {
    let d = u.0.a_gradient().map_err(err)?;
    Ok(PyMeasure(mv::youngmeasure::empirical_measure(&d)))
}

#[pyfunction]
#[pyo3(signature = (mu, nu, directions=64, seed=0))]
fn sliced_w1(mu: &PyMeasure, nu: &PyMeasure, directions: usize, seed: u64) -> PyResult<f64> {
    mv::youngmeasure::sliced_w1(&mu.0, &nu.0, directions, seed).map_err(err)
}

#[pyfunction]
fn jensen_gap(nu: &PyMeasure, integrand: &PyIntegrand, table: &PyTable) -> PyResult<f64> {
    mv::youngmeasure::jensen_gap(&nu.0, &integrand.0, &table.0).map_err(err)
}

/// Returns `(oscillation fields, report dicts)`.
#[pyfunction]
#[pyo3(signature = (fields, options=None))]
fn decompose<'py>(
    py: Python<'py>,
    fields: Vec<PyField>,
    options: Option<&Bound<'py, PyAny>>,
) -> PyResult<(Vec<PyField>, Bound<'py, PyAny>)> {
    let opts: mv::youngmeasure::DecomposeOptions = from_py(options)?;
    let fields: Vec<_> = fields.into_iter().map(|f| f.0).collect();
    let dec = py.detach(|| mv::youngmeasure::decompose(&fields, &opts)).map_err(err)?;
    Ok((dec.oscillation.into_iter().map(PyField).collect(), to_py(py, &dec.report)?))
}

#[pymodule]
fn mixvar(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyGrid>()?;
    m.add_class::<PyField>()?;
    m.add_class::<PyIntegrand>()?;
    m.add_class::<PyTable>()?;
    m.add_class::<PyMeasure>()?;
    m.add_function(wrap_pyfunction!(kernel_monomials, m)?)?;
    m.add_function(wrap_pyfunction!(homogeneity_set, m)?)?;
    m.add_function(wrap_pyfunction!(dacorogna_min, m)?)?;
    m.add_function(wrap_pyfunction!(tabulate_envelope, m)?)?;
    m.add_function(wrap_pyfunction!(coercivity, m)?)?;
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    m.add_function(wrap_pyfunction!(relax, m)?)?;
    m.add_function(wrap_pyfunction!(random_generator, m)?)?;
    m.add_function(wrap_pyfunction!(scale_and_tile, m)?)?;
    m.add_function(wrap_pyfunction!(empirical_measure, m)?)?;
    m.add_function(wrap_pyfunction!(sliced_w1, m)?)?;
    m.add_function(wrap_pyfunction!(jensen_gap, m)?)?;
    m.add_function(wrap_pyfunction!(decompose, m)?)?;
    Ok(())
}
