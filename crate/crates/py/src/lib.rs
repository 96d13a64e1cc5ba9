//! Python bindings: `import centerlab`.

use ::centerlab as core;
use core::disintegration::{self, EntropyConfig, EntropySetup, Foliation, Sampler};
use core::kan::{self as kan_mod, SingularityConfig};
use core::models::{DAMap as CoreDAMap, DAParams};
use core::semiconj::{self, Conjugator as CoreConjugator};
use core::torus::{IntegerAutomorphism, TorusPoint};
use core::{ergodic, torus};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

type Vec3 = [f64; 3];

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn runtime_err(e: impl std::fmt::Display) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn tp(p: Vec3) -> TorusPoint {
    TorusPoint::new(p[0], p[1], p[2])
}

fn reference_matrix() -> Vec<i64> {
    IntegerAutomorphism::reference().row_major().to_vec()
}

/// Linear automorphism (`s = 0`) or DA perturbation of it on the 3-torus.
#[pyclass(name = "DAMap", module = "centerlab", frozen)]
pub struct DAMap {
    inner: CoreDAMap,
}

#[pymethods]
impl DAMap {
    /// Defaults give the reference DA map; `direction=None` means the center eigenvector.
    #[new]
    #[pyo3(signature = (matrix=None, s=0.05, center=[0.5, 0.5, 0.5], radius=0.2, direction=None))]
    fn new(matrix: Option<Vec<i64>>, s: f64, center: Vec3, radius: f64, direction: Option<Vec3>) -> PyResult<Self> {
        let matrix = matrix.unwrap_or_else(reference_matrix);
        let direction = match direction {
            Some(d) => d,
            None => IntegerAutomorphism::from_row_major(&matrix).map_err(value_err)?.splitting().center(),
        };
        let p = DAParams { matrix, s, center, radius, direction };
        Ok(DAMap { inner: CoreDAMap::from_params(&p).map_err(value_err)? })
    }

    #[staticmethod]
    #[pyo3(signature = (matrix=None))]
    fn linear(matrix: Option<Vec<i64>>) -> PyResult<Self> {
        let base = IntegerAutomorphism::from_row_major(&matrix.unwrap_or_else(reference_matrix)).map_err(value_err)?;
        Ok(DAMap { inner: CoreDAMap::linear(base) })
    }

    #[staticmethod]
    fn reference() -> Self {
        DAMap { inner: CoreDAMap::reference() }
    }

    #[getter]
    fn s(&self) -> f64 {
        self.inner.amplitude()
    }

    #[getter]
    fn eigenvalues(&self) -> Vec3 {
        self.inner.base().splitting().eigenvalues
    }

    fn is_linear(&self) -> bool {
        self.inner.is_linear()
    }

    fn evaluate(&self, p: Vec3) -> Vec3 {
        self.inner.evaluate(tp(p)).coords()
    }

    fn inverse(&self, p: Vec3) -> PyResult<Vec3> {
        Ok(self.inner.inverse(tp(p)).map_err(runtime_err)?.coords())
    }

    fn derivative(&self, p: Vec3) -> [[f64; 3]; 3] {
        self.inner.derivative(p)
    }

    fn orbit(&self, p: Vec3, n: usize) -> Vec<Vec3> {
        let mut x = tp(p);
        (0..n)
            .map(|_| {
                x = self.inner.evaluate(x);
                x.coords()
            })
            .collect()
    }

    fn __repr__(&self) -> String {
        format!("DAMap(s={}, radius={})", self.inner.amplitude(), self.inner.radius())
    }
}

/// Semiconjugacy `phi` with `phi o f = A o phi`, truncated by its tail bound.
#[pyclass(name = "Conjugator", module = "centerlab", frozen)]
pub struct Conjugator {
    inner: CoreConjugator,
}

#[pymethods]
impl Conjugator {
    #[new]
    #[pyo3(signature = (model, tol=1e-8))]
    fn new(model: &DAMap, tol: f64) -> PyResult<Self> {
        Ok(Conjugator { inner: CoreConjugator::new(model.inner.clone(), tol).map_err(value_err)? })
    }

    #[getter]
    fn depth(&self) -> usize {
        self.inner.depth()
    }

    #[getter]
    fn tail_bound(&self) -> f64 {
        self.inner.tail_bound()
    }

    fn phi(&self, p: Vec3) -> PyResult<Vec3> {
        Ok(self.inner.phi(tp(p)).map_err(runtime_err)?.coords())
    }

    fn residual(&self, p: Vec3) -> PyResult<f64> {
        self.inner.residual(tp(p)).map_err(runtime_err)
    }

    /// `(max residual, max |phi(x) - x|)` over `n` seeded points.
    #[pyo3(signature = (n, seed=0))]
    fn residual_sweep(&self, n: usize, seed: u64) -> PyResult<(f64, f64)> {
        let r = semiconj::residual_sweep(&self.inner, n, seed).map_err(runtime_err)?;
        Ok((r.max_residual, r.max_offset))
    }
}

/// Eigenvalues of an integer matrix with three positive real eigenvalues, ascending.
#[pyfunction]
fn spectral_split(matrix: Vec<i64>) -> PyResult<Vec3> {
    let a = IntegerAutomorphism::from_row_major(&matrix).map_err(value_err)?;
    Ok(torus::spectral_split(&a.matrix()).map_err(value_err)?.eigenvalues)
}

/// Descending Lyapunov exponents and their half-width.
#[pyfunction]
#[pyo3(signature = (model, start, n, seed=0))]
fn lyapunov_spectrum(model: &DAMap, start: Vec3, n: usize, seed: u64) -> PyResult<(Vec3, f64)> {
    let r = ergodic::lyapunov_spectrum(&model.inner, tp(start), n, seed).map_err(value_err)?;
    Ok((r.exponents, r.half_width))
}

/// Series `log |Df E^c|` along the orbit of `start`.
#[pyfunction]
fn center_series(model: &DAMap, start: Vec3, n: usize) -> PyResult<Vec<f64>> {
    Ok(ergodic::center_exponent(&model.inner, tp(start), n).map_err(runtime_err)?.series)
}

/// 0-based Pliss times of `series` at threshold `tau`.
#[pyfunction]
fn pliss_blocks(series: Vec<f64>, tau: f64) -> Vec<usize> {
    ergodic::pliss_blocks(&series, tau).indices
}

/// Partial entropy of `foliation` (`"c"`, `"uu"` or `"u"`).
#[pyfunction]
#[pyo3(signature = (model, foliation, samples=1_000_000, eps=vec![0.1, 0.05, 0.025], n_max=12, sampler="volume", seed=0))]
fn partial_entropy<'py>(
    py: Python<'py>,
    model: &DAMap,
    foliation: &str,
    samples: usize,
    eps: Vec<f64>,
    n_max: usize,
    sampler: &str,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let fol: Foliation = foliation.parse().map_err(PyValueError::new_err)?;
    let sampler = match sampler {
        "volume" => Sampler::Volume,
        "orbit" => Sampler::orbit(),
        other => return Err(PyValueError::new_err(format!("unknown sampler {other:?}"))),
    };
    let setup = EntropySetup {
        sampler,
        samples,
        config: EntropyConfig { eps, n_max, seed, ..EntropyConfig::default() },
        ..EntropySetup::default()
    };
    let est = py
        .detach(|| disintegration::partial_entropy(&model.inner, fol, &setup))
        .map_err(runtime_err)?;
    let d = PyDict::new(py);
    d.set_item("estimate", est.estimate)?;
    d.set_item("half_width", est.half_width)?;
    d.set_item("valid", est.valid)?;
    d.set_item("slopes", est.scales.iter().map(|s| (s.eps, s.slope, s.valid)).collect::<Vec<_>>())?;
    Ok(d)
}

/// Kan-type skew product on the cylinder.
#[pyclass(name = "KanMap", module = "centerlab", frozen)]
pub struct KanMap {
    inner: kan_mod::KanMap,
}

#[pymethods]
impl KanMap {
    #[new]
    #[pyo3(signature = (a=0.25, s=0.0))]
    fn new(a: f64, s: f64) -> PyResult<Self> {
        Ok(KanMap { inner: kan_mod::KanMap::new(a, s).map_err(value_err)? })
    }

    #[getter]
    fn a(&self) -> f64 {
        self.inner.a()
    }

    #[getter]
    fn s(&self) -> f64 {
        self.inner.s()
    }

    fn evaluate(&self, theta: f64, t: f64) -> (f64, f64) {
        self.inner.evaluate(theta, t)
    }

    /// Raises `ValueError` naming the first violated condition.
    fn validate(&self) -> PyResult<Vec<(usize, String, bool)>> {
        let r = kan_mod::kan_validate(&self.inner).map_err(value_err)?;
        Ok(r.checks.into_iter().map(|c| (c.index, c.name, c.passed)).collect())
    }

    /// `(theta, pi(theta), residual)` on `nodes` equally spaced nodes.
    #[pyo3(signature = (nodes=512, depth=25))]
    fn holonomy(&self, nodes: usize, depth: usize) -> PyResult<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        let h = kan_mod::center_holonomy(&self.inner, &kan_mod::uniform_grid(nodes), depth).map_err(value_err)?;
        Ok((h.theta, h.image, h.residuals))
    }

    /// `(delta, standard error, hypothesis)` of the singularity statistic.
    #[pyo3(signature = (samples=1 << 20, blocks=64, depth=30, seed=0))]
    fn singularity(&self, py: Python<'_>, samples: usize, blocks: usize, depth: usize, seed: u64) -> PyResult<(f64, f64, f64)> {
        let cfg = SingularityConfig { samples, blocks, depth, seed, ..SingularityConfig::default() };
        let r = py.detach(|| kan_mod::singularity_test(&self.inner, &cfg)).map_err(value_err)?;
        Ok((r.delta, r.standard_error, r.hypothesis))
    }
}

#[pymodule(name = "centerlab")]
fn centerlab_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<DAMap>()?;
    m.add_class::<Conjugator>()?;
    m.add_class::<KanMap>()?;
    m.add_function(wrap_pyfunction!(spectral_split, m)?)?;
    m.add_function(wrap_pyfunction!(lyapunov_spectrum, m)?)?;
    m.add_function(wrap_pyfunction!(center_series, m)?)?;
    m.add_function(wrap_pyfunction!(pliss_blocks, m)?)?;
    m.add_function(wrap_pyfunction!(partial_entropy, m)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_map_is_reference() {
        let m = DAMap::new(None, 0.05, [0.5; 3], 0.2, None).unwrap();
        assert_eq!(m.inner.params(), CoreDAMap::reference().params());
        assert!(DAMap::linear(None).unwrap().is_linear());
    }

    #[test]
    fn pliss_wrapper() {
        assert_eq!(pliss_blocks(vec![2.0, 0.0, 0.0, 0.0], 1.0), vec![1, 2, 3]);
    }

    #[test]
    fn kan_defaults_validate() {
        assert_eq!(KanMap::new(0.25, 0.1).unwrap().validate().unwrap().len(), 5);
        assert!(KanMap::new(0.0, 0.0).unwrap().validate().is_err());
    }
}
