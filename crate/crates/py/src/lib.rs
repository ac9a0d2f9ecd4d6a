//! Python bindings: the queue, its handles, the trace checkers and the
//! shortest-path workload.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use klsm::bench::{self, BenchError};
use klsm::oracle::{self, Mode, Verdict};

fn bench_err(e: BenchError) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Relaxed concurrent priority queue with relaxation `k`.
#[pyclass(name = "KLsm", module = "pyklsm", frozen)]
struct PyKLsm {
    inner: klsm::KLsm,
}

#[pymethods]
impl PyKLsm {
    #[new]
    #[pyo3(signature = (k, max_handles, seed=None))]
    fn new(k: usize, max_handles: usize, seed: Option<u64>) -> Self {
        let mut cfg = klsm::Config::new(k, max_handles);
        if let Some(s) = seed {
            cfg = cfg.seed(s);
        }
        Self { inner: klsm::KLsm::with_config(cfg) }
    }

    /// Registers a handle bound to the calling thread.
    fn register_handle(&self) -> PyResult<PyHandle> {
        self.inner
            .register()
            .map(|h| PyHandle { inner: h })
            .map_err(|e| PyRuntimeError::new_err(e.to_string()))
    }

    fn approx_size(&self) -> usize {
        self.inner.approx_size()
    }

    #[getter]
    fn k(&self) -> usize {
        self.inner.k()
    }

    #[getter]
    fn max_handles(&self) -> usize {
        self.inner.max_handles()
    }

    /// `T * k` for the handles registered so far.
    #[getter]
    fn rho(&self) -> usize {
        self.inner.rho()
    }

    /// Installs `hook(key, payload) -> bool`; `None` removes it. Exceptions
    /// raised by the hook are reported as unraisable and count as `False`.
    fn set_needs_deletion_hook(&self, hook: Option<Py<PyAny>>) {
        match hook {
            None => self.inner.clear_needs_deletion_hook(),
            Some(f) => self.inner.set_needs_deletion_hook(move |key, payload| {
                Python::attach(|py| match f.call1(py, (key, payload)).and_then(|r| r.extract::<bool>(py)) {
                    Ok(b) => b,
                    Err(e) => {
                        e.write_unraisable(py, None);
                        false
                    }
                })
            }),
        }
    }

    fn __len__(&self) -> usize {
        self.inner.approx_size()
    }
}

/// Per-thread access point of a queue.
#[pyclass(name = "Handle", module = "pyklsm", unsendable)]
struct PyHandle {
    inner: klsm::Handle,
}

#[pymethods]
impl PyHandle {
    #[getter]
    fn id(&self) -> usize {
        self.inner.id()
    }

    #[pyo3(signature = (key, payload=0))]
    fn insert(&mut self, key: u64, payload: u64) {
        self.inner.insert(key, payload);
    }

    /// `(key, payload)` of a small key, or `None`.
    fn try_delete_min(&mut self) -> Option<(u64, u64)> {
        self.inner.try_delete_min()
    }
}

/// Checks trace text (`idx op handle key` lines). Returns `None` on success
/// or a dict describing the first violation; raises `ValueError` for
/// malformed traces.
#[pyfunction]
#[pyo3(signature = (text, rho, mode="structural"))]
fn check_trace<'py>(py: Python<'py>, text: &str, rho: usize, mode: &str) -> PyResult<Option<Bound<'py, PyDict>>> {
    let mode = match mode {
        "structural" => Mode::Structural,
        "temporal" => Mode::Temporal,
        m => return Err(PyValueError::new_err(format!("unknown mode {m:?}"))),
    };
    let (trace, lines) = oracle::Trace::parse_with_lines(text).map_err(|e| PyValueError::new_err(e.to_string()))?;
    match oracle::check(&trace, rho, mode).map_err(|e| PyValueError::new_err(e.to_string()))? {
        Verdict::Pass => Ok(None),
        Verdict::Fail(v) => {
            let d = PyDict::new(py);
            d.set_item("line", lines[v.record])?;
            d.set_item("record", v.record)?;
            d.set_item("text", v.line.to_string())?;
            d.set_item("measure", v.measure)?;
            Ok(Some(d))
        }
    }
}

/// Directed weighted graph.
#[pyclass(name = "Graph", module = "pyklsm", frozen)]
struct PyGraph {
    inner: bench::Graph,
}

#[pymethods]
impl PyGraph {
    /// Builds a graph from `(u, v, w)` triples.
    #[new]
    fn new(n: usize, edges: Vec<(u32, u32, u32)>) -> PyResult<Self> {
        if edges.iter().any(|&(u, v, _)| u as usize >= n || v as usize >= n) {
            return Err(PyValueError::new_err("edge endpoint out of range"));
        }
        Ok(Self { inner: bench::Graph::from_edges(n, &edges) })
    }

    /// Directed G(n, p) with weights uniform in `[1, max_weight]`.
    #[staticmethod]
    #[pyo3(signature = (n, p, seed, max_weight=bench::MAX_WEIGHT))]
    fn gnp(n: usize, p: f64, seed: u64, max_weight: u32) -> PyResult<Self> {
        bench::gen_gnp(n, p, seed, max_weight).map(|g| Self { inner: g }).map_err(bench_err)
    }

    #[getter]
    fn node_count(&self) -> usize {
        self.inner.node_count()
    }

    #[getter]
    fn edge_count(&self) -> usize {
        self.inner.edge_count()
    }
}

fn check_source(g: &bench::Graph, source: u32) -> PyResult<()> {
    if (source as usize) < g.node_count() {
        Ok(())
    } else {
        Err(PyValueError::new_err("source out of range"))
    }
}

/// Sequential Dijkstra distances; unreachable nodes are `None`.
#[pyfunction]
#[pyo3(signature = (graph, source=0))]
fn dijkstra(py: Python<'_>, graph: &PyGraph, source: u32) -> PyResult<Vec<Option<u64>>> {
    check_source(&graph.inner, source)?;
    let d = py.detach(|| bench::dijkstra_ref(&graph.inner, source));
    Ok(d.into_iter().map(|x| (x != bench::INFINITY).then_some(x)).collect())
}

/// Parallel label-correcting shortest paths on the queue. Returns a dict
/// with `dist`, `iterations`, `extra_iterations`, `stale_pops` and
/// `seconds`.
#[pyfunction]
#[pyo3(signature = (graph, source=0, threads=1, k=256))]
fn sssp<'py>(py: Python<'py>, graph: &PyGraph, source: u32, threads: usize, k: usize) -> PyResult<Bound<'py, PyDict>> {
    let r = py.detach(|| bench::sssp_run(&graph.inner, source, threads, k)).map_err(bench_err)?;
    let d = PyDict::new(py);
    let dist: Vec<Option<u64>> = r.dist.iter().map(|&x| (x != bench::INFINITY).then_some(x)).collect();
    d.set_item("dist", dist)?;
    d.set_item("iterations", r.iterations)?;
    d.set_item("extra_iterations", r.extra_iterations)?;
    d.set_item("stale_pops", r.stale_pops)?;
    d.set_item("seconds", r.elapsed.as_secs_f64())?;
    Ok(d)
}

#[pymodule]
fn pyklsm(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyKLsm>()?;
    m.add_class::<PyHandle>()?;
    m.add_class::<PyGraph>()?;
    m.add_function(wrap_pyfunction!(check_trace, m)?)?;
    m.add_function(wrap_pyfunction!(dijkstra, m)?)?;
    m.add_function(wrap_pyfunction!(sssp, m)?)?;
    Ok(())
}
