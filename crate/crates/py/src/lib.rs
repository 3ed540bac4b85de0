//! Python bindings: power model, reference/E2/E_min graphs, the SMECN and
//! MECN protocols and the lifetime simulator.

use std::str::FromStr;

use minpower::doc::{to_json_string, ScenarioDocument};
use minpower::sim::Simulation;
use minpower::topology::{self, NetworkGraph};
use minpower::{EscalationSchedule, FlipOrder, Location, NodeId, NodeRecord, Protocol, SamplingSpec};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn err(e: minpower::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn loc((x, y): (f64, f64)) -> Location {
    Location::new(x, y)
}

fn records(nodes: Vec<(u32, f64, f64)>) -> Vec<NodeRecord> {
    nodes.into_iter().map(|(id, x, y)| NodeRecord::new(id, x, y)).collect()
}

fn edge_list(graph: &NetworkGraph) -> Vec<(u32, u32, f64)> {
    graph.edges().map(|(a, b, c)| (a.0, b.0, c)).collect()
}

#[pyclass(name = "PowerModel", frozen, from_py_object)]
#[derive(Clone, Copy)]
struct PyPowerModel {
    inner: minpower::PowerModel,
}

#[pymethods]
impl PyPowerModel {
    #[new]
    fn new(t: f64, n: f64, c: f64, p_max: f64) -> PyResult<Self> {
        Ok(Self { inner: minpower::PowerModel::new(t, n, c, p_max).map_err(err)? })
    }

    /// Model whose maximum power reaches exactly `range` meters.
    #[staticmethod]
    fn with_range(t: f64, n: f64, c: f64, range: f64) -> PyResult<Self> {
        Ok(Self { inner: minpower::PowerModel::with_range(t, n, c, range).map_err(err)? })
    }

    #[getter]
    fn t(&self) -> f64 {
        self.inner.t
    }

    #[getter]
    fn n(&self) -> f64 {
        self.inner.n
    }

    #[getter]
    fn c(&self) -> f64 {
        self.inner.c
    }

    #[getter]
    fn p_max(&self) -> f64 {
        self.inner.p_max
    }

    fn max_range(&self) -> f64 {
        self.inner.max_range()
    }

    fn power_at(&self, distance: f64) -> f64 {
        self.inner.power_at(distance)
    }

    fn range_at(&self, power: f64) -> f64 {
        self.inner.range_at(power)
    }

    fn transmit_power(&self, a: (f64, f64), b: (f64, f64)) -> f64 {
        self.inner.transmit_power(&loc(a), &loc(b))
    }

    fn link_cost(&self, a: (f64, f64), b: (f64, f64)) -> f64 {
        self.inner.link_cost(&loc(a), &loc(b))
    }

    fn path_cost(&self, path: Vec<(f64, f64)>) -> PyResult<f64> {
        let path: Vec<Location> = path.into_iter().map(loc).collect();
        self.inner.path_cost(&path).map_err(err)
    }

    /// Whether relaying through `w` costs no more than sending `u -> v` directly.
    fn relay_beats_direct(&self, u: (f64, f64), w: (f64, f64), v: (f64, f64)) -> bool {
        self.inner.relay_beats_direct(&loc(u), &loc(w), &loc(v))
    }

    fn __repr__(&self) -> String {
        let m = &self.inner;
        format!("PowerModel(t={}, n={}, c={}, p_max={})", m.t, m.n, m.c, m.p_max)
    }
}

/// Edges `(from, to, cost)` of the max-power graph over `(id, x, y)` nodes.
#[pyfunction]
fn reference_edges(nodes: Vec<(u32, f64, f64)>, model: PyPowerModel) -> PyResult<Vec<(u32, u32, f64)>> {
    let g = topology::build_reference_graph(&records(nodes), model.inner).map_err(err)?;
    Ok(edge_list(&g))
}

#[pyfunction]
fn e2_edges(nodes: Vec<(u32, f64, f64)>, model: PyPowerModel) -> PyResult<Vec<(u32, u32, f64)>> {
    let g = topology::build_reference_graph(&records(nodes), model.inner).map_err(err)?;
    Ok(edge_list(&topology::compute_e2(&g)))
}

#[pyfunction]
fn emin_edges(nodes: Vec<(u32, f64, f64)>, model: PyPowerModel) -> PyResult<Vec<(u32, u32, f64)>> {
    let g = topology::build_reference_graph(&records(nodes), model.inner).map_err(err)?;
    Ok(edge_list(&topology::compute_emin(&g)))
}

/// Cheapest path in the max-power graph as `(ids, cost)`, or `None`.
#[pyfunction]
fn min_energy_path(
    nodes: Vec<(u32, f64, f64)>,
    model: PyPowerModel,
    src: u32,
    dst: u32,
) -> PyResult<Option<(Vec<u32>, f64)>> {
    let g = topology::build_reference_graph(&records(nodes), model.inner).map_err(err)?;
    let path = g.min_energy_path(NodeId(src), NodeId(dst)).map_err(err)?;
    Ok(path.map(|p| (p.nodes.into_iter().map(|n| n.0).collect(), p.cost)))
}

/// Whether the directed edges `(from, to)` keep a minimum-energy path for every pair.
#[pyfunction]
fn has_min_energy_property(nodes: Vec<(u32, f64, f64)>, model: PyPowerModel, edges: Vec<(u32, u32)>) -> PyResult<bool> {
    let nodes = records(nodes);
    let reference = topology::build_reference_graph(&nodes, model.inner).map_err(err)?;
    let sub = NetworkGraph::from_edges(model.inner, &nodes, edges.into_iter().map(|(a, b)| (NodeId(a), NodeId(b))))
        .map_err(err)?;
    topology::has_min_energy_property(&reference, &sub).map_err(err)
}

/// Runs SMECN or MECN at every node. Returns `{id: {"neighbors", "power", "iterations"}}`.
#[pyfunction]
#[pyo3(signature = (nodes, model, protocol = "smecn", order = "by-id", rays = None, radii = None))]
fn run_protocol<'py>(
    py: Python<'py>,
    nodes: Vec<(u32, f64, f64)>,
    model: PyPowerModel,
    protocol: &str,
    order: &str,
    rays: Option<usize>,
    radii: Option<usize>,
) -> PyResult<Bound<'py, PyDict>> {
    let protocol = Protocol::from_str(protocol).map_err(err)?;
    let order = FlipOrder::from_str(order).map_err(err)?;
    let default = SamplingSpec::default();
    let spec = SamplingSpec::new(rays.unwrap_or(default.rays), radii.unwrap_or(default.radial_samples)).map_err(err)?;
    let schedule = EscalationSchedule::default_for(&model.inner);
    let result = minpower::run_protocol(&records(nodes), model.inner, schedule, spec, protocol, order).map_err(err)?;
    let out = PyDict::new(py);
    for (id, outcome) in &result.outcomes {
        let entry = PyDict::new(py);
        entry.set_item("neighbors", outcome.neighbors.iter().map(|n| n.0).collect::<Vec<_>>())?;
        entry.set_item("power", outcome.power)?;
        entry.set_item("iterations", outcome.iterations)?;
        out.set_item(id.0, entry)?;
    }
    Ok(out)
}

/// Places nodes for a scenario and returns the scenario document as JSON.
#[pyfunction]
#[pyo3(signature = (node_count = 200, width = 1500.0, height = 1500.0, seed = 0, range = 500.0, n = 4.0, c = 0.0))]
fn generate_scenario(
    node_count: usize,
    width: f64,
    height: f64,
    seed: u64,
    range: f64,
    n: f64,
    c: f64,
) -> PyResult<String> {
    let model = minpower::PowerModel::with_range(1.0, n, c, range).map_err(err)?;
    let cfg = minpower::ScenarioConfig { node_count, width, height, seed, model, ..Default::default() };
    let (doc, _) = ScenarioDocument::generate(cfg).map_err(err)?;
    to_json_string(&doc).map_err(err)
}

/// Runs the lifetime simulation for a scenario document; returns
/// `(metrics_csv, summary_json)`.
#[pyfunction]
#[pyo3(signature = (scenario_json, protocol = None, duration = None))]
fn simulate(py: Python<'_>, scenario_json: &str, protocol: Option<&str>, duration: Option<f64>) -> PyResult<(String, String)> {
    let doc = ScenarioDocument::from_json(scenario_json).map_err(err)?;
    let mut cfg = doc.scenario.clone();
    if let Some(p) = protocol {
        cfg.protocol = Protocol::from_str(p).map_err(err)?;
    }
    if let Some(d) = duration {
        cfg.duration = d;
    }
    let placement = doc.placement().map_err(err)?;
    let report = py
        .detach(|| Simulation::with_placement(cfg, placement).and_then(|sim| sim.run()))
        .map_err(err)?;
    Ok((report.metrics.to_csv_string().map_err(err)?, to_json_string(&report.summary).map_err(err)?))
}

#[pymodule]
fn minpower_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyPowerModel>()?;
    m.add_function(wrap_pyfunction!(reference_edges, m)?)?;
    m.add_function(wrap_pyfunction!(e2_edges, m)?)?;
    m.add_function(wrap_pyfunction!(emin_edges, m)?)?;
    m.add_function(wrap_pyfunction!(min_energy_path, m)?)?;
    m.add_function(wrap_pyfunction!(has_min_energy_property, m)?)?;
    m.add_function(wrap_pyfunction!(run_protocol, m)?)?;
    m.add_function(wrap_pyfunction!(generate_scenario, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    Ok(())
}
