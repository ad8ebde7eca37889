//! Python module `geofuse`: neighbourhood graphs, voxel grouping, PLY input,
//! gradient checks and the command-line entry point.

use std::path::PathBuf;

use geofuse::graph::{cartesian_to_spherical, knn_graph_points, NeighbourhoodGraph};
use geofuse::model::{layer_gradient_errors, ExperimentConfig, Preset};
use geofuse::pooling::PoolingKind;
use geofuse::{Error, Point3};
use pyo3::exceptions::{PyArithmeticError, PyFileNotFoundError, PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn to_py(e: Error) -> PyErr {
    let msg = e.to_string();
    match e {
        Error::InvalidArgument(_) | Error::Dimension(_) => PyValueError::new_err(msg),
        Error::MissingFile(_) => PyFileNotFoundError::new_err(msg),
        Error::Io(_) | Error::Format(_) => PyIOError::new_err(msg),
        Error::Numeric(_) => PyArithmeticError::new_err(msg),
        _ => PyRuntimeError::new_err(msg),
    }
}

fn edge_list(graph: &NeighbourhoodGraph) -> Vec<(usize, usize)> {
    graph.edges().collect()
}

/// `(source, target)` edges of the kNN graph, self-loops included.
#[pyfunction]
fn knn_graph(points: Vec<Point3>, k: usize) -> PyResult<Vec<(usize, usize)>> {
    knn_graph_points(&points, k, true).map(|g| edge_list(&g)).map_err(to_py)
}

/// `(source, target)` edges joining points within distance `r`, self-loops included.
#[pyfunction]
fn radius_graph(points: Vec<Point3>, r: f64) -> PyResult<Vec<(usize, usize)>> {
    geofuse::graph::radius_graph(&points, r).map(|g| edge_list(&g)).map_err(to_py)
}

/// Member indices of each pooling group.
#[pyfunction]
#[pyo3(signature = (points, r, nearest = true))]
fn pool_groups(points: Vec<Point3>, r: f64, nearest: bool) -> PyResult<Vec<Vec<usize>>> {
    let kind = if nearest {
        PoolingKind::NearestVoxel
    } else {
        PoolingKind::Voxel
    };
    kind.group(&points, r).map(|g| g.members).map_err(to_py)
}

/// `(r, azimuth, inclination)` of a vector.
#[pyfunction]
fn spherical(v: Point3) -> Point3 {
    cartesian_to_spherical(&v)
}

/// Positions, per-point feature rows and the optional label of a PLY file.
#[pyfunction]
#[allow(clippy::type_complexity)]
fn read_ply(path: PathBuf) -> PyResult<(Vec<Point3>, Vec<Vec<f64>>, Option<usize>)> {
    let cloud = geofuse::io::read_ply(path).map_err(to_py)?;
    let rows = (0..cloud.len()).map(|i| cloud.features.row(i).to_vec()).collect();
    Ok((cloud.positions, rows, cloud.label))
}

/// Maximum relative finite-difference error per layer of a preset model.
#[pyfunction]
#[pyo3(signature = (preset = "desk", seed = 0))]
fn grad_check(preset: &str, seed: u64) -> PyResult<Vec<(String, f64)>> {
    let preset = match preset {
        "desk" => Preset::Desk,
        "paper" => Preset::Paper,
        other => return Err(PyValueError::new_err(format!("unknown preset {other:?}"))),
    };
    let cfg = ExperimentConfig::preset(preset);
    layer_gradient_errors(&cfg.branch, &cfg.fusion, seed).map_err(to_py)
}

/// Runs a command-line invocation (arguments after the program name) and
/// returns its exit code.
#[pyfunction]
fn run_cli(args: Vec<String>) -> i32 {
    geofuse::cli::run(std::iter::once("geofuse".to_string()).chain(args))
}

#[pymodule]
#[pyo3(name = "geofuse")]
fn geofuse_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_function(wrap_pyfunction!(knn_graph, m)?)?;
    m.add_function(wrap_pyfunction!(radius_graph, m)?)?;
    m.add_function(wrap_pyfunction!(pool_groups, m)?)?;
    m.add_function(wrap_pyfunction!(spherical, m)?)?;
    m.add_function(wrap_pyfunction!(read_ply, m)?)?;
    m.add_function(wrap_pyfunction!(grad_check, m)?)?;
    m.add_function(wrap_pyfunction!(run_cli, m)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn knn_edges_include_self_loops() {
        let pts = vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [3.0, 0.0, 0.0]];
        let edges = knn_graph(pts, 2).unwrap();
        assert_eq!(edges, vec![(0, 0), (1, 0), (0, 1), (1, 1), (1, 2), (2, 2)]);
    }

    #[test]
    fn pooling_fixture_splits_as_expected() {
        let pts = vec![[0.01, 0.0, 0.0], [0.049, 0.0, 0.0], [0.051, 0.0, 0.0]];
        assert_eq!(pool_groups(pts.clone(), 0.05, true).unwrap(), vec![vec![0], vec![1, 2]]);
        assert_eq!(pool_groups(pts, 0.05, false).unwrap(), vec![vec![0, 1], vec![2]]);
    }
}
