//! Python bindings for `damex`. Masks travel as nested lists of class ids
//! (`mask[row][col]`), rasters as `image[row][col][channel]`.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use damex::clsmodel;
use damex::extract;
use damex::metrics::{self, MetricsReport};
use damex::raster::{self, BBox, LabelMask, SceneSpec};
use damex::rng;
use damex::segmodel::{focal_point, FocalConfig};

fn py_err(e: damex::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_mask(rows: &[Vec<u8>], arity: u8) -> PyResult<LabelMask> {
    let height = rows.len();
    let width = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != width) {
        return Err(PyValueError::new_err("mask rows differ in length"));
    }
    LabelMask::new(width, height, arity, rows.concat()).map_err(py_err)
}

fn to_masks(masks: &[Vec<Vec<u8>>], arity: u8) -> PyResult<Vec<LabelMask>> {
    masks.iter().map(|m| to_mask(m, arity)).collect()
}

fn from_mask(m: &LabelMask) -> Vec<Vec<u8>> {
    m.values().chunks(m.width().max(1)).map(<[u8]>::to_vec).collect()
}

type Box4 = (usize, usize, usize, usize);

fn bbox_tuple(b: &BBox) -> Box4 {
    (b.r0, b.c0, b.r1, b.c1)
}

/// Synthetic scene: returns `(image, mask)` with mask values 0 land,
/// 1 natural water, 2 dam reservoir.
#[pyfunction]
#[pyo3(signature = (seed, width=64, height=64, num_bodies=2))]
#[allow(clippy::type_complexity)]
fn generate_scene(seed: u64, width: usize, height: usize, num_bodies: usize) -> PyResult<(Vec<Vec<Vec<f64>>>, Vec<Vec<u8>>)> {
    let spec = SceneSpec {
        width,
        height,
        num_bodies,
        ..SceneSpec::default()
    };
    let (img, mask) = raster::generate_scene(&spec, seed).map_err(py_err)?;
    let image = (0..img.height())
        .map(|r| (0..img.width()).map(|c| (0..img.channels()).map(|ch| img.get(r, c, ch)).collect()).collect())
        .collect();
    Ok((image, from_mask(&mask)))
}

#[pyfunction]
#[pyo3(signature = (y, p, alpha=0.25, gamma=2.0))]
fn focal_loss(y: bool, p: f64, alpha: f64, gamma: f64) -> f64 {
    focal_point(y, p, &FocalConfig { alpha, gamma })
}

/// 8-connected water regions of at least `min_area` pixels, as
/// `(pixels, bbox, expanded_bbox)` with boxes `(r0, c0, r1, c1)` inclusive.
#[pyfunction]
#[pyo3(signature = (mask, min_area=extract::MIN_SEGMENT_AREA, factor=extract::EXPAND_FACTOR))]
fn water_segments(mask: Vec<Vec<u8>>, min_area: usize, factor: f64) -> PyResult<Vec<(Vec<(usize, usize)>, Box4, Box4)>> {
    let m = to_mask(&mask, 3)?;
    let segs = extract::filter_segments(extract::connected_components(&m), min_area);
    Ok(segs
        .into_iter()
        .map(|s| {
            let grown = extract::expand_bbox(&s.bbox, factor, m.height(), m.width());
            let b = bbox_tuple(&s.bbox);
            (s.pixels, b, bbox_tuple(&grown))
        })
        .collect())
}

#[pyfunction]
#[pyo3(name = "iou")]
fn class_iou(pred: Vec<Vec<u8>>, gt: Vec<Vec<u8>>, class_id: u8) -> PyResult<f64> {
    metrics::iou(&to_mask(&pred, 3)?, &to_mask(&gt, 3)?, class_id).map_err(py_err)
}

fn report_dict<'py>(py: Python<'py>, r: &MetricsReport) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    for (k, v) in [
        ("iou_water", r.iou_water),
        ("miou", r.miou),
        ("iou_d", r.iou_d),
        ("miou_dn", r.miou_dn),
        ("miou_dnb", r.miou_dnb),
        ("accuracy", r.accuracy),
    ] {
        if let Some(v) = v {
            d.set_item(k, v)?;
        }
    }
    d.set_item("n", r.n)?;
    Ok(d)
}

/// Water IoU and mIoU over a set of masks, averaged per image.
#[pyfunction]
fn segmentation_metrics<'py>(py: Python<'py>, preds: Vec<Vec<Vec<u8>>>, gts: Vec<Vec<Vec<u8>>>) -> PyResult<Bound<'py, PyDict>> {
    let r = MetricsReport::segmentation(&to_masks(&preds, 3)?, &to_masks(&gts, 3)?).map_err(py_err)?;
    report_dict(py, &r)
}

/// Dam IoU and the dam/natural and dam/natural/land mIoU of 3-class masks.
#[pyfunction]
fn extraction_metrics<'py>(py: Python<'py>, preds: Vec<Vec<Vec<u8>>>, gts: Vec<Vec<Vec<u8>>>) -> PyResult<Bound<'py, PyDict>> {
    let r = MetricsReport::extraction(&to_masks(&preds, 3)?, &to_masks(&gts, 3)?).map_err(py_err)?;
    report_dict(py, &r)
}

/// Returns `(labels, objective_per_step)`.
#[pyfunction]
#[pyo3(signature = (points, z, iters=20, seed=0))]
fn kmeans(points: Vec<Vec<f64>>, z: usize, iters: usize, seed: u64) -> PyResult<(Vec<usize>, Vec<f64>)> {
    let a = clsmodel::kmeans(&points, z, iters, &mut rng::stream(seed, rng::KMEANS)).map_err(py_err)?;
    Ok((a.labels, a.objective))
}

/// Returns `(per_sample_scores, mean)`.
#[pyfunction]
fn silhouette(points: Vec<Vec<f64>>, labels: Vec<usize>) -> PyResult<(Vec<f64>, f64)> {
    let s = clsmodel::silhouette(&points, &labels).map_err(py_err)?;
    Ok((s.scores, s.mean))
}

/// Runs the command-line tool in-process and returns its exit status.
#[pyfunction]
fn run_cli(py: Python<'_>, args: Vec<String>) -> i32 {
    let argv: Vec<String> = std::iter::once("damex".to_string()).chain(args).collect();
    py.detach(|| damex::cli::run(argv))
}

#[pymodule]
fn pydamex(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(generate_scene, m)?)?;
    m.add_function(wrap_pyfunction!(focal_loss, m)?)?;
    m.add_function(wrap_pyfunction!(water_segments, m)?)?;
    m.add_function(wrap_pyfunction!(class_iou, m)?)?;
    m.add_function(wrap_pyfunction!(segmentation_metrics, m)?)?;
    m.add_function(wrap_pyfunction!(extraction_metrics, m)?)?;
    m.add_function(wrap_pyfunction!(kmeans, m)?)?;
    m.add_function(wrap_pyfunction!(silhouette, m)?)?;
    m.add_function(wrap_pyfunction!(run_cli, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
