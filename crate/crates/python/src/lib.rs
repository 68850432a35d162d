//! Python module `mitodg`: `augment`, `sample_patch` and `optimize_threshold`.
//!
//! Structured arguments (policies, boxes, manifests) are plain dicts and lists in the
//! same JSON schema the CLI reads. Images are `(height, width, 3)` uint8 arrays.

use std::collections::BTreeSet;

use mitodg_core::augment::{apply_plan, plan_augmentation, AugmentationLog, PolicyConfig, TransformKind};
use mitodg_core::eval::{optimize_threshold as optimize, EvalReport, MatchConfig};
use mitodg_core::sampler::{sample_patch as sample, DatasetManifest, MemoryImageSource, PatchProvenance, PatchSpec};
use mitodg_core::{Annotation, DetectionRecord, RandomStream, Rgb8Image};
use numpy::{PyArray1, PyArrayMethods, PyReadonlyArray3, PyUntypedArrayMethods};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};

pyo3::create_exception!(
    mitodg,
    ShapeError,
    PyValueError,
    "Image buffer is not (height, width, 3) uint8."
);
pyo3::create_exception!(
    mitodg,
    PolicyParseError,
    PyValueError,
    "Policy mapping does not match the schema."
);

/// Derivation name shared with `mitodg sample`.
pub const STREAM_SAMPLE: &str = "sample";

#[derive(Debug, PartialEq)]
pub enum BindError {
    Shape(String),
    Policy(String),
    Invalid(String),
}

impl From<BindError> for PyErr {
    fn from(e: BindError) -> PyErr {
        match e {
            BindError::Shape(m) => ShapeError::new_err(m),
            BindError::Policy(m) => PolicyParseError::new_err(m),
            BindError::Invalid(m) => PyValueError::new_err(m),
        }
    }
}

fn invalid(e: impl std::fmt::Display) -> BindError {
    BindError::Invalid(e.to_string())
}

/// Unknown pool names are reported by name before the schema check runs.
pub fn parse_policy(value: serde_json::Value) -> Result<PolicyConfig, BindError> {
    if let Some(pool) = value.get("pool").and_then(|p| p.as_array()) {
        for name in pool {
            if let Some(s) = name.as_str() {
                s.parse::<TransformKind>()
                    .map_err(|e| BindError::Policy(e.to_string()))?;
            }
        }
    }
    let policy: PolicyConfig = serde_json::from_value(value).map_err(|e| BindError::Policy(e.to_string()))?;
    policy.validate().map_err(|e| BindError::Policy(e.to_string()))?;
    Ok(policy)
}

pub fn image_from_buffer(shape: &[usize], data: Vec<u8>) -> Result<Rgb8Image, BindError> {
    match *shape {
        [h, w, 3] if h > 0 && w > 0 => {
            let (w, h) = (u32::try_from(w).map_err(invalid)?, u32::try_from(h).map_err(invalid)?);
            Rgb8Image::from_raw(w, h, data).map_err(|e| BindError::Shape(e.to_string()))
        }
        _ => Err(BindError::Shape(format!("expected shape (h, w, 3), got {shape:?}"))),
    }
}

/// Native side of `augment`: stream `RandomStream::new(seed)`, optional strength override.
pub fn augment_native(
    image: &Rgb8Image,
    boxes: &[Annotation],
    policy: &PolicyConfig,
    seed: u64,
    strength: Option<f64>,
) -> Result<(Rgb8Image, Vec<Annotation>, AugmentationLog), BindError> {
    let rng = RandomStream::new(seed);
    let mut plan = plan_augmentation(policy, &rng).map_err(|e| BindError::Policy(e.to_string()))?;
    if let Some(s) = strength {
        if !(0.0..=1.0).contains(&s) {
            return Err(BindError::Invalid(format!("strength {s} is outside [0, 1]")));
        }
        plan.strength = s;
    }
    apply_plan(image, boxes, &plan, &policy.params, &rng).map_err(invalid)
}

/// Native side of `sample_patch`: patch `index` uses stream `seed / "sample" / index`.
pub fn sample_native(
    manifest: &DatasetManifest,
    source: &MemoryImageSource,
    split: Option<&BTreeSet<u64>>,
    spec: &PatchSpec,
    seed: u64,
    index: u64,
) -> Result<(Rgb8Image, Vec<Annotation>, PatchProvenance), BindError> {
    let all: BTreeSet<u64>;
    let split = match split {
        Some(s) => s,
        None => {
            all = manifest.images().iter().map(|i| i.id).collect();
            &all
        }
    };
    let rng = RandomStream::new(seed).derive_name(STREAM_SAMPLE).derive(index);
    sample(manifest, spec, split, source, &rng).map_err(invalid)
}

fn to_json(obj: &Bound<'_, PyAny>) -> PyResult<serde_json::Value> {
    let py = obj.py();
    let text: String = py.import("json")?.call_method1("dumps", (obj,))?.extract()?;
    serde_json::from_str(&text).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn from_json<'py, T: serde::Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn decode<T: serde::de::DeserializeOwned>(obj: &Bound<'_, PyAny>, what: &str) -> PyResult<T> {
    serde_json::from_value(to_json(obj)?).map_err(|e| PyValueError::new_err(format!("{what}: {e}")))
}

fn read_buffer(obj: &Bound<'_, PyAny>) -> PyResult<(Vec<usize>, Vec<u8>)> {
    let arr: PyReadonlyArray3<u8> = obj
        .extract()
        .map_err(|_| ShapeError::new_err("expected a 3-d uint8 numpy array"))?;
    let shape = arr.shape().to_vec();
    let data = match arr.as_slice() {
        Ok(s) => s.to_vec(),
        Err(_) => arr.as_array().iter().copied().collect(),
    };
    Ok((shape, data))
}

fn to_array<'py>(py: Python<'py>, image: Rgb8Image) -> PyResult<Bound<'py, PyAny>> {
    let (w, h) = (image.width() as usize, image.height() as usize);
    let flat = PyArray1::from_vec(py, image.into_raw());
    Ok(flat.reshape([h, w, 3])?.into_any())
}

/// augment(image, boxes, policy=None, seed=0, strength=None) -> (image, boxes, log)
#[pyfunction]
#[pyo3(signature = (image, boxes, policy=None, seed=0, strength=None))]
fn augment<'py>(
    py: Python<'py>,
    image: &Bound<'py, PyAny>,
    boxes: &Bound<'py, PyAny>,
    policy: Option<&Bound<'py, PyDict>>,
    seed: u64,
    strength: Option<f64>,
) -> PyResult<(Bound<'py, PyAny>, Bound<'py, PyAny>, Bound<'py, PyAny>)> {
    let policy = match policy {
        Some(p) => parse_policy(to_json(p.as_any())?)?,
        None => PolicyConfig::default(),
    };
    let boxes: Vec<Annotation> = decode(boxes, "boxes")?;
    let (shape, data) = read_buffer(image)?;
    let (out, out_boxes, log) = py.detach(|| {
        let img = image_from_buffer(&shape, data)?;
        augment_native(&img, &boxes, &policy, seed, strength)
    })?;
    Ok((to_array(py, out)?, from_json(py, &out_boxes)?, from_json(py, &log)?))
}

/// sample_patch(manifest, images, seed, index=0, split=None, spec=None) -> (image, boxes, provenance)
///
/// `manifest` follows the manifest file schema; `images` maps image id to array.
#[pyfunction]
#[pyo3(signature = (manifest, images, seed, index=0, split=None, spec=None))]
fn sample_patch<'py>(
    py: Python<'py>,
    manifest: &Bound<'py, PyAny>,
    images: &Bound<'py, PyDict>,
    seed: u64,
    index: u64,
    split: Option<&Bound<'py, PyList>>,
    spec: Option<&Bound<'py, PyDict>>,
) -> PyResult<(Bound<'py, PyAny>, Bound<'py, PyAny>, Bound<'py, PyAny>)> {
    let manifest = DatasetManifest::from_json_str(&to_json(manifest)?.to_string())
        .map_err(|e| PyValueError::new_err(e.to_string()))?;
    let spec: PatchSpec = match spec {
        Some(s) => decode(s.as_any(), "spec")?,
        None => PatchSpec::default(),
    };
    let split: Option<BTreeSet<u64>> = split.map(|s| s.extract()).transpose()?;
    let mut buffers = Vec::with_capacity(images.len());
    for (k, v) in images.iter() {
        buffers.push((k.extract::<u64>()?, read_buffer(&v)?));
    }
    let (patch, boxes, provenance) = py.detach(|| {
        let mut source = MemoryImageSource::new();
        for (id, (shape, data)) in buffers {
            source.insert(id, image_from_buffer(&shape, data)?);
        }
        sample_native(&manifest, &source, split.as_ref(), &spec, seed, index)
    })?;
    Ok((
        to_array(py, patch)?,
        from_json(py, &boxes)?,
        from_json(py, &provenance)?,
    ))
}

/// optimize_threshold(detections, annotations, match=None) -> report dict
#[pyfunction]
#[pyo3(signature = (detections, annotations, r#match=None))]
fn optimize_threshold<'py>(
    py: Python<'py>,
    detections: &Bound<'py, PyAny>,
    annotations: &Bound<'py, PyAny>,
    r#match: Option<&Bound<'py, PyDict>>,
) -> PyResult<Bound<'py, PyAny>> {
    let dets: Vec<DetectionRecord> = decode(detections, "detections")?;
    let gts: Vec<Annotation> = decode(annotations, "annotations")?;
    let config: MatchConfig = match r#match {
        Some(m) => decode(m.as_any(), "match")?,
        None => MatchConfig::default(),
    };
    let report: EvalReport = py.detach(|| optimize(&dets, &gts, &config));
    from_json(py, &report)
}

#[pymodule]
fn mitodg(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("ShapeError", m.py().get_type::<ShapeError>())?;
    m.add("PolicyParseError", m.py().get_type::<PolicyParseError>())?;
    m.add_function(wrap_pyfunction!(augment, m)?)?;
    m.add_function(wrap_pyfunction!(sample_patch, m)?)?;
    m.add_function(wrap_pyfunction!(optimize_threshold, m)?)?;
    Ok(())
}
