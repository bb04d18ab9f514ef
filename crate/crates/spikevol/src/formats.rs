//! File-format codecs shared by the CLI and the pipeline driver.
//!
//! Conventions:
//! - JSON for metadata (cameras, detections, clusters, scenes, reports),
//!   CSV for tabular results, binary only for checkpoints and large clouds.
//! - Every file this module writes embeds the format version and the
//!   producing configuration hash: JSON carries `format_version` /
//!   `config_hash` fields, CSV carries `#`-prefixed header comments, and
//!   checkpoints embed both in their binary header. The one exception is the
//!   raw binary cloud format, whose fixed layout (count followed by
//!   coordinates) leaves no room for a header; callers that need provenance
//!   for clouds should prefer the ASCII form.
//! - Readers are lenient: unknown JSON fields are ignored, the wrapper
//!   object is optional for externally produced camera/detection/cluster
//!   files, and an empty `format_version` is accepted.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::camera::{BoundingBox, Camera};
use crate::cloud::{CloudSource, HistogramFeatures, PointCloud};
use crate::learn::encoder::HistogramEncoder;
use crate::learn::ensemble::EnsembleModel;
use crate::learn::mlp::Activation;
use crate::learn::regulated::{RegulatedRegressor, ViewNorm};
use crate::learn::train::{TrainedEncoder, TrainedRt};
use crate::learn::TargetScaler;
use crate::pairing::ClusterSet;
use crate::rng::rng_from;
use crate::scene::{Scene, SceneConfig, SceneDetection, SyntheticSpike};

/// Version string written into every output file.
pub const FORMAT_VERSION: &str = "1";

/// Errors raised by the codecs in this module.
#[derive(Debug, Error)]
pub enum FormatError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid JSON in {path}: {detail}")]
    Json { path: PathBuf, detail: String },
    #[error("malformed {what} file {path}: {detail}")]
    Malformed { what: &'static str, path: PathBuf, detail: String },
    #[error("unsupported format version {found:?} in {path}; this build reads version {expected:?}")]
    Version { path: PathBuf, found: String, expected: &'static str },
    #[error("invalid checkpoint {path}: {detail}")]
    Checkpoint { path: PathBuf, detail: String },
}

impl FormatError {
    fn io(path: &Path) -> impl FnOnce(std::io::Error) -> FormatError + '_ {
        move |source| FormatError::Io { path: path.to_path_buf(), source }
    }

    fn malformed(what: &'static str, path: &Path, detail: impl Into<String>) -> FormatError {
        FormatError::Malformed { what, path: path.to_path_buf(), detail: detail.into() }
    }
}

/// Hex SHA-256 of a byte string.
pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

/// Hex SHA-256 of a file's contents.
pub fn file_sha256_hex(path: &Path) -> Result<String, FormatError> {
    let bytes = fs::read(path).map_err(FormatError::io(path))?;
    Ok(sha256_hex(&bytes))
}

fn check_version(found: &str, path: &Path) -> Result<(), FormatError> {
    if found.is_empty() || found == FORMAT_VERSION {
        Ok(())
    } else {
        Err(FormatError::Version {
            path: path.to_path_buf(),
            found: found.to_string(),
            expected: FORMAT_VERSION,
        })
    }
}

fn write_json_value<T: Serialize>(path: &Path, value: &T) -> Result<(), FormatError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| FormatError::Json {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })?;
    text.push('\n');
    fs::write(path, text).map_err(FormatError::io(path))
}

fn read_json_value(path: &Path) -> Result<serde_json::Value, FormatError> {
    let bytes = fs::read(path).map_err(FormatError::io(path))?;
    serde_json::from_slice(&bytes)
        .map_err(|e| FormatError::Json { path: path.to_path_buf(), detail: e.to_string() })
}

fn from_value<T: for<'de> Deserialize<'de>>(
    value: serde_json::Value,
    path: &Path,
) -> Result<T, FormatError> {
    serde_json::from_value(value)
        .map_err(|e| FormatError::Json { path: path.to_path_buf(), detail: e.to_string() })
}

/// Serialize any report-like value as pretty JSON with a trailing newline.
pub fn write_json_report<T: Serialize>(path: &Path, value: &T) -> Result<(), FormatError> {
    write_json_value(path, value)
}

// ---------------------------------------------------------------------------
// Cameras
// ---------------------------------------------------------------------------

/// One calibrated camera as stored on disk.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CameraRecord {
    pub id: String,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// World-to-camera rotation, row-major.
    pub rotation: Vec<f64>,
    /// Camera center in world coordinates (mm).
    pub center: [f64; 3],
    pub width: f64,
    pub height: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct CameraFile {
    #[serde(default = "default_units")]
    units: String,
    #[serde(default)]
    format_version: String,
    #[serde(default)]
    config_hash: String,
    cameras: Vec<CameraRecord>,
}

fn default_units() -> String {
    "mm".to_string()
}

impl CameraRecord {
    fn from_camera(camera: &Camera) -> Self {
        let r = camera.rotation;
        Self {
            id: camera.id.clone(),
            fx: camera.fx,
            fy: camera.fy,
            cx: camera.cx,
            cy: camera.cy,
            rotation: (0..3).flat_map(|i| (0..3).map(move |j| r[(i, j)])).collect(),
            center: [camera.center.x, camera.center.y, camera.center.z],
            width: camera.width,
            height: camera.height,
        }
    }

    fn into_camera(self, path: &Path) -> Result<Camera, FormatError> {
        if self.rotation.len() != 9 {
            return Err(FormatError::malformed(
                "camera",
                path,
                format!("camera {}: rotation must hold 9 values, got {}", self.id, self.rotation.len()),
            ));
        }
        Camera::new(
            self.id.clone(),
            self.fx,
            self.fy,
            self.cx,
            self.cy,
            Matrix3::from_row_slice(&self.rotation),
            Vector3::new(self.center[0], self.center[1], self.center[2]),
            self.width,
            self.height,
        )
        .map_err(|e| FormatError::malformed("camera", path, format!("camera {}: {e}", self.id)))
    }
}

/// Write a camera rig as JSON (millimetre units).
pub fn write_cameras(path: &Path, cameras: &[Camera], config_hash: &str) -> Result<(), FormatError> {
    let file = CameraFile {
        units: "mm".to_string(),
        format_version: FORMAT_VERSION.to_string(),
        config_hash: config_hash.to_string(),
        cameras: cameras.iter().map(CameraRecord::from_camera).collect(),
    };
    write_json_value(path, &file)
}

/// Read a camera rig. Accepts either the wrapper object written by
/// [`write_cameras`] or a bare JSON array of camera records.
pub fn read_cameras(path: &Path) -> Result<Vec<Camera>, FormatError> {
    let value = read_json_value(path)?;
    let file: CameraFile = if value.is_array() {
        CameraFile {
            units: "mm".to_string(),
            format_version: String::new(),
            config_hash: String::new(),
            cameras: from_value(value, path)?,
        }
    } else {
        from_value(value, path)?
    };
    check_version(&file.format_version, path)?;
    if file.units != "mm" {
        return Err(FormatError::malformed(
            "camera",
            path,
            format!("units must be \"mm\", got {:?}", file.units),
        ));
    }
    file.cameras.into_iter().map(|r| r.into_camera(path)).collect()
}

// ---------------------------------------------------------------------------
// Detections
// ---------------------------------------------------------------------------

/// One detection box as stored on disk (image id comes from the enclosing map).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub detection_id: String,
    pub min_x: f64,
    pub min_y: f64,
    pub max_x: f64,
    pub max_y: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct DetectionsFile {
    #[serde(default)]
    format_version: String,
    #[serde(default)]
    config_hash: String,
    detections: BTreeMap<String, Vec<DetectionRecord>>,
}

fn group_by_image(boxes: &[BoundingBox]) -> BTreeMap<String, Vec<DetectionRecord>> {
    let mut map: BTreeMap<String, Vec<DetectionRecord>> = BTreeMap::new();
    for b in boxes {
        map.entry(b.image_id.clone()).or_default().push(DetectionRecord {
            detection_id: b.detection_id.clone(),
            min_x: b.min_x,
            min_y: b.min_y,
            max_x: b.max_x,
            max_y: b.max_y,
        });
    }
    map
}

fn flatten_detections(
    map: BTreeMap<String, Vec<DetectionRecord>>,
    path: &Path,
) -> Result<Vec<BoundingBox>, FormatError> {
    let mut out = Vec::new();
    for (image_id, records) in map {
        for r in records {
            let b = BoundingBox::new(image_id.clone(), r.detection_id, r.min_x, r.min_y, r.max_x, r.max_y)
                .map_err(|e| FormatError::malformed("detections", path, e.to_string()))?;
            out.push(b);
        }
    }
    Ok(out)
}

/// Write detection boxes grouped by image id.
pub fn write_detections(
    path: &Path,
    boxes: &[BoundingBox],
    config_hash: &str,
) -> Result<(), FormatError> {
    let file = DetectionsFile {
        format_version: FORMAT_VERSION.to_string(),
        config_hash: config_hash.to_string(),
        detections: group_by_image(boxes),
    };
    write_json_value(path, &file)
}

/// Read detection boxes. Accepts the wrapper written by [`write_detections`]
/// or a bare `{image_id: [boxes]}` map. Boxes come back sorted by image id
/// (map order), preserving per-image order.
pub fn read_detections(path: &Path) -> Result<Vec<BoundingBox>, FormatError> {
    let value = read_json_value(path)?;
    let file: DetectionsFile = match &value {
        serde_json::Value::Object(obj) if obj.contains_key("detections") => from_value(value, path)?,
        serde_json::Value::Object(_) => DetectionsFile {
            format_version: String::new(),
            config_hash: String::new(),
            detections: from_value(value, path)?,
        },
        _ => {
            return Err(FormatError::malformed("detections", path, "expected a JSON object"));
        }
    };
    check_version(&file.format_version, path)?;
    flatten_detections(file.detections, path)
}

// ---------------------------------------------------------------------------
// Clusters
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct ClustersFile {
    #[serde(default)]
    format_version: String,
    #[serde(default)]
    config_hash: String,
    #[serde(default)]
    run_count: usize,
    #[serde(default)]
    agreement_threshold: usize,
    clusters: Vec<Vec<String>>,
}

/// Write predicted clusters (lists of detection ids).
pub fn write_clusters(path: &Path, set: &ClusterSet, config_hash: &str) -> Result<(), FormatError> {
    let file = ClustersFile {
        format_version: FORMAT_VERSION.to_string(),
        config_hash: config_hash.to_string(),
        run_count: set.run_count,
        agreement_threshold: set.agreement_threshold,
        clusters: set.clusters.clone(),
    };
    write_json_value(path, &file)
}

/// Read predicted clusters. Accepts the wrapper written by [`write_clusters`]
/// or a bare JSON list of lists of detection ids.
pub fn read_clusters(path: &Path) -> Result<ClusterSet, FormatError> {
    let value = read_json_value(path)?;
    let file: ClustersFile = if value.is_array() {
        ClustersFile {
            format_version: String::new(),
            config_hash: String::new(),
            run_count: 0,
            agreement_threshold: 0,
            clusters: from_value(value, path)?,
        }
    } else {
        from_value(value, path)?
    };
    check_version(&file.format_version, path)?;
    Ok(ClusterSet {
        clusters: file.clusters,
        run_count: file.run_count,
        agreement_threshold: file.agreement_threshold,
    })
}

// ---------------------------------------------------------------------------
// Scenes (ground truth for scoring)
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct SceneSpikeRecord {
    spike_id: u64,
    center: [f64; 3],
    semi_axes: [f64; 3],
    /// Body-to-world rotation, row-major.
    orientation: Vec<f64>,
    volume: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct SceneDetectionRecord {
    detection_id: String,
    spike_id: u64,
    min_x: f64,
    min_y: f64,
    max_x: f64,
    max_y: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct SceneFile {
    #[serde(default)]
    format_version: String,
    #[serde(default)]
    config_hash: String,
    spikes: Vec<SceneSpikeRecord>,
    detections: BTreeMap<String, Vec<SceneDetectionRecord>>,
    /// Per-detection border flag (true when the box was clamped to the image).
    border_flags: BTreeMap<String, bool>,
}

/// Write a synthetic scene's ground truth: spikes, labelled detections, and
/// border flags. Cameras are stored separately (see [`write_cameras`]).
pub fn write_scene(path: &Path, scene: &Scene, config_hash: &str) -> Result<(), FormatError> {
    let spikes = scene
        .spikes
        .iter()
        .map(|s| SceneSpikeRecord {
            spike_id: s.spike_id,
            center: [s.center.x, s.center.y, s.center.z],
            semi_axes: [s.semi_axes.x, s.semi_axes.y, s.semi_axes.z],
            orientation: (0..3)
                .flat_map(|i| (0..3).map(move |j| s.orientation[(i, j)]))
                .collect(),
            volume: s.volume,
        })
        .collect();
    let mut detections: BTreeMap<String, Vec<SceneDetectionRecord>> = BTreeMap::new();
    let mut border_flags = BTreeMap::new();
    for d in &scene.detections {
        detections.entry(d.bbox.image_id.clone()).or_default().push(SceneDetectionRecord {
            detection_id: d.bbox.detection_id.clone(),
            spike_id: scene.spikes[d.spike_index].spike_id,
            min_x: d.bbox.min_x,
            min_y: d.bbox.min_y,
            max_x: d.bbox.max_x,
            max_y: d.bbox.max_y,
        });
        border_flags.insert(d.bbox.detection_id.clone(), d.border);
    }
    let file = SceneFile {
        format_version: FORMAT_VERSION.to_string(),
        config_hash: config_hash.to_string(),
        spikes,
        detections,
        border_flags,
    };
    write_json_value(path, &file)
}

/// Read a scene file back for scoring. The returned scene carries an empty
/// camera list and default generation parameters; spikes, labelled
/// detections, and border flags are restored exactly.
pub fn read_scene(path: &Path) -> Result<Scene, FormatError> {
    let file: SceneFile = from_value(read_json_value(path)?, path)?;
    check_version(&file.format_version, path)?;
    let mut spikes = Vec::with_capacity(file.spikes.len());
    let mut index_of = BTreeMap::new();
    for (i, s) in file.spikes.iter().enumerate() {
        if s.orientation.len() != 9 {
            return Err(FormatError::malformed(
                "scene",
                path,
                format!("spike {}: orientation must hold 9 values", s.spike_id),
            ));
        }
        if index_of.insert(s.spike_id, i).is_some() {
            return Err(FormatError::malformed(
                "scene",
                path,
                format!("duplicate spike id {}", s.spike_id),
            ));
        }
        spikes.push(SyntheticSpike {
            spike_id: s.spike_id,
            center: Vector3::new(s.center[0], s.center[1], s.center[2]),
            semi_axes: Vector3::new(s.semi_axes[0], s.semi_axes[1], s.semi_axes[2]),
            orientation: Matrix3::from_row_slice(&s.orientation),
            volume: s.volume,
        });
    }
    let mut detections = Vec::new();
    for (image_id, records) in file.detections {
        for r in records {
            let spike_index = *index_of.get(&r.spike_id).ok_or_else(|| {
                FormatError::malformed(
                    "scene",
                    path,
                    format!("detection {} references unknown spike {}", r.detection_id, r.spike_id),
                )
            })?;
            let border = *file.border_flags.get(&r.detection_id).unwrap_or(&false);
            let bbox =
                BoundingBox::new(image_id.clone(), r.detection_id, r.min_x, r.min_y, r.max_x, r.max_y)
                    .map_err(|e| FormatError::malformed("scene", path, e.to_string()))?;
            detections.push(SceneDetection { bbox, spike_index, border });
        }
    }
    let config = SceneConfig { n_spikes: spikes.len(), ..SceneConfig::default() };
    Ok(Scene { cameras: Vec::new(), spikes, detections, config })
}

// ---------------------------------------------------------------------------
// Point clouds
// ---------------------------------------------------------------------------

/// Write a cloud as ASCII `x y z` lines. Version and config hash go into
/// leading `#` comment lines, which readers skip.
pub fn write_xyz_ascii(path: &Path, cloud: &PointCloud, config_hash: &str) -> Result<(), FormatError> {
    let file = fs::File::create(path).map_err(FormatError::io(path))?;
    let mut w = BufWriter::new(file);
    (|| -> std::io::Result<()> {
        writeln!(w, "# format-version: {FORMAT_VERSION}")?;
        writeln!(w, "# config-hash: {config_hash}")?;
        for p in &cloud.points {
            writeln!(w, "{} {} {}", p.x, p.y, p.z)?;
        }
        w.flush()
    })()
    .map_err(FormatError::io(path))
}

/// Read an ASCII cloud: one `x y z` triple per line, `#` lines ignored.
pub fn read_xyz_ascii(path: &Path) -> Result<PointCloud, FormatError> {
    let file = fs::File::open(path).map_err(FormatError::io(path))?;
    let reader = BufReader::new(file);
    let mut points = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(FormatError::io(path))?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut coords = [0.0f64; 3];
        let mut n = 0;
        for tok in trimmed.split_whitespace() {
            if n == 3 {
                n = 4;
                break;
            }
            coords[n] = tok.parse().map_err(|_| {
                FormatError::malformed(
                    "cloud",
                    path,
                    format!("line {}: cannot parse {tok:?} as a number", lineno + 1),
                )
            })?;
            n += 1;
        }
        if n != 3 {
            return Err(FormatError::malformed(
                "cloud",
                path,
                format!("line {}: expected exactly 3 coordinates", lineno + 1),
            ));
        }
        points.push(Vector3::new(coords[0], coords[1], coords[2]));
    }
    Ok(PointCloud::new(points, CloudSource::Scan))
}

/// Write a cloud in the compact binary layout: little-endian u64 point
/// count, then `x y z` as little-endian f64 triples. This layout carries no
/// version header; use the ASCII form when provenance matters.
pub fn write_xyz_binary(path: &Path, cloud: &PointCloud) -> Result<(), FormatError> {
    let mut bytes = Vec::with_capacity(8 + cloud.points.len() * 24);
    bytes.extend_from_slice(&(cloud.points.len() as u64).to_le_bytes());
    for p in &cloud.points {
        bytes.extend_from_slice(&p.x.to_le_bytes());
        bytes.extend_from_slice(&p.y.to_le_bytes());
        bytes.extend_from_slice(&p.z.to_le_bytes());
    }
    fs::write(path, bytes).map_err(FormatError::io(path))
}

/// Read a binary cloud written by [`write_xyz_binary`].
pub fn read_xyz_binary(path: &Path) -> Result<PointCloud, FormatError> {
    let bytes = fs::read(path).map_err(FormatError::io(path))?;
    if bytes.len() < 8 {
        return Err(FormatError::malformed("cloud", path, "missing point-count header"));
    }
    let count = u64::from_le_bytes(bytes[0..8].try_into().unwrap()) as usize;
    let expected = 8 + count * 24;
    if bytes.len() != expected {
        return Err(FormatError::malformed(
            "cloud",
            path,
            format!("expected {expected} bytes for {count} points, got {}", bytes.len()),
        ));
    }
    let mut points = Vec::with_capacity(count);
    for i in 0..count {
        let at = 8 + i * 24;
        let x = f64::from_le_bytes(bytes[at..at + 8].try_into().unwrap());
        let y = f64::from_le_bytes(bytes[at + 8..at + 16].try_into().unwrap());
        let z = f64::from_le_bytes(bytes[at + 16..at + 24].try_into().unwrap());
        points.push(Vector3::new(x, y, z));
    }
    Ok(PointCloud::new(points, CloudSource::Scan))
}

/// Read a cloud, dispatching on extension: `.bin` is binary, anything else
/// is ASCII.
pub fn read_cloud(path: &Path) -> Result<PointCloud, FormatError> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("bin") => read_xyz_binary(path),
        _ => read_xyz_ascii(path),
    }
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

/// Write per-point histogram features as CSV: `#` comments carry the format
/// version and config hash, then a header row, then one row per point.
pub fn write_histogram_csv(
    path: &Path,
    features: &HistogramFeatures,
    config_hash: &str,
) -> Result<(), FormatError> {
    let file = fs::File::create(path).map_err(FormatError::io(path))?;
    let mut w = BufWriter::new(file);
    (|| -> std::io::Result<()> {
        writeln!(w, "# format-version: {FORMAT_VERSION}")?;
        writeln!(w, "# config-hash: {config_hash}")?;
        writeln!(w, "# bins: {} range-mm: {}", features.bins, features.range)?;
        let mut header: Vec<String> = (0..features.bins).map(|i| format!("bin{i}")).collect();
        header.push("overflow".to_string());
        writeln!(w, "{}", header.join(","))?;
        for row in features.per_point.rows() {
            let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            writeln!(w, "{}", cells.join(","))?;
        }
        w.flush()
    })()
    .map_err(FormatError::io(path))
}

/// Write a generic CSV table with provenance comments and a header row.
pub fn write_table_csv(
    path: &Path,
    header: &[&str],
    rows: &[Vec<String>],
    config_hash: &str,
) -> Result<(), FormatError> {
    let file = fs::File::create(path).map_err(FormatError::io(path))?;
    let mut w = BufWriter::new(file);
    (|| -> std::io::Result<()> {
        writeln!(w, "# format-version: {FORMAT_VERSION}")?;
        writeln!(w, "# config-hash: {config_hash}")?;
        writeln!(w, "{}", header.join(","))?;
        for row in rows {
            writeln!(w, "{}", row.join(","))?;
        }
        w.flush()
    })()
    .map_err(FormatError::io(path))
}

/// Read the last column of a CSV file as numbers. `#` comment lines are
/// skipped; a single leading header row is tolerated (detected by its last
/// field failing to parse).
pub fn read_last_column(path: &Path) -> Result<Vec<f64>, FormatError> {
    let file = fs::File::open(path).map_err(FormatError::io(path))?;
    let reader = BufReader::new(file);
    let mut values = Vec::new();
    let mut seen_data = false;
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(FormatError::io(path))?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let last = trimmed.rsplit(',').next().unwrap_or(trimmed).trim();
        match last.parse::<f64>() {
            Ok(v) => {
                values.push(v);
                seen_data = true;
            }
            Err(_) if !seen_data => {
                // Header row; skip it.
                seen_data = true;
            }
            Err(_) => {
                return Err(FormatError::malformed(
                    "csv",
                    path,
                    format!("line {}: cannot parse {last:?} as a number", lineno + 1),
                ));
            }
        }
    }
    Ok(values)
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

const CHECKPOINT_MAGIC: &[u8; 4] = b"SGKD";
const CHECKPOINT_VERSION: u32 = 1;

/// What kind of model a checkpoint stores.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckpointKind {
    /// Point-cloud encoder over complete scans (the teacher).
    ScanEncoder,
    /// Point-cloud encoder over partial sensed clouds (the student).
    FieldEncoder,
    /// Multi-view image regressor.
    MultiView,
    /// Fusion ensemble (multi-view regressor + field encoder + head).
    Ensemble,
}

impl CheckpointKind {
    fn to_u8(self) -> u8 {
        match self {
            CheckpointKind::ScanEncoder => 0,
            CheckpointKind::FieldEncoder => 1,
            CheckpointKind::MultiView => 2,
            CheckpointKind::Ensemble => 3,
        }
    }

    fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(CheckpointKind::ScanEncoder),
            1 => Some(CheckpointKind::FieldEncoder),
            2 => Some(CheckpointKind::MultiView),
            3 => Some(CheckpointKind::Ensemble),
            _ => None,
        }
    }

    /// Stable lowercase name, used in result tables.
    pub fn name(self) -> &'static str {
        match self {
            CheckpointKind::ScanEncoder => "scan-encoder",
            CheckpointKind::FieldEncoder => "field-encoder",
            CheckpointKind::MultiView => "multi-view",
            CheckpointKind::Ensemble => "ensemble",
        }
    }
}

/// A model checkpoint: architecture dimensions, target scaling, and one flat
/// parameter block per sub-model.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub kind: CheckpointKind,
    /// Hex SHA-256 of the producing configuration.
    pub config_hash: String,
    /// Architecture dimensions; meaning depends on `kind` (encoders store
    /// `[bins]`, the multi-view model `[view_dim]`, the ensemble
    /// `[view_dim, bins]`).
    pub dims: Vec<u32>,
    pub scaler_mean: f64,
    pub scaler_std: f64,
    pub blocks: Vec<Vec<f64>>,
}

fn decode_hash_hex(hash: &str, path: &Path) -> Result<[u8; 32], FormatError> {
    let bytes = hash.as_bytes();
    if bytes.len() != 64 {
        return Err(FormatError::Checkpoint {
            path: path.to_path_buf(),
            detail: format!("config hash must be 64 hex chars, got {}", bytes.len()),
        });
    }
    let mut out = [0u8; 32];
    for i in 0..32 {
        let hi = (bytes[2 * i] as char).to_digit(16);
        let lo = (bytes[2 * i + 1] as char).to_digit(16);
        match (hi, lo) {
            (Some(h), Some(l)) => out[i] = (h * 16 + l) as u8,
            _ => {
                return Err(FormatError::Checkpoint {
                    path: path.to_path_buf(),
                    detail: "config hash is not valid hex".to_string(),
                });
            }
        }
    }
    Ok(out)
}

fn encode_hash_hex(raw: &[u8; 32]) -> String {
    let mut out = String::with_capacity(64);
    for b in raw {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

/// Write a checkpoint. Layout (all little-endian): magic `SGKD`, u32
/// format version, u8 kind, 32-byte config hash, u32 dimension count and
/// u32 dimensions, f64 scaler mean and std, u32 block count, then per block
/// a u64 length and that many f64 parameters.
pub fn write_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<(), FormatError> {
    let hash = decode_hash_hex(&ckpt.config_hash, path)?;
    let mut bytes = Vec::new();
    bytes.extend_from_slice(CHECKPOINT_MAGIC);
    bytes.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    bytes.push(ckpt.kind.to_u8());
    bytes.extend_from_slice(&hash);
    bytes.extend_from_slice(&(ckpt.dims.len() as u32).to_le_bytes());
    for &d in &ckpt.dims {
        bytes.extend_from_slice(&d.to_le_bytes());
    }
    bytes.extend_from_slice(&ckpt.scaler_mean.to_le_bytes());
    bytes.extend_from_slice(&ckpt.scaler_std.to_le_bytes());
    bytes.extend_from_slice(&(ckpt.blocks.len() as u32).to_le_bytes());
    for block in &ckpt.blocks {
        bytes.extend_from_slice(&(block.len() as u64).to_le_bytes());
        for &v in block {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, bytes).map_err(FormatError::io(path))
}

struct ByteCursor<'a> {
    bytes: &'a [u8],
    at: usize,
    path: &'a Path,
}

impl<'a> ByteCursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        if self.at + n > self.bytes.len() {
            return Err(FormatError::Checkpoint {
                path: self.path.to_path_buf(),
                detail: format!("truncated at byte {} (wanted {n} more)", self.at),
            });
        }
        let slice = &self.bytes[self.at..self.at + n];
        self.at += n;
        Ok(slice)
    }

    fn u32(&mut self) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, FormatError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, FormatError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Read a checkpoint written by [`write_checkpoint`].
pub fn read_checkpoint(path: &Path) -> Result<Checkpoint, FormatError> {
    let bytes = fs::read(path).map_err(FormatError::io(path))?;
    let mut cur = ByteCursor { bytes: &bytes, at: 0, path };
    let magic = cur.take(4)?;
    if magic != CHECKPOINT_MAGIC {
        return Err(FormatError::Checkpoint {
            path: path.to_path_buf(),
            detail: format!("bad magic {magic:?}"),
        });
    }
    let version = cur.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(FormatError::Version {
            path: path.to_path_buf(),
            found: version.to_string(),
            expected: "1",
        });
    }
    let kind_byte = cur.take(1)?[0];
    let kind = CheckpointKind::from_u8(kind_byte).ok_or_else(|| FormatError::Checkpoint {
        path: path.to_path_buf(),
        detail: format!("unknown model kind {kind_byte}"),
    })?;
    let mut hash = [0u8; 32];
    hash.copy_from_slice(cur.take(32)?);
    let n_dims = cur.u32()? as usize;
    let mut dims = Vec::with_capacity(n_dims);
    for _ in 0..n_dims {
        dims.push(cur.u32()?);
    }
    let scaler_mean = cur.f64()?;
    let scaler_std = cur.f64()?;
    if !(scaler_std.is_finite() && scaler_std > 0.0) || !scaler_mean.is_finite() {
        return Err(FormatError::Checkpoint {
            path: path.to_path_buf(),
            detail: format!("invalid target scaling (mean {scaler_mean}, std {scaler_std})"),
        });
    }
    let n_blocks = cur.u32()? as usize;
    let mut blocks = Vec::with_capacity(n_blocks);
    for _ in 0..n_blocks {
        let len = cur.u64()? as usize;
        let mut block = Vec::with_capacity(len);
        for _ in 0..len {
            block.push(cur.f64()?);
        }
        blocks.push(block);
    }
    if cur.at != bytes.len() {
        return Err(FormatError::Checkpoint {
            path: path.to_path_buf(),
            detail: format!("{} trailing bytes", bytes.len() - cur.at),
        });
    }
    Ok(Checkpoint {
        kind,
        config_hash: encode_hash_hex(&hash),
        dims,
        scaler_mean,
        scaler_std,
        blocks,
    })
}

// ---------------------------------------------------------------------------
// Model <-> checkpoint conversion
// ---------------------------------------------------------------------------

fn expect_block_count(ckpt: &Checkpoint, n: usize, path_hint: &str) -> Result<(), FormatError> {
    if ckpt.blocks.len() != n {
        return Err(FormatError::Checkpoint {
            path: PathBuf::from(path_hint),
            detail: format!("expected {n} parameter blocks, got {}", ckpt.blocks.len()),
        });
    }
    Ok(())
}

fn expect_params(got: usize, want: usize, what: &str) -> Result<(), FormatError> {
    if got != want {
        return Err(FormatError::Checkpoint {
            path: PathBuf::from(what),
            detail: format!("parameter block holds {got} values, architecture needs {want}"),
        });
    }
    Ok(())
}

/// Package a trained point-cloud encoder as a checkpoint.
pub fn encoder_to_checkpoint(
    trained: &TrainedEncoder,
    kind: CheckpointKind,
    config_hash: &str,
) -> Checkpoint {
    Checkpoint {
        kind,
        config_hash: config_hash.to_string(),
        dims: vec![trained.model.bins as u32],
        scaler_mean: trained.scaler.mean,
        scaler_std: trained.scaler.std,
        blocks: vec![trained.model.params_flat()],
    }
}

/// Rebuild a point-cloud encoder from a checkpoint. All production encoders
/// use the tanh activation, which the architecture implies.
pub fn encoder_from_checkpoint(ckpt: &Checkpoint) -> Result<TrainedEncoder, FormatError> {
    if !matches!(ckpt.kind, CheckpointKind::ScanEncoder | CheckpointKind::FieldEncoder) {
        return Err(FormatError::Checkpoint {
            path: PathBuf::from("<checkpoint>"),
            detail: format!("kind {} is not a point-cloud encoder", ckpt.kind.name()),
        });
    }
    if ckpt.dims.len() != 1 {
        return Err(FormatError::Checkpoint {
            path: PathBuf::from("<checkpoint>"),
            detail: format!("encoder checkpoints store one dimension, got {}", ckpt.dims.len()),
        });
    }
    expect_block_count(ckpt, 1, "<checkpoint>")?;
    let bins = ckpt.dims[0] as usize;
    let mut model = HistogramEncoder::init(bins, Activation::Tanh, &mut rng_from(0));
    expect_params(ckpt.blocks[0].len(), model.param_count(), "<encoder>")?;
    model.set_params_flat(&ckpt.blocks[0]);
    Ok(TrainedEncoder {
        model,
        scaler: TargetScaler { mean: ckpt.scaler_mean, std: ckpt.scaler_std },
        loss_curve: Vec::new(),
    })
}

/// Pack a multi-view model's input normalization as one block:
/// per-column offsets, then per-column scales.
fn view_norm_block(model: &RegulatedRegressor) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * model.view_norm.dim());
    out.extend(model.view_norm.offset.iter());
    out.extend(model.view_norm.scale.iter());
    out
}

/// Inverse of [`view_norm_block`], validating width and scale positivity.
fn view_norm_from_block(block: &[f64], view_dim: usize, what: &str) -> Result<ViewNorm, FormatError> {
    if block.len() != 2 * view_dim {
        return Err(FormatError::Checkpoint {
            path: PathBuf::from(what),
            detail: format!(
                "view normalization block holds {} values, expected {}",
                block.len(),
                2 * view_dim
            ),
        });
    }
    let (offset, scale) = block.split_at(view_dim);
    if offset.iter().any(|v| !v.is_finite())
        || scale.iter().any(|v| !(v.is_finite() && *v > 0.0))
    {
        return Err(FormatError::Checkpoint {
            path: PathBuf::from(what),
            detail: "view normalization must be finite with positive scales".to_string(),
        });
    }
    Ok(ViewNorm {
        offset: Array1::from_vec(offset.to_vec()),
        scale: Array1::from_vec(scale.to_vec()),
    })
}

/// Package a trained multi-view regressor as a checkpoint: one block for the
/// parameters, one for the input normalization.
pub fn rt_to_checkpoint(trained: &TrainedRt, config_hash: &str) -> Checkpoint {
    Checkpoint {
        kind: CheckpointKind::MultiView,
        config_hash: config_hash.to_string(),
        dims: vec![trained.model.view_dim() as u32],
        scaler_mean: trained.scaler.mean,
        scaler_std: trained.scaler.std,
        blocks: vec![trained.model.params_flat(), view_norm_block(&trained.model)],
    }
}

/// Rebuild a multi-view regressor from a checkpoint.
pub fn rt_from_checkpoint(ckpt: &Checkpoint) -> Result<TrainedRt, FormatError> {
    if ckpt.kind != CheckpointKind::MultiView {
        return Err(FormatError::Checkpoint {
            path: PathBuf::from("<checkpoint>"),
            detail: format!("kind {} is not a multi-view regressor", ckpt.kind.name()),
        });
    }
    if ckpt.dims.len() != 1 {
        return Err(FormatError::Checkpoint {
            path: PathBuf::from("<checkpoint>"),
            detail: format!("multi-view checkpoints store one dimension, got {}", ckpt.dims.len()),
        });
    }
    expect_block_count(ckpt, 2, "<checkpoint>")?;
    let view_dim = ckpt.dims[0] as usize;
    let mut model = RegulatedRegressor::init(view_dim, Activation::Tanh, &mut rng_from(0));
    expect_params(ckpt.blocks[0].len(), model.param_count(), "<multi-view>")?;
    model.set_params_flat(&ckpt.blocks[0]);
    model.view_norm = view_norm_from_block(&ckpt.blocks[1], view_dim, "<multi-view>")?;
    Ok(TrainedRt {
        model,
        scaler: TargetScaler { mean: ckpt.scaler_mean, std: ckpt.scaler_std },
        loss_curve: Vec::new(),
    })
}

/// Package a fusion ensemble as a checkpoint: blocks for the multi-view
/// parameters, its input normalization, the field encoder, and the fusion
/// head.
pub fn ensemble_to_checkpoint(model: &EnsembleModel, config_hash: &str) -> Checkpoint {
    Checkpoint {
        kind: CheckpointKind::Ensemble,
        config_hash: config_hash.to_string(),
        dims: vec![model.rt.view_dim() as u32, model.student.bins as u32],
        scaler_mean: model.scaler.mean,
        scaler_std: model.scaler.std,
        blocks: vec![
            model.rt.params_flat(),
            view_norm_block(&model.rt),
            model.student.params_flat(),
            model.head.params_flat(),
        ],
    }
}

/// Rebuild a fusion ensemble from a checkpoint.
pub fn ensemble_from_checkpoint(ckpt: &Checkpoint) -> Result<EnsembleModel, FormatError> {
    if ckpt.kind != CheckpointKind::Ensemble {
        return Err(FormatError::Checkpoint {
            path: PathBuf::from("<checkpoint>"),
            detail: format!("kind {} is not an ensemble", ckpt.kind.name()),
        });
    }
    if ckpt.dims.len() != 2 {
        return Err(FormatError::Checkpoint {
            path: PathBuf::from("<checkpoint>"),
            detail: format!("ensemble checkpoints store two dimensions, got {}", ckpt.dims.len()),
        });
    }
    expect_block_count(ckpt, 4, "<checkpoint>")?;
    let view_dim = ckpt.dims[0] as usize;
    let bins = ckpt.dims[1] as usize;
    let mut rt = RegulatedRegressor::init(view_dim, Activation::Tanh, &mut rng_from(0));
    expect_params(ckpt.blocks[0].len(), rt.param_count(), "<ensemble multi-view>")?;
    rt.set_params_flat(&ckpt.blocks[0]);
    rt.view_norm = view_norm_from_block(&ckpt.blocks[1], view_dim, "<ensemble multi-view>")?;
    let mut student = HistogramEncoder::init(bins, Activation::Tanh, &mut rng_from(0));
    expect_params(ckpt.blocks[2].len(), student.param_count(), "<ensemble encoder>")?;
    student.set_params_flat(&ckpt.blocks[2]);
    let mut head = EnsembleModel::init_head(Activation::Tanh, &mut rng_from(0));
    expect_params(ckpt.blocks[3].len(), head.param_count(), "<ensemble head>")?;
    head.set_params_flat(&ckpt.blocks[3]);
    let scaler = TargetScaler { mean: ckpt.scaler_mean, std: ckpt.scaler_std };
    EnsembleModel::new(rt, student, head, scaler).map_err(|e| FormatError::Checkpoint {
        path: PathBuf::from("<ensemble>"),
        detail: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::Camera;
    use crate::cloud::sample_ellipsoid_surface;
    use crate::learn::mlp::Mlp;
    use crate::learn::train::{train_regulated, train_teacher};
    use crate::learn::TrainConfig;
    use crate::scene::{generate_scene, standard_rig, SceneConfig};
    use nalgebra::Vector3;

    fn tmp() -> tempfile::TempDir {
        tempfile::tempdir().expect("create temp dir")
    }

    fn test_hash() -> String {
        sha256_hex(b"test-config")
    }

    #[test]
    fn camera_round_trip_is_exact() {
        let dir = tmp();
        let path = dir.path().join("cameras.json");
        let rig = standard_rig();
        write_cameras(&path, &rig, &test_hash()).unwrap();
        let back = read_cameras(&path).unwrap();
        assert_eq!(back.len(), rig.len());
        for (a, b) in rig.iter().zip(&back) {
            assert_eq!(a.id, b.id);
            assert_eq!(a.fx, b.fx);
            assert_eq!(a.rotation, b.rotation);
            assert_eq!(a.center, b.center);
        }
    }

    #[test]
    fn camera_reader_accepts_bare_array() {
        let dir = tmp();
        let path = dir.path().join("cameras.json");
        let rig = standard_rig();
        let records: Vec<CameraRecord> = rig.iter().map(CameraRecord::from_camera).collect();
        write_json_value(&path, &records).unwrap();
        let back = read_cameras(&path).unwrap();
        assert_eq!(back.len(), rig.len());
    }

    #[test]
    fn camera_reader_rejects_future_version() {
        let dir = tmp();
        let path = dir.path().join("cameras.json");
        let file = CameraFile {
            units: "mm".into(),
            format_version: "99".into(),
            config_hash: String::new(),
            cameras: Vec::new(),
        };
        write_json_value(&path, &file).unwrap();
        assert!(matches!(read_cameras(&path), Err(FormatError::Version { .. })));
    }

    #[test]
    fn detections_round_trip_and_bare_map() {
        let dir = tmp();
        let path = dir.path().join("detections.json");
        let boxes = vec![
            BoundingBox::new("cam01", "cam01:s0", 10.0, 20.0, 110.0, 220.0).unwrap(),
            BoundingBox::new("cam00", "cam00:s0", 5.0, 6.0, 50.0, 60.0).unwrap(),
            BoundingBox::new("cam01", "cam01:s1", 300.0, 400.0, 350.0, 480.0).unwrap(),
        ];
        write_detections(&path, &boxes, &test_hash()).unwrap();
        let back = read_detections(&path).unwrap();
        assert_eq!(back.len(), 3);
        // Map order: cam00 first.
        assert_eq!(back[0].detection_id, "cam00:s0");
        assert_eq!(back[1].detection_id, "cam01:s0");
        assert_eq!(back[2].max_y, 480.0);

        // Bare {image_id: [...]} form, as an external tool would write it.
        let bare = dir.path().join("bare.json");
        let mut map = BTreeMap::new();
        map.insert(
            "camX".to_string(),
            vec![DetectionRecord {
                detection_id: "camX:d0".into(),
                min_x: 1.0,
                min_y: 2.0,
                max_x: 3.0,
                max_y: 4.0,
            }],
        );
        write_json_value(&bare, &map).unwrap();
        let back = read_detections(&bare).unwrap();
        assert_eq!(back.len(), 1);
        assert_eq!(back[0].image_id, "camX");
    }

    #[test]
    fn detections_reader_rejects_inverted_box() {
        let dir = tmp();
        let path = dir.path().join("bad.json");
        let mut map = BTreeMap::new();
        map.insert(
            "cam".to_string(),
            vec![DetectionRecord {
                detection_id: "d".into(),
                min_x: 10.0,
                min_y: 2.0,
                max_x: 3.0,
                max_y: 4.0,
            }],
        );
        write_json_value(&path, &map).unwrap();
        assert!(matches!(read_detections(&path), Err(FormatError::Malformed { .. })));
    }

    #[test]
    fn clusters_round_trip_and_bare_list() {
        let dir = tmp();
        let path = dir.path().join("clusters.json");
        let set = ClusterSet {
            clusters: vec![vec!["a".into(), "b".into()], vec!["c".into()]],
            run_count: 3,
            agreement_threshold: 2,
        };
        write_clusters(&path, &set, &test_hash()).unwrap();
        let back = read_clusters(&path).unwrap();
        assert_eq!(back.clusters, set.clusters);
        assert_eq!(back.run_count, 3);
        assert_eq!(back.agreement_threshold, 2);

        let bare = dir.path().join("bare.json");
        write_json_value(&bare, &set.clusters).unwrap();
        let back = read_clusters(&bare).unwrap();
        assert_eq!(back.clusters, set.clusters);
        assert_eq!(back.run_count, 0);
    }

    #[test]
    fn scene_round_trip_preserves_scoring_inputs() {
        let dir = tmp();
        let path = dir.path().join("scene.json");
        let config = SceneConfig { n_spikes: 12, seed: 7, ..SceneConfig::default() };
        let scene = generate_scene(&config, &standard_rig()).unwrap();
        write_scene(&path, &scene, &test_hash()).unwrap();
        let back = read_scene(&path).unwrap();
        assert_eq!(back.spikes.len(), scene.spikes.len());
        assert_eq!(back.detections.len(), scene.detections.len());
        for s in &back.spikes {
            let orig = scene.spikes.iter().find(|o| o.spike_id == s.spike_id).unwrap();
            assert_eq!(s.volume, orig.volume);
            assert_eq!(s.center, orig.center);
        }
        // Detection labels and border flags survive (order may differ).
        for d in &back.detections {
            let orig = scene
                .detections
                .iter()
                .find(|o| o.bbox.detection_id == d.bbox.detection_id)
                .unwrap();
            assert_eq!(
                back.spikes[d.spike_index].spike_id,
                scene.spikes[orig.spike_index].spike_id
            );
            assert_eq!(d.border, orig.border);
            assert_eq!(d.bbox.min_x, orig.bbox.min_x);
        }
    }

    #[test]
    fn xyz_ascii_round_trip_is_exact() {
        let dir = tmp();
        let path = dir.path().join("cloud.xyz");
        let cloud =
            sample_ellipsoid_surface(Vector3::new(10.0, 12.0, 40.0), 257, 11).unwrap();
        write_xyz_ascii(&path, &cloud, &test_hash()).unwrap();
        let back = read_xyz_ascii(&path).unwrap();
        assert_eq!(back.points.len(), cloud.points.len());
        for (a, b) in cloud.points.iter().zip(&back.points) {
            assert_eq!(a, b, "shortest round-trip float text must be exact");
        }
    }

    #[test]
    fn xyz_binary_round_trip_is_exact() {
        let dir = tmp();
        let path = dir.path().join("cloud.bin");
        let cloud =
            sample_ellipsoid_surface(Vector3::new(10.0, 12.0, 40.0), 64, 5).unwrap();
        write_xyz_binary(&path, &cloud).unwrap();
        let back = read_cloud(&path).unwrap();
        assert_eq!(back.points, cloud.points);
    }

    #[test]
    fn malformed_cloud_lines_are_rejected() {
        let dir = tmp();
        let path = dir.path().join("bad.xyz");
        fs::write(&path, "# ok\n1.0 2.0\n").unwrap();
        assert!(matches!(read_xyz_ascii(&path), Err(FormatError::Malformed { .. })));
        fs::write(&path, "1.0 2.0 3.0 4.0\n").unwrap();
        assert!(matches!(read_xyz_ascii(&path), Err(FormatError::Malformed { .. })));
    }

    #[test]
    fn last_column_reader_skips_comments_and_header() {
        let dir = tmp();
        let path = dir.path().join("table.csv");
        fs::write(&path, "# format-version: 1\nspike_id,truth,pred\n0,100,101.5\n1,200,198\n")
            .unwrap();
        assert_eq!(read_last_column(&path).unwrap(), vec![101.5, 198.0]);
        // Headerless variant.
        fs::write(&path, "0,1.5\n1,2.5\n").unwrap();
        assert_eq!(read_last_column(&path).unwrap(), vec![1.5, 2.5]);
        // Garbage mid-file is an error, not silently skipped.
        fs::write(&path, "0,1.5\nx,oops\n").unwrap();
        assert!(read_last_column(&path).is_err());
    }

    #[test]
    fn histogram_csv_is_commented_and_parseable() {
        let dir = tmp();
        let path = dir.path().join("features.csv");
        let cloud = sample_ellipsoid_surface(Vector3::new(8.0, 8.0, 30.0), 40, 3).unwrap();
        let feats = crate::cloud::distance_histograms(&cloud, 10, 60.0).unwrap();
        write_histogram_csv(&path, &feats, &test_hash()).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("# format-version: 1\n"));
        assert!(text.contains("# config-hash: "));
        let last = read_last_column(&path).unwrap();
        assert_eq!(last.len(), 40);
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let dir = tmp();
        let path = dir.path().join("model.ckpt");
        let ckpt = Checkpoint {
            kind: CheckpointKind::MultiView,
            config_hash: test_hash(),
            dims: vec![8],
            scaler_mean: 4649.06,
            scaler_std: 1234.26,
            blocks: vec![vec![1.0, -2.5, 3.25], vec![0.125; 7]],
        };
        write_checkpoint(&path, &ckpt).unwrap();
        let back = read_checkpoint(&path).unwrap();
        assert_eq!(back, ckpt);
    }

    #[test]
    fn checkpoint_reader_rejects_corruption() {
        let dir = tmp();
        let path = dir.path().join("model.ckpt");
        let ckpt = Checkpoint {
            kind: CheckpointKind::ScanEncoder,
            config_hash: test_hash(),
            dims: vec![30],
            scaler_mean: 0.0,
            scaler_std: 1.0,
            blocks: vec![vec![1.0; 10]],
        };
        write_checkpoint(&path, &ckpt).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes[0] = b'X';
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(read_checkpoint(&path), Err(FormatError::Checkpoint { .. })));

        write_checkpoint(&path, &ckpt).unwrap();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 4]).unwrap();
        assert!(matches!(read_checkpoint(&path), Err(FormatError::Checkpoint { .. })));
    }

    fn tiny_dataset() -> crate::learn::dataset::Dataset {
        crate::learn::dataset::make_synthetic_dataset(12, 4, 99).unwrap()
    }

    #[test]
    fn encoder_checkpoint_round_trip_preserves_predictions() {
        let dataset = tiny_dataset();
        let config = TrainConfig { epochs: 2, ..TrainConfig::encoder_default(3) };
        let trained = train_teacher(&dataset, &config).unwrap();
        let dir = tmp();
        let path = dir.path().join("teacher.ckpt");
        let ckpt = encoder_to_checkpoint(&trained, CheckpointKind::ScanEncoder, &test_hash());
        write_checkpoint(&path, &ckpt).unwrap();
        let back = encoder_from_checkpoint(&read_checkpoint(&path).unwrap()).unwrap();
        assert_eq!(back.model.params_flat(), trained.model.params_flat());
        assert_eq!(back.scaler.mean, trained.scaler.mean);
        let x = &dataset.spikes[0].scan_features;
        let a = trained.model.predict(x).unwrap();
        let b = back.model.predict(x).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rt_checkpoint_round_trip_preserves_predictions() {
        let dataset = tiny_dataset();
        let config = TrainConfig { epochs: 3, ..TrainConfig::regressor_default(4) };
        let trained = train_regulated(&dataset, 1.0, &config).unwrap();
        let dir = tmp();
        let path = dir.path().join("rt.ckpt");
        write_checkpoint(&path, &rt_to_checkpoint(&trained, &test_hash())).unwrap();
        let back = rt_from_checkpoint(&read_checkpoint(&path).unwrap()).unwrap();
        assert_eq!(back.model.params_flat(), trained.model.params_flat());
        let out_a = trained.model.forward(&dataset.spikes[0].views).unwrap();
        let out_b = back.model.forward(&dataset.spikes[0].views).unwrap();
        assert_eq!(out_a.global.mu(), out_b.global.mu());
    }

    #[test]
    fn ensemble_checkpoint_round_trip_preserves_predictions() {
        use crate::learn::train::{train_ensemble, train_field_encoder};
        let dataset = tiny_dataset();
        let enc_cfg = TrainConfig { epochs: 2, ..TrainConfig::encoder_default(5) };
        let rt_cfg = TrainConfig { epochs: 3, ..TrainConfig::regressor_default(5) };
        let ens_cfg = TrainConfig { epochs: 2, ..TrainConfig::ensemble_default(5) };
        let student = train_field_encoder(&dataset, &enc_cfg).unwrap();
        let rt = train_regulated(&dataset, 1.0, &rt_cfg).unwrap();
        let ensemble = train_ensemble(&dataset, &rt.model, &student.model, &ens_cfg).unwrap();
        let dir = tmp();
        let path = dir.path().join("ensemble.ckpt");
        write_checkpoint(&path, &ensemble_to_checkpoint(&ensemble.model, &test_hash())).unwrap();
        let back = ensemble_from_checkpoint(&read_checkpoint(&path).unwrap()).unwrap();
        let rec = &dataset.spikes[1];
        let a = ensemble.model.predict(&rec.views, &rec.field_features).unwrap();
        let b = back.predict(&rec.views, &rec.field_features).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn checkpoint_kind_mismatch_is_rejected() {
        let ckpt = Checkpoint {
            kind: CheckpointKind::MultiView,
            config_hash: test_hash(),
            dims: vec![8],
            scaler_mean: 0.0,
            scaler_std: 1.0,
            blocks: vec![Vec::new()],
        };
        assert!(encoder_from_checkpoint(&ckpt).is_err());
        let mut rng = rng_from(1);
        let mlp = Mlp::init(&[4, 3, 1], Activation::Tanh, &mut rng);
        // Wrong parameter count for the declared architecture.
        let bad = Checkpoint {
            kind: CheckpointKind::ScanEncoder,
            config_hash: test_hash(),
            dims: vec![30],
            scaler_mean: 0.0,
            scaler_std: 1.0,
            blocks: vec![mlp.params_flat()],
        };
        assert!(encoder_from_checkpoint(&bad).is_err());
    }
}
