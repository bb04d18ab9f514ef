//! Synthetic multi-camera spike scenes with exact ground truth.
//!
//! Spikes are ellipsoids with known analytic volume scattered over a plot
//! and photographed by a converging 12-camera rig. Detections are the tight
//! axis-aligned boxes of each projected ellipsoid silhouette (computed from
//! the dual quadric, no occlusion modelling), clamped to the image and
//! flagged when they cross its border. Ground-truth spike identity per
//! detection supports exact pairing precision/recall scoring.

use nalgebra::{Matrix3, Matrix4, Vector3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::camera::{BoundingBox, Camera, GeometryError};
use crate::pairing::ClusterSet;
use crate::rng;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("invalid scene config: {0}")]
    InvalidConfig(String),
    #[error("extent {extent:?} mm cannot hold {n} spikes at {spacing} mm spacing")]
    ExtentTooSmall { extent: (f64, f64), n: usize, spacing: f64 },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Spike orientation regime.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PoseMode {
    /// Long axis near world +z, tilt angle drawn from N(0, sigma).
    Upright { sigma_deg: f64 },
    /// Orientation uniform over rotations.
    Random,
}

impl Default for PoseMode {
    fn default() -> Self {
        PoseMode::Upright { sigma_deg: 15.0 }
    }
}

/// Generation parameters; distances in millimetres.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneConfig {
    pub n_spikes: usize,
    pub pose: PoseMode,
    /// Plot extent (x, y), centered on the origin.
    pub extent: (f64, f64),
    /// Minimum center-to-center spike distance.
    pub min_spacing: f64,
    /// Spike centers are jittered in z by +-this amount.
    pub height_jitter: f64,
    pub volume_mean: f64,
    pub volume_sd: f64,
    /// Documents the generative assumption: silhouettes are never occluded.
    pub occlusion_free: bool,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            n_spikes: 100,
            pose: PoseMode::default(),
            extent: (1200.0, 900.0),
            min_spacing: 50.0,
            height_jitter: 40.0,
            volume_mean: 4649.06,
            volume_sd: 1234.26,
            occlusion_free: true,
            seed: 0,
        }
    }
}

/// Ellipsoid spike with exact volume.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpike {
    pub spike_id: u64,
    pub center: Vector3<f64>,
    /// Semi-axes (a, b, c); c is the long axis.
    pub semi_axes: Vector3<f64>,
    /// Body-to-world rotation.
    pub orientation: Matrix3<f64>,
    pub volume: f64,
}

impl SyntheticSpike {
    /// Analytic ellipsoid volume, retained as the invariant the generator
    /// must satisfy.
    pub fn analytic_volume(&self) -> f64 {
        4.0 / 3.0 * std::f64::consts::PI
            * self.semi_axes.x
            * self.semi_axes.y
            * self.semi_axes.z
    }
}

/// One ground-truth detection: the silhouette box of a spike in one view.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneDetection {
    pub bbox: BoundingBox,
    pub spike_index: usize,
    /// True when the silhouette box crossed the image border and was clamped.
    pub border: bool,
}

#[derive(Debug, Clone)]
pub struct Scene {
    pub cameras: Vec<Camera>,
    pub spikes: Vec<SyntheticSpike>,
    pub detections: Vec<SceneDetection>,
    pub config: SceneConfig,
}

impl Scene {
    /// Detection boxes fed to the pairing stage.
    pub fn detection_boxes(&self) -> Vec<BoundingBox> {
        self.detections.iter().map(|d| d.bbox.clone()).collect()
    }
}

/// The standard 12-camera nadir rig: five cameras along each side of the
/// sensor frame and two beneath it, ~2.5 m above the plot, all converging on
/// the plot center.
pub fn standard_rig() -> Vec<Camera> {
    let mut positions = Vec::new();
    for (side, x) in [(-1.0f64, -375.0), (1.0, 375.0)] {
        let _ = side;
        for k in 0..5 {
            positions.push(Vector3::new(x, -500.0 + 250.0 * k as f64, 2500.0));
        }
    }
    positions.push(Vector3::new(0.0, -125.0, 2500.0));
    positions.push(Vector3::new(0.0, 125.0, 2500.0));
    positions
        .into_iter()
        .enumerate()
        .map(|(i, c)| {
            Camera::look_at(
                format!("cam{i:02}"),
                c,
                Vector3::zeros(),
                10_000.0,
                10_000.0,
                2048.0,
                1500.0,
                4096.0,
                3000.0,
            )
            .expect("rig geometry is valid")
        })
        .collect()
}

fn truncated_normal(rng: &mut ChaCha8Rng, mean: f64, sd: f64, clip_sigmas: f64) -> f64 {
    loop {
        let v = mean + sd * rng::normal(rng);
        if (v - mean).abs() <= clip_sigmas * sd {
            return v;
        }
    }
}

fn rotation_z(a: f64) -> Matrix3<f64> {
    Matrix3::new(a.cos(), -a.sin(), 0.0, a.sin(), a.cos(), 0.0, 0.0, 0.0, 1.0)
}

fn rotation_y(a: f64) -> Matrix3<f64> {
    Matrix3::new(a.cos(), 0.0, a.sin(), 0.0, 1.0, 0.0, -a.sin(), 0.0, a.cos())
}

fn sample_orientation(rng: &mut ChaCha8Rng, pose: PoseMode) -> Matrix3<f64> {
    match pose {
        PoseMode::Upright { sigma_deg } => {
            let tilt = sigma_deg.to_radians() * rng::normal(rng);
            let azimuth = rng.random_range(0.0..std::f64::consts::TAU);
            let spin = rng.random_range(0.0..std::f64::consts::TAU);
            rotation_z(azimuth) * rotation_y(tilt) * rotation_z(spin)
        }
        PoseMode::Random => {
            // Uniform rotation from a normalized quaternion of Gaussians.
            let (w, x, y, z) = (
                rng::normal(rng),
                rng::normal(rng),
                rng::normal(rng),
                rng::normal(rng),
            );
            let q = nalgebra::Quaternion::new(w, x, y, z);
            nalgebra::UnitQuaternion::from_quaternion(q).to_rotation_matrix().into_inner()
        }
    }
}

/// Ellipsoid semi-axes realizing `volume` at elongation `c/a` with a == b.
fn semi_axes_for(volume: f64, elongation: f64) -> Vector3<f64> {
    let a = (3.0 * volume / (4.0 * std::f64::consts::PI * elongation)).cbrt();
    Vector3::new(a, a, elongation * a)
}

/// Sample one spike at a fixed center with the standard volume (truncated
/// normal, 3-sigma clip), elongation, and pose distributions.
pub fn sample_spike(
    spike_id: u64,
    center: Vector3<f64>,
    pose: PoseMode,
    volume_mean: f64,
    volume_sd: f64,
    rng: &mut ChaCha8Rng,
) -> SyntheticSpike {
    let volume = truncated_normal(rng, volume_mean, volume_sd, 3.0);
    let elongation = rng.random_range(4.5..7.0);
    let orientation = sample_orientation(rng, pose);
    SyntheticSpike {
        spike_id,
        center,
        semi_axes: semi_axes_for(volume, elongation),
        orientation,
        volume,
    }
}

/// Tight axis-aligned box of the projected ellipsoid silhouette, from the
/// dual quadric: with `Q*` the dual of the ellipsoid and `P` the projection,
/// the silhouette's dual conic is `C* = P Q* P'`, whose tangent vertical and
/// horizontal lines give the exact extremes. Returns `None` when the spike
/// is behind the camera or the conic degenerates.
pub fn silhouette_box(spike: &SyntheticSpike, camera: &Camera) -> Option<(f64, f64, f64, f64)> {
    if camera.to_camera(&spike.center).z <= 0.0 {
        return None;
    }
    let inv_axes = Matrix3::from_diagonal(&Vector3::new(
        1.0 / (spike.semi_axes.x * spike.semi_axes.x),
        1.0 / (spike.semi_axes.y * spike.semi_axes.y),
        1.0 / (spike.semi_axes.z * spike.semi_axes.z),
    ));
    let a = spike.orientation * inv_axes * spike.orientation.transpose();
    let ac = a * spike.center;
    let mut q = Matrix4::zeros();
    q.fixed_view_mut::<3, 3>(0, 0).copy_from(&a);
    q.fixed_view_mut::<3, 1>(0, 3).copy_from(&(-ac));
    q.fixed_view_mut::<1, 3>(3, 0).copy_from(&(-ac).transpose());
    q[(3, 3)] = spike.center.dot(&ac) - 1.0;
    let q_dual = q.try_inverse()?;

    let k = camera.intrinsic_matrix();
    let r = camera.rotation;
    let t = -r * camera.center;
    let mut p = nalgebra::Matrix3x4::zeros();
    p.fixed_view_mut::<3, 3>(0, 0).copy_from(&(k * r));
    p.fixed_view_mut::<3, 1>(0, 3).copy_from(&(k * t));
    let c_dual = p * q_dual * p.transpose();

    let extremes = |cii: f64, ci2: f64, c22: f64| -> Option<(f64, f64)> {
        let disc = ci2 * ci2 - cii * c22;
        if disc <= 0.0 || c22 == 0.0 {
            return None;
        }
        let root = disc.sqrt();
        let lo = (ci2 - root) / c22;
        let hi = (ci2 + root) / c22;
        Some((lo.min(hi), lo.max(hi)))
    };
    let (min_x, max_x) = extremes(c_dual[(0, 0)], c_dual[(0, 2)], c_dual[(2, 2)])?;
    let (min_y, max_y) = extremes(c_dual[(1, 1)], c_dual[(1, 2)], c_dual[(2, 2)])?;
    Some((min_x, min_y, max_x, max_y))
}

/// Generate a scene: spikes with truncated-normal volumes (3 sigma clip),
/// rejection-sampled positions at the configured minimum spacing, and one
/// detection per (spike, view) whose silhouette overlaps the image.
pub fn generate_scene(config: &SceneConfig, cameras: &[Camera]) -> Result<Scene, SceneError> {
    if config.n_spikes == 0 {
        return Err(SceneError::InvalidConfig("n_spikes must be positive".into()));
    }
    if cameras.len() < 2 {
        return Err(SceneError::InvalidConfig(format!(
            "need at least 2 cameras, got {}",
            cameras.len()
        )));
    }
    if !(config.volume_mean > 0.0 && config.volume_sd >= 0.0) {
        return Err(SceneError::InvalidConfig("volume distribution must be positive".into()));
    }
    if config.volume_mean - 3.0 * config.volume_sd <= 0.0 {
        return Err(SceneError::InvalidConfig(
            "volume mean minus 3 sigma must stay positive".into(),
        ));
    }
    let mut rng = rng::rng_from(rng::derive(config.seed, "scene"));
    let (ex, ey) = config.extent;

    // Positions first: rejection sampling at the minimum spacing.
    let mut centers: Vec<Vector3<f64>> = Vec::with_capacity(config.n_spikes);
    let mut attempts = 0usize;
    let max_attempts = 200 * config.n_spikes.max(1);
    while centers.len() < config.n_spikes {
        if attempts >= max_attempts {
            return Err(SceneError::ExtentTooSmall {
                extent: config.extent,
                n: config.n_spikes,
                spacing: config.min_spacing,
            });
        }
        attempts += 1;
        let cand = Vector3::new(
            rng.random_range(-ex / 2.0..=ex / 2.0),
            rng.random_range(-ey / 2.0..=ey / 2.0),
            rng.random_range(-config.height_jitter..=config.height_jitter),
        );
        if centers.iter().all(|c| (c - cand).norm() >= config.min_spacing) {
            centers.push(cand);
        }
    }

    let spikes: Vec<SyntheticSpike> = centers
        .into_iter()
        .enumerate()
        .map(|(i, center)| {
            sample_spike(
                i as u64,
                center,
                config.pose,
                config.volume_mean,
                config.volume_sd,
                &mut rng,
            )
        })
        .collect();

    let mut detections = Vec::new();
    for camera in cameras {
        let mut in_image = 0usize;
        for (spike_index, spike) in spikes.iter().enumerate() {
            let Some((min_x, min_y, max_x, max_y)) = silhouette_box(spike, camera) else {
                continue;
            };
            let Ok(raw) = BoundingBox::new(
                camera.id.clone(),
                format!("{}:{}", camera.id, in_image),
                min_x,
                min_y,
                max_x,
                max_y,
            ) else {
                continue;
            };
            let Some((bbox, border)) = raw.clamp_to(camera.width, camera.height) else {
                continue;
            };
            // Slivers clipped to under 2 px carry no pairable silhouette.
            if bbox.width() < 2.0 || bbox.height() < 2.0 {
                continue;
            }
            in_image += 1;
            detections.push(SceneDetection { bbox, spike_index, border });
        }
    }
    Ok(Scene { cameras: cameras.to_vec(), spikes, detections, config: config.clone() })
}

/// Pair-level precision/recall of a predicted clustering against ground truth.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PairingScore {
    pub true_pairs: usize,
    pub false_pairs: usize,
    pub missed_pairs: usize,
    pub precision: f64,
    pub recall: f64,
    /// Set when no pair was predicted (precision reported as 1 by convention).
    pub vacuous_precision: bool,
    /// Set when ground truth holds no pair (recall reported as 1).
    pub vacuous_recall: bool,
}

fn score_detection_set(
    detections: &[SceneDetection],
    evaluated: &[usize],
    predicted: &ClusterSet,
) -> PairingScore {
    let membership = predicted.membership();
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut missed = 0usize;
    for (p, &i) in evaluated.iter().enumerate() {
        let di = &detections[i];
        let ci = membership.get(di.bbox.detection_id.as_str());
        for &j in &evaluated[p + 1..] {
            let dj = &detections[j];
            let same_spike = di.spike_index == dj.spike_index;
            let same_cluster = match (ci, membership.get(dj.bbox.detection_id.as_str())) {
                (Some(a), Some(b)) => a == b,
                // A detection outside every cluster acts as its own singleton.
                _ => false,
            };
            match (same_spike, same_cluster) {
                (true, true) => tp += 1,
                (false, true) => fp += 1,
                (true, false) => missed += 1,
                (false, false) => {}
            }
        }
    }
    let vacuous_precision = tp + fp == 0;
    let vacuous_recall = tp + missed == 0;
    PairingScore {
        true_pairs: tp,
        false_pairs: fp,
        missed_pairs: missed,
        precision: if vacuous_precision { 1.0 } else { tp as f64 / (tp + fp) as f64 },
        recall: if vacuous_recall { 1.0 } else { tp as f64 / (tp + missed) as f64 },
        vacuous_precision,
        vacuous_recall,
    }
}

fn evaluated_indices(detections: &[SceneDetection], exclude_border: bool) -> Vec<usize> {
    (0..detections.len())
        .filter(|&i| !(exclude_border && detections[i].border))
        .collect()
}

/// Score a predicted clustering against labelled detections, without needing
/// the cameras or spikes that produced them.
pub fn score_detections(
    detections: &[SceneDetection],
    predicted: &ClusterSet,
    exclude_border: bool,
) -> PairingScore {
    score_detection_set(detections, &evaluated_indices(detections, exclude_border), predicted)
}

/// Score a predicted clustering over all unordered detection pairs: a pair is
/// a true pair when it shares both spike and cluster, false when it shares
/// only the cluster, missed when it shares only the spike.
pub fn score_pairing(scene: &Scene, predicted: &ClusterSet, exclude_border: bool) -> PairingScore {
    score_detections(&scene.detections, predicted, exclude_border)
}

/// Scores restricted to spikes visible in a given number of views.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct BinScore {
    pub label: String,
    pub min_views: usize,
    pub max_views: usize,
    pub spike_count: usize,
    pub score: PairingScore,
}

/// Break the pairing score down by per-spike view counts (detections of the
/// spike among the evaluated set). Bins may overlap, e.g. 10-12 and 12-12.
pub fn view_count_breakdown(
    scene: &Scene,
    predicted: &ClusterSet,
    bins: &[(usize, usize)],
    exclude_border: bool,
) -> Vec<BinScore> {
    let evaluated = evaluated_indices(&scene.detections, exclude_border);
    let mut views_per_spike = vec![0usize; scene.spikes.len()];
    for &i in &evaluated {
        views_per_spike[scene.detections[i].spike_index] += 1;
    }
    bins.iter()
        .map(|&(lo, hi)| {
            let subset: Vec<usize> = evaluated
                .iter()
                .copied()
                .filter(|&i| {
                    let v = views_per_spike[scene.detections[i].spike_index];
                    v >= lo && v <= hi
                })
                .collect();
            let spike_count = views_per_spike.iter().filter(|&&v| v >= lo && v <= hi).count();
            BinScore {
                label: format!("{lo}-{hi}"),
                min_views: lo,
                max_views: hi,
                spike_count,
                score: score_detection_set(&scene.detections, &subset, predicted),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pairing::{build_graph, consensus_clusters, PairingParams};

    fn small_config(seed: u64) -> SceneConfig {
        SceneConfig { n_spikes: 20, seed, ..SceneConfig::default() }
    }

    #[test]
    fn rig_has_twelve_valid_cameras() {
        let rig = standard_rig();
        assert_eq!(rig.len(), 12);
        // All cameras see the plot center.
        for cam in &rig {
            let p = cam.project(&Vector3::zeros()).unwrap();
            assert!((p.x - 2048.0).abs() < 1e-6 && (p.y - 1500.0).abs() < 1e-6);
        }
    }

    #[test]
    fn volumes_match_the_analytic_formula() {
        let scene = generate_scene(&small_config(1), &standard_rig()).unwrap();
        for s in &scene.spikes {
            assert!(
                (s.volume - s.analytic_volume()).abs() < 1e-9,
                "stored volume {} vs analytic {}",
                s.volume,
                s.analytic_volume()
            );
        }
    }

    #[test]
    fn volume_statistics_match_the_configured_distribution() {
        let config = SceneConfig {
            n_spikes: 1000,
            extent: (6000.0, 6000.0),
            min_spacing: 30.0,
            seed: 2,
            ..SceneConfig::default()
        };
        let scene = generate_scene(&config, &standard_rig()).unwrap();
        let n = scene.spikes.len() as f64;
        let mean = scene.spikes.iter().map(|s| s.volume).sum::<f64>() / n;
        let var = scene.spikes.iter().map(|s| (s.volume - mean).powi(2)).sum::<f64>() / n;
        let sd = var.sqrt();
        assert!((mean - 4649.06).abs() < 0.05 * 4649.06, "mean {mean}");
        // 3-sigma truncation shrinks the sd by ~2.7%.
        assert!((sd - 1234.26).abs() < 0.05 * 1234.26, "sd {sd}");
        let lo = 4649.06 - 3.0 * 1234.26 - 1e-9;
        let hi = 4649.06 + 3.0 * 1234.26 + 1e-9;
        assert!(scene.spikes.iter().all(|s| s.volume >= lo && s.volume <= hi));
    }

    #[test]
    fn spacing_is_respected_and_small_extents_fail() {
        let scene = generate_scene(&small_config(3), &standard_rig()).unwrap();
        for (i, a) in scene.spikes.iter().enumerate() {
            for b in &scene.spikes[i + 1..] {
                assert!((a.center - b.center).norm() >= 50.0);
            }
        }
        let cramped = SceneConfig {
            n_spikes: 200,
            extent: (100.0, 100.0),
            min_spacing: 50.0,
            ..SceneConfig::default()
        };
        assert!(matches!(
            generate_scene(&cramped, &standard_rig()),
            Err(SceneError::ExtentTooSmall { .. })
        ));
    }

    #[test]
    fn upright_and_random_poses_have_the_expected_tilt_statistics() {
        let upright = generate_scene(
            &SceneConfig {
                n_spikes: 300,
                extent: (4000.0, 4000.0),
                min_spacing: 30.0,
                seed: 4,
                ..SceneConfig::default()
            },
            &standard_rig(),
        )
        .unwrap();
        // Tilt of the long (body z) axis against world z.
        let mean_tilt: f64 = upright
            .spikes
            .iter()
            .map(|s| {
                let axis = s.orientation * Vector3::z();
                axis.z.abs().clamp(-1.0, 1.0).acos().to_degrees()
            })
            .sum::<f64>()
            / upright.spikes.len() as f64;
        // |N(0, 15 deg)| has mean sigma*sqrt(2/pi) ~ 12 deg.
        assert!((5.0..20.0).contains(&mean_tilt), "upright mean tilt {mean_tilt}");

        let random = generate_scene(
            &SceneConfig {
                n_spikes: 300,
                extent: (4000.0, 4000.0),
                min_spacing: 30.0,
                pose: PoseMode::Random,
                seed: 5,
                ..SceneConfig::default()
            },
            &standard_rig(),
        )
        .unwrap();
        // For uniform orientations |cos(tilt)| is uniform on [0,1]: mean 1/2.
        let mean_cos: f64 = random
            .spikes
            .iter()
            .map(|s| (s.orientation * Vector3::z()).z.abs())
            .sum::<f64>()
            / random.spikes.len() as f64;
        assert!((0.42..0.58).contains(&mean_cos), "random pose mean |cos| {mean_cos}");
    }

    #[test]
    fn silhouette_boxes_contain_sampled_surface_points_and_are_tight() {
        let scene = generate_scene(&small_config(6), &standard_rig()).unwrap();
        let mut rng = rng::rng_from(99);
        for det in scene.detections.iter().filter(|d| !d.border) {
            let spike = &scene.spikes[det.spike_index];
            let cam = scene.cameras.iter().find(|c| c.id == det.bbox.image_id).unwrap();
            let (mut lo_x, mut hi_x) = (f64::INFINITY, f64::NEG_INFINITY);
            let (mut lo_y, mut hi_y) = (f64::INFINITY, f64::NEG_INFINITY);
            for _ in 0..1000 {
                let u = Vector3::new(
                    rng::normal(&mut rng),
                    rng::normal(&mut rng),
                    rng::normal(&mut rng),
                )
                .normalize();
                let body = Vector3::new(
                    spike.semi_axes.x * u.x,
                    spike.semi_axes.y * u.y,
                    spike.semi_axes.z * u.z,
                );
                let world = spike.center + spike.orientation * body;
                let p = cam.project(&world).unwrap();
                assert!(
                    p.x >= det.bbox.min_x - 1e-6
                        && p.x <= det.bbox.max_x + 1e-6
                        && p.y >= det.bbox.min_y - 1e-6
                        && p.y <= det.bbox.max_y + 1e-6,
                    "surface point projects outside the silhouette box: {p:?} vs {:?}",
                    det.bbox
                );
                lo_x = lo_x.min(p.x);
                hi_x = hi_x.max(p.x);
                lo_y = lo_y.min(p.y);
                hi_y = hi_y.max(p.y);
            }
            // Tightness: sampled extremes reach close to every box edge.
            let slack_x = 0.05 * det.bbox.width();
            let slack_y = 0.05 * det.bbox.height();
            assert!(lo_x - det.bbox.min_x < slack_x, "loose left edge");
            assert!(det.bbox.max_x - hi_x < slack_x, "loose right edge");
            assert!(lo_y - det.bbox.min_y < slack_y, "loose top edge");
            assert!(det.bbox.max_y - hi_y < slack_y, "loose bottom edge");
        }
    }

    #[test]
    fn border_detections_are_flagged() {
        let scene = generate_scene(
            &SceneConfig { n_spikes: 150, seed: 7, ..SceneConfig::default() },
            &standard_rig(),
        )
        .unwrap();
        let border = scene.detections.iter().filter(|d| d.border).count();
        assert!(border > 0, "a 1.2 x 0.9 m plot must clip some silhouettes");
        for det in &scene.detections {
            let cam = scene.cameras.iter().find(|c| c.id == det.bbox.image_id).unwrap();
            let inside = det.bbox.min_x >= 0.0
                && det.bbox.min_y >= 0.0
                && det.bbox.max_x <= cam.width
                && det.bbox.max_y <= cam.height;
            assert!(inside, "clamped box must lie within image bounds");
            let touches = det.bbox.min_x == 0.0
                || det.bbox.min_y == 0.0
                || det.bbox.max_x == cam.width
                || det.bbox.max_y == cam.height;
            assert_eq!(det.border, touches, "border flag must match edge contact");
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_scene(&small_config(11), &standard_rig()).unwrap();
        let b = generate_scene(&small_config(11), &standard_rig()).unwrap();
        assert_eq!(a.spikes.len(), b.spikes.len());
        for (x, y) in a.spikes.iter().zip(&b.spikes) {
            assert_eq!(x.volume.to_bits(), y.volume.to_bits());
            assert_eq!(x.center.x.to_bits(), y.center.x.to_bits());
        }
        assert_eq!(a.detections.len(), b.detections.len());
        for (x, y) in a.detections.iter().zip(&b.detections) {
            assert_eq!(x.bbox, y.bbox);
            assert_eq!(x.border, y.border);
        }
    }

    /// Exhaustive hand enumeration: detections d1, d2 of one spike correctly
    /// clustered (1 true pair) plus a wrong merge of two single-view spikes
    /// (1 false pair) gives precision 1/2 at recall 1.
    #[test]
    fn score_pairing_counts_hand_built_cases() {
        let rig = standard_rig();
        let config = SceneConfig { n_spikes: 3, seed: 12, ..SceneConfig::default() };
        let mut scene = generate_scene(&config, &rig).unwrap();
        // Rebuild detections by hand for full control: d1, d2 view spike 0;
        // d3 views spike 1; d4 views spike 2.
        let mk = |image: &str, id: &str, spike_index: usize| SceneDetection {
            bbox: BoundingBox::new(image, id, 0.0, 0.0, 10.0, 10.0).unwrap(),
            spike_index,
            border: false,
        };
        scene.detections = vec![
            mk("cam00", "d1", 0),
            mk("cam01", "d2", 0),
            mk("cam02", "d3", 1),
            mk("cam03", "d4", 2),
        ];
        let predicted = ClusterSet {
            clusters: vec![
                vec!["d1".into(), "d2".into()],
                vec!["d3".into(), "d4".into()],
            ],
            run_count: 3,
            agreement_threshold: 2,
        };
        let score = score_pairing(&scene, &predicted, false);
        assert_eq!((score.true_pairs, score.false_pairs, score.missed_pairs), (1, 1, 0));
        assert_eq!(score.precision, 0.5);
        assert_eq!(score.recall, 1.0);
        assert!(!score.vacuous_precision);

        // All singletons: no predicted pairs at all.
        let singletons = ClusterSet {
            clusters: vec![
                vec!["d1".into()],
                vec!["d2".into()],
                vec!["d3".into()],
                vec!["d4".into()],
            ],
            run_count: 3,
            agreement_threshold: 2,
        };
        let score = score_pairing(&scene, &singletons, false);
        assert_eq!(score.recall, 0.0);
        assert_eq!(score.precision, 1.0);
        assert!(score.vacuous_precision, "precision must be flagged vacuous");
    }

    #[test]
    fn view_count_bins_partition_ground_truth_pairs() {
        let scene = generate_scene(
            &SceneConfig { n_spikes: 60, seed: 13, ..SceneConfig::default() },
            &standard_rig(),
        )
        .unwrap();
        let graph =
            build_graph(&scene.detection_boxes(), &scene.cameras, &PairingParams::default(), 13)
                .unwrap();
        let predicted = consensus_clusters(&graph, 3, 2, 13);
        let bins = view_count_breakdown(&scene, &predicted, &[(6, 9), (10, 12), (12, 12)], false);
        assert_eq!(bins.len(), 3);
        // A 12-view spike contributes to both the 10-12 and the 12 bin.
        assert!(bins[1].spike_count >= bins[2].spike_count);
        // Disjoint bins partition ground-truth pairs with >= 6 views.
        let whole = view_count_breakdown(&scene, &predicted, &[(6, 12)], false);
        let parts = bins[0].score.true_pairs
            + bins[0].score.missed_pairs
            + bins[1].score.true_pairs
            + bins[1].score.missed_pairs;
        assert_eq!(
            whole[0].score.true_pairs + whole[0].score.missed_pairs,
            parts,
            "6-9 and 10-12 must partition the >=6-view ground-truth pairs"
        );
    }

    #[test]
    fn pairing_on_a_small_scene_recovers_most_spikes() {
        let scene = generate_scene(&small_config(14), &standard_rig()).unwrap();
        let graph =
            build_graph(&scene.detection_boxes(), &scene.cameras, &PairingParams::default(), 14)
                .unwrap();
        let predicted = consensus_clusters(&graph, 3, 2, 14);
        let score = score_pairing(&scene, &predicted, true);
        assert!(score.precision >= 0.9, "precision {}", score.precision);
        assert!(score.recall >= 0.85, "recall {}", score.recall);
    }
}
