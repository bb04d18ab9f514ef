//! Synthetic training corpus for the volume models.
//!
//! Each spike gets: an analytic ground-truth volume; a complete "scan"
//! cloud (ellipsoid surface sample, voxelized and capped); a degraded
//! "field" cloud (top-quantile partial view with reconstruction jitter,
//! then the same normalization); precomputed distance-histogram features
//! for both; and per-view feature vectors derived from the projected
//! silhouette (log box statistics plus seeded noise), standing in for image
//! backbone embeddings.
//!
//! Spikes are grouped into families of four; splitting is by family
//! (0.7 / 0.1 / 0.2) so no family appears in more than one split.

use std::collections::BTreeSet;

use nalgebra::Vector3;
use ndarray::Array2;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use super::LearnError;
use crate::cloud::{
    distance_histograms, sample_ellipsoid_surface, simulate_partial, subsample,
    voxel_downsample, PointCloud,
};
use crate::rng;
use crate::scene::{sample_spike, silhouette_box, standard_rig, PoseMode};

/// Histogram bins for the teacher (complete scans).
pub const TEACHER_BINS: usize = 30;
/// Histogram bins for the student (partial field clouds).
pub const STUDENT_BINS: usize = 10;
/// Distance range covered by the regular bins, mm.
pub const HISTOGRAM_RANGE_MM: f64 = 60.0;
/// Width of one per-view feature vector.
pub const VIEW_FEATURE_DIM: usize = 8;
/// Raw surface samples per spike before normalization.
pub const SCAN_SURFACE_POINTS: usize = 30_000;
/// Normalization grid pitch, mm.
pub const VOXEL_SIZE_MM: f64 = 2.0;
/// Point budget after normalization.
pub const CLOUD_POINT_BUDGET: usize = 1000;
/// Spikes per family (the genotype analog).
pub const SPIKES_PER_FAMILY: usize = 4;
/// Standard deviation of the field reconstruction jitter, mm.
pub const FIELD_JITTER_MM: f64 = 0.75;

/// One spike with every modality the learners consume.
#[derive(Debug, Clone)]
pub struct SpikeRecord {
    pub id: u64,
    pub family: u32,
    /// Ground-truth volume, mm^3.
    pub volume: f64,
    pub scan_cloud: PointCloud,
    pub field_cloud: PointCloud,
    /// `(points, TEACHER_BINS + 1)` distance histograms of the scan cloud.
    pub scan_features: Array2<f64>,
    /// `(points, STUDENT_BINS + 1)` distance histograms of the field cloud.
    pub field_features: Array2<f64>,
    /// `(views, VIEW_FEATURE_DIM)` silhouette-derived view features.
    pub views: Array2<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub spikes: Vec<SpikeRecord>,
    pub split: SplitIndices,
    pub views_per_spike: usize,
}

impl Dataset {
    pub fn train_families(&self) -> BTreeSet<u32> {
        self.split.train.iter().map(|&i| self.spikes[i].family).collect()
    }

    pub fn volumes(&self, indices: &[usize]) -> Vec<f64> {
        indices.iter().map(|&i| self.spikes[i].volume).collect()
    }

    /// Stable hash of every float in the dataset, for reproducibility
    /// checks and manifests.
    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update((self.spikes.len() as u64).to_le_bytes());
        hasher.update((self.views_per_spike as u64).to_le_bytes());
        for spike in &self.spikes {
            hasher.update(spike.id.to_le_bytes());
            hasher.update(u64::from(spike.family).to_le_bytes());
            hasher.update(spike.volume.to_le_bytes());
            for p in &spike.scan_cloud.points {
                for c in 0..3 {
                    hasher.update(p[c].to_le_bytes());
                }
            }
            for p in &spike.field_cloud.points {
                for c in 0..3 {
                    hasher.update(p[c].to_le_bytes());
                }
            }
            for v in spike.scan_features.iter() {
                hasher.update(v.to_le_bytes());
            }
            for v in spike.field_features.iter() {
                hasher.update(v.to_le_bytes());
            }
            for v in spike.views.iter() {
                hasher.update(v.to_le_bytes());
            }
        }
        let digest = hasher.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Build one spike record from its dedicated seed.
fn build_record(id: u64, family: u32, views_per_spike: usize, seed: u64) -> Result<SpikeRecord, LearnError> {
    let mut rng = rng::rng_from(seed);
    use rand::Rng;
    let center = Vector3::new(
        rng.random_range(-200.0..200.0),
        rng.random_range(-200.0..200.0),
        rng.random_range(-40.0..40.0),
    );
    let spike = sample_spike(id, center, PoseMode::Random, 4649.06, 1234.26, &mut rng);

    // Complete scan: surface sample -> world pose -> voxel grid -> cap.
    let surface = sample_ellipsoid_surface(
        spike.semi_axes,
        SCAN_SURFACE_POINTS,
        rng::derive_indexed(seed, "surface", 0),
    )?;
    let world = crate::cloud::rigid_transform(&surface, &spike.orientation, &spike.center)?;
    let scan_cloud = subsample(
        &voxel_downsample(&world, VOXEL_SIZE_MM)?,
        CLOUD_POINT_BUDGET,
        rng::derive_indexed(seed, "scan-subsample", 0),
    )?;

    // Field reconstruction: nadir-visible top quantile, jitter, then the
    // same normalization.
    let keep_fraction = rng.random_range(0.35..0.6);
    let mut field = simulate_partial(&world, Vector3::new(0.0, 0.0, 1.0), keep_fraction)?;
    let mut jitter_rng = rng::rng_from(rng::derive_indexed(seed, "field-jitter", 0));
    for p in &mut field.points {
        for c in 0..3 {
            p[c] += FIELD_JITTER_MM * rng::normal(&mut jitter_rng);
        }
    }
    let field_cloud = subsample(
        &voxel_downsample(&field, VOXEL_SIZE_MM)?,
        CLOUD_POINT_BUDGET,
        rng::derive_indexed(seed, "field-subsample", 0),
    )?;

    let scan_features =
        distance_histograms(&scan_cloud, TEACHER_BINS, HISTOGRAM_RANGE_MM)?.per_point;
    let field_features =
        distance_histograms(&field_cloud, STUDENT_BINS, HISTOGRAM_RANGE_MM)?.per_point;

    // Per-view silhouette statistics with measurement noise.
    let cameras = standard_rig();
    let mut views = Array2::zeros((views_per_spike, VIEW_FEATURE_DIM));
    for (j, camera) in cameras.iter().take(views_per_spike).enumerate() {
        let Some((min_x, min_y, max_x, max_y)) = silhouette_box(&spike, camera) else {
            return Err(LearnError::Dataset(format!(
                "spike {id} has no silhouette in {}",
                camera.id
            )));
        };
        let width = (max_x - min_x) * (1.0 + 0.05 * rng::normal(&mut rng)).max(0.01);
        let height = (max_y - min_y) * (1.0 + 0.05 * rng::normal(&mut rng)).max(0.01);
        let distance = (camera.center - spike.center).norm();
        let row = [
            width.ln(),
            height.ln(),
            (width * height).ln(),
            (width / height).ln(),
            (0.5 * (width + height)).ln(),
            distance.ln(),
            rng::normal(&mut rng),
            rng::normal(&mut rng),
        ];
        for (c, v) in row.into_iter().enumerate() {
            views[(j, c)] = v;
        }
    }

    Ok(SpikeRecord {
        id,
        family,
        volume: spike.volume,
        scan_cloud,
        field_cloud,
        scan_features,
        field_features,
        views,
    })
}

/// Family-level split: shuffle families with a derived stream, then allocate
/// roughly 0.1 to validation, 0.2 to test, and the remainder to training
/// (each at least one family).
fn split_families(n_spikes: usize, families: &[u32], seed: u64) -> Result<SplitIndices, LearnError> {
    let unique: BTreeSet<u32> = families.iter().copied().collect();
    let mut family_list: Vec<u32> = unique.into_iter().collect();
    if family_list.len() < 3 {
        return Err(LearnError::InvalidConfig(format!(
            "need at least 3 spike families for a train/val/test split, got {} ({} spikes)",
            family_list.len(),
            n_spikes
        )));
    }
    use rand::seq::SliceRandom;
    let mut rng = rng::rng_from(rng::derive(seed, "family-split"));
    family_list.shuffle(&mut rng);
    let f = family_list.len();
    let n_val = ((0.1 * f as f64).round() as usize).max(1);
    let n_test = ((0.2 * f as f64).round() as usize).max(1);
    if n_val + n_test >= f {
        return Err(LearnError::InvalidConfig(format!(
            "split leaves no training families ({f} total)"
        )));
    }
    let val: BTreeSet<u32> = family_list[..n_val].iter().copied().collect();
    let test: BTreeSet<u32> = family_list[n_val..n_val + n_test].iter().copied().collect();
    let mut split = SplitIndices::default();
    for (i, fam) in families.iter().enumerate() {
        if val.contains(fam) {
            split.val.push(i);
        } else if test.contains(fam) {
            split.test.push(i);
        } else {
            split.train.push(i);
        }
    }
    Ok(split)
}

/// Generate the labeled corpus. `views_per_spike` selects a prefix of the
/// standard 12-camera rig.
pub fn make_synthetic_dataset(
    n_spikes: usize,
    views_per_spike: usize,
    seed: u64,
) -> Result<Dataset, LearnError> {
    if n_spikes == 0 {
        return Err(LearnError::InvalidConfig("n_spikes must be positive".into()));
    }
    let rig_size = 12;
    if views_per_spike == 0 || views_per_spike > rig_size {
        return Err(LearnError::InvalidConfig(format!(
            "views_per_spike must be in 1..={rig_size}, got {views_per_spike}"
        )));
    }
    let families: Vec<u32> = (0..n_spikes).map(|i| (i / SPIKES_PER_FAMILY) as u32).collect();
    let spikes: Vec<SpikeRecord> = (0..n_spikes)
        .into_par_iter()
        .map(|i| {
            build_record(
                i as u64,
                families[i],
                views_per_spike,
                rng::derive_indexed(seed, "dataset-spike", i as u64),
            )
        })
        .collect::<Result<_, _>>()?;
    let split = split_families(n_spikes, &families, seed)?;
    Ok(Dataset { spikes, split, views_per_spike })
}

/// Generate unlabeled spikes for pseudo-label distillation, drawn from
/// training-split families only. Their true volumes are carried for
/// diagnostics but must not be used as targets.
pub fn make_unlabeled_spikes(
    dataset: &Dataset,
    n: usize,
    seed: u64,
) -> Result<Vec<SpikeRecord>, LearnError> {
    let train_families: Vec<u32> = dataset.train_families().into_iter().collect();
    if train_families.is_empty() {
        return Err(LearnError::InvalidConfig("dataset has no training families".into()));
    }
    use rand::Rng;
    let mut family_rng = rng::rng_from(rng::derive(seed, "unlabeled-families"));
    let base_id = dataset.spikes.len() as u64;
    (0..n)
        .map(|j| {
            let family = train_families[family_rng.random_range(0..train_families.len())];
            build_record(
                base_id + j as u64,
                family,
                dataset.views_per_spike,
                rng::derive_indexed(seed, "dataset-unlabeled", j as u64),
            )
        })
        .collect()
}
