//! Point-cloud utilities and rigid-invariant distance histograms.
//!
//! The featurization used by the volume models is a per-point histogram of
//! distances to all other points of the cloud: bins of width `range / bins`
//! cover `[0, range)` plus one overflow bin, and counts are normalized by
//! the cloud size. Distances are preserved by rotations and translations, so
//! the features are rigid-invariant by construction.

use std::collections::BTreeMap;

use nalgebra::{Matrix3, Vector3};
use ndarray::Array2;
use rand::Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::rng;

#[derive(Debug, Error)]
pub enum CloudError {
    #[error("point cloud is empty")]
    Empty,
    #[error("operation needs at least {need} points, got {got}")]
    TooFewPoints { need: usize, got: usize },
    #[error("rotation is not orthonormal with determinant +1 (error {0:.3e})")]
    NonOrthonormalRotation(f64),
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
}

/// Provenance of a cloud, carried through the processing pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum CloudSource {
    /// Complete digitization of an isolated spike.
    Scan,
    /// Partial reconstruction as recovered in the field.
    Field,
    /// Generated analytically.
    Synthetic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vector3<f64>>,
    pub source: CloudSource,
}

impl PointCloud {
    pub fn new(points: Vec<Vector3<f64>>, source: CloudSource) -> Self {
        Self { points, source }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn centroid(&self) -> Option<Vector3<f64>> {
        if self.points.is_empty() {
            return None;
        }
        Some(self.points.iter().sum::<Vector3<f64>>() / self.points.len() as f64)
    }
}

/// Per-point distance histograms.
#[derive(Debug, Clone, PartialEq)]
pub struct HistogramFeatures {
    /// One row per point, `bins + 1` columns (the last is the overflow bin).
    pub per_point: Array2<f64>,
    pub bins: usize,
    /// Distance covered by the regular bins, in mm.
    pub range: f64,
}

/// Reduce a cloud to one centroid per occupied voxel of an axis-aligned grid
/// (`floor(coordinate / voxel_size)` indexing). Output is ordered by voxel
/// index, so the result is deterministic.
pub fn voxel_downsample(cloud: &PointCloud, voxel_size: f64) -> Result<PointCloud, CloudError> {
    if cloud.is_empty() {
        return Err(CloudError::Empty);
    }
    if !(voxel_size > 0.0) {
        return Err(CloudError::InvalidParam(format!("voxel_size must be > 0, got {voxel_size}")));
    }
    let mut grid: BTreeMap<(i64, i64, i64), (Vector3<f64>, usize)> = BTreeMap::new();
    for p in &cloud.points {
        let key = (
            (p.x / voxel_size).floor() as i64,
            (p.y / voxel_size).floor() as i64,
            (p.z / voxel_size).floor() as i64,
        );
        let slot = grid.entry(key).or_insert((Vector3::zeros(), 0));
        slot.0 += p;
        slot.1 += 1;
    }
    let points = grid.values().map(|(sum, n)| sum / *n as f64).collect();
    Ok(PointCloud::new(points, cloud.source))
}

/// Uniform subsample without replacement; clouds at or under the target size
/// pass through unchanged. Selected points keep their input order.
pub fn subsample(cloud: &PointCloud, n: usize, seed: u64) -> Result<PointCloud, CloudError> {
    if n == 0 {
        return Err(CloudError::InvalidParam("subsample target must be positive".into()));
    }
    if cloud.len() <= n {
        return Ok(cloud.clone());
    }
    let mut rng = rng::rng_from(rng::derive(seed, "subsample"));
    // Partial Fisher-Yates over the index set.
    let mut indices: Vec<usize> = (0..cloud.len()).collect();
    for i in 0..n {
        let j = rng.random_range(i..indices.len());
        indices.swap(i, j);
    }
    let mut chosen = indices[..n].to_vec();
    chosen.sort_unstable();
    Ok(PointCloud::new(chosen.into_iter().map(|i| cloud.points[i]).collect(), cloud.source))
}

/// Area-uniform sample of an origin-centered, axis-aligned ellipsoid surface
/// with semi-axes `(a, b, c)`.
///
/// Sphere directions are accepted with probability proportional to the local
/// area stretch of the sphere-to-ellipsoid map, which corrects the density
/// exactly.
pub fn sample_ellipsoid_surface(
    semi_axes: Vector3<f64>,
    n: usize,
    seed: u64,
) -> Result<PointCloud, CloudError> {
    let (a, b, c) = (semi_axes.x, semi_axes.y, semi_axes.z);
    if !(a > 0.0 && b > 0.0 && c > 0.0) {
        return Err(CloudError::InvalidParam(format!("semi-axes must be positive, got {semi_axes:?}")));
    }
    if n == 0 {
        return Err(CloudError::InvalidParam("sample count must be positive".into()));
    }
    let mut rng = rng::rng_from(rng::derive(seed, "ellipsoid-surface"));
    let stretch_max = 1.0 / a.min(b).min(c);
    let mut points = Vec::with_capacity(n);
    while points.len() < n {
        let u = Vector3::new(rng::normal(&mut rng), rng::normal(&mut rng), rng::normal(&mut rng));
        let norm = u.norm();
        if norm < 1e-12 {
            continue;
        }
        let u = u / norm;
        // Area stretch of u -> (a ux, b uy, c uz), up to the common abc factor.
        let stretch = ((u.x / a).powi(2) + (u.y / b).powi(2) + (u.z / c).powi(2)).sqrt();
        if rng.random_range(0.0..stretch_max) < stretch {
            points.push(Vector3::new(a * u.x, b * u.y, c * u.z));
        }
    }
    Ok(PointCloud::new(points, CloudSource::Synthetic))
}

/// Keep the fraction of points nearest the viewer: those whose projection
/// onto `view_direction` lies in the top `keep_fraction` quantile. The count
/// kept is `round(keep_fraction * n)` (at least 1); `keep_fraction = 1`
/// returns the cloud unchanged. Points keep their input order.
pub fn simulate_partial(
    cloud: &PointCloud,
    view_direction: Vector3<f64>,
    keep_fraction: f64,
) -> Result<PointCloud, CloudError> {
    if cloud.is_empty() {
        return Err(CloudError::Empty);
    }
    if !(keep_fraction > 0.0 && keep_fraction <= 1.0) {
        return Err(CloudError::InvalidParam(format!(
            "keep_fraction must be in (0, 1], got {keep_fraction}"
        )));
    }
    if view_direction.norm() == 0.0 {
        return Err(CloudError::InvalidParam("view direction must be nonzero".into()));
    }
    if keep_fraction == 1.0 {
        return Ok(PointCloud::new(cloud.points.clone(), CloudSource::Field));
    }
    let dir = view_direction.normalize();
    let keep = ((keep_fraction * cloud.len() as f64).round() as usize).clamp(1, cloud.len());
    let mut order: Vec<usize> = (0..cloud.len()).collect();
    // Descending by projection; ties resolved by input order for determinism.
    order.sort_by(|&i, &j| {
        let (pi, pj) = (cloud.points[i].dot(&dir), cloud.points[j].dot(&dir));
        pj.partial_cmp(&pi).unwrap().then(i.cmp(&j))
    });
    let mut chosen = order[..keep].to_vec();
    chosen.sort_unstable();
    Ok(PointCloud::new(
        chosen.into_iter().map(|i| cloud.points[i]).collect(),
        CloudSource::Field,
    ))
}

/// Apply a rigid transform `p -> R p + t`, validating `R` is a rotation.
pub fn rigid_transform(
    cloud: &PointCloud,
    rotation: &Matrix3<f64>,
    translation: &Vector3<f64>,
) -> Result<PointCloud, CloudError> {
    let gram_err = (rotation.transpose() * rotation - Matrix3::identity()).norm();
    let det_err = (rotation.determinant() - 1.0).abs();
    if gram_err > 1e-9 || det_err > 1e-9 {
        return Err(CloudError::NonOrthonormalRotation(gram_err.max(det_err)));
    }
    Ok(PointCloud::new(
        cloud.points.iter().map(|p| rotation * p + translation).collect(),
        cloud.source,
    ))
}

/// Per-point histograms of distances to all other points.
///
/// Bin `i < bins` covers `[i w/bins, (i+1) w/bins)`; the final bin counts
/// `d >= w`. Counts are divided by the cloud size, so each row sums to
/// `(n - 1) / n`. Rows are computed in parallel; output order matches input.
pub fn distance_histograms(
    cloud: &PointCloud,
    bins: usize,
    range: f64,
) -> Result<HistogramFeatures, CloudError> {
    if bins == 0 {
        return Err(CloudError::InvalidParam("bins must be positive".into()));
    }
    if !(range > 0.0) {
        return Err(CloudError::InvalidParam(format!("range must be > 0, got {range}")));
    }
    let n = cloud.len();
    if n < 2 {
        return Err(CloudError::TooFewPoints { need: 2, got: n });
    }
    let points = &cloud.points;
    let inv_width = bins as f64 / range;
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|r| {
            let mut counts = vec![0u32; bins + 1];
            let pr = points[r];
            for (q, pq) in points.iter().enumerate() {
                if q == r {
                    continue;
                }
                let d = (pr - pq).norm();
                let idx = if d < range {
                    // Guard the open upper edge against rounding up to `bins`.
                    ((d * inv_width) as usize).min(bins - 1)
                } else {
                    bins
                };
                counts[idx] += 1;
            }
            counts.iter().map(|&c| c as f64 / n as f64).collect()
        })
        .collect();
    let mut per_point = Array2::zeros((n, bins + 1));
    for (r, row) in rows.into_iter().enumerate() {
        for (c, v) in row.into_iter().enumerate() {
            per_point[(r, c)] = v;
        }
    }
    Ok(HistogramFeatures { per_point, bins, range })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Rotation3;
    use rand::Rng;

    fn random_cloud(n: usize, seed: u64, extent: f64) -> PointCloud {
        let mut rng = rng::rng_from(seed);
        PointCloud::new(
            (0..n)
                .map(|_| {
                    Vector3::new(
                        rng.random_range(-extent..extent),
                        rng.random_range(-extent..extent),
                        rng.random_range(-extent..extent),
                    )
                })
                .collect(),
            CloudSource::Synthetic,
        )
    }

    #[test]
    fn voxel_downsample_matches_a_brute_force_grid() {
        let cloud = random_cloud(1000, 1, 10.0);
        let voxel = voxel_downsample(&cloud, 2.0).unwrap();
        // Oracle: group indices by floor key independently.
        let mut groups: BTreeMap<(i64, i64, i64), Vec<usize>> = BTreeMap::new();
        for (i, p) in cloud.points.iter().enumerate() {
            let key = (
                (p.x / 2.0).floor() as i64,
                (p.y / 2.0).floor() as i64,
                (p.z / 2.0).floor() as i64,
            );
            groups.entry(key).or_default().push(i);
        }
        assert_eq!(voxel.len(), groups.len());
        for (centroid, members) in voxel.points.iter().zip(groups.values()) {
            let mean = members.iter().map(|&i| cloud.points[i]).sum::<Vector3<f64>>()
                / members.len() as f64;
            assert!((centroid - mean).norm() < 1e-9);
        }
    }

    #[test]
    fn voxel_downsample_rejects_bad_input() {
        let empty = PointCloud::new(vec![], CloudSource::Synthetic);
        assert!(matches!(voxel_downsample(&empty, 1.0), Err(CloudError::Empty)));
        let cloud = random_cloud(5, 2, 1.0);
        assert!(matches!(voxel_downsample(&cloud, 0.0), Err(CloudError::InvalidParam(_))));
    }

    #[test]
    fn subsample_is_a_uniform_draw_without_replacement() {
        let cloud = random_cloud(100, 3, 5.0);
        let sub = subsample(&cloud, 40, 7).unwrap();
        assert_eq!(sub.len(), 40);
        // Without replacement: all points distinct members of the original.
        for (i, p) in sub.points.iter().enumerate() {
            assert!(cloud.points.contains(p));
            for q in &sub.points[i + 1..] {
                assert_ne!(p, q);
            }
        }
        assert_eq!(sub, subsample(&cloud, 40, 7).unwrap(), "same seed, same draw");
        let identity = subsample(&cloud, 100, 7).unwrap();
        assert_eq!(identity.points, cloud.points, "n >= len must be the identity");
    }

    #[test]
    fn ellipsoid_samples_lie_on_the_surface() {
        let axes = Vector3::new(6.0, 6.0, 34.0);
        let cloud = sample_ellipsoid_surface(axes, 5000, 11).unwrap();
        assert_eq!(cloud.len(), 5000);
        for p in &cloud.points {
            let v = (p.x / axes.x).powi(2) + (p.y / axes.y).powi(2) + (p.z / axes.z).powi(2);
            assert!((v - 1.0).abs() < 1e-9, "off-surface point: {v}");
        }
    }

    /// Band-counting oracle for area uniformity: compare sample counts in
    /// z-bands against band areas integrated numerically from the exact
    /// area element of the sphere-to-ellipsoid map.
    #[test]
    fn ellipsoid_sampling_is_area_uniform() {
        let axes = Vector3::new(2.0, 3.0, 10.0);
        let n = 40_000;
        let cloud = sample_ellipsoid_surface(axes, n, 13).unwrap();
        let bands = 8;
        // Observed: band index from the sphere-parameter polar angle.
        let mut observed = vec![0usize; bands];
        for p in &cloud.points {
            let uz = (p.z / axes.z).clamp(-1.0, 1.0);
            let band = (((uz + 1.0) / 2.0) * bands as f64) as usize;
            observed[band.min(bands - 1)] += 1;
        }
        // Expected: integrate the area element over each band on a fine grid.
        let (a, b, c) = (axes.x, axes.y, axes.z);
        let mut expected = vec![0f64; bands];
        let grid = 2000;
        for it in 0..grid {
            let theta = std::f64::consts::PI * (it as f64 + 0.5) / grid as f64;
            let uz = theta.cos();
            let band = ((((uz + 1.0) / 2.0) * bands as f64) as usize).min(bands - 1);
            for ip in 0..grid {
                let phi = std::f64::consts::TAU * (ip as f64 + 0.5) / grid as f64;
                let u = Vector3::new(theta.sin() * phi.cos(), theta.sin() * phi.sin(), uz);
                let stretch =
                    ((u.x / a).powi(2) + (u.y / b).powi(2) + (u.z / c).powi(2)).sqrt();
                expected[band] += stretch * theta.sin();
            }
        }
        let total: f64 = expected.iter().sum();
        for (band, (&obs, &exp)) in observed.iter().zip(&expected).enumerate() {
            let frac_exp = exp / total;
            let frac_obs = obs as f64 / n as f64;
            // Binomial noise: sigma ~ sqrt(p/n) < 0.25%; allow 5 sigma.
            let sigma = (frac_exp * (1.0 - frac_exp) / n as f64).sqrt();
            assert!(
                (frac_obs - frac_exp).abs() < 5.0 * sigma + 1e-4,
                "band {band}: observed {frac_obs:.4} expected {frac_exp:.4}"
            );
        }
    }

    #[test]
    fn partial_views_keep_the_top_quantile() {
        let cloud = random_cloud(101, 17, 20.0);
        let dir = Vector3::new(0.0, 0.0, 1.0);
        let partial = simulate_partial(&cloud, dir, 0.5).unwrap();
        assert_eq!(partial.len(), 51, "round(0.5 * 101)");
        assert_eq!(partial.source, CloudSource::Field);
        let min_kept =
            partial.points.iter().map(|p| p.z).fold(f64::INFINITY, f64::min);
        let dropped: Vec<&Vector3<f64>> =
            cloud.points.iter().filter(|p| !partial.points.contains(p)).collect();
        assert!(dropped.iter().all(|p| p.z <= min_kept), "kept set must be the top quantile");

        let identity = simulate_partial(&cloud, dir, 1.0).unwrap();
        assert_eq!(identity.points, cloud.points);
        assert!(simulate_partial(&cloud, dir, 0.0).is_err());
        assert!(simulate_partial(&cloud, Vector3::zeros(), 0.5).is_err());
    }

    #[test]
    fn rigid_transform_validates_and_preserves_distances() {
        let cloud = random_cloud(50, 19, 30.0);
        let r = Rotation3::from_euler_angles(0.3, -1.1, 2.4).into_inner();
        let t = Vector3::new(5.0, -7.0, 11.0);
        let moved = rigid_transform(&cloud, &r, &t).unwrap();
        for i in 0..cloud.len() {
            for j in (i + 1)..cloud.len() {
                let d0 = (cloud.points[i] - cloud.points[j]).norm();
                let d1 = (moved.points[i] - moved.points[j]).norm();
                assert!((d0 - d1).abs() < 1e-9);
            }
        }
        let scaled = r * 1.0001;
        assert!(matches!(
            rigid_transform(&cloud, &scaled, &t),
            Err(CloudError::NonOrthonormalRotation(_))
        ));
    }

    #[test]
    fn histogram_of_two_points_fills_one_bin() {
        // Two points 25 mm apart, 30 bins over 60 mm: bin floor(25/2) = 12.
        let cloud = PointCloud::new(
            vec![Vector3::zeros(), Vector3::new(25.0, 0.0, 0.0)],
            CloudSource::Synthetic,
        );
        let h = distance_histograms(&cloud, 30, 60.0).unwrap();
        assert_eq!(h.per_point.shape(), [2, 31]);
        for r in 0..2 {
            for c in 0..31 {
                let want = if c == 12 { 0.5 } else { 0.0 };
                assert_eq!(h.per_point[(r, c)], want, "row {r} col {c}");
            }
        }
    }

    #[test]
    fn histogram_overflow_counts_far_points() {
        let cloud = PointCloud::new(
            vec![Vector3::zeros(), Vector3::new(60.0, 0.0, 0.0), Vector3::new(200.0, 0.0, 0.0)],
            CloudSource::Synthetic,
        );
        let h = distance_histograms(&cloud, 10, 60.0).unwrap();
        // d = 60 lands exactly on the range edge: overflow by the half-open rule.
        assert_eq!(h.per_point[(0, 10)], 2.0 / 3.0);
        assert!(distance_histograms(&cloud, 0, 60.0).is_err());
        let single = PointCloud::new(vec![Vector3::zeros()], CloudSource::Synthetic);
        assert!(matches!(
            distance_histograms(&single, 10, 60.0),
            Err(CloudError::TooFewPoints { .. })
        ));
    }

    #[test]
    fn histogram_rows_sum_to_the_expected_mass() {
        let cloud = random_cloud(100, 23, 40.0);
        let h = distance_histograms(&cloud, 30, 60.0).unwrap();
        let expect = 99.0 / 100.0;
        for r in 0..100 {
            let sum: f64 = (0..31).map(|c| h.per_point[(r, c)]).sum();
            assert!((sum - expect).abs() < 1e-12, "row {r} sums to {sum}");
        }
    }

    #[test]
    fn histograms_are_rigid_invariant() {
        let cloud = random_cloud(300, 29, 25.0);
        let h0 = distance_histograms(&cloud, 30, 60.0).unwrap();
        let mut rng = rng::rng_from(31);
        for _ in 0..20 {
            let r = Rotation3::from_euler_angles(
                rng.random_range(-3.0..3.0),
                rng.random_range(-1.5..1.5),
                rng.random_range(-3.0..3.0),
            )
            .into_inner();
            let t = Vector3::new(
                rng.random_range(-100.0..100.0),
                rng.random_range(-100.0..100.0),
                rng.random_range(-100.0..100.0),
            );
            let moved = rigid_transform(&cloud, &r, &t).unwrap();
            let h1 = distance_histograms(&moved, 30, 60.0).unwrap();
            let max_diff = (&h1.per_point - &h0.per_point)
                .iter()
                .fold(0f64, |m, v| m.max(v.abs()));
            assert!(max_diff < 1e-9, "histograms moved by {max_diff:.3e}");
        }
    }

    #[test]
    fn voxel_downsample_is_idempotent() {
        for seed in 0..100 {
            let cloud = random_cloud(200, 1000 + seed, 30.0);
            let once = voxel_downsample(&cloud, 2.0).unwrap();
            let twice = voxel_downsample(&once, 2.0).unwrap();
            assert_eq!(once.points.len(), twice.points.len(), "seed {seed}");
            // Centroids of singleton-occupied voxels stay in their voxel, so a
            // second pass leaves every point untouched.
            for (a, b) in once.points.iter().zip(&twice.points) {
                assert!((a - b).norm() < 1e-9, "seed {seed}: voxel centroid moved");
            }
        }
    }

    #[test]
    fn scaling_changes_histograms() {
        let cloud = random_cloud(200, 47, 25.0);
        let h0 = distance_histograms(&cloud, 30, 60.0).unwrap();
        let doubled = PointCloud::new(
            cloud.points.iter().map(|p| p * 2.0).collect(),
            CloudSource::Synthetic,
        );
        let h1 = distance_histograms(&doubled, 30, 60.0).unwrap();
        let max_diff = (&h1.per_point - &h0.per_point)
            .iter()
            .fold(0f64, |m, v| m.max(v.abs()));
        assert!(
            max_diff > 1e-3,
            "scaling by 2 must change the distance distribution, diff {max_diff:.3e}"
        );
    }

    #[test]
    fn histogram_rows_are_permutation_equivariant() {
        let cloud = random_cloud(120, 53, 25.0);
        let h0 = distance_histograms(&cloud, 20, 60.0).unwrap();
        // A fixed permutation: reverse point order.
        let reversed =
            PointCloud::new(cloud.points.iter().rev().cloned().collect(), CloudSource::Synthetic);
        let h1 = distance_histograms(&reversed, 20, 60.0).unwrap();
        let n = cloud.points.len();
        for i in 0..n {
            let a = h0.per_point.row(i);
            let b = h1.per_point.row(n - 1 - i);
            let diff = a.iter().zip(b.iter()).fold(0f64, |m, (x, y)| m.max((x - y).abs()));
            assert!(diff < 1e-12, "row {i} not carried by the permutation, diff {diff:.3e}");
        }
    }

    #[test]
    fn subsample_inclusion_is_uniform() {
        let cloud = random_cloud(20, 61, 10.0);
        let keep = 5usize;
        let draws = 10_000usize;
        let mut counts = vec![0usize; cloud.points.len()];
        for i in 0..draws {
            let sub = subsample(&cloud, keep, i as u64).unwrap();
            for p in &sub.points {
                let idx = cloud
                    .points
                    .iter()
                    .position(|q| (q - p).norm() < 1e-12)
                    .expect("subsample returns original points");
                counts[idx] += 1;
            }
        }
        // Each point is kept with probability keep/n; a binomial 3-sigma band.
        let p = keep as f64 / cloud.points.len() as f64;
        let mean = draws as f64 * p;
        let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
        for (i, &c) in counts.iter().enumerate() {
            assert!(
                (c as f64 - mean).abs() < 3.0 * sigma,
                "point {i} kept {c} times, expected {mean:.0} +- {:.0}",
                3.0 * sigma
            );
        }
    }

    #[test]
    fn ellipsoid_sampler_covers_octants_and_centers() {
        let n = 30_000usize;
        let cloud = sample_ellipsoid_surface(Vector3::new(10.0, 10.0, 10.0), n, 71).unwrap();
        assert_eq!(cloud.points.len(), n);
        // Sphere surface: each octant holds n/8 in expectation.
        let mut octants = [0usize; 8];
        for p in &cloud.points {
            let idx = ((p.x > 0.0) as usize) << 2 | ((p.y > 0.0) as usize) << 1
                | ((p.z > 0.0) as usize);
            octants[idx] += 1;
        }
        let mean = n as f64 / 8.0;
        let sigma = (n as f64 * (1.0 / 8.0) * (7.0 / 8.0)).sqrt();
        for (i, &c) in octants.iter().enumerate() {
            assert!(
                (c as f64 - mean).abs() < 3.0 * sigma,
                "octant {i} holds {c} points, expected {mean:.0} +- {:.0}",
                3.0 * sigma
            );
        }
        // Centroid of a uniform surface sample sits at the origin; the radius
        // is 10, so demand agreement within 1% of it.
        let centroid = cloud.centroid().unwrap();
        assert!(centroid.norm() < 0.1, "centroid off-center: {centroid:?}");
    }

    #[test]
    fn histograms_match_brute_force_oracle() {
        let cloud = random_cloud(100, 83, 20.0);
        let bins = 15usize;
        let range = 50.0;
        let h = distance_histograms(&cloud, bins, range).unwrap();
        let n = cloud.points.len();
        let width = range / bins as f64;
        for i in 0..n {
            let mut expect = vec![0.0f64; bins + 1];
            for j in 0..n {
                if i == j {
                    continue;
                }
                let d = (cloud.points[i] - cloud.points[j]).norm();
                let b = if d >= range { bins } else { (d / width) as usize };
                expect[b] += 1.0 / n as f64;
            }
            for (b, &e) in expect.iter().enumerate() {
                let got = h.per_point[(i, b)];
                assert!(
                    (got - e).abs() < 1e-12,
                    "row {i} bin {b}: oracle {e}, histogram {got}"
                );
            }
        }
    }
}
