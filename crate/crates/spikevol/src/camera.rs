//! Calibrated pinhole cameras and multi-view geometry.
//!
//! World units are millimetres. A camera maps a world point `X` to camera
//! coordinates `x = R (X - C)` (depth along +z) and to pixels through the
//! intrinsic matrix `K`. Fundamental matrices follow the convention
//! `p_j' F_ij p_i = 0` for pixel correspondences `p_i <-> p_j`, so `F_ij`
//! maps a pixel of image `i` to an epipolar line in image `j`.

use nalgebra::{DMatrix, Matrix3, Vector2, Vector3};
use rand::Rng;
use thiserror::Error;

use crate::rng;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error("invalid bounding box: {0}")]
    InvalidBox(String),
    #[error("point is behind the camera (depth {depth} <= 0)")]
    BehindCamera { depth: f64 },
    #[error("camera centers coincide; no epipolar geometry")]
    CoincidentCameras,
    #[error("epipolar line is degenerate (point at the epipole)")]
    DegenerateEpipolarLine,
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("need at least {need} centers, got {got}")]
    TooFewCenters { need: usize, got: usize },
    #[error("coincident {which} centers at indices {a} and {b}")]
    CoincidentCenters { which: &'static str, a: usize, b: usize },
    #[error("scale factor must be positive, got {0}")]
    NonPositiveScale(f64),
    #[error("need at least 2 views, got {0}")]
    TooFewViews(usize),
    #[error("triangulation system is rank deficient (parallel or identical rays)")]
    RankDeficient,
    #[error("no consistent triangulation: all candidate weights are zero")]
    NoConsistentTriangulation,
}

/// Calibrated pinhole camera with a known world pose.
#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    pub id: String,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// World-to-camera rotation (rows are the camera axes in world frame).
    pub rotation: Matrix3<f64>,
    /// Camera center in world coordinates (mm).
    pub center: Vector3<f64>,
    pub width: f64,
    pub height: f64,
}

impl Camera {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        id: impl Into<String>,
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        rotation: Matrix3<f64>,
        center: Vector3<f64>,
        width: f64,
        height: f64,
    ) -> Result<Self, GeometryError> {
        if !(fx > 0.0 && fy > 0.0) {
            return Err(GeometryError::InvalidCamera(format!(
                "focal lengths must be positive (fx={fx}, fy={fy})"
            )));
        }
        if !(width > 0.0 && height > 0.0) {
            return Err(GeometryError::InvalidCamera(format!(
                "image size must be positive ({width}x{height})"
            )));
        }
        let gram = rotation.transpose() * rotation;
        let ortho_err = (gram - Matrix3::identity()).norm();
        if ortho_err > 1e-9 {
            return Err(GeometryError::InvalidCamera(format!(
                "rotation is not orthonormal (|R'R - I| = {ortho_err:.3e})"
            )));
        }
        if (rotation.determinant() - 1.0).abs() > 1e-9 {
            return Err(GeometryError::InvalidCamera(
                "rotation determinant is not +1".into(),
            ));
        }
        Ok(Self { id: id.into(), fx, fy, cx, cy, rotation, center, width, height })
    }

    /// Camera at `center` aimed at `target`, image x axis chosen orthogonal
    /// to world +y (suits the downward-looking rigs used throughout).
    #[allow(clippy::too_many_arguments)]
    pub fn look_at(
        id: impl Into<String>,
        center: Vector3<f64>,
        target: Vector3<f64>,
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: f64,
        height: f64,
    ) -> Result<Self, GeometryError> {
        let forward = target - center;
        if forward.norm() == 0.0 {
            return Err(GeometryError::InvalidCamera("look-at target equals center".into()));
        }
        let forward = forward.normalize();
        let x = Vector3::new(0.0, 1.0, 0.0).cross(&forward);
        if x.norm() < 1e-9 {
            return Err(GeometryError::InvalidCamera(
                "viewing direction is parallel to the +y up hint".into(),
            ));
        }
        let x = x.normalize();
        let y = forward.cross(&x);
        let rotation = Matrix3::from_rows(&[x.transpose(), y.transpose(), forward.transpose()]);
        Self::new(id, fx, fy, cx, cy, rotation, center, width, height)
    }

    pub fn intrinsic_matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    fn intrinsic_inverse(&self) -> Matrix3<f64> {
        Matrix3::new(
            1.0 / self.fx, 0.0, -self.cx / self.fx,
            0.0, 1.0 / self.fy, -self.cy / self.fy,
            0.0, 0.0, 1.0,
        )
    }

    /// World point in camera coordinates, `x = R (X - C)`.
    pub fn to_camera(&self, point: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * (point - self.center)
    }

    /// Project a world point to pixel coordinates.
    ///
    /// Fails when the point has non-positive depth.
    pub fn project(&self, point: &Vector3<f64>) -> Result<Vector2<f64>, GeometryError> {
        let x = self.to_camera(point);
        if x.z <= 0.0 {
            return Err(GeometryError::BehindCamera { depth: x.z });
        }
        Ok(Vector2::new(
            self.fx * x.x / x.z + self.cx,
            self.fy * x.y / x.z + self.cy,
        ))
    }

    /// Whether a pixel lies inside the image bounds (closed rectangle).
    pub fn contains_pixel(&self, p: &Vector2<f64>) -> bool {
        p.x >= 0.0 && p.x <= self.width && p.y >= 0.0 && p.y <= self.height
    }
}

/// Axis-aligned detection box in pixel coordinates of one image.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundingBox {
    pub image_id: String,
    pub detection_id: String,
    pub min_x: f64,
    pub min_y: f64,
    pub max_x: f64,
    pub max_y: f64,
}

impl BoundingBox {
    pub fn new(
        image_id: impl Into<String>,
        detection_id: impl Into<String>,
        min_x: f64,
        min_y: f64,
        max_x: f64,
        max_y: f64,
    ) -> Result<Self, GeometryError> {
        if !(min_x < max_x && min_y < max_y) {
            return Err(GeometryError::InvalidBox(format!(
                "expected min < max, got x [{min_x}, {max_x}] y [{min_y}, {max_y}]"
            )));
        }
        Ok(Self {
            image_id: image_id.into(),
            detection_id: detection_id.into(),
            min_x,
            min_y,
            max_x,
            max_y,
        })
    }

    pub fn width(&self) -> f64 {
        self.max_x - self.min_x
    }

    pub fn height(&self) -> f64 {
        self.max_y - self.min_y
    }

    pub fn center(&self) -> Vector2<f64> {
        Vector2::new(0.5 * (self.min_x + self.max_x), 0.5 * (self.min_y + self.max_y))
    }

    pub fn contains(&self, p: &Vector2<f64>) -> bool {
        p.x >= self.min_x && p.x <= self.max_x && p.y >= self.min_y && p.y <= self.max_y
    }

    /// Clamp the box to `[0, w] x [0, h]`. Returns the clamped box and whether
    /// any edge was cut; `None` when the box lies entirely outside the image.
    pub fn clamp_to(&self, width: f64, height: f64) -> Option<(Self, bool)> {
        let min_x = self.min_x.max(0.0);
        let min_y = self.min_y.max(0.0);
        let max_x = self.max_x.min(width);
        let max_y = self.max_y.min(height);
        if !(min_x < max_x && min_y < max_y) {
            return None;
        }
        let clamped = min_x != self.min_x
            || min_y != self.min_y
            || max_x != self.max_x
            || max_y != self.max_y;
        Some((
            Self {
                image_id: self.image_id.clone(),
                detection_id: self.detection_id.clone(),
                min_x,
                min_y,
                max_x,
                max_y,
            },
            clamped,
        ))
    }
}

/// Image line `a x + b y + c = 0` normalized so that `a^2 + b^2 = 1`;
/// `eval` then returns the signed pixel distance to the line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HomogeneousLine {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl HomogeneousLine {
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        self.a * x + self.b * y + self.c
    }
}

fn skew(t: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -t.z, t.y, t.z, 0.0, -t.x, -t.y, t.x, 0.0)
}

/// Fundamental matrix of the pair `(i, j)` from calibrated poses, satisfying
/// `p_j' F p_i = 0`. Normalized to unit Frobenius norm; `F_ji == F_ij'` holds
/// exactly. Fails when the camera centers coincide (no epipolar geometry).
pub fn fundamental_matrix(cam_i: &Camera, cam_j: &Camera) -> Result<Matrix3<f64>, GeometryError> {
    let baseline = cam_i.center - cam_j.center;
    if baseline.norm() == 0.0 {
        return Err(GeometryError::CoincidentCameras);
    }
    // Relative pose: x_j = R_rel x_i + t_rel.
    let r_rel = cam_j.rotation * cam_i.rotation.transpose();
    let t_rel = cam_j.rotation * baseline;
    let essential = skew(&t_rel) * r_rel;
    let f = cam_j.intrinsic_inverse().transpose() * essential * cam_i.intrinsic_inverse();
    Ok(f / f.norm())
}

/// Epipolar line `F * (x, y, 1)` normalized to unit direction norm.
///
/// Fails when the point is (numerically) at the epipole, where the line
/// direction vanishes.
pub fn epipolar_line(f: &Matrix3<f64>, p: &Vector2<f64>) -> Result<HomogeneousLine, GeometryError> {
    let ph = Vector3::new(p.x, p.y, 1.0);
    let l = f * ph;
    let n = l.x.hypot(l.y);
    if n <= 1e-12 * ph.norm().max(1.0) {
        return Err(GeometryError::DegenerateEpipolarLine);
    }
    Ok(HomogeneousLine { a: l.x / n, b: l.y / n, c: l.z / n })
}

/// Whether an infinite line meets a closed axis-aligned box: the signed corner
/// distances must not be all strictly positive nor all strictly negative.
pub fn line_intersects_box(line: &HomogeneousLine, bbox: &BoundingBox) -> bool {
    let d = [
        line.eval(bbox.min_x, bbox.min_y),
        line.eval(bbox.min_x, bbox.max_y),
        line.eval(bbox.max_x, bbox.min_y),
        line.eval(bbox.max_x, bbox.max_y),
    ];
    let all_pos = d.iter().all(|&v| v > 0.0);
    let all_neg = d.iter().all(|&v| v < 0.0);
    !(all_pos || all_neg)
}

/// Scale factor aligning photogrammetric camera centers to surveyed ones.
#[derive(Debug, Clone)]
pub struct ScaleEstimate {
    pub scale: f64,
    /// Ratio `d_surveyed / d_reconstructed` for every ordered center pair.
    pub per_pair_ratios: Vec<f64>,
    pub pair_count: usize,
}

/// Average the pairwise center-distance ratios over all ordered pairs
/// (`N = M (M - 1)` of them) to recover the metric scale factor.
pub fn estimate_scale(
    reconstructed: &[Vector3<f64>],
    surveyed: &[Vector3<f64>],
) -> Result<ScaleEstimate, GeometryError> {
    if reconstructed.len() != surveyed.len() {
        return Err(GeometryError::LengthMismatch {
            left: reconstructed.len(),
            right: surveyed.len(),
        });
    }
    let m = reconstructed.len();
    if m < 2 {
        return Err(GeometryError::TooFewCenters { need: 2, got: m });
    }
    let mut ratios = Vec::with_capacity(m * (m - 1));
    for c in 0..m {
        for c2 in 0..m {
            if c == c2 {
                continue;
            }
            let d_rec = (reconstructed[c] - reconstructed[c2]).norm();
            let d_sur = (surveyed[c] - surveyed[c2]).norm();
            if d_rec == 0.0 {
                return Err(GeometryError::CoincidentCenters { which: "reconstructed", a: c, b: c2 });
            }
            if d_sur == 0.0 {
                return Err(GeometryError::CoincidentCenters { which: "surveyed", a: c, b: c2 });
            }
            ratios.push(d_sur / d_rec);
        }
    }
    let scale = ratios.iter().sum::<f64>() / ratios.len() as f64;
    Ok(ScaleEstimate { scale, pair_count: ratios.len(), per_pair_ratios: ratios })
}

/// Scale camera centers into metric units.
pub fn apply_scale(
    centers: &[Vector3<f64>],
    scale: f64,
) -> Result<Vec<Vector3<f64>>, GeometryError> {
    if !(scale > 0.0) {
        return Err(GeometryError::NonPositiveScale(scale));
    }
    Ok(centers.iter().map(|c| c * scale).collect())
}

/// Linear (DLT) triangulation of one world point from pixel observations.
///
/// Requires at least two views; fails when the stacked system is rank
/// deficient (identical cameras) or the rays are parallel (point at infinity).
pub fn triangulate(
    cameras: &[&Camera],
    pixels: &[Vector2<f64>],
) -> Result<Vector3<f64>, GeometryError> {
    if cameras.len() != pixels.len() {
        return Err(GeometryError::LengthMismatch { left: cameras.len(), right: pixels.len() });
    }
    if cameras.len() < 2 {
        return Err(GeometryError::TooFewViews(cameras.len()));
    }
    let mut a = DMatrix::<f64>::zeros(2 * cameras.len(), 4);
    for (v, (cam, pix)) in cameras.iter().zip(pixels).enumerate() {
        // Normalized image coordinates keep the system well conditioned.
        let m = cam.intrinsic_inverse() * Vector3::new(pix.x, pix.y, 1.0);
        let r = cam.rotation;
        let t = -r * cam.center;
        // Rows of [R | t]: projection without intrinsics.
        let p = [
            [r[(0, 0)], r[(0, 1)], r[(0, 2)], t.x],
            [r[(1, 0)], r[(1, 1)], r[(1, 2)], t.y],
            [r[(2, 0)], r[(2, 1)], r[(2, 2)], t.z],
        ];
        for k in 0..4 {
            a[(2 * v, k)] = m.x * p[2][k] - p[0][k];
            a[(2 * v + 1, k)] = m.y * p[2][k] - p[1][k];
        }
        for row in 0..2 {
            let norm = a.row(2 * v + row).norm();
            if norm > 0.0 {
                for k in 0..4 {
                    a[(2 * v + row, k)] /= norm;
                }
            }
        }
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t.as_ref().expect("svd requested v_t");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&p, &q| {
        svd.singular_values[q]
            .partial_cmp(&svd.singular_values[p])
            .expect("singular values are finite")
    });
    // A well posed triangulation has exactly one (near) zero singular value.
    let largest = svd.singular_values[order[0]];
    if svd.singular_values[order[2]] <= 1e-10 * largest {
        return Err(GeometryError::RankDeficient);
    }
    let sol = v_t.row(order[3]);
    let w = sol[3];
    let xyz = Vector3::new(sol[0], sol[1], sol[2]);
    if w.abs() <= 1e-12 * xyz.norm() {
        return Err(GeometryError::RankDeficient);
    }
    Ok(xyz / w)
}

/// Consensus-weighted spike center triangulated from one detection box per view.
#[derive(Debug, Clone)]
pub struct WeightedCenter {
    pub center: Vector3<f64>,
    /// Per-candidate weight: fraction of views whose reprojection stays in-box.
    pub point_weights: Vec<f64>,
    /// Distance from the weighted center to each camera center.
    pub camera_distances: Vec<f64>,
}

/// Estimate a spike center from one bounding box per view.
///
/// `candidates` points are triangulated from uniformly sampled in-box pixels
/// (all views enter every triangulation); each is weighted by the fraction of
/// views whose reprojection falls back inside the corresponding box, and the
/// weighted mean is returned. Fails when every candidate weight is zero.
pub fn weighted_spike_center(
    cameras: &[&Camera],
    boxes: &[&BoundingBox],
    candidates: usize,
    seed: u64,
) -> Result<WeightedCenter, GeometryError> {
    if cameras.len() != boxes.len() {
        return Err(GeometryError::LengthMismatch { left: cameras.len(), right: boxes.len() });
    }
    if cameras.len() < 2 {
        return Err(GeometryError::TooFewViews(cameras.len()));
    }
    let mut rng = rng::rng_from(rng::derive(seed, "weighted-spike-center"));
    let mut weights = Vec::with_capacity(candidates);
    let mut mean = Vector3::zeros();
    let mut total = 0.0;
    for _ in 0..candidates {
        let pixels: Vec<Vector2<f64>> = boxes
            .iter()
            .map(|b| {
                Vector2::new(
                    rng.random_range(b.min_x..=b.max_x),
                    rng.random_range(b.min_y..=b.max_y),
                )
            })
            .collect();
        let Ok(point) = triangulate(cameras, &pixels) else {
            weights.push(0.0);
            continue;
        };
        let inside = cameras
            .iter()
            .zip(boxes)
            .filter(|(cam, b)| matches!(cam.project(&point), Ok(p) if b.contains(&p)))
            .count();
        let w = inside as f64 / cameras.len() as f64;
        weights.push(w);
        mean += w * point;
        total += w;
    }
    if total == 0.0 {
        return Err(GeometryError::NoConsistentTriangulation);
    }
    let center = mean / total;
    let camera_distances = cameras.iter().map(|c| (center - c.center).norm()).collect();
    Ok(WeightedCenter { center, point_weights: weights, camera_distances })
}
