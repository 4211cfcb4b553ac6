//! Point-cloud geometry kernels: sampling, grouping, interpolation, frame
//! alignment, mesh surface sampling and pin-hole projection.
//!
//! Everything here is brute force. Ties are broken by lowest index so that
//! permutation tests compare exactly.

use std::cmp::Ordering;
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::motionenc::SparseMotionWindow;

pub type Point3 = [f64; 3];
pub type Triangle = [Point3; 3];

/// Scene points in meters. Never empty; duplicates are allowed.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenePointCloud {
    points: Vec<Point3>,
}

impl ScenePointCloud {
    pub fn new(points: Vec<Point3>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::arg("point cloud must contain at least one point"));
        }
        if let Some(i) = points.iter().position(|p| p.iter().any(|c| !c.is_finite())) {
            return Err(Error::arg(format!("point {i} has a non-finite coordinate")));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn into_points(self) -> Vec<Point3> {
        self.points
    }

    /// N×3 matrix view of the coordinates.
    pub fn to_array(&self) -> Array2<f64> {
        points_to_array(&self.points)
    }

    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        Self::new(indices.iter().map(|&i| self.points[i]).collect())
    }
}

pub fn points_to_array(points: &[Point3]) -> Array2<f64> {
    Array2::from_shape_fn((points.len(), 3), |(i, j)| points[i][j])
}

#[inline]
pub fn dist2(a: &Point3, b: &Point3) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

fn by_distance_then_index(a: &(f64, usize), b: &(f64, usize)) -> Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}

/// Greedy max-min selection of `m` indices starting at `start_index`.
pub fn farthest_point_sample(points: &[Point3], m: usize, start_index: usize) -> Result<Vec<usize>> {
    let n = points.len();
    if m == 0 || m > n {
        return Err(Error::arg(format!("cannot sample {m} of {n} points")));
    }
    if start_index >= n {
        return Err(Error::arg(format!("start index {start_index} out of range for {n} points")));
    }
    let mut selected = Vec::with_capacity(m);
    let mut min_d2 = vec![f64::INFINITY; n];
    let mut current = start_index;
    selected.push(current);
    while selected.len() < m {
        let c = points[current];
        let mut best = 0usize;
        let mut best_d = f64::NEG_INFINITY;
        for (i, p) in points.iter().enumerate() {
            let d = dist2(p, &c);
            if d < min_d2[i] {
                min_d2[i] = d;
            }
            if min_d2[i] > best_d {
                best_d = min_d2[i];
                best = i;
            }
        }
        current = best;
        selected.push(current);
    }
    Ok(selected)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BallGroup {
    /// Member indices sorted by ascending distance, then ascending index.
    pub indices: Vec<usize>,
    /// Set when nothing was within the radius and the group holds only the
    /// globally nearest point.
    pub fallback: bool,
}

pub fn ball_query(points: &[Point3], centers: &[Point3], radius: f64, k_max: usize) -> Result<Vec<BallGroup>> {
    if points.is_empty() {
        return Err(Error::arg("ball query on an empty cloud"));
    }
    if !(radius > 0.0) {
        return Err(Error::arg(format!("ball query radius must be positive, got {radius}")));
    }
    if k_max == 0 {
        return Err(Error::arg("ball query k_max must be positive"));
    }
    let r2 = radius * radius;
    let mut groups = Vec::with_capacity(centers.len());
    let mut scratch: Vec<(f64, usize)> = Vec::with_capacity(points.len());
    for c in centers {
        scratch.clear();
        let mut nearest = (f64::INFINITY, 0usize);
        for (i, p) in points.iter().enumerate() {
            let d = dist2(p, c);
            if d < nearest.0 {
                nearest = (d, i);
            }
            if d <= r2 {
                scratch.push((d, i));
            }
        }
        if scratch.is_empty() {
            groups.push(BallGroup {
                indices: vec![nearest.1],
                fallback: true,
            });
            continue;
        }
        scratch.sort_unstable_by(by_distance_then_index);
        scratch.truncate(k_max);
        groups.push(BallGroup {
            indices: scratch.iter().map(|&(_, i)| i).collect(),
            fallback: false,
        });
    }
    Ok(groups)
}

const IDW_EPS: f64 = 1e-8;

/// Normalized inverse-square-distance weights of the `k` nearest coarse
/// points for every fine point.
pub fn interpolation_weights(coarse: &[Point3], fine: &[Point3], k: usize) -> Result<Vec<Vec<(usize, f64)>>> {
    if coarse.is_empty() {
        return Err(Error::arg("interpolation needs at least one coarse point"));
    }
    if k == 0 || k > coarse.len() {
        return Err(Error::arg(format!("interpolation k={k} invalid for {} coarse points", coarse.len())));
    }
    let mut out = Vec::with_capacity(fine.len());
    let mut scratch: Vec<(f64, usize)> = Vec::with_capacity(coarse.len());
    for f in fine {
        scratch.clear();
        scratch.extend(coarse.iter().enumerate().map(|(i, c)| (dist2(f, c), i)));
        if k < scratch.len() {
            scratch.select_nth_unstable_by(k - 1, by_distance_then_index);
            scratch.truncate(k);
        }
        scratch.sort_unstable_by(by_distance_then_index);
        let raw: Vec<(usize, f64)> = scratch.iter().map(|&(d, i)| (i, 1.0 / (d + IDW_EPS))).collect();
        let total: f64 = raw.iter().map(|(_, w)| w).sum();
        out.push(raw.into_iter().map(|(i, w)| (i, w / total)).collect());
    }
    Ok(out)
}

pub fn inverse_distance_interpolate(
    coarse_points: &[Point3],
    coarse_features: ArrayView2<f64>,
    fine_points: &[Point3],
    k: usize,
) -> Result<Array2<f64>> {
    if coarse_features.nrows() != coarse_points.len() {
        return Err(Error::arg("coarse feature rows must match coarse point count"));
    }
    if coarse_features.ncols() == 0 {
        return Err(Error::arg("feature dimension must be at least 1"));
    }
    let weights = interpolation_weights(coarse_points, fine_points, k)?;
    let mut out = Array2::zeros((fine_points.len(), coarse_features.ncols()));
    for (row, ws) in out.rows_mut().into_iter().zip(&weights) {
        let mut row = row;
        for &(i, w) in ws {
            row.scaled_add(w, &coarse_features.row(i));
        }
    }
    Ok(out)
}

/// Indices (ascending) of a seeded weighted draw without replacement, weight
/// `1/(1+d)^2` for distance `d` to `origin`.
pub fn distance_weighted_indices(points: &[Point3], origin: &Point3, n: usize, seed: u64) -> Result<Vec<usize>> {
    if n == 0 || n > points.len() {
        return Err(Error::arg(format!("cannot subsample {n} of {} points", points.len())));
    }
    if n == points.len() {
        return Ok((0..n).collect());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Efraimidis-Spirakis: the n largest ln(u)/w keys form a sequential
    // weighted draw without replacement.
    let mut keyed: Vec<(f64, usize)> = points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let d = dist2(p, origin).sqrt();
            let w = 1.0 / ((1.0 + d) * (1.0 + d));
            let u: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
            (u.ln() / w, i)
        })
        .collect();
    keyed.select_nth_unstable_by(n - 1, |a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut idx: Vec<usize> = keyed[..n].iter().map(|&(_, i)| i).collect();
    idx.sort_unstable();
    Ok(idx)
}

pub fn distance_weighted_subsample(
    cloud: &ScenePointCloud,
    origin: &Point3,
    n: usize,
    seed: u64,
) -> Result<ScenePointCloud> {
    let idx = distance_weighted_indices(cloud.points(), origin, n, seed)?;
    cloud.select(&idx)
}

/// Yaw-only rigid transform into the body frame: the reference head position
/// goes to the horizontal origin and the horizontal heading to `+x`. `z` is up.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BodyFrame {
    cos: f64,
    sin: f64,
    origin_xy: [f64; 2],
}

impl BodyFrame {
    pub fn new(head_position: Point3, heading: Point3) -> Result<Self> {
        let r = heading[0].hypot(heading[1]);
        if !(r >= 1e-6) {
            return Err(Error::DegenerateInput(format!(
                "head orientation has horizontal component {r:e}; yaw undefined"
            )));
        }
        Ok(Self {
            cos: heading[0] / r,
            sin: heading[1] / r,
            origin_xy: [head_position[0], head_position[1]],
        })
    }

    /// Frame defined by the final observed frame of `window`.
    pub fn from_window(window: &SparseMotionWindow) -> Result<Self> {
        let last = window.num_frames() - 1;
        Self::new(window.position(last, 0), window.head_orientation(last))
    }

    #[inline]
    pub fn apply_vector(&self, v: &Point3) -> Point3 {
        [
            self.cos * v[0] + self.sin * v[1],
            -self.sin * v[0] + self.cos * v[1],
            v[2],
        ]
    }

    #[inline]
    pub fn apply_point(&self, p: &Point3) -> Point3 {
        self.apply_vector(&[p[0] - self.origin_xy[0], p[1] - self.origin_xy[1], p[2]])
    }
}

pub fn align_to_body_frame(
    cloud: &ScenePointCloud,
    window: &SparseMotionWindow,
) -> Result<(ScenePointCloud, SparseMotionWindow)> {
    let frame = BodyFrame::from_window(window)?;
    let points = cloud.points().iter().map(|p| frame.apply_point(p)).collect();
    Ok((ScenePointCloud::new(points)?, window.transformed(&frame)))
}

pub fn triangle_area(t: &Triangle) -> f64 {
    let u = [t[1][0] - t[0][0], t[1][1] - t[0][1], t[1][2] - t[0][2]];
    let v = [t[2][0] - t[0][0], t[2][1] - t[0][1], t[2][2] - t[0][2]];
    let c = [u[1] * v[2] - u[2] * v[1], u[2] * v[0] - u[0] * v[2], u[0] * v[1] - u[1] * v[0]];
    0.5 * (c[0] * c[0] + c[1] * c[1] + c[2] * c[2]).sqrt()
}

/// Area-proportional, barycentric-uniform surface samples.
pub fn sample_mesh_surface(triangles: &[Triangle], n: usize, seed: u64) -> Result<ScenePointCloud> {
    if n == 0 {
        return Err(Error::arg("surface sampling needs n >= 1"));
    }
    let mut cumulative = Vec::with_capacity(triangles.len());
    let mut total = 0.0;
    for t in triangles {
        total += triangle_area(t);
        cumulative.push(total);
    }
    if !(total > 0.0) {
        return Err(Error::DegenerateInput("mesh has zero total area".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(n);
    for _ in 0..n {
        let target = rng.random::<f64>() * total;
        let ti = cumulative.partition_point(|&c| c <= target).min(triangles.len() - 1);
        let [a, b, c] = triangles[ti];
        let (mut r1, mut r2): (f64, f64) = (rng.random(), rng.random());
        if r1 + r2 > 1.0 {
            r1 = 1.0 - r1;
            r2 = 1.0 - r2;
        }
        points.push([
            a[0] + r1 * (b[0] - a[0]) + r2 * (c[0] - a[0]),
            a[1] + r1 * (b[1] - a[1]) + r2 * (c[1] - a[1]),
            a[2] + r1 * (b[2] - a[2]) + r2 * (c[2] - a[2]),
        ]);
    }
    ScenePointCloud::new(points)
}

/// Pin-hole camera with a rigid world-to-camera extrinsic.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraModel {
    pub extrinsic: [[f64; 4]; 4],
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraModel {
    pub fn new(extrinsic: [[f64; 4]; 4], fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0) {
            return Err(Error::arg("focal lengths must be positive"));
        }
        if !(0.0..=width as f64).contains(&cx) || !(0.0..=height as f64).contains(&cy) {
            return Err(Error::arg("principal point outside the image"));
        }
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3).map(|k| extrinsic[k][i] * extrinsic[k][j]).sum();
                let expected = if i == j { 1.0 } else { 0.0 };
                if (dot - expected).abs() > 1e-6 {
                    return Err(Error::arg("extrinsic rotation block is not orthonormal"));
                }
            }
        }
        let r = &extrinsic;
        let det = r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1]) - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
            + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0]);
        if det < 0.0 {
            return Err(Error::arg("extrinsic rotation has negative determinant"));
        }
        Ok(Self { extrinsic, fx, fy, cx, cy, width, height })
    }

    /// Parses `key = value` lines: `extrinsic` (16 row-major reals), `fx`,
    /// `fy`, `cx`, `cy`, `width`, `height`. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut extrinsic = None;
        let (mut fx, mut fy, mut cx, mut cy, mut width, mut height) = (None, None, None, None, None, None);
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("camera line {}: expected key = value", lineno + 1)))?;
            let value = value.trim();
            let real = |v: &str| -> Result<f64> {
                v.parse::<f64>()
                    .map_err(|_| Error::Config(format!("camera line {}: bad number {v:?}", lineno + 1)))
            };
            let int = |v: &str| -> Result<u32> {
                v.parse::<u32>()
                    .map_err(|_| Error::Config(format!("camera line {}: bad integer {v:?}", lineno + 1)))
            };
            match key.trim() {
                "extrinsic" => {
                    let vals = value
                        .split(|c: char| c.is_whitespace() || c == ',')
                        .filter(|s| !s.is_empty())
                        .map(real)
                        .collect::<Result<Vec<_>>>()?;
                    if vals.len() != 16 {
                        return Err(Error::Config(format!("extrinsic needs 16 values, got {}", vals.len())));
                    }
                    let mut m = [[0.0; 4]; 4];
                    for (i, v) in vals.into_iter().enumerate() {
                        m[i / 4][i % 4] = v;
                    }
                    extrinsic = Some(m);
                }
                "fx" => fx = Some(real(value)?),
                "fy" => fy = Some(real(value)?),
                "cx" => cx = Some(real(value)?),
                "cy" => cy = Some(real(value)?),
                "width" => width = Some(int(value)?),
                "height" => height = Some(int(value)?),
                other => return Err(Error::Config(format!("unknown camera key {other:?}"))),
            }
        }
        let missing = |k: &str| Error::Config(format!("camera manifest missing {k}"));
        Self::new(
            extrinsic.ok_or_else(|| missing("extrinsic"))?,
            fx.ok_or_else(|| missing("fx"))?,
            fy.ok_or_else(|| missing("fy"))?,
            cx.ok_or_else(|| missing("cx"))?,
            cy.ok_or_else(|| missing("cy"))?,
            width.ok_or_else(|| missing("width"))?,
            height.ok_or_else(|| missing("height"))?,
        )
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_camera(&self, p: &Point3) -> Point3 {
        let e = &self.extrinsic;
        let mut out = [0.0; 3];
        for (i, o) in out.iter_mut().enumerate() {
            *o = e[i][0] * p[0] + e[i][1] * p[1] + e[i][2] * p[2] + e[i][3];
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelBox {
    pub min_u: f64,
    pub min_v: f64,
    pub max_u: f64,
    pub max_v: f64,
}

pub fn project_intention_to_image(
    cloud: &ScenePointCloud,
    logits: &[f64],
    camera: &CameraModel,
    score_threshold: f64,
) -> Result<Option<PixelBox>> {
    if logits.len() != cloud.len() {
        return Err(Error::arg(format!(
            "heatmap has {} scores for {} points",
            logits.len(),
            cloud.len()
        )));
    }
    let (w, h) = (camera.width as f64, camera.height as f64);
    let mut bbox: Option<PixelBox> = None;
    for (p, &x) in cloud.points().iter().zip(logits) {
        if crate::objective::sigmoid(x) < score_threshold {
            continue;
        }
        let c = camera.to_camera(p);
        if c[2] <= 0.0 {
            continue;
        }
        let u = camera.fx * c[0] / c[2] + camera.cx;
        let v = camera.fy * c[1] / c[2] + camera.cy;
        if !(0.0..=w).contains(&u) || !(0.0..=h).contains(&v) {
            continue;
        }
        bbox = Some(match bbox {
            None => PixelBox { min_u: u, min_v: v, max_u: u, max_v: v },
            Some(b) => PixelBox {
                min_u: b.min_u.min(u),
                min_v: b.min_v.min(v),
                max_u: b.max_u.max(u),
                max_v: b.max_v.max(v),
            },
        });
    }
    Ok(bbox.map(|b| PixelBox {
        min_u: b.min_u.clamp(0.0, w),
        min_v: b.min_v.clamp(0.0, h),
        max_u: b.max_u.clamp(0.0, w),
        max_v: b.max_v.clamp(0.0, h),
    }))
}
