//! Sparse head/hand motion: the observation window, velocity differencing,
//! the temporal DCT and the joint-graph adjacency.

use ndarray::{Array2, Array3, ArrayView2};

use crate::error::{Error, Result};
use crate::pointcloud::{BodyFrame, Point3};

pub const HEAD: usize = 0;
pub const LEFT_HAND: usize = 1;
pub const RIGHT_HAND: usize = 2;
pub const NUM_JOINTS: usize = 3;

/// Per-frame positions of head, left hand and right hand.
pub type JointFrame = [Point3; NUM_JOINTS];

const UNIT_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct SparseMotionWindow {
    positions: Vec<JointFrame>,
    velocities: Vec<JointFrame>,
    head_orientations: Vec<Point3>,
    frame_interval: f64,
}

impl SparseMotionWindow {
    pub fn new(
        positions: Vec<JointFrame>,
        velocities: Vec<JointFrame>,
        head_orientations: Vec<Point3>,
        frame_interval: f64,
    ) -> Result<Self> {
        let t = positions.len();
        if t < 2 {
            return Err(Error::arg(format!("motion window needs at least 2 frames, got {t}")));
        }
        if velocities.len() != t || head_orientations.len() != t {
            return Err(Error::arg("positions, velocities and orientations must share a frame count"));
        }
        if !(frame_interval > 0.0 && frame_interval.is_finite()) {
            return Err(Error::arg(format!("frame interval must be positive, got {frame_interval}")));
        }
        let finite = |f: &JointFrame| f.iter().flatten().all(|v| v.is_finite());
        if !positions.iter().all(finite) || !velocities.iter().all(finite) {
            return Err(Error::arg("motion window contains non-finite values"));
        }
        check_unit_rows(&head_orientations)?;
        Ok(Self {
            positions,
            velocities,
            head_orientations,
            frame_interval,
        })
    }

    /// Builds a window whose velocities come from [`finite_diff_velocity`].
    pub fn from_positions(positions: Vec<JointFrame>, head_orientations: Vec<Point3>, frame_interval: f64) -> Result<Self> {
        let velocities = finite_diff_velocity(&positions, frame_interval)?;
        Self::new(positions, velocities, head_orientations, frame_interval)
    }

    pub fn num_frames(&self) -> usize {
        self.positions.len()
    }

    pub fn frame_interval(&self) -> f64 {
        self.frame_interval
    }

    pub fn positions(&self) -> &[JointFrame] {
        &self.positions
    }

    pub fn velocities(&self) -> &[JointFrame] {
        &self.velocities
    }

    pub fn head_orientations(&self) -> &[Point3] {
        &self.head_orientations
    }

    pub fn position(&self, frame: usize, joint: usize) -> Point3 {
        self.positions[frame][joint]
    }

    pub fn head_orientation(&self, frame: usize) -> Point3 {
        self.head_orientations[frame]
    }

    /// Head orientations as a T×3 matrix.
    pub fn head_matrix(&self) -> Array2<f64> {
        Array2::from_shape_fn((self.num_frames(), 3), |(t, c)| self.head_orientations[t][c])
    }

    pub fn transformed(&self, frame: &BodyFrame) -> Self {
        let map_frame = |f: &JointFrame, point: bool| -> JointFrame {
            let mut out = *f;
            for p in out.iter_mut() {
                *p = if point { frame.apply_point(p) } else { frame.apply_vector(p) };
            }
            out
        };
        Self {
            positions: self.positions.iter().map(|f| map_frame(f, true)).collect(),
            velocities: self.velocities.iter().map(|f| map_frame(f, false)).collect(),
            head_orientations: self.head_orientations.iter().map(|h| frame.apply_vector(h)).collect(),
            frame_interval: self.frame_interval,
        }
    }

    /// Rounds every value through `f32`, the precision of the sample files.
    /// Head orientations are renormalized in `f64` first.
    pub fn quantized(&self) -> Self {
        let q = |v: f64| v as f32 as f64;
        let qf = |f: &JointFrame| -> JointFrame { f.map(|p| p.map(q)) };
        Self {
            positions: self.positions.iter().map(qf).collect(),
            velocities: self.velocities.iter().map(qf).collect(),
            head_orientations: self
                .head_orientations
                .iter()
                .map(|h| {
                    let n = (h[0] * h[0] + h[1] * h[1] + h[2] * h[2]).sqrt();
                    [q(h[0] / n), q(h[1] / n), q(h[2] / n)]
                })
                .collect(),
            frame_interval: q(self.frame_interval),
        }
    }
}

pub(crate) fn check_unit_rows(rows: &[Point3]) -> Result<()> {
    for (t, h) in rows.iter().enumerate() {
        let n = (h[0] * h[0] + h[1] * h[1] + h[2] * h[2]).sqrt();
        if !((n - 1.0).abs() <= UNIT_TOLERANCE) {
            return Err(Error::arg(format!("head orientation at frame {t} has norm {n}, expected 1")));
        }
    }
    Ok(())
}

/// Backward differences; the first frame copies the second.
pub fn finite_diff_velocity(positions: &[JointFrame], frame_interval: f64) -> Result<Vec<JointFrame>> {
    if positions.len() < 2 {
        return Err(Error::arg("velocity differencing needs at least 2 frames"));
    }
    if !(frame_interval > 0.0) {
        return Err(Error::arg("frame interval must be positive"));
    }
    let mut v = vec![[[0.0; 3]; NUM_JOINTS]; positions.len()];
    for t in 1..positions.len() {
        for j in 0..NUM_JOINTS {
            for c in 0..3 {
                v[t][j][c] = (positions[t][j][c] - positions[t - 1][j][c]) / frame_interval;
            }
        }
    }
    v[0] = v[1];
    Ok(v)
}

/// T×T matrix `C[k][t] = cos(pi/T (t + 1/2) k)`, unnormalized DCT-II.
pub fn dct_matrix(t: usize) -> Array2<f64> {
    let scale = std::f64::consts::PI / t as f64;
    Array2::from_shape_fn((t, t), |(k, s)| (scale * (s as f64 + 0.5) * k as f64).cos())
}

/// Column-wise unnormalized DCT-II of a T×d sequence.
pub fn dct(sequence: ArrayView2<f64>) -> Result<Array2<f64>> {
    let t = sequence.nrows();
    if t == 0 {
        return Err(Error::arg("DCT of an empty sequence"));
    }
    Ok(dct_matrix(t).dot(&sequence))
}

/// T×3×6 array: per joint, position xyz followed by velocity xyz.
pub fn assemble_motion_array(window: &SparseMotionWindow) -> Array3<f64> {
    Array3::from_shape_fn((window.num_frames(), NUM_JOINTS, 6), |(t, j, c)| {
        if c < 3 {
            window.positions[t][j][c]
        } else {
            window.velocities[t][j][c - 3]
        }
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointGraph {
    pub num_nodes: usize,
    pub adjacency: Array2<f64>,
}

/// `D^-1/2 (A + I) D^-1/2` of the complete graph on `num_nodes` nodes.
pub fn normalized_adjacency(num_nodes: usize) -> Result<JointGraph> {
    if num_nodes == 0 {
        return Err(Error::arg("joint graph needs at least one node"));
    }
    let a_hat = Array2::<f64>::ones((num_nodes, num_nodes));
    let deg: Vec<f64> = a_hat.rows().into_iter().map(|r| r.sum()).collect();
    let adjacency = Array2::from_shape_fn((num_nodes, num_nodes), |(i, j)| a_hat[[i, j]] / (deg[i] * deg[j]).sqrt());
    Ok(JointGraph { num_nodes, adjacency })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn track(values: &[f64]) -> Vec<JointFrame> {
        values.iter().map(|&x| [[x, 0.0, 0.0]; NUM_JOINTS]).collect()
    }

    #[test]
    fn velocity_padding() {
        let v = finite_diff_velocity(&track(&[0.0, 1.0, 3.0]), 1.0).unwrap();
        let xs: Vec<f64> = v.iter().map(|f| f[LEFT_HAND][0]).collect();
        assert_eq!(xs, vec![1.0, 1.0, 2.0]);
        let zero = finite_diff_velocity(&track(&[2.0, 2.0, 2.0, 2.0]), 0.1).unwrap();
        assert!(zero.iter().flatten().flatten().all(|&x| x == 0.0));
        let half = finite_diff_velocity(&track(&[0.0, 1.0, 3.0]), 2.0).unwrap();
        for (a, b) in half.iter().zip(&v) {
            assert_eq!(a[HEAD][0] * 2.0, b[HEAD][0]);
        }
        assert!(finite_diff_velocity(&track(&[0.0]), 1.0).is_err());
    }

    #[test]
    fn reintegration_recovers_positions() {
        let p: Vec<f64> = (0..20).map(|i| (i as f64 * 0.37).sin() * 3.0).collect();
        let dt = 0.05;
        let v = finite_diff_velocity(&track(&p), dt).unwrap();
        let mut x = p[0];
        for t in 1..p.len() {
            x += v[t][HEAD][0] * dt;
            assert!((x - p[t]).abs() < 1e-9);
        }
    }

    #[test]
    fn dct_constant_and_impulse() {
        let ones = Array2::<f64>::ones((4, 1));
        let c = dct(ones.view()).unwrap();
        assert!((c[[0, 0]] - 4.0).abs() < 1e-12);
        for k in 1..4 {
            assert!(c[[k, 0]].abs() < 1e-12);
        }
        let imp = array![[1.0], [0.0], [0.0], [0.0]];
        let c = dct(imp.view()).unwrap();
        let pi = std::f64::consts::PI;
        let expected = [1.0, (pi / 8.0).cos(), (pi / 4.0).cos(), (3.0 * pi / 8.0).cos()];
        for k in 0..4 {
            assert!((c[[k, 0]] - expected[k]).abs() < 1e-12);
        }
        assert!((expected[1] - 0.92388).abs() < 1e-5 && (expected[3] - 0.38268).abs() < 1e-5);
    }

    #[test]
    fn adjacency_small_graphs() {
        assert_eq!(normalized_adjacency(1).unwrap().adjacency, array![[1.0]]);
        let g = normalized_adjacency(2).unwrap().adjacency;
        assert!(g.iter().all(|&x| (x - 0.5).abs() < 1e-15));
        for n in [3, 4] {
            let a = normalized_adjacency(n).unwrap().adjacency;
            assert!((&a - &a.t()).iter().all(|x| x.abs() < 1e-12));
        }
        assert!(normalized_adjacency(0).is_err());
    }

    #[test]
    fn window_validation() {
        let pos = track(&[0.0, 1.0]);
        let bad = vec![[1.0, 0.0, 0.0], [0.5, 0.0, 0.0]];
        assert!(SparseMotionWindow::from_positions(pos.clone(), bad, 0.1).is_err());
        let good = vec![[1.0, 0.0, 0.0]; 2];
        assert!(SparseMotionWindow::from_positions(pos.clone(), good.clone(), 0.0).is_err());
        let w = SparseMotionWindow::from_positions(pos, good, 0.1).unwrap();
        let m = assemble_motion_array(&w);
        assert_eq!(m.dim(), (2, 3, 6));
        assert_eq!(m[[1, RIGHT_HAND, 0]], 1.0);
        assert!((m[[0, RIGHT_HAND, 3]] - 10.0).abs() < 1e-12);
    }
}
