//! Forward graph of the intention network and its parameter gradient.

use ndarray::{Array2, Array3, ArrayView2};

use super::config::{NetworkConfig, Variant};
use super::params::ModelParams;
use crate::error::{Error, Result};
use crate::motionenc::{self, assemble_motion_array, dct_matrix, normalized_adjacency, SparseMotionWindow, NUM_JOINTS};
use crate::objective::{total_loss_with_grad, BinaryIntentionMask, LossBreakdown, LossConfig};
use crate::pointcloud::{
    ball_query, dist2, farthest_point_sample, interpolation_weights, Point3, ScenePointCloud,
};
use crate::tape::{elu_plus_one, RowWeights, Tape, Var};

/// Raw per-point logits; apply a sigmoid for probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct IntentionHeatmap {
    pub logits: Vec<f64>,
}

impl IntentionHeatmap {
    pub fn len(&self) -> usize {
        self.logits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.logits.is_empty()
    }
}

/// Intermediate features of one forward pass. Motion-related entries are
/// absent for variants that do not compute them.
#[derive(Debug, Clone)]
pub struct FeatureBundle {
    /// N×D
    pub f_scene: Array2<f64>,
    /// T×3×D
    pub f_traj: Option<Array3<f64>>,
    /// T×1×D
    pub f_head: Option<Array3<f64>>,
    /// T×J×D, J = 4 (or 1 for the head-only variant)
    pub f_motion: Option<Array3<f64>>,
    /// T×D
    pub f_pose: Option<Array2<f64>>,
    /// N×D
    pub a_pose: Option<Array2<f64>>,
    /// Input of the output head: N×2D, or N×D for the scene-only variant.
    pub f_fused: Array2<f64>,
    /// N×T row-stochastic scene-to-frame weights, when scene points query motion.
    pub attention_weights: Option<Array2<f64>>,
}

struct LevelPlan {
    fallbacks: usize,
    members: Vec<usize>,
    offsets: Vec<usize>,
    relative: Array2<f64>,
}

/// Sampling, grouping and interpolation indices for one cloud. They depend
/// only on coordinates and the configuration, so they can be reused across
/// training epochs.
pub struct ScenePlan {
    num_points: usize,
    xyz: Array2<f64>,
    levels: Vec<LevelPlan>,
    /// Interpolation weights per propagation stage, coarsest first.
    interp: Vec<RowWeights>,
}

/// Index of the point farthest from the frame origin, lowest index on ties.
fn fps_start(points: &[Point3]) -> usize {
    let mut best = (f64::NEG_INFINITY, 0);
    for (i, p) in points.iter().enumerate() {
        let d = dist2(p, &[0.0; 3]);
        if d > best.0 {
            best = (d, i);
        }
    }
    best.1
}

impl ScenePlan {
    pub fn new(cloud: &ScenePointCloud, config: &NetworkConfig) -> Result<Self> {
        config.validate()?;
        if cloud.len() < config.min_points() {
            return Err(Error::arg(format!(
                "cloud has {} points, the encoder needs at least {}",
                cloud.len(),
                config.min_points()
            )));
        }
        let mut level_points: Vec<Vec<Point3>> = vec![cloud.points().to_vec()];
        let mut levels = Vec::with_capacity(config.sa_levels.len());
        for sa in &config.sa_levels {
            let src = level_points.last().unwrap();
            let idx = farthest_point_sample(src, sa.num_centers, fps_start(src))?;
            let centers: Vec<Point3> = idx.iter().map(|&i| src[i]).collect();
            let groups = ball_query(src, &centers, sa.radius as f64, sa.k_max)?;
            let mut members = Vec::new();
            let mut offsets = vec![0];
            for g in &groups {
                members.extend_from_slice(&g.indices);
                offsets.push(members.len());
            }
            let mut relative = Array2::zeros((members.len(), 3));
            for (ci, c) in centers.iter().enumerate() {
                for r in offsets[ci]..offsets[ci + 1] {
                    let p = src[members[r]];
                    for k in 0..3 {
                        relative[[r, k]] = p[k] - c[k];
                    }
                }
            }
            levels.push(LevelPlan {
                fallbacks: groups.iter().filter(|g| g.fallback).count(),
                members,
                offsets,
                relative,
            });
            level_points.push(centers);
        }
        let depth = config.sa_levels.len();
        let mut interp = Vec::with_capacity(depth);
        for s in 0..depth {
            let coarse = &level_points[depth - s];
            let fine = &level_points[depth - s - 1];
            interp.push(interpolation_weights(coarse, fine, config.interp_k.min(coarse.len()))?);
        }
        Ok(Self {
            num_points: cloud.len(),
            xyz: cloud.to_array(),
            levels,
            interp,
        })
    }

    pub fn num_points(&self) -> usize {
        self.num_points
    }

    /// Number of groups at each level that fell back to the nearest point.
    pub fn fallback_groups(&self) -> Vec<usize> {
        self.levels.iter().map(|l| l.fallbacks).collect()
    }
}

/// Graph-building helper that registers parameters lazily, so parameters
/// outside the evaluated subgraph never enter the tape.
pub(crate) struct Builder<'a> {
    pub tape: Tape,
    params: &'a ModelParams,
    vars: Vec<Option<Var>>,
}

impl<'a> Builder<'a> {
    pub fn new(params: &'a ModelParams) -> Self {
        Self {
            tape: Tape::new(),
            params,
            vars: vec![None; params.len()],
        }
    }

    pub fn param(&mut self, name: &str) -> Result<Var> {
        let i = self
            .params
            .index_of(name)
            .ok_or_else(|| Error::arg(format!("parameter {name:?} missing from the parameter set")))?;
        if let Some(v) = self.vars[i] {
            return Ok(v);
        }
        let v = self.tape.param(self.params.at(i).value.clone());
        self.vars[i] = Some(v);
        Ok(v)
    }

    pub fn dense(&mut self, x: Var, prefix: &str, activate: bool) -> Result<Var> {
        let w = self.param(&format!("{prefix}.w"))?;
        let b = self.param(&format!("{prefix}.b"))?;
        let (xc, wr) = (self.tape.value(x).ncols(), self.tape.value(w).nrows());
        if xc != wr {
            return Err(Error::arg(format!("{prefix}: input width {xc} does not match weight rows {wr}")));
        }
        let h = self.tape.matmul(x, w);
        let h = self.tape.add_bias(h, b);
        Ok(if activate { self.tape.elu(h) } else { h })
    }

    /// MLP with ELU after every layer, or every layer but the last.
    pub fn mlp(&mut self, x: Var, prefix: &str, layers: usize, activate_last: bool) -> Result<Var> {
        let mut h = x;
        for i in 0..layers {
            let act = activate_last || i + 1 < layers;
            h = self.dense(h, &format!("{prefix}.mlp{i}"), act)?;
        }
        Ok(h)
    }

    /// One spatio-temporal graph layer over rows ordered `(joint, frame)`:
    /// `elu(W_time · (X W_self + (A X) W_nbr + b))`, with `W_time` mixing
    /// the frames of each joint.
    pub fn gcn(&mut self, x: Var, prefix: &str, joints: usize, frames: usize) -> Result<Var> {
        let graph = normalized_adjacency(joints)?;
        let mut mix: RowWeights = Vec::with_capacity(joints * frames);
        for j in 0..joints {
            for t in 0..frames {
                mix.push((0..joints).map(|k| (k * frames + t, graph.adjacency[[j, k]])).collect());
            }
        }
        let w_self = self.param(&format!("{prefix}.w_self"))?;
        let w_nbr = self.param(&format!("{prefix}.w_nbr"))?;
        let w_time = self.param(&format!("{prefix}.w_time"))?;
        let b = self.param(&format!("{prefix}.b"))?;
        if self.tape.value(w_time).nrows() != frames {
            return Err(Error::arg(format!(
                "{prefix}: parameters expect {} frames, input has {frames}",
                self.tape.value(w_time).nrows()
            )));
        }
        let own = self.tape.matmul(x, w_self);
        let nbr = self.tape.combine_rows(x, mix);
        let nbr = self.tape.matmul(nbr, w_nbr);
        let z = self.tape.add(own, nbr);
        let z = self.tape.add_bias(z, b);
        let z = self.tape.temporal_mix(w_time, z, joints);
        Ok(self.tape.elu(z))
    }

    /// Mean over the `groups` blocks of `frames` rows each.
    pub fn mean_over_groups(&mut self, x: Var, groups: usize, frames: usize) -> Var {
        let w = 1.0 / groups as f64;
        let weights = (0..frames)
            .map(|t| (0..groups).map(|g| (g * frames + t, w)).collect())
            .collect();
        self.tape.combine_rows(x, weights)
    }

    /// Mean of all rows, as a single row.
    pub fn mean_rows(&mut self, x: Var) -> Var {
        let n = self.tape.value(x).nrows();
        let w = 1.0 / n as f64;
        self.tape.combine_rows(x, vec![(0..n).map(|r| (r, w)).collect()])
    }

    pub fn broadcast_row(&mut self, row: Var, n: usize) -> Var {
        self.tape.gather_rows(row, vec![0; n])
    }

    /// Gradients of every parameter after seeding `root`. Unused parameters get zeros.
    pub fn param_gradients(&self, root: Var, seed: Array2<f64>) -> Result<ModelParams> {
        let grads = self.tape.backward(root, seed);
        let mut out = self.params.zeros_like();
        for (i, v) in self.vars.iter().enumerate() {
            if let Some(g) = v.and_then(|v| grads.get(v)) {
                out.at_mut(i).value.assign(g);
            }
        }
        if let Some(name) = out.first_non_finite() {
            return Err(Error::Numeric(format!("gradient of {name} is not finite")));
        }
        Ok(out)
    }
}

/// Rows ordered `(joint, frame)` → T×J×D.
fn joint_rows_to_array(m: &Array2<f64>, joints: usize, frames: usize) -> Array3<f64> {
    Array3::from_shape_fn((frames, joints, m.ncols()), |(t, j, c)| m[[j * frames + t, c]])
}

fn array_to_joint_rows(a: &Array3<f64>) -> Array2<f64> {
    let (frames, joints, d) = a.dim();
    Array2::from_shape_fn((joints * frames, d), |(r, c)| a[[r % frames, r / frames, c]])
}

fn scene_branch(b: &mut Builder, plan: &ScenePlan, config: &NetworkConfig) -> Result<Var> {
    let xyz = b.tape.constant(plan.xyz.clone());
    let mut level_feats = vec![xyz];
    for (l, (sa, lp)) in config.sa_levels.iter().zip(&plan.levels).enumerate() {
        let src = level_feats[l];
        let gathered = b.tape.gather_rows(src, lp.members.clone());
        let rel = b.tape.constant(lp.relative.clone());
        let input = b.tape.concat_cols(rel, gathered);
        let h = b.mlp(input, &format!("scene.sa{l}"), sa.widths.len(), true)?;
        level_feats.push(b.tape.segment_max(h, &lp.offsets));
    }
    let depth = config.sa_levels.len();
    let mut coarse = level_feats[depth];
    for (s, widths) in config.fp_widths.iter().enumerate() {
        let up = b.tape.combine_rows(coarse, plan.interp[s].clone());
        let skip = level_feats[depth - s - 1];
        let input = b.tape.concat_cols(up, skip);
        coarse = b.mlp(input, &format!("scene.fp{s}"), widths.len(), true)?;
    }
    Ok(coarse)
}

fn check_frames(frames: usize, config: &NetworkConfig) -> Result<()> {
    if frames != config.num_frames {
        return Err(Error::arg(format!(
            "window has {frames} frames, the network is configured for {}",
            config.num_frames
        )));
    }
    Ok(())
}

/// DCT along time for each joint; rows ordered `(joint, frame)`, 6 columns.
fn motion_input(m: &Array3<f64>) -> Result<Array2<f64>> {
    let (frames, joints, ch) = m.dim();
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::arg("motion array has non-finite entries"));
    }
    let c = dct_matrix(frames);
    let mut out = Array2::zeros((joints * frames, ch));
    for j in 0..joints {
        let seq = Array2::from_shape_fn((frames, ch), |(t, k)| m[[t, j, k]]);
        let coeffs = c.dot(&seq);
        for t in 0..frames {
            out.row_mut(j * frames + t).assign(&coeffs.row(t));
        }
    }
    Ok(out)
}

fn trajectory_branch(b: &mut Builder, m: &Array3<f64>, config: &NetworkConfig) -> Result<Var> {
    let (frames, joints, ch) = m.dim();
    check_frames(frames, config)?;
    if joints != NUM_JOINTS || ch != 6 {
        return Err(Error::arg(format!("motion array must be T×3×6, got {:?}", m.dim())));
    }
    let mut h = b.tape.constant(motion_input(m)?);
    for l in 0..config.gcn_layers {
        h = b.gcn(h, &format!("motion.enc{l}"), joints, frames)?;
    }
    Ok(h)
}

fn head_branch(b: &mut Builder, head: ArrayView2<f64>, config: &NetworkConfig) -> Result<Var> {
    if head.ncols() != 3 {
        return Err(Error::arg("head orientations must be T×3"));
    }
    check_frames(head.nrows(), config)?;
    let rows: Vec<Point3> = head.rows().into_iter().map(|r| [r[0], r[1], r[2]]).collect();
    motionenc::check_unit_rows(&rows)?;
    let coeffs = motionenc::dct(head)?;
    let x = b.tape.constant(coeffs);
    b.mlp(x, "motion.head", config.head_mlp_widths.len(), true)
}

/// Decodes stacked joint rows and pools over joints: T×D.
fn decode_branch(b: &mut Builder, motion: Var, joints: usize, config: &NetworkConfig) -> Result<Var> {
    let frames = config.num_frames;
    let mut h = motion;
    for l in 0..config.gcn_layers {
        h = b.gcn(h, &format!("motion.dec{l}"), joints, frames)?;
    }
    Ok(b.mean_over_groups(h, joints, frames))
}

/// Row-normalized `phi(q_i) . phi(k_j)`.
pub fn attention_weight_matrix(q: &Array2<f64>, k: &Array2<f64>) -> Array2<f64> {
    let pq = q.mapv(elu_plus_one);
    let pk = k.mapv(elu_plus_one);
    let mut w = pq.dot(&pk.t());
    for mut row in w.rows_mut() {
        let s = row.sum();
        row /= s;
    }
    w
}

struct Graph {
    logits: Var,
    f_scene: Var,
    f_traj: Option<Var>,
    f_head: Option<Var>,
    f_motion: Option<(Var, usize)>,
    f_pose: Option<Var>,
    a_pose: Option<Var>,
    f_fused: Var,
}

fn build_graph(b: &mut Builder, plan: &ScenePlan, window: &SparseMotionWindow, config: &NetworkConfig) -> Result<Graph> {
    let n = plan.num_points();
    let f_scene = scene_branch(b, plan, config)?;
    let mut g = Graph {
        logits: f_scene,
        f_scene,
        f_traj: None,
        f_head: None,
        f_motion: None,
        f_pose: None,
        a_pose: None,
        f_fused: f_scene,
    };
    if !config.variant.uses_motion() {
        g.logits = b.mlp(f_scene, "out", config.output_mlp_widths.len(), false)?;
        return Ok(g);
    }
    check_frames(window.num_frames(), config)?;
    let f_head = head_branch(b, window.head_matrix().view(), config)?;
    g.f_head = Some(f_head);
    let (f_motion, joints) = if config.variant.uses_trajectory() {
        let f_traj = trajectory_branch(b, &assemble_motion_array(window), config)?;
        g.f_traj = Some(f_traj);
        (b.tape.concat_rows(f_traj, f_head), NUM_JOINTS + 1)
    } else {
        (f_head, 1)
    };
    g.f_motion = Some((f_motion, joints));
    let f_pose = decode_branch(b, f_motion, joints, config)?;
    g.f_pose = Some(f_pose);

    let a_pose = match config.variant {
        Variant::Full | Variant::HeadScene => b.tape.linear_attention(f_scene, f_pose, f_pose)?,
        Variant::MotionQuery => {
            let per_frame = b.tape.linear_attention(f_pose, f_scene, f_scene)?;
            let pooled = b.mean_rows(per_frame);
            b.broadcast_row(pooled, n)
        }
        Variant::MlpFusion => {
            let pooled = b.mean_rows(f_pose);
            let tiled = b.broadcast_row(pooled, n);
            let x = b.tape.concat_cols(f_scene, tiled);
            b.dense(x, "fusion.mlp0", true)?
        }
        Variant::SceneOnly => unreachable!(),
    };
    g.a_pose = Some(a_pose);
    let fused = b.tape.concat_cols(f_scene, a_pose);
    g.f_fused = fused;
    g.logits = b.mlp(fused, "out", config.output_mlp_widths.len(), false)?;
    Ok(g)
}

fn logits_of(b: &Builder, v: Var) -> Vec<f64> {
    b.tape.value(v).column(0).to_vec()
}

pub fn forward_with_plan(
    plan: &ScenePlan,
    window: &SparseMotionWindow,
    params: &ModelParams,
    config: &NetworkConfig,
) -> Result<(IntentionHeatmap, FeatureBundle)> {
    let mut b = Builder::new(params);
    let g = build_graph(&mut b, plan, window, config)?;
    let frames = config.num_frames;
    let val = |v: Var| b.tape.value(v).clone();
    let attention_weights = match (config.variant, g.f_pose) {
        (Variant::Full | Variant::HeadScene, Some(p)) => {
            Some(attention_weight_matrix(b.tape.value(g.f_scene), b.tape.value(p)))
        }
        _ => None,
    };
    let bundle = FeatureBundle {
        f_scene: val(g.f_scene),
        f_traj: g.f_traj.map(|v| joint_rows_to_array(b.tape.value(v), NUM_JOINTS, frames)),
        f_head: g.f_head.map(|v| joint_rows_to_array(b.tape.value(v), 1, frames)),
        f_motion: g.f_motion.map(|(v, j)| joint_rows_to_array(b.tape.value(v), j, frames)),
        f_pose: g.f_pose.map(val),
        a_pose: g.a_pose.map(val),
        f_fused: val(g.f_fused),
        attention_weights,
    };
    let heat = IntentionHeatmap {
        logits: logits_of(&b, g.logits),
    };
    if heat.logits.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numeric("forward pass produced non-finite logits".into()));
    }
    Ok((heat, bundle))
}

pub fn forward(
    cloud: &ScenePointCloud,
    window: &SparseMotionWindow,
    params: &ModelParams,
    config: &NetworkConfig,
) -> Result<(IntentionHeatmap, FeatureBundle)> {
    let plan = ScenePlan::new(cloud, config)?;
    forward_with_plan(&plan, window, params, config)
}

pub fn gradient_with_plan(
    plan: &ScenePlan,
    window: &SparseMotionWindow,
    mask: &BinaryIntentionMask,
    params: &ModelParams,
    config: &NetworkConfig,
    loss: &LossConfig,
) -> Result<(LossBreakdown, ModelParams)> {
    let mut b = Builder::new(params);
    let g = build_graph(&mut b, plan, window, config)?;
    let logits = logits_of(&b, g.logits);
    let (breakdown, dlogits) = total_loss_with_grad(&logits, mask, loss)?;
    if !breakdown.total.is_finite() {
        return Err(Error::Numeric("loss is not finite".into()));
    }
    let seed = Array2::from_shape_vec((dlogits.len(), 1), dlogits).expect("logit column");
    let grads = b.param_gradients(g.logits, seed)?;
    Ok((breakdown, grads))
}

/// Exact gradient of the total loss with respect to every parameter.
pub fn gradient(
    cloud: &ScenePointCloud,
    window: &SparseMotionWindow,
    mask: &BinaryIntentionMask,
    params: &ModelParams,
    config: &NetworkConfig,
    loss: &LossConfig,
) -> Result<(LossBreakdown, ModelParams)> {
    let plan = ScenePlan::new(cloud, config)?;
    gradient_with_plan(&plan, window, mask, params, config, loss)
}

/// Scene features, N×D.
pub fn encode_scene(cloud: &ScenePointCloud, params: &ModelParams, config: &NetworkConfig) -> Result<Array2<f64>> {
    let plan = ScenePlan::new(cloud, config)?;
    let mut b = Builder::new(params);
    let v = scene_branch(&mut b, &plan, config)?;
    Ok(b.tape.value(v).clone())
}

/// Trajectory features from a T×3×6 motion array: T×3×D.
pub fn encode_motion(m: &Array3<f64>, params: &ModelParams, config: &NetworkConfig) -> Result<Array3<f64>> {
    let mut b = Builder::new(params);
    let v = trajectory_branch(&mut b, m, config)?;
    Ok(joint_rows_to_array(b.tape.value(v), NUM_JOINTS, m.dim().0))
}

/// Head-orientation features from unit T×3 rows: T×1×D.
pub fn encode_head(head: ArrayView2<f64>, params: &ModelParams, config: &NetworkConfig) -> Result<Array3<f64>> {
    let mut b = Builder::new(params);
    let v = head_branch(&mut b, head, config)?;
    Ok(joint_rows_to_array(b.tape.value(v), 1, head.nrows()))
}

/// Joint-axis concatenation, graph decoding and joint pooling: T×D.
pub fn fuse_and_decode(
    f_traj: &Array3<f64>,
    f_head: &Array3<f64>,
    params: &ModelParams,
    config: &NetworkConfig,
) -> Result<Array2<f64>> {
    let (frames, _, d) = f_traj.dim();
    if f_head.dim() != (frames, 1, d) {
        return Err(Error::arg(format!(
            "head features {:?} do not match trajectory features {:?}",
            f_head.dim(),
            f_traj.dim()
        )));
    }
    check_frames(frames, config)?;
    let mut b = Builder::new(params);
    let traj = b.tape.constant(array_to_joint_rows(f_traj));
    let head = b.tape.constant(array_to_joint_rows(f_head));
    let joints = f_traj.dim().1 + 1;
    let stacked = b.tape.concat_rows(traj, head);
    let v = decode_branch(&mut b, stacked, joints, config)?;
    Ok(b.tape.value(v).clone())
}

/// Kernelized cross-attention: returns the attended values (rows of `q`)
/// and the row-stochastic query-to-key weights.
pub fn linear_cross_attention(q: &Array2<f64>, k: &Array2<f64>, v: &Array2<f64>) -> Result<(Array2<f64>, Array2<f64>)> {
    if q.ncols() != k.ncols() || q.ncols() == 0 {
        return Err(Error::arg("queries and keys must share a positive width"));
    }
    if k.nrows() == 0 || k.nrows() != v.nrows() {
        return Err(Error::arg("keys and values must share a positive length"));
    }
    let mut tape = Tape::new();
    let (qv, kv, vv) = (tape.constant(q.clone()), tape.constant(k.clone()), tape.constant(v.clone()));
    let out = tape.linear_attention(qv, kv, vv)?;
    Ok((tape.value(out).clone(), attention_weight_matrix(q, k)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::int3dnet::config::SetAbstraction;
    use ndarray::array;

    pub(crate) fn micro_config(variant: Variant) -> NetworkConfig {
        NetworkConfig {
            feature_dim: 8,
            num_frames: 5,
            sa_levels: vec![
                SetAbstraction { num_centers: 16, radius: 0.5, k_max: 8, widths: vec![8, 8] },
                SetAbstraction { num_centers: 4, radius: 1.0, k_max: 8, widths: vec![8, 12] },
            ],
            fp_widths: vec![vec![8], vec![8, 8]],
            interp_k: 3,
            gcn_layers: 2,
            head_mlp_widths: vec![8, 8],
            output_mlp_widths: vec![16, 1],
            attention_kernel: super::super::config::AttentionKernel::EluPlusOne,
            variant,
        }
    }

    #[test]
    fn attention_closed_forms() {
        let q = array![[0.3, -1.0], [2.0, 0.1], [-0.5, -0.5]];
        let k1 = array![[0.7, -0.2]];
        let v1 = array![[0.4, -0.3]];
        let (a, w) = linear_cross_attention(&q, &k1, &v1).unwrap();
        for row in a.rows() {
            assert!((row[0] - 0.4).abs() < 1e-6 && (row[1] + 0.3).abs() < 1e-6);
        }
        assert!(w.iter().all(|&x| x == 1.0));

        let k = array![[0.2, 0.4], [0.2, 0.4], [0.2, 0.4]];
        let v = array![[1.0, 2.0], [3.0, -4.0], [5.0, 8.0]];
        let (a, _) = linear_cross_attention(&q, &k, &v).unwrap();
        for row in a.rows() {
            assert!((row[0] - 3.0).abs() < 1e-6 && (row[1] - 2.0).abs() < 1e-6);
        }

        // phi(0) = 1, phi(2) = 3.
        let k = array![[0.0], [2.0]];
        let v = array![[10.0], [20.0]];
        for qv in [0.0, 0.5, 1.7] {
            let (a, _) = linear_cross_attention(&array![[qv]], &k, &v).unwrap();
            assert!((a[[0, 0]] - 17.5).abs() < 1e-5);
        }
    }

    #[test]
    fn fps_start_prefers_far_point() {
        assert_eq!(fps_start(&[[0.1, 0.0, 0.0], [3.0, 0.0, 0.0], [0.0, -3.0, 0.0]]), 1);
    }

    #[test]
    fn joint_row_layout_round_trip() {
        let a = Array3::from_shape_fn((5, 4, 3), |(t, j, c)| (t * 100 + j * 10 + c) as f64);
        let rows = array_to_joint_rows(&a);
        assert_eq!(rows[[2 * 5 + 3, 1]], a[[3, 2, 1]]);
        assert_eq!(joint_rows_to_array(&rows, 4, 5), a);
    }

    fn micro_inputs(seed: u64) -> (ScenePointCloud, SparseMotionWindow, BinaryIntentionMask) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let pts: Vec<Point3> = (0..64)
            .map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(0.0..1.5)])
            .collect();
        let mask = BinaryIntentionMask::from_bools(pts.iter().map(|p| p[0] > 0.3 && p[1] > 0.0));
        let positions = (0..5)
            .map(|t| {
                let s = t as f64 * 0.1;
                [[0.0, -0.1 * s, 1.6], [0.2 + s, 0.3, 1.0 + 0.2 * s], [0.2, -0.3, 0.9 - 0.1 * s]]
            })
            .collect();
        let heads = (0..5)
            .map(|t| {
                let a = 0.2 * t as f64;
                let v: Point3 = [a.cos() * 0.9, a.sin() * 0.9, -0.3];
                let n = dist2(&v, &[0.0; 3]).sqrt();
                [v[0] / n, v[1] / n, v[2] / n]
            })
            .collect();
        let window = SparseMotionWindow::from_positions(positions, heads, 0.05).unwrap();
        (ScenePointCloud::new(pts).unwrap(), window, mask)
    }

    /// Entries whose analytic and central-difference gradients disagree.
    pub(crate) fn gradient_mismatches(variant: Variant, seed: u64, h: f64, tol: f64) -> Vec<String> {
        let cfg = micro_config(variant);
        let (cloud, window, mask) = micro_inputs(seed);
        let params = ModelParams::init(&cfg, seed + 100).unwrap();
        let loss = LossConfig::default();
        let plan = ScenePlan::new(&cloud, &cfg).unwrap();
        let (_, grads) = gradient_with_plan(&plan, &window, &mask, &params, &cfg, &loss).unwrap();
        let mut p = params.clone();
        let mut bad = Vec::new();
        for pi in 0..params.len() {
            let cols = params.at(pi).value.ncols();
            for e in 0..params.at(pi).value.len() {
                let (r, c) = (e / cols, e % cols);
                let x0 = params.at(pi).value[[r, c]];
                let mut eval = |x: f64| {
                    p.at_mut(pi).value[[r, c]] = x;
                    let (heat, _) = forward_with_plan(&plan, &window, &p, &cfg).unwrap();
                    crate::objective::total_loss(&heat.logits, &mask, &loss).unwrap().0
                };
                let num = (eval(x0 + h) - eval(x0 - h)) / (2.0 * h);
                p.at_mut(pi).value[[r, c]] = x0;
                let ana = grads.at(pi).value[[r, c]];
                let rel = (ana - num).abs() / ana.abs().max(num.abs()).max(1e-8);
                if rel >= tol {
                    bad.push(format!("{}[{r},{c}] analytic {ana:e} numeric {num:e}", params.at(pi).name));
                }
            }
        }
        bad
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for v in Variant::ALL {
            let bad = gradient_mismatches(v, 3, 1e-4, 1e-3);
            assert!(bad.is_empty(), "{v}: {bad:?}");
        }
    }

    #[test]
    fn excised_branches_get_zero_gradient() {
        let cfg = micro_config(Variant::SceneOnly);
        let (cloud, window, mask) = micro_inputs(4);
        let params = ModelParams::init(&cfg, 2).unwrap();
        let (_, g) = gradient(&cloud, &window, &mask, &params, &cfg, &LossConfig::default()).unwrap();
        for p in g.iter().filter(|p| p.name.starts_with("motion.")) {
            assert!(p.value.iter().all(|&v| v == 0.0), "{}", p.name);
        }
        let (_, bundle) = forward(&cloud, &window, &params, &cfg).unwrap();
        assert!(bundle.f_pose.is_none() && bundle.attention_weights.is_none());
        assert_eq!(bundle.f_fused.dim(), (64, 8));
    }

    #[test]
    fn bundle_shapes_and_weights() {
        let cfg = micro_config(Variant::Full);
        let (cloud, window, _) = micro_inputs(5);
        let params = ModelParams::init(&cfg, 2).unwrap();
        let (heat, b) = forward(&cloud, &window, &params, &cfg).unwrap();
        assert_eq!(heat.len(), 64);
        assert_eq!(b.f_scene.dim(), (64, 8));
        assert_eq!(b.f_traj.as_ref().unwrap().dim(), (5, 3, 8));
        assert_eq!(b.f_head.as_ref().unwrap().dim(), (5, 1, 8));
        assert_eq!(b.f_motion.as_ref().unwrap().dim(), (5, 4, 8));
        assert_eq!(b.f_pose.as_ref().unwrap().dim(), (5, 8));
        assert_eq!(b.f_fused.dim(), (64, 16));
        let w = b.attention_weights.unwrap();
        for row in w.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-9 && row.iter().all(|&x| x > 0.0));
        }
        // The standalone encoders reproduce the bundle.
        let scene = encode_scene(&cloud, &params, &cfg).unwrap();
        assert_eq!(scene, b.f_scene);
        let traj = encode_motion(&assemble_motion_array(&window), &params, &cfg).unwrap();
        assert_eq!(&traj, b.f_traj.as_ref().unwrap());
        let head = encode_head(window.head_matrix().view(), &params, &cfg).unwrap();
        let pose = fuse_and_decode(&traj, &head, &params, &cfg).unwrap();
        assert!((&pose - b.f_pose.as_ref().unwrap()).iter().all(|d| d.abs() < 1e-12));
    }

    #[test]
    fn rejects_wrong_frame_count_and_missing_params() {
        let cfg = micro_config(Variant::Full);
        let (cloud, window, _) = micro_inputs(6);
        let params = ModelParams::init(&cfg, 2).unwrap();
        let other = NetworkConfig { num_frames: 6, ..cfg.clone() };
        assert!(matches!(forward(&cloud, &window, &params, &other), Err(Error::Argument(_))));
        let trimmed = ModelParams::from_params(params.iter().filter(|p| p.name != "out.mlp0.b").cloned().collect()).unwrap();
        assert!(forward(&cloud, &window, &trimmed, &cfg).is_err());
        let small = ScenePointCloud::new(cloud.points()[..10].to_vec()).unwrap();
        assert!(forward(&small, &window, &params, &cfg).is_err());
    }
}
