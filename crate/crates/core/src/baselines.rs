//! Comparison methods without a scene-motion network: a head-orientation
//! ray scorer and a wrist-region scorer driven by a small motion forecaster.

use std::path::Path;

use log::info;
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::datapipe::{read_tensors, write_tensors, Tensor};
use crate::error::{Error, Result};
use crate::harness::Adam;
use crate::int3dnet::{Builder, IntentionHeatmap, LayoutBuilder, ModelParams, Param};
use crate::motionenc::{JointFrame, SparseMotionWindow, HEAD, LEFT_HAND, NUM_JOINTS, RIGHT_HAND};
use crate::pointcloud::{dist2, Point3, ScenePointCloud};

/// Clip applied when turning probabilities into logits.
pub const PROBABILITY_CLIP: f64 = 1e-9;

/// Logits of probabilities clipped to `[clip, 1 - clip]`.
pub fn probabilities_to_heatmap(probs: &[f64], clip: f64) -> IntentionHeatmap {
    IntentionHeatmap {
        logits: probs
            .iter()
            .map(|&p| {
                let p = p.clamp(clip, 1.0 - clip);
                (p / (1.0 - p)).ln()
            })
            .collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayScorerConfig {
    pub sigma_ray: f64,
}

impl Default for RayScorerConfig {
    fn default() -> Self {
        Self { sigma_ray: 0.15 }
    }
}

/// Gaussian falloff around the final head ray; points behind the head score 0.
pub fn head_ray_scores(cloud: &ScenePointCloud, window: &SparseMotionWindow, config: &RayScorerConfig) -> Result<Vec<f64>> {
    if !(config.sigma_ray > 0.0) {
        return Err(Error::arg("sigma_ray must be positive"));
    }
    let last = window.num_frames() - 1;
    let origin = window.position(last, HEAD);
    let dir = window.head_orientation(last);
    let k = 1.0 / (2.0 * config.sigma_ray * config.sigma_ray);
    Ok(cloud
        .points()
        .iter()
        .map(|p| {
            let d = [p[0] - origin[0], p[1] - origin[1], p[2] - origin[2]];
            let along = d[0] * dir[0] + d[1] * dir[1] + d[2] * dir[2];
            if along <= 0.0 {
                return 0.0;
            }
            let perp2 = (dist2(&d, &[0.0; 3]) - along * along).max(0.0);
            (-perp2 * k).exp()
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForecastConfig {
    /// Frames to predict; at most the forecaster's trained horizon.
    pub horizon_frames: usize,
    pub sigma_wrist: f64,
}

impl Default for ForecastConfig {
    fn default() -> Self {
        Self {
            horizon_frames: 30,
            sigma_wrist: 0.2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ForecasterShape {
    pub num_frames: usize,
    pub feature_dim: usize,
    pub gcn_layers: usize,
    pub horizon_frames: usize,
}

impl ForecasterShape {
    fn validate(&self) -> Result<()> {
        if self.num_frames < 2 || self.feature_dim == 0 || self.gcn_layers == 0 || self.horizon_frames == 0 {
            return Err(Error::Config(format!("invalid forecaster shape {self:?}")));
        }
        Ok(())
    }

    fn layout(&self) -> Vec<crate::int3dnet::ParamSpec> {
        let mut b = LayoutBuilder::default();
        for l in 0..self.gcn_layers {
            let fan_in = if l == 0 { 6 } else { self.feature_dim };
            b.gcn(&format!("forecast.enc{l}"), fan_in, self.feature_dim, self.num_frames);
        }
        b.dense("forecast.out", self.num_frames * self.feature_dim, self.horizon_frames * 3);
        b.finish()
    }
}

/// DCT-domain graph encoder over the three tracked joints with a linear
/// readout of per-joint displacements relative to the last observed frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Forecaster {
    pub shape: ForecasterShape,
    pub params: ModelParams,
    pub trained: bool,
}

/// Per-joint DCT of positions relative to the last frame, and velocities.
fn forecaster_input(window: &SparseMotionWindow) -> Array2<f64> {
    let t = window.num_frames();
    let last = window.positions()[t - 1];
    let c = crate::motionenc::dct_matrix(t);
    let mut out = Array2::zeros((NUM_JOINTS * t, 6));
    for j in 0..NUM_JOINTS {
        let seq = Array2::from_shape_fn((t, 6), |(f, k)| {
            if k < 3 {
                window.positions()[f][j][k] - last[j][k]
            } else {
                window.velocities()[f][j][k - 3]
            }
        });
        let coeffs = c.dot(&seq);
        for f in 0..t {
            out.row_mut(j * t + f).assign(&coeffs.row(f));
        }
    }
    out
}

impl Forecaster {
    pub fn new(shape: ForecasterShape, seed: u64) -> Result<Self> {
        shape.validate()?;
        let mut params = ModelParams::init_from_layout(&shape.layout(), seed);
        // A small readout keeps the untrained prediction near "stay put".
        for p in params.iter_mut().filter(|p| p.name == "forecast.out.w") {
            p.value.mapv_inplace(|v| (v * 0.1) as f32 as f64);
        }
        Ok(Self {
            shape,
            params,
            trained: false,
        })
    }

    /// Displacements `(J, H*3)` on a fresh graph; returns the builder and output var.
    fn graph<'a>(&'a self, params: &'a ModelParams, window: &SparseMotionWindow) -> Result<(Builder<'a>, crate::tape::Var)> {
        let t = self.shape.num_frames;
        if window.num_frames() != t {
            return Err(Error::arg(format!(
                "forecaster expects {t} frames, window has {}",
                window.num_frames()
            )));
        }
        let mut b = Builder::new(params);
        let mut h = b.tape.constant(forecaster_input(window));
        for l in 0..self.shape.gcn_layers {
            h = b.gcn(h, &format!("forecast.enc{l}"), NUM_JOINTS, t)?;
        }
        let flat = b.tape.reshape(h, NUM_JOINTS, t * self.shape.feature_dim);
        let out = b.dense(flat, "forecast.out", false)?;
        Ok((b, out))
    }

    fn predict_with(&self, params: &ModelParams, window: &SparseMotionWindow) -> Result<Vec<JointFrame>> {
        let (b, out) = self.graph(params, window)?;
        let d = b.tape.value(out);
        let last = window.positions()[window.num_frames() - 1];
        Ok((0..self.shape.horizon_frames)
            .map(|f| {
                let mut frame = last;
                for (j, joint) in frame.iter_mut().enumerate() {
                    for k in 0..3 {
                        joint[k] += d[[j, 3 * f + k]];
                    }
                }
                frame
            })
            .collect())
    }

    /// Mean squared position error over the available target frames, and its gradient.
    fn loss_and_grad(&self, window: &SparseMotionWindow, target: &[JointFrame]) -> Result<(f64, ModelParams)> {
        let (b, out) = self.graph(&self.params, window)?;
        let d = b.tape.value(out);
        let last = window.positions()[window.num_frames() - 1];
        let frames = target.len().min(self.shape.horizon_frames);
        let count = (frames * NUM_JOINTS * 3) as f64;
        let mut seed = Array2::zeros(d.dim());
        let mut loss = 0.0;
        for (f, tf) in target.iter().take(frames).enumerate() {
            for j in 0..NUM_JOINTS {
                for k in 0..3 {
                    let e = last[j][k] + d[[j, 3 * f + k]] - tf[j][k];
                    loss += e * e / count;
                    seed[[j, 3 * f + k]] = 2.0 * e / count;
                }
            }
        }
        let grads = b.param_gradients(out, seed)?;
        Ok((loss, grads))
    }

    /// Adam on mean squared error; pairs without future frames are ignored.
    pub fn train(&mut self, data: &[(SparseMotionWindow, Vec<JointFrame>)], options: &ForecastTraining) -> Result<Vec<f64>> {
        let usable: Vec<usize> = (0..data.len()).filter(|&i| !data[i].1.is_empty()).collect();
        if usable.is_empty() {
            return Err(Error::arg("no forecaster training pairs with future frames"));
        }
        let mut adam = Adam::new(&self.params, options.learning_rate);
        let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
        let mut history = Vec::with_capacity(options.epochs);
        let mut order = usable.clone();
        for epoch in 0..options.epochs {
            order.shuffle(&mut rng);
            let mut total = 0.0;
            for chunk in order.chunks(options.batch_size.max(1)) {
                let mut acc = self.params.zeros_like();
                for &i in chunk {
                    let (l, g) = self.loss_and_grad(&data[i].0, &data[i].1)?;
                    if !l.is_finite() {
                        return Err(Error::Numeric(format!("forecaster loss not finite at epoch {}", epoch + 1)));
                    }
                    total += l;
                    acc.scaled_add(1.0 / chunk.len() as f64, &g);
                }
                adam.step(&mut self.params, &acc)?;
            }
            let mean = total / order.len() as f64;
            info!("forecaster epoch {}: mse {mean:.6}", epoch + 1);
            history.push(mean);
        }
        self.trained = true;
        Ok(history)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let s = &self.shape;
        let mut t = vec![
            Tensor::scalar("config.kind", 1.0),
            Tensor::scalar("config.trained", if self.trained { 1.0 } else { 0.0 }),
            Tensor::scalar("config.num_frames", s.num_frames as f64),
            Tensor::scalar("config.feature_dim", s.feature_dim as f64),
            Tensor::scalar("config.gcn_layers", s.gcn_layers as f64),
            Tensor::scalar("config.horizon_frames", s.horizon_frames as f64),
        ];
        t.extend(self.params.iter().map(|p| Tensor::from_array(&p.name, &p.value, p.is_bias)));
        write_tensors(path, &t)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let tensors = read_tensors(path)?;
        let get = |name: &str| -> Result<&Tensor> {
            tensors
                .iter()
                .find(|t| t.name == name)
                .ok_or_else(|| Error::format(path, 0, format!("forecaster checkpoint lacks {name:?}")))
        };
        let scalar = |name: &str| -> Result<usize> {
            match get(name)?.data.as_slice() {
                [v] if *v >= 0.0 && v.fract() == 0.0 => Ok(*v as usize),
                _ => Err(Error::format(path, 0, format!("{name} must be a non-negative integer"))),
            }
        };
        if scalar("config.kind")? != 1 {
            return Err(Error::format(path, 0, "not a forecaster checkpoint"));
        }
        let shape = ForecasterShape {
            num_frames: scalar("config.num_frames")?,
            feature_dim: scalar("config.feature_dim")?,
            gcn_layers: scalar("config.gcn_layers")?,
            horizon_frames: scalar("config.horizon_frames")?,
        };
        shape.validate().map_err(|e| Error::format(path, 0, e.to_string()))?;
        let params = shape
            .layout()
            .iter()
            .map(|spec| {
                let t = get(&spec.name)?;
                if t.data.len() != spec.rows * spec.cols {
                    return Err(Error::format(path, 0, format!("{} has the wrong size", spec.name)));
                }
                Ok(Param {
                    name: spec.name.clone(),
                    value: Array2::from_shape_vec((spec.rows, spec.cols), t.data.iter().map(|&v| v as f64).collect())
                        .expect("size checked"),
                    is_bias: spec.is_bias,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            shape,
            params: ModelParams::from_params(params)?,
            trained: scalar("config.trained")? == 1,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForecastTraining {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for ForecastTraining {
    fn default() -> Self {
        Self {
            epochs: 40,
            batch_size: 8,
            learning_rate: 1e-3,
            seed: 0,
        }
    }
}

/// Future joint positions, `horizon_frames × 3 × 3`.
pub fn forecast_future_joints(
    window: &SparseMotionWindow,
    forecaster: &Forecaster,
    config: &ForecastConfig,
) -> Result<Vec<JointFrame>> {
    if !forecaster.trained {
        return Err(Error::Usage("forecaster parameters are untrained".into()));
    }
    if config.horizon_frames == 0 || config.horizon_frames > forecaster.shape.horizon_frames {
        return Err(Error::arg(format!(
            "horizon of {} frames outside the forecaster's 1..={}",
            config.horizon_frames, forecaster.shape.horizon_frames
        )));
    }
    let mut frames = forecaster.predict_with(&forecaster.params, window)?;
    frames.truncate(config.horizon_frames);
    Ok(frames)
}

/// The hand that moves farther by the final predicted frame; ties go to the left hand.
pub fn interacting_hand(current: &JointFrame, predicted: &JointFrame) -> usize {
    let l = dist2(&current[LEFT_HAND], &predicted[LEFT_HAND]);
    let r = dist2(&current[RIGHT_HAND], &predicted[RIGHT_HAND]);
    if r > l {
        RIGHT_HAND
    } else {
        LEFT_HAND
    }
}

pub fn wrist_scores(cloud: &ScenePointCloud, wrist: &Point3, sigma: f64) -> Vec<f64> {
    let k = 1.0 / (2.0 * sigma * sigma);
    cloud.points().iter().map(|p| (-dist2(p, wrist) * k).exp()).collect()
}

/// Gaussian around the predicted wrist of the interacting hand.
pub fn motion_forecast_scores(
    cloud: &ScenePointCloud,
    window: &SparseMotionWindow,
    forecaster: &Forecaster,
    config: &ForecastConfig,
) -> Result<Vec<f64>> {
    if !(config.sigma_wrist > 0.0) {
        return Err(Error::arg("sigma_wrist must be positive"));
    }
    let future = forecast_future_joints(window, forecaster, config)?;
    let current = window.positions()[window.num_frames() - 1];
    let predicted = future.last().expect("at least one frame");
    let hand = interacting_hand(&current, predicted);
    Ok(wrist_scores(cloud, &predicted[hand], config.sigma_wrist))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn window(head: Point3, dir: Point3) -> SparseMotionWindow {
        let p = [head, [0.0, 0.2, 1.0], [0.0, -0.2, 1.0]];
        SparseMotionWindow::from_positions(vec![p; 5], vec![dir; 5], 0.05).unwrap()
    }

    #[test]
    fn ray_examples() {
        let w = window([0.0, 0.0, 1.6], [1.0, 0.0, 0.0]);
        let cloud = ScenePointCloud::new(vec![[2.0, 0.0, 1.6], [-1.0, 0.0, 1.6], [1.0, 0.15, 1.6]]).unwrap();
        let s = head_ray_scores(&cloud, &w, &RayScorerConfig::default()).unwrap();
        assert_eq!(s[0], 1.0);
        assert_eq!(s[1], 0.0);
        assert!((s[2] - (-0.5f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn ray_is_rotation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pts: Vec<Point3> = (0..50).map(|_| [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(0.0..2.0)]).collect();
        let dir = [0.6, 0.64, -0.48];
        let w = window([0.1, 0.2, 1.6], dir);
        let base = head_ray_scores(&ScenePointCloud::new(pts.clone()).unwrap(), &w, &RayScorerConfig::default()).unwrap();
        let (c, s) = (0.7f64.cos(), 0.7f64.sin());
        let rot = |p: &Point3| [c * p[0] - s * p[2], p[1], s * p[0] + c * p[2]];
        let rotated = ScenePointCloud::new(pts.iter().map(rot).collect()).unwrap();
        let w2 = window(rot(&[0.1, 0.2, 1.6]), rot(&dir));
        let other = head_ray_scores(&rotated, &w2, &RayScorerConfig::default()).unwrap();
        for (a, b) in base.iter().zip(&other) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn hand_tie_goes_left() {
        let cur = [[0.0; 3], [0.0, 0.2, 1.0], [0.0, -0.2, 1.0]];
        let pred = [[0.0; 3], [0.1, 0.2, 1.0], [0.1, -0.2, 1.0]];
        assert_eq!(interacting_hand(&cur, &pred), LEFT_HAND);
        let pred = [[0.0; 3], [0.1, 0.2, 1.0], [0.2, -0.2, 1.0]];
        assert_eq!(interacting_hand(&cur, &pred), RIGHT_HAND);
        let cloud = ScenePointCloud::new(vec![[0.1, 0.2, 1.0], [0.1, 0.4, 1.0]]).unwrap();
        let s = wrist_scores(&cloud, &[0.1, 0.2, 1.0], 0.2);
        assert_eq!(s[0], 1.0);
        assert!((s[1] - (-0.5f64).exp()).abs() < 1e-12);
    }

    fn linear_track(rng: &mut ChaCha8Rng, t: usize, future: usize, still: bool) -> (SparseMotionWindow, Vec<JointFrame>) {
        let dt = 0.05;
        let mut start = [[0.0; 3]; 3];
        let mut vel = [[0.0; 3]; 3];
        for j in 0..3 {
            for k in 0..3 {
                start[j][k] = rng.random_range(-1.0..1.0);
                vel[j][k] = if still { 0.0 } else { rng.random_range(-0.5..0.5) };
            }
        }
        let at = |f: usize| -> JointFrame {
            let tt = f as f64 * dt;
            std::array::from_fn(|j| std::array::from_fn(|k| start[j][k] + vel[j][k] * tt))
        };
        let positions = (0..t).map(at).collect();
        let heads = vec![[1.0, 0.0, 0.0]; t];
        let w = SparseMotionWindow::from_positions(positions, heads, dt).unwrap();
        (w, (t..t + future).map(at).collect())
    }

    fn trained(still: bool) -> (Forecaster, ChaCha8Rng) {
        let mut rng = ChaCha8Rng::seed_from_u64(if still { 1 } else { 2 });
        let data: Vec<_> = (0..200).map(|_| linear_track(&mut rng, 8, 6, still)).collect();
        let shape = ForecasterShape { num_frames: 8, feature_dim: 16, gcn_layers: 1, horizon_frames: 6 };
        let mut f = Forecaster::new(shape, 3).unwrap();
        let opts = ForecastTraining { epochs: 60, batch_size: 4, learning_rate: 3e-3, seed: 4 };
        f.train(&data, &opts).unwrap();
        (f, rng)
    }

    #[test]
    fn learns_constant_velocity() {
        let (f, mut rng) = trained(false);
        let cfg = ForecastConfig { horizon_frames: 6, sigma_wrist: 0.2 };
        let mut worst = 0.0f64;
        for _ in 0..20 {
            let (w, fut) = linear_track(&mut rng, 8, 6, false);
            let pred = forecast_future_joints(&w, &f, &cfg).unwrap();
            assert_eq!(pred.len(), 6);
            for j in 0..3 {
                worst = worst.max(dist2(&pred[5][j], &fut[5][j]).sqrt());
            }
        }
        assert!(worst < 0.05, "{worst}");
    }

    #[test]
    fn learns_fixed_point() {
        let (f, mut rng) = trained(true);
        let cfg = ForecastConfig { horizon_frames: 6, sigma_wrist: 0.2 };
        let (w, _) = linear_track(&mut rng, 8, 6, true);
        let pred = forecast_future_joints(&w, &f, &cfg).unwrap();
        for j in 0..3 {
            assert!(dist2(&pred[5][j], &w.positions()[7][j]).sqrt() < 0.01);
        }
    }

    #[test]
    fn untrained_and_round_trip() {
        let shape = ForecasterShape { num_frames: 5, feature_dim: 4, gcn_layers: 2, horizon_frames: 3 };
        let f = Forecaster::new(shape, 1).unwrap();
        let w = window([0.0, 0.0, 1.6], [1.0, 0.0, 0.0]);
        assert!(matches!(
            forecast_future_joints(&w, &f, &ForecastConfig { horizon_frames: 3, sigma_wrist: 0.2 }),
            Err(Error::Usage(_))
        ));
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.ckpt");
        f.save(&p).unwrap();
        assert_eq!(Forecaster::load(&p).unwrap(), f);
    }
}
