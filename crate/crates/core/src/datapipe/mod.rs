//! Sessions, window extraction, Gaussian ground truth, scene splits, the
//! synthetic reach generator and the on-disk formats.

mod io;
mod synth;

use std::collections::BTreeSet;
use std::sync::Arc;

use log::debug;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::metrics::GroundTruth;
use crate::motionenc::{JointFrame, SparseMotionWindow, HEAD};
use crate::pointcloud::{dist2, distance_weighted_subsample, BodyFrame, Point3, ScenePointCloud};

pub use io::{
    load_model, read_dataset_split, read_heatmap, read_sample, read_tensors, read_triangle_list, save_model, write_dataset_split,
    write_heatmap, write_sample, write_tensors, Tensor, CHECKPOINT_MAGIC, CHECKPOINT_VERSION, SAMPLE_FORMAT_VERSION,
};
pub use synth::{gen_synthetic, min_jerk, min_jerk_rate, Clutter, SynthConfig};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SessionFrame {
    pub time: f64,
    pub joints: JointFrame,
    pub head_orientation: Point3,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    Grasp,
    Place,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InteractionEvent {
    pub time: f64,
    pub goal: Point3,
    pub kind: EventKind,
}

/// One continuous recording in world coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Session {
    pub session_id: String,
    pub scene_id: String,
    /// Where the scene points came from, e.g. a mesh path.
    pub scene_source: String,
    pub scene: Arc<ScenePointCloud>,
    pub frames: Vec<SessionFrame>,
    pub events: Vec<InteractionEvent>,
}

impl Session {
    pub fn validate(&self) -> Result<()> {
        if self.frames.is_empty() {
            return Err(Error::arg(format!("session {} has no frames", self.session_id)));
        }
        if self.frames.windows(2).any(|w| !(w[1].time > w[0].time)) {
            return Err(Error::arg(format!("session {} timestamps must strictly increase", self.session_id)));
        }
        if self.events.iter().any(|e| e.goal.iter().any(|v| !v.is_finite()) || !e.time.is_finite()) {
            return Err(Error::arg(format!("session {} has a non-finite event", self.session_id)));
        }
        Ok(())
    }
}

/// A motion window cut from a session, still in world coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtractedWindow {
    pub event_index: usize,
    pub event: InteractionEvent,
    pub horizon_ms: u32,
    /// Timestamps of the resampled frames.
    pub times: Vec<f64>,
    pub window: SparseMotionWindow,
    /// Frames after the window at the same rate, up to the event.
    pub future: Vec<JointFrame>,
}

fn lerp(a: &Point3, b: &Point3, s: f64) -> Point3 {
    [a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1]), a[2] + s * (b[2] - a[2])]
}

fn normalize(v: Point3) -> Point3 {
    let n = dist2(&v, &[0.0; 3]).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

/// Spherical interpolation between unit vectors.
pub fn slerp(a: &Point3, b: &Point3, s: f64) -> Point3 {
    let dot = (a[0] * b[0] + a[1] * b[1] + a[2] * b[2]).clamp(-1.0, 1.0);
    let theta = dot.acos();
    if theta < 1e-9 {
        return normalize(lerp(a, b, s));
    }
    let (wa, wb) = (((1.0 - s) * theta).sin() / theta.sin(), (s * theta).sin() / theta.sin());
    normalize([wa * a[0] + wb * b[0], wa * a[1] + wb * b[1], wa * a[2] + wb * b[2]])
}

const TIME_EPS: f64 = 1e-9;

/// Joint positions and head orientation at time `t`, which must lie within the session.
fn sample_at(frames: &[SessionFrame], t: f64) -> (JointFrame, Point3) {
    let hi = frames.partition_point(|f| f.time < t);
    if hi == 0 {
        return (frames[0].joints, frames[0].head_orientation);
    }
    if hi == frames.len() {
        let f = frames.last().unwrap();
        return (f.joints, f.head_orientation);
    }
    let (a, b) = (&frames[hi - 1], &frames[hi]);
    if (b.time - t).abs() <= TIME_EPS {
        return (b.joints, b.head_orientation);
    }
    if (t - a.time).abs() <= TIME_EPS {
        return (a.joints, a.head_orientation);
    }
    let s = (t - a.time) / (b.time - a.time);
    let joints = [lerp(&a.joints[0], &b.joints[0], s), lerp(&a.joints[1], &b.joints[1], s), lerp(&a.joints[2], &b.joints[2], s)];
    (joints, slerp(&a.head_orientation, &b.head_orientation, s))
}

/// Resamples `num_frames` frames at `frame_rate` ending `horizon_ms` before
/// each event, plus up to `future_frames` frames after the window. Events
/// without enough history are skipped.
pub fn extract_windows(
    session: &Session,
    horizon_ms: u32,
    num_frames: usize,
    frame_rate: f64,
    future_frames: usize,
) -> Result<Vec<ExtractedWindow>> {
    session.validate()?;
    if num_frames < 2 {
        return Err(Error::arg("windows need at least 2 frames"));
    }
    if !(frame_rate > 0.0 && frame_rate.is_finite()) {
        return Err(Error::arg(format!("frame rate {frame_rate} must be positive")));
    }
    let first = session.frames[0].time;
    let last = session.frames.last().unwrap().time;
    let dt = 1.0 / frame_rate;
    let mut out = Vec::new();
    for (event_index, event) in session.events.iter().enumerate() {
        let end = event.time - horizon_ms as f64 / 1000.0;
        let start = end - (num_frames - 1) as f64 * dt;
        if start < first - TIME_EPS {
            debug!(
                "session {} event {event_index}: window starts {:.3}s before the recording; skipped",
                session.session_id,
                first - start
            );
            continue;
        }
        if end > last + TIME_EPS {
            debug!("session {} event {event_index}: window ends after the recording; skipped", session.session_id);
            continue;
        }
        let times: Vec<f64> = (0..num_frames).map(|i| end - (num_frames - 1 - i) as f64 * dt).collect();
        let (positions, heads): (Vec<JointFrame>, Vec<Point3>) =
            times.iter().map(|&t| sample_at(&session.frames, t)).unzip();
        let window = SparseMotionWindow::from_positions(positions, heads, dt)?;
        let limit = event.time.min(last) + TIME_EPS;
        let future = (1..=future_frames)
            .map(|k| end + k as f64 * dt)
            .take_while(|&t| t <= limit)
            .map(|t| sample_at(&session.frames, t).0)
            .collect();
        out.push(ExtractedWindow {
            event_index,
            event: *event,
            horizon_ms,
            times,
            window,
            future,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GtConfig {
    /// Gaussian width in meters.
    pub sigma: f64,
    pub tau: f64,
}

impl Default for GtConfig {
    fn default() -> Self {
        Self { sigma: 0.2, tau: 0.5 }
    }
}

impl GtConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0) || !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::arg(format!("invalid ground-truth config {self:?}")));
        }
        Ok(())
    }
}

pub fn gaussian_heatmap(cloud: &ScenePointCloud, goal: &Point3, sigma: f64) -> Vec<f64> {
    let k = 1.0 / (2.0 * sigma * sigma);
    cloud.points().iter().map(|p| (-dist2(p, goal) * k).exp()).collect()
}

pub fn gaussian_gt(cloud: &ScenePointCloud, goal: &Point3, config: &GtConfig) -> Result<GroundTruth> {
    config.validate()?;
    GroundTruth::from_heatmap(gaussian_heatmap(cloud, goal, config.sigma), config.tau)
}

/// A training or evaluation example in body-frame coordinates, with all
/// real values representable in single precision.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub sample_id: String,
    pub scene_id: String,
    pub horizon_ms: u32,
    pub cloud: ScenePointCloud,
    pub window: SparseMotionWindow,
    pub gt: GroundTruth,
    pub goal: Point3,
    pub gt_config: GtConfig,
    /// Future joint positions for forecaster training; may be empty.
    pub future: Vec<JointFrame>,
}

impl Sample {
    pub fn validate(&self, num_frames: Option<usize>) -> Result<()> {
        if self.cloud.len() != self.gt.len() {
            return Err(Error::arg(format!(
                "sample {}: {} points but {} ground-truth values",
                self.sample_id,
                self.cloud.len(),
                self.gt.len()
            )));
        }
        if let Some(t) = num_frames {
            if self.window.num_frames() != t {
                return Err(Error::arg(format!(
                    "sample {}: {} frames, expected {t}",
                    self.sample_id,
                    self.window.num_frames()
                )));
            }
        }
        Ok(())
    }
}

fn f32_point(p: &Point3) -> Point3 {
    [p[0] as f32 as f64, p[1] as f32 as f64, p[2] as f32 as f64]
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleConfig {
    pub num_points: usize,
    pub num_frames: usize,
    pub frame_rate: f64,
    pub horizons_ms: Vec<u32>,
    pub future_frames: usize,
    pub gt: GtConfig,
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self {
            num_points: 2048,
            num_frames: 15,
            frame_rate: 20.0,
            horizons_ms: vec![500, 1000, 1500],
            future_frames: 30,
            gt: GtConfig::default(),
        }
    }
}

/// Turns an extracted window into a body-aligned, subsampled sample with
/// ground truth. Subsampling favours points near the final head position.
pub fn make_sample(session: &Session, w: &ExtractedWindow, config: &SampleConfig, seed: u64) -> Result<Sample> {
    let frame = BodyFrame::from_window(&w.window)?;
    let window = w.window.transformed(&frame).quantized();
    let aligned: Vec<Point3> = session.scene.points().iter().map(|p| f32_point(&frame.apply_point(p))).collect();
    let aligned = ScenePointCloud::new(aligned)?;
    let head = window.position(window.num_frames() - 1, HEAD);
    let n = config.num_points.min(aligned.len());
    let cloud = distance_weighted_subsample(&aligned, &head, n, seed)?;
    let goal = f32_point(&frame.apply_point(&w.event.goal));
    let heat: Vec<f64> = gaussian_heatmap(&cloud, &goal, config.gt.sigma)
        .into_iter()
        .map(|h| h as f32 as f64)
        .collect();
    let gt = GroundTruth::from_heatmap(heat, config.gt.tau)?;
    let future = w
        .future
        .iter()
        .map(|f| [f32_point(&frame.apply_point(&f[0])), f32_point(&frame.apply_point(&f[1])), f32_point(&frame.apply_point(&f[2]))])
        .collect();
    Ok(Sample {
        sample_id: format!("{}_e{}_h{}", session.session_id, w.event_index, w.horizon_ms),
        scene_id: session.scene_id.clone(),
        horizon_ms: w.horizon_ms,
        cloud,
        window,
        gt,
        goal,
        gt_config: config.gt,
        future,
    })
}

/// Seed for item `(a, b)` under `master`, independent of iteration order.
pub fn derive_seed(master: u64, a: u64, b: u64) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    mix(mix(mix(master) ^ a) ^ b.rotate_left(32))
}

/// All samples of a session across the configured horizons.
pub fn build_samples(session: &Session, config: &SampleConfig, seed: u64) -> Result<Vec<Sample>> {
    let mut out = Vec::new();
    for (hi, &h) in config.horizons_ms.iter().enumerate() {
        for w in extract_windows(session, h, config.num_frames, config.frame_rate, config.future_frames)? {
            let s = derive_seed(seed, hi as u64, w.event_index as u64);
            out.push(make_sample(session, &w, config, s)?);
        }
    }
    Ok(out)
}

/// Scene-exclusive split of items labelled by `scene_ids`. Scenes are
/// shuffled by `seed` and moved to the test side until it holds at least
/// `test_fraction` of the items. Returns `(train, test)` item indices.
pub fn scene_split<S: AsRef<str>>(scene_ids: &[S], test_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::arg(format!("test fraction {test_fraction} outside (0, 1)")));
    }
    let scenes: BTreeSet<&str> = scene_ids.iter().map(|s| s.as_ref()).collect();
    if scenes.len() < 2 {
        return Err(Error::Split(format!("need at least 2 distinct scenes, found {}", scenes.len())));
    }
    let mut order: Vec<&str> = scenes.into_iter().collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let total = scene_ids.len() as f64;
    let mut test_scenes = BTreeSet::new();
    let mut count = 0usize;
    for s in &order[..order.len() - 1] {
        if count as f64 >= test_fraction * total - 1e-9 {
            break;
        }
        test_scenes.insert(*s);
        count += scene_ids.iter().filter(|x| x.as_ref() == *s).count();
    }
    let (test, train): (Vec<usize>, Vec<usize>) =
        (0..scene_ids.len()).partition(|&i| test_scenes.contains(scene_ids[i].as_ref()));
    Ok((train, test))
}
