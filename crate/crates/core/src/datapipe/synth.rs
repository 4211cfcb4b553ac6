//! Desk-scale reach-to-target sessions in box-furniture rooms. `z` is up,
//! units are meters and seconds.

use std::f64::consts::PI;
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{derive_seed, EventKind, InteractionEvent, Session, SessionFrame};
use crate::error::{Error, Result};
use crate::motionenc::{LEFT_HAND, RIGHT_HAND};
use crate::pointcloud::{sample_mesh_surface, Point3, Triangle};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Clutter {
    Simple,
    Cluttered,
}

impl FromStr for Clutter {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "simple" => Ok(Clutter::Simple),
            "cluttered" => Ok(Clutter::Cluttered),
            _ => Err(Error::arg(format!("clutter must be simple or cluttered, got {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub num_scenes: usize,
    pub samples_per_scene: usize,
    pub points_per_scene: usize,
    pub num_targets_per_scene: usize,
    pub clutter: Clutter,
    /// Recording rate of the generated sessions.
    pub frame_rate: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_scenes: 20,
            samples_per_scene: 10,
            points_per_scene: 8192,
            num_targets_per_scene: 4,
            clutter: Clutter::Cluttered,
            frame_rate: 60.0,
        }
    }
}

/// Minimum-jerk blend `10s^3 - 15s^4 + 6s^5`, clamped to `[0, 1]`.
pub fn min_jerk(s: f64) -> f64 {
    let s = s.clamp(0.0, 1.0);
    s * s * s * (10.0 - 15.0 * s + 6.0 * s * s)
}

/// Derivative of [`min_jerk`] with respect to `s`.
pub fn min_jerk_rate(s: f64) -> f64 {
    if !(0.0..=1.0).contains(&s) {
        return 0.0;
    }
    30.0 * s * s * (1.0 - s) * (1.0 - s)
}

const ROOM_HALF: f64 = 2.0;

#[derive(Debug, Clone, Copy)]
struct Aabb {
    min: Point3,
    max: Point3,
}

impl Aabb {
    fn triangles(&self, out: &mut Vec<Triangle>) {
        let [x0, y0, z0] = self.min;
        let [x1, y1, z1] = self.max;
        let quad = |out: &mut Vec<Triangle>, a: Point3, b: Point3, c: Point3, d: Point3| {
            out.push([a, b, c]);
            out.push([a, c, d]);
        };
        quad(out, [x0, y0, z1], [x1, y0, z1], [x1, y1, z1], [x0, y1, z1]);
        quad(out, [x0, y0, z0], [x1, y0, z0], [x1, y0, z1], [x0, y0, z1]);
        quad(out, [x0, y1, z0], [x1, y1, z0], [x1, y1, z1], [x0, y1, z1]);
        quad(out, [x0, y0, z0], [x0, y1, z0], [x0, y1, z1], [x0, y0, z1]);
        quad(out, [x1, y0, z0], [x1, y1, z0], [x1, y1, z1], [x1, y0, z1]);
    }
}

/// A table or shelf against a wall. Local coordinates: `u` along the
/// front edge, `v` depth from the front edge toward the wall.
#[derive(Debug, Clone, Copy)]
struct Furniture {
    /// Unit horizontal normal of the front face, pointing into the room.
    normal: [f64; 2],
    /// Midpoint of the front edge.
    front: [f64; 2],
    width: f64,
    depth: f64,
    height: f64,
}

impl Furniture {
    fn tangent(&self) -> [f64; 2] {
        [-self.normal[1], self.normal[0]]
    }

    fn at(&self, u: f64, v: f64) -> [f64; 2] {
        let t = self.tangent();
        [
            self.front[0] + u * t[0] - v * self.normal[0],
            self.front[1] + u * t[1] - v * self.normal[1],
        ]
    }

    fn aabb(&self) -> Aabb {
        let a = self.at(-self.width / 2.0, 0.0);
        let b = self.at(self.width / 2.0, self.depth);
        Aabb {
            min: [a[0].min(b[0]), a[1].min(b[1]), 0.0],
            max: [a[0].max(b[0]), a[1].max(b[1]), self.height],
        }
    }
}

fn object_box(center: [f64; 2], base: f64, half: f64, height: f64) -> Aabb {
    Aabb {
        min: [center[0] - half, center[1] - half, base],
        max: [center[0] + half, center[1] + half, base + height],
    }
}

#[derive(Debug, Clone, Copy)]
struct Target {
    furniture: usize,
    u: f64,
    goal: Point3,
}

struct Scene {
    furniture: Vec<Furniture>,
    targets: Vec<Target>,
    triangles: Vec<Triangle>,
}

fn dist_xy(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

fn build_scene(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Scene {
    let mut walls = [0usize, 1, 2, 3];
    for i in (1..4).rev() {
        walls.swap(i, rng.random_range(0..=i));
    }
    let count = rng.random_range(2..=3);
    let furniture: Vec<Furniture> = walls[..count]
        .iter()
        .map(|&w| {
            let normal = match w {
                0 => [-1.0, 0.0],
                1 => [1.0, 0.0],
                2 => [0.0, -1.0],
                _ => [0.0, 1.0],
            };
            let table = rng.random_bool(0.6);
            let (width, depth, height) = if table {
                (rng.random_range(1.0..1.6), rng.random_range(0.6..0.8), rng.random_range(0.72..0.78))
            } else {
                (rng.random_range(0.8..1.2), rng.random_range(0.35..0.45), rng.random_range(0.9..1.3))
            };
            let back = ROOM_HALF - 0.05;
            let lateral = rng.random_range(-0.5..0.5);
            let t = [-normal[1], normal[0]];
            // The wall sits opposite the normal.
            let front = [
                -normal[0] * (back - depth) + lateral * t[0],
                -normal[1] * (back - depth) + lateral * t[1],
            ];
            Furniture { normal, front, width, depth, height }
        })
        .collect();

    let mut triangles = Vec::new();
    let h = ROOM_HALF;
    triangles.push([[-h, -h, 0.0], [h, -h, 0.0], [h, h, 0.0]]);
    triangles.push([[-h, -h, 0.0], [h, h, 0.0], [-h, h, 0.0]]);
    let wall_h = rng.random_range(2.4..2.8);
    let corners = [[-h, -h], [h, -h], [h, h], [-h, h]];
    for i in 0..4 {
        let (a, b) = (corners[i], corners[(i + 1) % 4]);
        triangles.push([[a[0], a[1], 0.0], [b[0], b[1], 0.0], [b[0], b[1], wall_h]]);
        triangles.push([[a[0], a[1], 0.0], [b[0], b[1], wall_h], [a[0], a[1], wall_h]]);
    }
    for f in &furniture {
        f.aabb().triangles(&mut triangles);
    }

    let mut placed: Vec<([f64; 2], f64)> = Vec::new();
    let place = |rng: &mut ChaCha8Rng, f: &Furniture, spacing: f64, placed: &mut Vec<([f64; 2], f64)>| {
        for _ in 0..200 {
            let u = rng.random_range(-f.width / 2.0 + 0.1..f.width / 2.0 - 0.1);
            let v = rng.random_range(0.1..(f.depth - 0.08).min(0.45));
            let c = f.at(u, v);
            if placed.iter().all(|&(p, s)| dist_xy(p, c) >= s.max(spacing)) {
                placed.push((c, spacing));
                return Some((u, c));
            }
        }
        None
    };

    let mut targets = Vec::new();
    for k in 0..cfg.num_targets_per_scene {
        let fi = if k < furniture.len() { k } else { rng.random_range(0..furniture.len()) };
        let f = furniture[fi];
        if let Some((u, c)) = place(rng, &f, 0.3, &mut placed) {
            let half = rng.random_range(0.03..0.06);
            let height = rng.random_range(0.08..0.2);
            object_box(c, f.height, half, height).triangles(&mut triangles);
            targets.push(Target {
                furniture: fi,
                u,
                goal: [c[0], c[1], f.height + height],
            });
        }
    }

    if cfg.clutter == Clutter::Cluttered {
        for f in &furniture {
            for _ in 0..rng.random_range(4..=7) {
                if let Some((_, c)) = place(rng, f, 0.15, &mut placed) {
                    let half = rng.random_range(0.025..0.08);
                    let height = rng.random_range(0.05..0.35);
                    object_box(c, f.height, half, height).triangles(&mut triangles);
                }
            }
        }
        for _ in 0..rng.random_range(2..=3) {
            let c = [rng.random_range(-0.8..0.8), rng.random_range(-0.8..0.8)];
            let half = rng.random_range(0.15..0.3);
            object_box(c, 0.0, half, rng.random_range(0.3..0.8)).triangles(&mut triangles);
        }
    }
    Scene { furniture, targets, triangles }
}

fn wrap_angle(a: f64) -> f64 {
    (a + PI).rem_euclid(2.0 * PI) - PI
}

fn direction(yaw: f64, pitch: f64) -> Point3 {
    [pitch.cos() * yaw.cos(), pitch.cos() * yaw.sin(), pitch.sin()]
}

fn yaw_pitch(v: Point3) -> (f64, f64) {
    (v[1].atan2(v[0]), v[2].atan2(v[0].hypot(v[1])))
}

fn reach_session(scene: &Scene, cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> (Vec<SessionFrame>, InteractionEvent) {
    let target = scene.targets[rng.random_range(0..scene.targets.len())];
    let f = scene.furniture[target.furniture];
    let stand_u = target.u + rng.random_range(-0.25..0.25);
    let stand_d = rng.random_range(0.25..0.4);
    let stand = f.at(stand_u, -stand_d);
    let head_h = rng.random_range(1.55..1.75);
    let body_yaw = (-f.normal[1]).atan2(-f.normal[0]) + rng.random_range(-0.25..0.25);
    let (fwd, left) = ([body_yaw.cos(), body_yaw.sin()], [-body_yaw.sin(), body_yaw.cos()]);
    let body = |x: f64, y: f64, z: f64| -> Point3 {
        [stand[0] + x * fwd[0] + y * left[0], stand[1] + x * fwd[1] + y * left[1], z]
    };
    let goal = target.goal;
    let lateral = (goal[0] - stand[0]) * left[0] + (goal[1] - stand[1]) * left[1];
    let reaching = if lateral >= 0.0 { LEFT_HAND } else { RIGHT_HAND };
    let mut rest = [[0.0; 3]; 3];
    rest[LEFT_HAND] = body(0.12, 0.22, head_h - 0.75);
    rest[RIGHT_HAND] = body(0.12, -0.22, head_h - 0.75);

    let rate = cfg.frame_rate;
    let onset = rng.random_range(1.0..1.4);
    let last = ((onset + rng.random_range(1.5..2.5)) * rate).round() as usize;
    let t_event = last as f64 / rate;
    let duration = t_event - onset;
    let lead = rng.random_range(0.2..0.4);

    let lean = rng.random_range(0.05..0.15);
    let dip = rng.random_range(0.0..0.06);
    let to_goal = [goal[0] - stand[0], goal[1] - stand[1]];
    let reach_len = to_goal[0].hypot(to_goal[1]).max(1e-6);
    let lean_dir = [to_goal[0] / reach_len, to_goal[1] / reach_len];
    let head_at = |s: f64, t: f64| -> Point3 {
        let m = min_jerk(s);
        let sway = 0.004 * (2.0 * PI * 0.3 * t).sin();
        [
            stand[0] + lean * m * lean_dir[0] + sway * left[0],
            stand[1] + lean * m * lean_dir[1] + sway * left[1],
            head_h - dip * m,
        ]
    };

    let head_start = head_at(0.0, onset);
    let (goal_yaw, _) = yaw_pitch([goal[0] - head_start[0], goal[1] - head_start[1], goal[2] - head_start[2]]);
    let turn = rng.random_range(30f64..120.0).to_radians() * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    let yaw0 = goal_yaw + turn;
    let pitch0 = rng.random_range(-10f64..5.0).to_radians();
    // The eyes cover the rest of a gaze shift; the head carries most of
    // the yaw but only part of a downward look.
    let yaw_gain = rng.random_range(0.7..0.95);
    let pitch_gain = rng.random_range(0.2..0.6);
    let noise_std = rng.random_range(15f64..22.0).to_radians();
    let offset = Normal::new(0.0, noise_std).unwrap();
    let (yaw_off, pitch_off) = (offset.sample(rng), 0.75 * offset.sample(rng));
    let jitter = Normal::new(0.0, 1.5f64.to_radians()).unwrap();
    let sway_phase = rng.random_range(0.0..2.0 * PI);

    let frames = (0..=last)
        .map(|i| {
            let t = i as f64 / rate;
            let s = (t - onset) / duration;
            let head = head_at(s, t);
            let mut joints = [head, rest[LEFT_HAND], rest[RIGHT_HAND]];
            for j in [LEFT_HAND, RIGHT_HAND] {
                if j != reaching {
                    joints[j][2] += 0.01 * (2.0 * PI * 0.5 * t + sway_phase).sin();
                }
            }
            let m = min_jerk(s);
            for k in 0..3 {
                joints[reaching][k] = rest[reaching][k] + (goal[k] - rest[reaching][k]) * m;
            }
            let (ty, tp) = yaw_pitch([goal[0] - head[0], goal[1] - head[1], goal[2] - head[2]]);
            let hm = min_jerk((t - (onset - lead)) / duration);
            let yaw = yaw0 + yaw_gain * wrap_angle(ty - yaw0) * hm + yaw_off + jitter.sample(rng);
            let pitch = (pitch0 + (pitch_gain * tp - pitch0) * hm + pitch_off + jitter.sample(rng)).clamp(-1.4, 1.4);
            SessionFrame {
                time: t,
                joints,
                head_orientation: direction(yaw, pitch),
            }
        })
        .collect();
    let event = InteractionEvent {
        time: t_event,
        goal,
        kind: EventKind::Grasp,
    };
    (frames, event)
}

/// One session per reach; sessions of a scene share its point cloud.
pub fn gen_synthetic(cfg: &SynthConfig, seed: u64) -> Result<Vec<Session>> {
    if cfg.num_scenes == 0 || cfg.samples_per_scene == 0 || cfg.points_per_scene == 0 || cfg.num_targets_per_scene == 0 {
        return Err(Error::arg("synthetic dataset counts must be positive"));
    }
    if !(cfg.frame_rate > 0.0) {
        return Err(Error::arg("frame rate must be positive"));
    }
    let mut sessions = Vec::with_capacity(cfg.num_scenes * cfg.samples_per_scene);
    for si in 0..cfg.num_scenes {
        let scene_seed = derive_seed(seed, si as u64, u64::MAX);
        let scene = build_scene(cfg, &mut ChaCha8Rng::seed_from_u64(scene_seed));
        if scene.targets.is_empty() {
            return Err(Error::DegenerateInput(format!("scene {si} has no room for targets")));
        }
        let scene_id = format!("scene{si:03}");
        let cloud = Arc::new(sample_mesh_surface(&scene.triangles, cfg.points_per_scene, scene_seed)?);
        for ri in 0..cfg.samples_per_scene {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, si as u64, ri as u64));
            let (frames, event) = reach_session(&scene, cfg, &mut rng);
            sessions.push(Session {
                session_id: format!("{scene_id}_r{ri:02}"),
                scene_id: scene_id.clone(),
                scene_source: format!("synthetic:{scene_id}"),
                scene: Arc::clone(&cloud),
                frames,
                events: vec![event],
            });
        }
    }
    Ok(sessions)
}
