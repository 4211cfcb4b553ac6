use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{GtConfig, Sample};
use crate::error::{Error, Result};
use crate::int3dnet::{param_layout, AttentionKernel, ModelParams, NetworkConfig, Param, SetAbstraction, Variant};
use crate::metrics::GroundTruth;
use crate::motionenc::{JointFrame, SparseMotionWindow, NUM_JOINTS};
use crate::objective::BinaryIntentionMask;
use crate::pointcloud::{Point3, ScenePointCloud, Triangle};

pub const SAMPLE_FORMAT_VERSION: u32 = 1;
pub const CHECKPOINT_MAGIC: &[u8; 4] = b"I3DN";
pub const CHECKPOINT_VERSION: u32 = 1;

const MANIFEST: &str = "manifest.json";
const POINTS: &str = "points.f32";
const MOTION: &str = "motion.f32";
const HEAD: &str = "head.f32";
const GT_HEATMAP: &str = "gt_heatmap.f32";
const GT_MASK: &str = "gt_mask.u8";
const FUTURE: &str = "future.f32";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format_version: u32,
    sample_id: String,
    scene_id: String,
    horizon_ms: u32,
    num_points: usize,
    num_frames: usize,
    frame_interval: f64,
    goal: [f64; 3],
    gt_sigma: f64,
    gt_tau: f64,
    #[serde(default)]
    future_frames: usize,
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn f32_bytes(values: impl IntoIterator<Item = f64>) -> Vec<u8> {
    values.into_iter().flat_map(|v| (v as f32).to_le_bytes()).collect()
}

fn check_size(path: &Path, len: usize, expected: usize) -> Result<()> {
    if len < expected {
        return Err(Error::format(path, len as u64, format!("truncated: expected {expected} bytes, found {len}")));
    }
    if len > expected {
        return Err(Error::format(path, expected as u64, format!("{} unexpected trailing bytes", len - expected)));
    }
    Ok(())
}

/// Reads exactly `count` little-endian `f32` values, all finite.
fn read_f32_file(path: &Path, count: usize) -> Result<Vec<f64>> {
    let bytes = read_bytes(path)?;
    check_size(path, bytes.len(), count * 4)?;
    bytes
        .chunks_exact(4)
        .enumerate()
        .map(|(i, c)| {
            let v = f32::from_le_bytes(c.try_into().unwrap());
            if v.is_finite() {
                Ok(v as f64)
            } else {
                Err(Error::format(path, (i * 4) as u64, format!("non-finite value {v}")))
            }
        })
        .collect()
}

/// Writes per-point logits as little-endian `f32`.
pub fn write_heatmap(path: &Path, logits: &[f64]) -> Result<()> {
    write_bytes(path, &f32_bytes(logits.iter().copied()))
}

/// Reads a logit file written by [`write_heatmap`] for a cloud of `count` points.
pub fn read_heatmap(path: &Path, count: usize) -> Result<Vec<f64>> {
    read_f32_file(path, count)
}

fn point_at(v: &[f64], i: usize) -> Point3 {
    [v[3 * i], v[3 * i + 1], v[3 * i + 2]]
}

/// Writes a sample directory, creating it if needed.
pub fn write_sample(sample: &Sample, dir: &Path) -> Result<()> {
    sample.validate(None)?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let t = sample.window.num_frames();
    let manifest = Manifest {
        format_version: SAMPLE_FORMAT_VERSION,
        sample_id: sample.sample_id.clone(),
        scene_id: sample.scene_id.clone(),
        horizon_ms: sample.horizon_ms,
        num_points: sample.cloud.len(),
        num_frames: t,
        frame_interval: sample.window.frame_interval(),
        goal: sample.goal,
        gt_sigma: sample.gt_config.sigma,
        gt_tau: sample.gt_config.tau,
        future_frames: sample.future.len(),
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write_bytes(&dir.join(MANIFEST), json.as_bytes())?;
    write_bytes(&dir.join(POINTS), &f32_bytes(sample.cloud.points().iter().flatten().copied()))?;
    let mut motion = Vec::with_capacity(t * NUM_JOINTS * 6);
    for f in 0..t {
        for j in 0..NUM_JOINTS {
            motion.extend_from_slice(&sample.window.positions()[f][j]);
            motion.extend_from_slice(&sample.window.velocities()[f][j]);
        }
    }
    write_bytes(&dir.join(MOTION), &f32_bytes(motion))?;
    write_bytes(&dir.join(HEAD), &f32_bytes(sample.window.head_orientations().iter().flatten().copied()))?;
    write_bytes(&dir.join(GT_HEATMAP), &f32_bytes(sample.gt.heatmap.iter().copied()))?;
    write_bytes(&dir.join(GT_MASK), sample.gt.mask.labels())?;
    let future = dir.join(FUTURE);
    if sample.future.is_empty() {
        if future.exists() {
            fs::remove_file(&future).map_err(|e| Error::io(&future, e))?;
        }
    } else {
        write_bytes(&future, &f32_bytes(sample.future.iter().flatten().flatten().copied()))?;
    }
    Ok(())
}

/// Byte offset of a (1-based) line and column in `text`.
fn line_col_offset(text: &str, line: usize, column: usize) -> u64 {
    let start: usize = text.split_inclusive('\n').take(line.saturating_sub(1)).map(str::len).sum();
    (start + column.saturating_sub(1)) as u64
}

fn read_manifest(path: &Path) -> Result<Manifest> {
    let bytes = read_bytes(path)?;
    let text = std::str::from_utf8(&bytes)
        .map_err(|e| Error::format(path, e.valid_up_to() as u64, "manifest is not valid UTF-8"))?;
    let m: Manifest = serde_json::from_str(text)
        .map_err(|e| Error::format(path, line_col_offset(text, e.line(), e.column()), e.to_string()))?;
    if m.format_version != SAMPLE_FORMAT_VERSION {
        return Err(Error::format(path, 0, format!("unsupported format_version {}", m.format_version)));
    }
    if m.num_points == 0 || m.num_frames < 2 {
        return Err(Error::format(path, 0, "manifest declares an empty sample"));
    }
    Ok(m)
}

pub fn read_sample(dir: &Path) -> Result<Sample> {
    let manifest_path = dir.join(MANIFEST);
    let m = read_manifest(&manifest_path)?;
    let (n, t) = (m.num_points, m.num_frames);

    let points_path = dir.join(POINTS);
    let raw = read_f32_file(&points_path, n * 3)?;
    let cloud = ScenePointCloud::new((0..n).map(|i| point_at(&raw, i)).collect())?;

    let motion_path = dir.join(MOTION);
    let raw = read_f32_file(&motion_path, t * NUM_JOINTS * 6)?;
    let mut positions: Vec<JointFrame> = Vec::with_capacity(t);
    let mut velocities: Vec<JointFrame> = Vec::with_capacity(t);
    for f in 0..t {
        let base = f * NUM_JOINTS * 6;
        let joint = |j: usize, k: usize| point_at(&raw[base + j * 6 + k..], 0);
        positions.push([joint(0, 0), joint(1, 0), joint(2, 0)]);
        velocities.push([joint(0, 3), joint(1, 3), joint(2, 3)]);
    }
    let head_path = dir.join(HEAD);
    let raw = read_f32_file(&head_path, t * 3)?;
    let heads = (0..t).map(|i| point_at(&raw, i)).collect();
    let window = SparseMotionWindow::new(positions, velocities, heads, m.frame_interval)
        .map_err(|e| Error::format(&head_path, 0, e.to_string()))?;

    let heat_path = dir.join(GT_HEATMAP);
    let heatmap = read_f32_file(&heat_path, n)?;
    if let Some(i) = heatmap.iter().position(|h| !(0.0..=1.0).contains(h)) {
        return Err(Error::format(&heat_path, (i * 4) as u64, "heatmap value outside [0, 1]"));
    }
    let mask_path = dir.join(GT_MASK);
    let labels = read_bytes(&mask_path)?;
    check_size(&mask_path, labels.len(), n)?;
    for (i, (&y, &h)) in labels.iter().zip(&heatmap).enumerate() {
        if y > 1 {
            return Err(Error::format(&mask_path, i as u64, format!("mask byte {y} is not 0 or 1")));
        }
        if (y == 1) != (h >= m.gt_tau) {
            return Err(Error::format(&mask_path, i as u64, "mask disagrees with the thresholded heatmap"));
        }
    }
    let gt = GroundTruth {
        heatmap,
        mask: BinaryIntentionMask::new(labels)?,
    };

    let future = if m.future_frames > 0 {
        let raw = read_f32_file(&dir.join(FUTURE), m.future_frames * NUM_JOINTS * 3)?;
        (0..m.future_frames)
            .map(|f| [point_at(&raw, 3 * f), point_at(&raw, 3 * f + 1), point_at(&raw, 3 * f + 2)])
            .collect()
    } else {
        Vec::new()
    };

    Ok(Sample {
        sample_id: m.sample_id,
        scene_id: m.scene_id,
        horizon_ms: m.horizon_ms,
        cloud,
        window,
        gt,
        goal: m.goal,
        gt_config: GtConfig {
            sigma: m.gt_sigma,
            tau: m.gt_tau,
        },
        future,
    })
}

/// Writes `root/<name>.txt`, one sample directory (relative to `root`) per line.
pub fn write_dataset_split(root: &Path, name: &str, dirs: &[String]) -> Result<()> {
    let mut text = dirs.join("\n");
    text.push('\n');
    write_bytes(&root.join(format!("{name}.txt")), text.as_bytes())
}

pub fn read_dataset_split(root: &Path, name: &str) -> Result<Vec<PathBuf>> {
    let path = root.join(format!("{name}.txt"));
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(|l| root.join(l))
        .collect())
}

/// Triangles from text lines of nine reals; blank lines and `#` comments are skipped.
pub fn read_triangle_list(path: &Path) -> Result<Vec<Triangle>> {
    let bytes = read_bytes(path)?;
    let text = std::str::from_utf8(&bytes)
        .map_err(|e| Error::format(path, e.valid_up_to() as u64, "not valid UTF-8"))?;
    let mut out = Vec::new();
    let mut offset = 0u64;
    for line in text.split_inclusive('\n') {
        let body = line.split('#').next().unwrap().trim();
        if !body.is_empty() {
            let vals: Vec<f64> = body
                .split_whitespace()
                .map(|tok| tok.parse::<f64>().ok().filter(|v| v.is_finite()))
                .collect::<Option<_>>()
                .ok_or_else(|| Error::format(path, offset, "expected finite reals"))?;
            if vals.len() != 9 {
                return Err(Error::format(path, offset, format!("expected 9 values, found {}", vals.len())));
            }
            out.push([point_at(&vals, 0), point_at(&vals, 1), point_at(&vals, 2)]);
        }
        offset += line.len() as u64;
    }
    Ok(out)
}

/// A named `f32` array as stored in checkpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn scalar(name: impl Into<String>, v: f64) -> Self {
        Self {
            name: name.into(),
            shape: vec![],
            data: vec![v as f32],
        }
    }

    pub fn vector(name: impl Into<String>, v: impl IntoIterator<Item = f64>) -> Self {
        let data: Vec<f32> = v.into_iter().map(|x| x as f32).collect();
        Self {
            name: name.into(),
            shape: vec![data.len()],
            data,
        }
    }

    pub fn from_array(name: impl Into<String>, a: &Array2<f64>, as_vector: bool) -> Self {
        let shape = if as_vector { vec![a.len()] } else { vec![a.nrows(), a.ncols()] };
        Self {
            name: name.into(),
            shape,
            data: a.iter().map(|&v| v as f32).collect(),
        }
    }
}

/// Writes tensors in order: magic, version, count, then per record the name
/// length (u16), name, rank (u8), dims (u32 each) and the payload. All
/// integers and floats are little-endian.
pub fn write_tensors(path: &Path, tensors: &[Tensor]) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in tensors {
        let name = t.name.as_bytes();
        if name.len() > u16::MAX as usize || t.shape.len() > u8::MAX as usize {
            return Err(Error::arg(format!("tensor {} cannot be encoded", t.name)));
        }
        if t.shape.iter().product::<usize>() != t.data.len() {
            return Err(Error::arg(format!("tensor {} shape does not match its data", t.name)));
        }
        buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
        buf.extend_from_slice(name);
        buf.push(t.shape.len() as u8);
        for &d in &t.shape {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in &t.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    write_bytes(path, &buf)
}

struct Cursor<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(
                self.path,
                self.bytes.len() as u64,
                format!("file ends inside {what} at byte {}", self.pos),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

/// Tensors with the byte offset at which each record starts.
fn read_tensor_records(path: &Path) -> Result<Vec<(u64, Tensor)>> {
    let bytes = read_bytes(path)?;
    let mut c = Cursor { path, bytes: &bytes, pos: 0 };
    if c.take(4, "magic")? != CHECKPOINT_MAGIC {
        return Err(Error::format(path, 0, "bad magic; not a checkpoint"));
    }
    let version = c.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::format(path, 4, format!("unsupported checkpoint version {version}")));
    }
    let count = c.u32("record count")?;
    let mut out: Vec<(u64, Tensor)> = Vec::new();
    for _ in 0..count {
        let start = c.pos as u64;
        let len = u16::from_le_bytes(c.take(2, "name length")?.try_into().unwrap()) as usize;
        let name_at = c.pos as u64;
        let name = std::str::from_utf8(c.take(len, "name")?)
            .map_err(|_| Error::format(path, name_at, "tensor name is not valid UTF-8"))?
            .to_string();
        if out.iter().any(|(_, t)| t.name == name) {
            return Err(Error::format(path, start, format!("duplicate tensor {name:?}")));
        }
        let rank = c.take(1, "rank")?[0] as usize;
        let shape = (0..rank).map(|_| c.u32("shape").map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let count = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let count = count
            .filter(|&n| n <= bytes.len() / 4)
            .ok_or_else(|| Error::format(path, bytes.len() as u64, format!("file too short for tensor {name:?}")))?;
        let payload_at = c.pos;
        let raw = c.take(count * 4, "payload")?;
        let mut data = Vec::with_capacity(count);
        for (i, ch) in raw.chunks_exact(4).enumerate() {
            let v = f32::from_le_bytes(ch.try_into().unwrap());
            if !v.is_finite() {
                return Err(Error::format(path, (payload_at + 4 * i) as u64, format!("non-finite value in {name:?}")));
            }
            data.push(v);
        }
        out.push((start, Tensor { name, shape, data }));
    }
    if c.pos != bytes.len() {
        return Err(Error::format(path, c.pos as u64, format!("{} trailing bytes", bytes.len() - c.pos)));
    }
    Ok(out)
}

pub fn read_tensors(path: &Path) -> Result<Vec<Tensor>> {
    Ok(read_tensor_records(path)?.into_iter().map(|(_, t)| t).collect())
}

fn config_tensors(cfg: &NetworkConfig) -> Vec<Tensor> {
    let f = |v: usize| v as f64;
    let list = |v: &[usize]| v.iter().map(|&x| x as f64).collect::<Vec<_>>();
    let mut t = vec![
        Tensor::scalar("config.feature_dim", f(cfg.feature_dim)),
        Tensor::scalar("config.num_frames", f(cfg.num_frames)),
        Tensor::vector("config.sa_num_centers", cfg.sa_levels.iter().map(|l| f(l.num_centers))),
        Tensor::vector("config.sa_radius", cfg.sa_levels.iter().map(|l| l.radius as f64)),
        Tensor::vector("config.sa_k_max", cfg.sa_levels.iter().map(|l| f(l.k_max))),
    ];
    for (i, l) in cfg.sa_levels.iter().enumerate() {
        t.push(Tensor::vector(format!("config.sa{i}_widths"), list(&l.widths)));
    }
    for (i, w) in cfg.fp_widths.iter().enumerate() {
        t.push(Tensor::vector(format!("config.fp{i}_widths"), list(w)));
    }
    t.extend([
        Tensor::scalar("config.interp_k", f(cfg.interp_k)),
        Tensor::scalar("config.gcn_layers", f(cfg.gcn_layers)),
        Tensor::vector("config.head_mlp_widths", list(&cfg.head_mlp_widths)),
        Tensor::vector("config.output_mlp_widths", list(&cfg.output_mlp_widths)),
        Tensor::scalar("config.attention_kernel", 0.0),
        Tensor::scalar("config.variant", f(cfg.variant.index())),
    ]);
    t
}

type Records<'a> = HashMap<&'a str, (u64, &'a Tensor)>;

fn record<'a>(path: &Path, recs: &Records<'a>, name: &str) -> Result<(u64, &'a Tensor)> {
    recs.get(name)
        .copied()
        .ok_or_else(|| Error::format(path, 0, format!("checkpoint lacks {name:?}")))
}

pub(crate) fn uint_list(path: &Path, recs: &Records, name: &str) -> Result<Vec<usize>> {
    let (at, t) = record(path, recs, name)?;
    if t.shape.len() > 1 {
        return Err(Error::format(path, at, format!("{name} must be a scalar or list")));
    }
    t.data
        .iter()
        .map(|&v| {
            if v >= 0.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(Error::format(path, at, format!("{name} holds non-integer {v}")))
            }
        })
        .collect()
}

pub(crate) fn uint(path: &Path, recs: &Records, name: &str) -> Result<usize> {
    let v = uint_list(path, recs, name)?;
    let at = record(path, recs, name)?.0;
    match v.as_slice() {
        [x] => Ok(*x),
        _ => Err(Error::format(path, at, format!("{name} must hold one value"))),
    }
}

fn config_from_records(path: &Path, recs: &Records) -> Result<NetworkConfig> {
    let centers = uint_list(path, recs, "config.sa_num_centers")?;
    let (radius_at, radius) = record(path, recs, "config.sa_radius")?;
    let k_max = uint_list(path, recs, "config.sa_k_max")?;
    if radius.data.len() != centers.len() || k_max.len() != centers.len() {
        return Err(Error::format(path, radius_at, "set-abstraction lists differ in length"));
    }
    let sa_levels = (0..centers.len())
        .map(|i| {
            Ok(SetAbstraction {
                num_centers: centers[i],
                radius: radius.data[i],
                k_max: k_max[i],
                widths: uint_list(path, recs, &format!("config.sa{i}_widths"))?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let fp_widths = (0..centers.len())
        .map(|i| uint_list(path, recs, &format!("config.fp{i}_widths")))
        .collect::<Result<Vec<_>>>()?;
    let (variant_at, _) = record(path, recs, "config.variant")?;
    let variant = *Variant::ALL
        .get(uint(path, recs, "config.variant")?)
        .ok_or_else(|| Error::format(path, variant_at, "unknown variant index"))?;
    let (kernel_at, _) = record(path, recs, "config.attention_kernel")?;
    if uint(path, recs, "config.attention_kernel")? != 0 {
        return Err(Error::format(path, kernel_at, "unknown attention kernel"));
    }
    let cfg = NetworkConfig {
        feature_dim: uint(path, recs, "config.feature_dim")?,
        num_frames: uint(path, recs, "config.num_frames")?,
        sa_levels,
        fp_widths,
        interp_k: uint(path, recs, "config.interp_k")?,
        gcn_layers: uint(path, recs, "config.gcn_layers")?,
        head_mlp_widths: uint_list(path, recs, "config.head_mlp_widths")?,
        output_mlp_widths: uint_list(path, recs, "config.output_mlp_widths")?,
        attention_kernel: AttentionKernel::EluPlusOne,
        variant,
    };
    cfg.validate().map_err(|e| Error::format(path, 0, e.to_string()))?;
    Ok(cfg)
}

/// Configuration records followed by the parameters, in layout order.
pub fn save_model(path: &Path, config: &NetworkConfig, params: &ModelParams) -> Result<()> {
    config.validate()?;
    params.check_layout(&param_layout(config))?;
    let mut tensors = config_tensors(config);
    tensors.extend(params.iter().map(|p| Tensor::from_array(&p.name, &p.value, p.is_bias)));
    write_tensors(path, &tensors)
}

pub(crate) fn records_by_name(records: &[(u64, Tensor)]) -> Records<'_> {
    records.iter().map(|(at, t)| (t.name.as_str(), (*at, t))).collect()
}

pub fn load_model(path: &Path) -> Result<(NetworkConfig, ModelParams)> {
    let records = read_tensor_records(path)?;
    let recs = records_by_name(&records);
    let config = config_from_records(path, &recs)?;
    let layout = param_layout(&config);
    let mut params = Vec::with_capacity(layout.len());
    for spec in &layout {
        let (at, t) = record(path, &recs, &spec.name)?;
        let expected: Vec<usize> = if spec.is_bias { vec![spec.cols] } else { vec![spec.rows, spec.cols] };
        if t.shape != expected {
            return Err(Error::format(
                path,
                at,
                format!("{} has shape {:?}, expected {expected:?}", spec.name, t.shape),
            ));
        }
        let value = Array2::from_shape_vec((spec.rows, spec.cols), t.data.iter().map(|&v| v as f64).collect())
            .expect("shape checked");
        params.push(Param {
            name: spec.name.clone(),
            value,
            is_bias: spec.is_bias,
        });
    }
    let names: std::collections::HashSet<&str> = layout.iter().map(|s| s.name.as_str()).collect();
    if let Some((at, t)) = records
        .iter()
        .find(|(_, t)| !t.name.starts_with("config.") && !names.contains(t.name.as_str()))
    {
        return Err(Error::format(path, *at, format!("unexpected tensor {:?}", t.name)));
    }
    Ok((config, ModelParams::from_params(params)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datapipe::{build_samples, gen_synthetic, SampleConfig, SynthConfig};

    #[test]
    fn triangle_list_reader() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("mesh.txt");
        fs::write(&p, "# floor\n0 0 0 1 0 0 0 1 0\n\n1 1 1 2 2 2 3 3 3 # tail\n").unwrap();
        let t = read_triangle_list(&p).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t[1][2], [3.0, 3.0, 3.0]);
        fs::write(&p, "0 0 0 1 0 0 0 1 0\n0 0 0 1 0 0 0 1\n").unwrap();
        match read_triangle_list(&p) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 18),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn sample_round_trip() {
        let cfg = SynthConfig {
            num_scenes: 1,
            samples_per_scene: 1,
            points_per_scene: 600,
            ..SynthConfig::default()
        };
        let sessions = gen_synthetic(&cfg, 3).unwrap();
        let sc = SampleConfig {
            num_points: 256,
            horizons_ms: vec![500],
            ..SampleConfig::default()
        };
        let sample = build_samples(&sessions[0], &sc, 9).unwrap().remove(0);
        assert!(!sample.future.is_empty());
        let dir = tempfile::tempdir().unwrap();
        write_sample(&sample, dir.path()).unwrap();
        assert_eq!(read_sample(dir.path()).unwrap(), sample);
    }

    #[test]
    fn tensor_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.bin");
        let ts = vec![Tensor::scalar("a", 2.0), Tensor::vector("b", [1.5, -2.25])];
        write_tensors(&p, &ts).unwrap();
        assert_eq!(read_tensors(&p).unwrap(), ts);
        let bytes = fs::read(&p).unwrap();
        fs::write(&p, &bytes[..bytes.len() - 3]).unwrap();
        match read_tensors(&p) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, bytes.len() as u64 - 3),
            other => panic!("{other:?}"),
        }
        let mut extra = bytes.clone();
        extra.push(0);
        fs::write(&p, &extra).unwrap();
        match read_tensors(&p) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, bytes.len() as u64),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn model_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        let mut cfg = NetworkConfig::with_feature_dim(16).with_variant(Variant::MlpFusion);
        cfg.sa_levels[0].radius = 0.3;
        let params = ModelParams::init(&cfg, 4).unwrap();
        save_model(&p, &cfg, &params).unwrap();
        let (c2, p2) = load_model(&p).unwrap();
        assert_eq!(c2, cfg);
        assert_eq!(p2, params);
        let again = dir.path().join("m2.ckpt");
        save_model(&again, &c2, &p2).unwrap();
        assert_eq!(fs::read(&p).unwrap(), fs::read(&again).unwrap());
    }
}
