use std::collections::HashMap;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{NetworkConfig, Variant};
use crate::error::{Error, Result};

/// Shape and role of one named parameter array.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    /// Biases are zero-initialized and stored as rank-1 arrays on disk.
    pub is_bias: bool,
}

#[derive(Debug, Default)]
pub(crate) struct LayoutBuilder {
    specs: Vec<ParamSpec>,
}

impl LayoutBuilder {
    fn push(&mut self, name: String, rows: usize, cols: usize, is_bias: bool) {
        self.specs.push(ParamSpec { name, rows, cols, is_bias });
    }

    pub(crate) fn dense(&mut self, prefix: &str, fan_in: usize, fan_out: usize) {
        self.push(format!("{prefix}.w"), fan_in, fan_out, false);
        self.push(format!("{prefix}.b"), 1, fan_out, true);
    }

    pub(crate) fn mlp(&mut self, prefix: &str, fan_in: usize, widths: &[usize]) {
        let mut prev = fan_in;
        for (i, &w) in widths.iter().enumerate() {
            self.dense(&format!("{prefix}.mlp{i}"), prev, w);
            prev = w;
        }
    }

    /// Graph layer: node-wise and neighborhood weights, a frame-mixing
    /// matrix and a bias.
    pub(crate) fn gcn(&mut self, prefix: &str, fan_in: usize, fan_out: usize, frames: usize) {
        self.push(format!("{prefix}.w_self"), fan_in, fan_out, false);
        self.push(format!("{prefix}.w_nbr"), fan_in, fan_out, false);
        self.push(format!("{prefix}.w_time"), frames, frames, false);
        self.push(format!("{prefix}.b"), 1, fan_out, true);
    }

    pub(crate) fn finish(self) -> Vec<ParamSpec> {
        self.specs
    }
}

/// Parameter layout implied by a network configuration, in a fixed order.
pub fn param_layout(config: &NetworkConfig) -> Vec<ParamSpec> {
    let d = config.feature_dim;
    let t = config.num_frames;
    let mut b = LayoutBuilder::default();

    let mut level_widths = vec![3usize];
    for (l, sa) in config.sa_levels.iter().enumerate() {
        let fan_in = 3 + level_widths[l];
        b.mlp(&format!("scene.sa{l}"), fan_in, &sa.widths);
        level_widths.push(*sa.widths.last().unwrap());
    }
    let levels = config.sa_levels.len();
    let mut coarse_width = level_widths[levels];
    for (s, widths) in config.fp_widths.iter().enumerate() {
        let fine = levels - 1 - s;
        b.mlp(&format!("scene.fp{s}"), coarse_width + level_widths[fine], widths);
        coarse_width = *widths.last().unwrap();
    }

    for l in 0..config.gcn_layers {
        b.gcn(&format!("motion.enc{l}"), if l == 0 { 6 } else { d }, d, t);
    }
    b.mlp("motion.head", 3, &config.head_mlp_widths);
    for l in 0..config.gcn_layers {
        b.gcn(&format!("motion.dec{l}"), d, d, t);
    }
    if config.variant == Variant::MlpFusion {
        b.dense("fusion.mlp0", 2 * d, d);
    }
    let head_in = if config.variant == Variant::SceneOnly { d } else { 2 * d };
    b.mlp("out", head_in, &config.output_mlp_widths);
    b.finish()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Array2<f64>,
    pub is_bias: bool,
}

/// Named learnable arrays. Also used for gradients, which share names and shapes.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ModelParams {
    params: Vec<Param>,
    index: HashMap<String, usize>,
}

impl ModelParams {
    pub fn from_params(params: Vec<Param>) -> Result<Self> {
        let mut index = HashMap::with_capacity(params.len());
        for (i, p) in params.iter().enumerate() {
            if index.insert(p.name.clone(), i).is_some() {
                return Err(Error::arg(format!("duplicate parameter name {:?}", p.name)));
            }
            if p.value.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!("parameter {} has non-finite entries", p.name)));
            }
        }
        Ok(Self { params, index })
    }

    /// Glorot-uniform weights, zero biases. Values are drawn in single
    /// precision so that checkpoints hold them exactly.
    pub fn init_from_layout(specs: &[ParamSpec], seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = specs
            .iter()
            .map(|s| {
                let value = if s.is_bias {
                    Array2::zeros((s.rows, s.cols))
                } else {
                    let bound = (6.0 / (s.rows + s.cols) as f64).sqrt() as f32;
                    Array2::from_shape_simple_fn((s.rows, s.cols), || rng.random_range(-bound..bound) as f64)
                };
                Param {
                    name: s.name.clone(),
                    value,
                    is_bias: s.is_bias,
                }
            })
            .collect();
        Self::from_params(params).expect("layout names are unique")
    }

    pub fn init(config: &NetworkConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        Ok(Self::init_from_layout(&param_layout(config), seed))
    }

    pub fn zeros_like(&self) -> Self {
        let params = self
            .params
            .iter()
            .map(|p| Param {
                name: p.name.clone(),
                value: Array2::zeros(p.value.dim()),
                is_bias: p.is_bias,
            })
            .collect();
        Self {
            params,
            index: self.index.clone(),
        }
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&Array2<f64>> {
        self.index_of(name).map(|i| &self.params[i].value)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Array2<f64>> {
        self.index_of(name).map(|i| &mut self.params[i].value)
    }

    pub fn at(&self, i: usize) -> &Param {
        &self.params[i]
    }

    pub fn at_mut(&mut self, i: usize) -> &mut Param {
        &mut self.params[i]
    }

    pub(crate) fn require(&self, name: &str) -> Result<&Array2<f64>> {
        self.get(name)
            .ok_or_else(|| Error::arg(format!("parameter {name:?} missing from the parameter set")))
    }

    /// Checks names and shapes against a layout.
    pub fn check_layout(&self, specs: &[ParamSpec]) -> Result<()> {
        for s in specs {
            let v = self.require(&s.name)?;
            if v.dim() != (s.rows, s.cols) {
                return Err(Error::arg(format!(
                    "parameter {} has shape {:?}, layout expects {:?}",
                    s.name,
                    v.dim(),
                    (s.rows, s.cols)
                )));
            }
        }
        Ok(())
    }

    /// Rounds every entry to the nearest `f32`.
    pub fn quantize_f32(&mut self) {
        for p in &mut self.params {
            p.value.mapv_inplace(|v| v as f32 as f64);
        }
    }

    pub fn scaled_add(&mut self, alpha: f64, other: &ModelParams) {
        for (p, o) in self.params.iter_mut().zip(&other.params) {
            p.value.scaled_add(alpha, &o.value);
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for p in &mut self.params {
            p.value *= alpha;
        }
    }

    /// First parameter holding a non-finite value.
    pub fn first_non_finite(&self) -> Option<&str> {
        self.params
            .iter()
            .find(|p| p.value.iter().any(|v| !v.is_finite()))
            .map(|p| p.name.as_str())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_deterministic_with_zero_biases() {
        let cfg = NetworkConfig::default();
        let a = ModelParams::init(&cfg, 5).unwrap();
        let b = ModelParams::init(&cfg, 5).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, ModelParams::init(&cfg, 6).unwrap());
        for p in a.iter().filter(|p| p.is_bias) {
            assert!(p.value.iter().all(|&v| v == 0.0), "{}", p.name);
        }
        a.check_layout(&param_layout(&cfg)).unwrap();
    }

    #[test]
    fn glorot_bound_for_square_weight() {
        let cfg = NetworkConfig::default();
        let p = ModelParams::init(&cfg, 1).unwrap();
        let w = p.get("motion.dec0.w_self").unwrap();
        assert_eq!(w.dim(), (64, 64));
        let bound = (6.0f64 / 128.0).sqrt();
        assert!((bound - 0.2165).abs() < 1e-4);
        let max = w.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(max <= bound && max > 0.9 * bound, "{max}");
    }

    #[test]
    fn variant_specific_layout() {
        let full = param_layout(&NetworkConfig::default());
        let mlp = param_layout(&NetworkConfig::default().with_variant(Variant::MlpFusion));
        assert!(mlp.iter().any(|s| s.name == "fusion.mlp0.w"));
        assert!(!full.iter().any(|s| s.name.starts_with("fusion")));
        let scene = param_layout(&NetworkConfig::default().with_variant(Variant::SceneOnly));
        let head0 = scene.iter().find(|s| s.name == "out.mlp0.w").unwrap();
        assert_eq!(head0.rows, 64);
    }
}
