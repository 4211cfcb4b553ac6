use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Scene queries attend over the decoded motion sequence.
    Full,
    /// Attention replaced by an MLP over scene features and pooled motion.
    MlpFusion,
    /// Motion queries attend over scene features; the result is pooled and broadcast.
    MotionQuery,
    /// Only the head-orientation branch feeds the motion decoder.
    HeadScene,
    /// No motion input at all.
    SceneOnly,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Full,
        Variant::MlpFusion,
        Variant::MotionQuery,
        Variant::HeadScene,
        Variant::SceneOnly,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::MlpFusion => "mlp_fusion",
            Variant::MotionQuery => "motion_query",
            Variant::HeadScene => "head_scene",
            Variant::SceneOnly => "scene_only",
        }
    }

    pub fn index(self) -> usize {
        Variant::ALL.iter().position(|&v| v == self).unwrap()
    }

    pub fn uses_motion(self) -> bool {
        self != Variant::SceneOnly
    }

    pub fn uses_trajectory(self) -> bool {
        !matches!(self, Variant::SceneOnly | Variant::HeadScene)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionKernel {
    EluPlusOne,
}

impl FromStr for AttentionKernel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "elu_plus_one" => Ok(AttentionKernel::EluPlusOne),
            _ => Err(Error::Config(format!("unknown attention kernel {s:?}"))),
        }
    }
}

/// One set-abstraction stage: sample centers, group within a ball, shared
/// MLP, max over each group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetAbstraction {
    pub num_centers: usize,
    /// Stored in single precision so configurations survive checkpointing unchanged.
    pub radius: f32,
    pub k_max: usize,
    pub widths: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub feature_dim: usize,
    pub num_frames: usize,
    pub sa_levels: Vec<SetAbstraction>,
    /// Feature-propagation MLPs, coarsest step first. The last width of the
    /// final entry is the scene feature size and must equal `feature_dim`.
    pub fp_widths: Vec<Vec<usize>>,
    pub interp_k: usize,
    pub gcn_layers: usize,
    pub head_mlp_widths: Vec<usize>,
    /// Output head widths after the fused input; must end in 1.
    pub output_mlp_widths: Vec<usize>,
    pub attention_kernel: AttentionKernel,
    pub variant: Variant,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self::with_feature_dim(64)
    }
}

impl NetworkConfig {
    /// Default layout for a given feature size.
    pub fn with_feature_dim(d: usize) -> Self {
        Self {
            feature_dim: d,
            num_frames: 15,
            sa_levels: vec![
                SetAbstraction {
                    num_centers: 512,
                    radius: 0.4,
                    k_max: 32,
                    widths: vec![32, 32, 64],
                },
                SetAbstraction {
                    num_centers: 128,
                    radius: 0.8,
                    k_max: 32,
                    widths: vec![64, 64, 128],
                },
            ],
            fp_widths: vec![vec![128], vec![64, d]],
            interp_k: 3,
            gcn_layers: 2,
            head_mlp_widths: vec![32, d],
            output_mlp_widths: vec![128, 64, 1],
            attention_kernel: AttentionKernel::EluPlusOne,
            variant: Variant::Full,
        }
    }

    pub fn with_variant(mut self, variant: Variant) -> Self {
        self.variant = variant;
        self
    }

    /// Smallest point count the encoder accepts.
    pub fn min_points(&self) -> usize {
        self.sa_levels.first().map_or(1, |l| l.num_centers)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let d = self.feature_dim;
        if d == 0 {
            return bad("feature_dim must be at least 1".into());
        }
        if self.num_frames < 2 {
            return bad("num_frames must be at least 2".into());
        }
        if self.sa_levels.is_empty() {
            return bad("at least one set-abstraction level is required".into());
        }
        for (i, l) in self.sa_levels.iter().enumerate() {
            if l.num_centers == 0 || l.k_max == 0 || l.widths.is_empty() || l.widths.contains(&0) {
                return bad(format!("set-abstraction level {i} has a zero size"));
            }
            if !(l.radius > 0.0) {
                return bad(format!("set-abstraction level {i} radius must be positive"));
            }
        }
        for pair in self.sa_levels.windows(2) {
            if pair[1].num_centers >= pair[0].num_centers {
                return bad("center counts must strictly decrease across levels".into());
            }
            if pair[1].radius <= pair[0].radius {
                return bad("radii must strictly increase across levels".into());
            }
        }
        if self.fp_widths.len() != self.sa_levels.len() {
            return bad(format!(
                "need {} feature-propagation stages, got {}",
                self.sa_levels.len(),
                self.fp_widths.len()
            ));
        }
        if self.fp_widths.iter().any(|w| w.is_empty() || w.contains(&0)) {
            return bad("feature-propagation widths must be non-empty and positive".into());
        }
        if self.fp_widths.last().and_then(|w| w.last()) != Some(&d) {
            return bad("final feature-propagation width must equal feature_dim".into());
        }
        if self.interp_k == 0 {
            return bad("interp_k must be at least 1".into());
        }
        if self.gcn_layers == 0 {
            return bad("gcn_layers must be at least 1".into());
        }
        if self.head_mlp_widths.last() != Some(&d) || self.head_mlp_widths.contains(&0) {
            return bad("head MLP must end at feature_dim".into());
        }
        if self.output_mlp_widths.last() != Some(&1) || self.output_mlp_widths.contains(&0) {
            return bad("output MLP must end in a single logit".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_valid() {
        NetworkConfig::default().validate().unwrap();
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
        }
    }

    #[test]
    fn rejects_non_monotone_levels() {
        let mut c = NetworkConfig::default();
        c.sa_levels[1].radius = 0.3;
        assert!(c.validate().is_err());
        let mut c = NetworkConfig::default();
        c.sa_levels[1].num_centers = 600;
        assert!(c.validate().is_err());
        let mut c = NetworkConfig::default();
        c.feature_dim = 0;
        assert!(c.validate().is_err());
    }
}
