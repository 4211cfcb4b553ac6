//! Scene/motion intention network: point-set scene encoder, graph motion
//! encoder, linear cross-attention fusion and a per-point logit head.

mod config;
mod model;
mod params;

pub use config::{AttentionKernel, NetworkConfig, SetAbstraction, Variant};
pub use model::{
    attention_weight_matrix, encode_head, encode_motion, encode_scene, forward, forward_with_plan, fuse_and_decode,
    gradient, gradient_with_plan, linear_cross_attention, FeatureBundle, IntentionHeatmap, ScenePlan,
};
pub(crate) use model::Builder;
pub(crate) use params::LayoutBuilder;
pub use params::{param_layout, ModelParams, Param, ParamSpec};
