//! Directional kernel bank, multiscale activations and per-pixel flow directions.

mod activations;
mod ffld;
mod extract;
mod kernel;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::Grid;

pub use activations::{convolve, default_scales, directional_activations, ActivationStack};
pub use extract::{block_vectors, extract_flow, FlowField, Threshold};
pub use ffld::{flow_to_hsv, read_ffld, write_ffld, FfldError, FFLD_MAGIC, FFLD_VERSION};
pub use kernel::{
    bank_angles, kernel_weight, make_bank, make_kernel, make_kernel_with, DirectionalKernel, Falloff, KernelParams,
    BANK_SIZE,
};

#[derive(Debug, Error, PartialEq)]
pub enum FlowError {
    #[error("invalid kernel parameters: {0}")]
    InvalidParams(String),
    #[error("mask has zero width or height")]
    EmptyMask,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FlowParams {
    pub kernel: KernelParams,
    pub scales: Vec<f64>,
    pub threshold: Threshold,
    /// Emit directions only where the mask is set.
    pub restrict_to_mask: bool,
}

impl Default for FlowParams {
    fn default() -> Self {
        Self {
            kernel: KernelParams::default(),
            scales: default_scales(),
            threshold: Threshold::default(),
            restrict_to_mask: true,
        }
    }
}

/// Bank construction, activations and extraction in one call.
pub fn compute_flow(mask: &Grid<u8>, params: &FlowParams) -> Result<FlowField, FlowError> {
    let bank = make_bank(&params.kernel)?;
    let stack = directional_activations(mask, &bank, &params.scales)?;
    Ok(extract_flow(&stack, params.threshold, params.restrict_to_mask))
}
