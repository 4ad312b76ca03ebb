//! Hybrid-view attention: intra-view and cross-view paired attention.

pub mod cva;
pub mod epa;
pub mod iva;

pub use cva::{cva_refine_sagittal, cva_refine_transverse, hva_stage, CvaBlock, HvaStage};
pub use epa::{
    channel_attention, epa_project, orthonormal_rows, paired_attention, spatial_attention, EpaParams,
    Projections, DEFAULT_PROJECTED_TOKENS,
};
pub use iva::{iva_forward, IvaBlock};
