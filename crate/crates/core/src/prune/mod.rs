//! Activation-aware subnetwork extraction and mask algebra.

pub mod calibration;
pub mod mask;
pub mod score;
pub mod transfer;

pub use calibration::{collect_calibration, CalibrationStats, LinearSite};
pub use mask::{
    apply_mask, intersect_masks, mask_iou_global, mask_iou_per_kind, mask_iou_per_layer,
    MaskMatrix, MatrixKind, PruneMask,
};
pub use score::{score_and_mask, ScoreKind};
pub use transfer::{transfer_eval, TransferOptions, TransferReport};
