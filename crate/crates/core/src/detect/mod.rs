//! Anchor-based lesion detection over frozen token grids: pyramid, anchors,
//! assignment, losses, a shared per-location head, suppression, volume
//! aggregation, augmentation geometry and FROC evaluation.

mod anchors;
mod assign;
pub mod augment;
mod froc;
mod geometry;
mod head;
mod loss;
mod nms;
mod pyramid;
mod train;

pub use anchors::{
    anchor_shape, generate_anchors, AnchorSet, LevelSpec, PyramidSpec, ANCHORS_PER_LOCATION, RATIOS, SCALES,
};
pub use assign::{assign_anchors, subsample_negatives, AnchorLabel, AssignConfig};
pub use augment::{augment, augment_geometry, AugmentOp, AugmentSpec};
pub use froc::{froc, is_hit, match_radius, match_volume, FrocPoint, FrocResult, FP_POINTS_1_TO_4, FP_POINTS_1_TO_5};
pub use geometry::{decode_box, encode_box, iou, BBox, Detection};
pub use head::{slice_detections, DetectHead, HeadOutputs, PostprocessConfig, HEAD_OUTPUTS};
pub use loss::{detection_loss, focal_loss, smooth_l1, AnchorTarget, DetectionLoss, FocalConfig};
pub use nms::{aggregate_volume, detection_order, nms};
pub use pyramid::{build_pyramid, LevelMap, Projection, Pyramid};
pub use train::{
    evaluate_volumes, phantom_volumes, train_detect_head, DetectConfig, DetectEpoch, DetectModel, DetectRun, Detector,
    PhantomSetSpec, ProjectionSpec, SliceExample, VolumeExample,
};

use crate::ingest::IngestError;

#[derive(Debug, thiserror::Error)]
pub enum DetectError {
    #[error("token grid has {got} values, expected {expected}")]
    BadGrid { expected: usize, got: usize },
    #[error("anchor has non-positive width or height")]
    DegenerateAnchor,
    #[error("no volumes to evaluate")]
    NoVolumes,
    #[error("no ground-truth lesions")]
    NoLesions,
    #[error("no annotated slices")]
    NoAnnotations,
    #[error(transparent)]
    Ingest(#[from] IngestError),
}
