//! Detection evaluation: rotated IoU, KITTI labels, AP and the 2D-3D
//! consistency filter.

pub mod ap;
pub mod iou;
pub mod labels;

pub use ap::{
    average_precision, average_precision_2d, stereo_ap, ApQuery, ApReport, Difficulty, FrameObjects,
    Interpolation, Overlap, StereoFrame, STEREO_IOU,
};
pub use iou::{bev_intersection_area, iou_3d, iou_bev};
pub use labels::{load_labels, parse_labels, save_labels, KittiObject};

use crate::boxes::{BBox2D, OrientedBox3D};
use crate::geometry::{project_box_to_image, CameraRig};

/// Minimum 2D IoU between a projected 3D box and some detection.
pub const CONSISTENCY_IOU: f64 = 0.5;

/// Indices of the 3D boxes whose image projection overlaps a 2D detection
/// by at least `min_iou`. Boxes reaching behind the camera are dropped.
pub fn consistent_indices(boxes: &[OrientedBox3D], detections: &[BBox2D], rig: &CameraRig, min_iou: f64) -> Vec<usize> {
    boxes
        .iter()
        .enumerate()
        .filter_map(|(i, b)| {
            let proj = project_box_to_image(b, rig).ok()?.as_bbox()?;
            let best = detections.iter().map(|d| proj.iou(d)).fold(0.0, f64::max);
            (best >= min_iou).then_some(i)
        })
        .collect()
}

pub fn consistency_filter(boxes: &[OrientedBox3D], detections: &[BBox2D], rig: &CameraRig) -> Vec<OrientedBox3D> {
    consistent_indices(boxes, detections, rig, CONSISTENCY_IOU)
        .into_iter()
        .map(|i| boxes[i])
        .collect()
}
