//! Point-cloud loss, depth RMSE and the streaking index.

use std::collections::HashMap;

use crate::boxes::OrientedBox3D;
use crate::error::{Error, Result};
use crate::geometry::{MapUnit, ObjectPointCloud, PixelMap};

/// Default inflation of the ground-truth box when counting streaks (meters).
pub const STREAK_TOLERANCE: f64 = 0.3;

pub fn smooth_l1(e: f64) -> f64 {
    let a = e.abs();
    if a < 1.0 {
        0.5 * e * e
    } else {
        a - 0.5
    }
}

/// Mean over pixels present in both clouds of the summed per-axis smooth L1
/// difference.
pub fn point_cloud_loss(predicted: &ObjectPointCloud, truth: &ObjectPointCloud) -> Result<f64> {
    let index: HashMap<(i64, i64), usize> = truth
        .pixels
        .iter()
        .enumerate()
        .map(|(i, p)| (*p, i))
        .collect();
    let mut total = 0.0;
    let mut n = 0usize;
    for (p, px) in predicted.points.iter().zip(&predicted.pixels) {
        if let Some(&j) = index.get(px) {
            let g = truth.points[j];
            total += (0..3).map(|a| smooth_l1(p[a] - g[a])).sum::<f64>();
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::NoOverlap);
    }
    Ok(total / n as f64)
}

/// Root mean squared difference over global pixels valid in both depth maps.
pub fn depth_rmse(predicted: &PixelMap, truth: &PixelMap) -> Result<f64> {
    for m in [predicted, truth] {
        if m.unit != MapUnit::Depth {
            return Err(Error::UnitMismatch {
                expected: MapUnit::Depth,
                actual: m.unit,
            });
        }
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for (u, v, z) in predicted.iter_valid() {
        if let Some(g) = truth.at_global(u, v) {
            sum += (z - g) * (z - g);
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::NoCommonPixels);
    }
    Ok((sum / n as f64).sqrt())
}

/// Fraction of points lying outside the ground-truth box grown by `tolerance`.
pub fn streaking_index(cloud: &ObjectPointCloud, gt_box: &OrientedBox3D, tolerance: f64) -> Result<f64> {
    if cloud.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let outside = cloud
        .points
        .iter()
        .filter(|p| !gt_box.contains(**p, tolerance))
        .count();
    Ok(outside as f64 / cloud.len() as f64)
}
