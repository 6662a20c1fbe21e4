//! Rectified pinhole stereo geometry: the camera rig, disparity and depth
//! grids, back-projection to point clouds and projection of 3D boxes.
//!
//! Image coordinates: `u` to the right, `v` downward, origin at the center of
//! the top-left pixel.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::boxes::{BBox2D, OrientedBox3D};
use crate::error::{Error, Result};

/// Disparities at or below this value (pixels) are treated as unmeasurable.
pub const MIN_POSITIVE_DISPARITY: f64 = 1e-3;

/// Intrinsics and baseline of a rectified stereo pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraRig {
    pub fu: f64,
    pub fv: f64,
    pub cu: f64,
    pub cv: f64,
    /// Stereo baseline in meters.
    pub baseline: f64,
    pub image_width: usize,
    pub image_height: usize,
}

impl CameraRig {
    pub fn new(
        fu: f64,
        fv: f64,
        cu: f64,
        cv: f64,
        baseline: f64,
        image_width: usize,
        image_height: usize,
    ) -> Result<Self> {
        let rig = CameraRig {
            fu,
            fv,
            cu,
            cv,
            baseline,
            image_width,
            image_height,
        };
        rig.validate()?;
        Ok(rig)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fu > 0.0 && self.fv > 0.0) {
            return Err(Error::InvalidRig(format!(
                "focal lengths must be positive (fu={}, fv={})",
                self.fu, self.fv
            )));
        }
        if !(self.baseline > 0.0) {
            return Err(Error::InvalidRig(format!(
                "baseline must be positive, got {}",
                self.baseline
            )));
        }
        if !(self.cu >= 0.0 && self.cu < self.image_width as f64) {
            return Err(Error::InvalidRig(format!(
                "c_u={} outside [0, {})",
                self.cu, self.image_width
            )));
        }
        if !(self.cv >= 0.0 && self.cv < self.image_height as f64) {
            return Err(Error::InvalidRig(format!(
                "c_v={} outside [0, {})",
                self.cv, self.image_height
            )));
        }
        Ok(())
    }

    /// A KITTI-like rig with `fu * baseline` equal to `focal_baseline`.
    pub fn kitti_like(focal_baseline: f64) -> Self {
        let fu = 721.5377;
        CameraRig {
            fu,
            fv: fu,
            cu: 609.5593,
            cv: 172.854,
            baseline: focal_baseline / fu,
            image_width: 1242,
            image_height: 375,
        }
    }

    /// Product of horizontal focal length and baseline (pixel meters).
    pub fn focal_baseline(&self) -> f64 {
        self.fu * self.baseline
    }

    pub fn disparity_for_depth(&self, depth: f64) -> f64 {
        self.focal_baseline() / depth
    }

    pub fn depth_for_disparity(&self, disparity: f64) -> Option<f64> {
        (disparity > MIN_POSITIVE_DISPARITY).then(|| self.focal_baseline() / disparity)
    }

    /// Pinhole projection of a camera-frame point; `None` when `z <= 0`.
    pub fn project(&self, p: [f64; 3]) -> Option<(f64, f64)> {
        if p[2] <= 0.0 {
            return None;
        }
        Some((
            p[0] * self.fu / p[2] + self.cu,
            p[1] * self.fv / p[2] + self.cv,
        ))
    }

    pub fn unproject(&self, u: f64, v: f64, z: f64) -> [f64; 3] {
        [(u - self.cu) * z / self.fu, (v - self.cv) * z / self.fv, z]
    }

    /// Parses the P2/P3 projection matrices of a KITTI calibration file.
    pub fn from_kitti_calib(text: &str, image_width: usize, image_height: usize) -> Result<Self> {
        let p2 = kitti_matrix(text, "P2").ok_or_else(|| Error::InvalidRig("missing P2".into()))?;
        let p3 = kitti_matrix(text, "P3").ok_or_else(|| Error::InvalidRig("missing P3".into()))?;
        let fu = p2[0];
        if !(fu > 0.0) {
            return Err(Error::InvalidRig(format!("P2[0,0]={fu} is not a focal length")));
        }
        CameraRig::new(
            fu,
            p2[5],
            p2[2],
            p2[6],
            (p2[3] - p3[3]) / fu,
            image_width,
            image_height,
        )
    }

    pub fn load_kitti_calib(path: &Path, image_width: usize, image_height: usize) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        CameraRig::from_kitti_calib(&text, image_width, image_height)
            .map_err(|e| Error::parse(path, e.to_string()))
    }

    /// Renders KITTI calibration text with P2 as the left and P3 as the right camera.
    pub fn to_kitti_calib(&self) -> String {
        let row = |tx: f64| {
            format!(
                "{:e} 0 {:e} {:e} 0 {:e} {:e} 0 0 0 1 0",
                self.fu, self.cu, tx, self.fv, self.cv
            )
        };
        let mut s = String::new();
        s.push_str(&format!("P0: {}\n", row(0.0)));
        s.push_str(&format!("P1: {}\n", row(-self.fu * self.baseline)));
        s.push_str(&format!("P2: {}\n", row(0.0)));
        s.push_str(&format!("P3: {}\n", row(-self.fu * self.baseline)));
        s.push_str("R0_rect: 1 0 0 0 1 0 0 0 1\n");
        s
    }
}

fn kitti_matrix(text: &str, key: &str) -> Option<[f64; 12]> {
    for line in text.lines() {
        let Some((k, rest)) = line.split_once(':') else {
            continue;
        };
        if k.trim() != key {
            continue;
        }
        let vals: Vec<f64> = rest
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .ok()?;
        return vals.try_into().ok();
    }
    None
}

/// Depth error caused by under-estimating disparity by `disparity_error`
/// pixels for an object at `depth` meters.
pub fn depth_error(focal_baseline: f64, depth: f64, disparity_error: f64) -> f64 {
    let d = focal_baseline / depth;
    focal_baseline / (d - disparity_error) - depth
}

/// Physical quantity stored in a [`PixelMap`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MapUnit {
    /// Pixels.
    Disparity,
    /// Meters.
    Depth,
}

/// A dense grid of disparity or depth values with a validity mask.
///
/// The grid may cover only part of the image: `origin` is the global pixel
/// coordinate of cell `(0, 0)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelMap {
    pub unit: MapUnit,
    pub origin: (i64, i64),
    width: usize,
    height: usize,
    values: Vec<f64>,
    valid: Vec<bool>,
}

impl PixelMap {
    /// An all-invalid map.
    pub fn new(unit: MapUnit, origin: (i64, i64), width: usize, height: usize) -> Self {
        PixelMap {
            unit,
            origin,
            width,
            height,
            values: vec![0.0; width * height],
            valid: vec![false; width * height],
        }
    }

    /// A full-image map with every cell set to `value`.
    pub fn filled(unit: MapUnit, width: usize, height: usize, value: f64) -> Self {
        let mut m = PixelMap::new(unit, (0, 0), width, height);
        for i in 0..width * height {
            m.set_index(i, value);
        }
        m
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    fn idx(&self, col: usize, row: usize) -> usize {
        row * self.width + col
    }

    #[inline]
    fn set_index(&mut self, i: usize, value: f64) {
        if value.is_finite() {
            self.values[i] = value;
            self.valid[i] = true;
        } else {
            self.values[i] = 0.0;
            self.valid[i] = false;
        }
    }

    pub fn get(&self, col: usize, row: usize) -> Option<f64> {
        let i = self.idx(col, row);
        self.valid[i].then(|| self.values[i])
    }

    /// Stores a value; non-finite values mark the cell invalid.
    pub fn set(&mut self, col: usize, row: usize, value: f64) {
        let i = self.idx(col, row);
        self.set_index(i, value);
    }

    pub fn invalidate(&mut self, col: usize, row: usize) {
        let i = self.idx(col, row);
        self.valid[i] = false;
        self.values[i] = 0.0;
    }

    /// Value at a global pixel coordinate, if it falls on a valid cell.
    pub fn at_global(&self, u: i64, v: i64) -> Option<f64> {
        let col = u - self.origin.0;
        let row = v - self.origin.1;
        if col < 0 || row < 0 || col >= self.width as i64 || row >= self.height as i64 {
            return None;
        }
        self.get(col as usize, row as usize)
    }

    pub fn set_global(&mut self, u: i64, v: i64, value: f64) -> bool {
        let col = u - self.origin.0;
        let row = v - self.origin.1;
        if col < 0 || row < 0 || col >= self.width as i64 || row >= self.height as i64 {
            return false;
        }
        self.set(col as usize, row as usize, value);
        true
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    /// Valid cells as `(u, v, value)` in global pixel coordinates, row-major.
    pub fn iter_valid(&self) -> impl Iterator<Item = (i64, i64, f64)> + '_ {
        (0..self.width * self.height).filter_map(move |i| {
            self.valid[i].then(|| {
                let col = (i % self.width) as i64;
                let row = (i / self.width) as i64;
                (col + self.origin.0, row + self.origin.1, self.values[i])
            })
        })
    }

    fn expect_unit(&self, unit: MapUnit) -> Result<()> {
        if self.unit != unit {
            return Err(Error::UnitMismatch {
                expected: unit,
                actual: self.unit,
            });
        }
        Ok(())
    }
}

/// Converts disparity to depth cell by cell; unmeasurable disparities
/// become invalid cells.
pub fn disparity_to_depth(disparity: &PixelMap, rig: &CameraRig) -> Result<PixelMap> {
    disparity.expect_unit(MapUnit::Disparity)?;
    let mut out = PixelMap::new(MapUnit::Depth, disparity.origin, disparity.width, disparity.height);
    for i in 0..disparity.values.len() {
        if disparity.valid[i] {
            if let Some(z) = rig.depth_for_disparity(disparity.values[i]) {
                out.set_index(i, z);
            }
        }
    }
    Ok(out)
}

/// Inverse of [`disparity_to_depth`].
pub fn depth_to_disparity(depth: &PixelMap, rig: &CameraRig) -> Result<PixelMap> {
    depth.expect_unit(MapUnit::Depth)?;
    let mut out = PixelMap::new(MapUnit::Disparity, depth.origin, depth.width, depth.height);
    for i in 0..depth.values.len() {
        if depth.valid[i] && depth.values[i] > 0.0 {
            out.set_index(i, rig.disparity_for_depth(depth.values[i]));
        }
    }
    Ok(out)
}

/// Per-instance 3D points in the camera frame, indexed by source pixel.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ObjectPointCloud {
    pub instance_id: u32,
    pub points: Vec<[f64; 3]>,
    pub pixels: Vec<(i64, i64)>,
}

impl ObjectPointCloud {
    pub fn empty(instance_id: u32) -> Self {
        ObjectPointCloud {
            instance_id,
            ..Default::default()
        }
    }

    /// Builds a cloud, checking the length, uniqueness and positive-depth
    /// invariants.
    pub fn from_parts(
        instance_id: u32,
        points: Vec<[f64; 3]>,
        pixels: Vec<(i64, i64)>,
    ) -> Result<Self> {
        if points.len() != pixels.len() {
            return Err(Error::SizeMismatch(format!(
                "{} points but {} pixel indices",
                points.len(),
                pixels.len()
            )));
        }
        if points.iter().any(|p| !(p[2] > 0.0)) {
            return Err(Error::InvalidBox("point cloud contains z <= 0".into()));
        }
        let unique: HashSet<_> = pixels.iter().collect();
        if unique.len() != pixels.len() {
            return Err(Error::SizeMismatch("duplicate pixel indices".into()));
        }
        Ok(ObjectPointCloud {
            instance_id,
            points,
            pixels,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn median_depth(&self) -> Option<f64> {
        median(self.points.iter().map(|p| p[2]).collect())
    }
}

pub(crate) fn median(mut values: Vec<f64>) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    })
}

/// Lifts every valid depth cell to a 3D point.
pub fn back_project(depth: &PixelMap, rig: &CameraRig, instance_id: u32) -> Result<ObjectPointCloud> {
    depth.expect_unit(MapUnit::Depth)?;
    let mut cloud = ObjectPointCloud::empty(instance_id);
    for (u, v, z) in depth.iter_valid() {
        if z > 0.0 {
            cloud.points.push(rig.unproject(u as f64, v as f64, z));
            cloud.pixels.push((u, v));
        }
    }
    Ok(cloud)
}

/// Image-plane extent of a projected 3D box after clipping to the image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectedBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
    /// Set when clipping leaves zero width or height.
    pub degenerate: bool,
}

impl ProjectedBox {
    pub fn as_bbox(&self) -> Option<BBox2D> {
        if self.degenerate {
            None
        } else {
            BBox2D::new(self.x_min, self.y_min, self.x_max, self.y_max).ok()
        }
    }
}

/// Axis-aligned hull of the eight projected corners, clipped to
/// `[0, width-1] x [0, height-1]`.
pub fn project_box_to_image(b: &OrientedBox3D, rig: &CameraRig) -> Result<ProjectedBox> {
    let mut x_min = f64::INFINITY;
    let mut y_min = f64::INFINITY;
    let mut x_max = f64::NEG_INFINITY;
    let mut y_max = f64::NEG_INFINITY;
    for c in b.corners() {
        let (u, v) = rig.project(c).ok_or(Error::BehindCamera { z: c[2] })?;
        x_min = x_min.min(u);
        y_min = y_min.min(v);
        x_max = x_max.max(u);
        y_max = y_max.max(v);
    }
    let wmax = rig.image_width as f64 - 1.0;
    let hmax = rig.image_height as f64 - 1.0;
    let x_min = x_min.clamp(0.0, wmax);
    let x_max = x_max.clamp(0.0, wmax);
    let y_min = y_min.clamp(0.0, hmax);
    let y_max = y_max.clamp(0.0, hmax);
    Ok(ProjectedBox {
        x_min,
        y_min,
        x_max,
        y_max,
        degenerate: !(x_max > x_min && y_max > y_min),
    })
}
