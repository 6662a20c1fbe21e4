//! RoI-local disparity.
//!
//! A left and a right box are each resampled onto the same canonical
//! `w x h` grid. Canonical column `i` of the left crop sits at global column
//! `x_l = e_l + i * w_b_left / w`, and a global disparity `d_g` sends it to
//! the right-crop coordinate `i_r = (x_l - d_g - e_r) * w / w_b_right`. The
//! local disparity is `d_l = i - i_r`; it is signed because the two boxes are
//! not aligned on the object.
//!
//! Rows of both crops follow the left box's vertical extent (rectified
//! images have no vertical disparity).

use serde::{Deserialize, Serialize};

use crate::boxes::BBox2D;
use crate::error::{Error, Result};
use crate::geometry::{median, CameraRig, MapUnit, PixelMap};
use crate::imaging::LabelImage;

/// Inclusive integer range of local disparity candidates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DisparityRange {
    pub min: i32,
    pub max: i32,
}

impl Default for DisparityRange {
    fn default() -> Self {
        DisparityRange { min: -64, max: 90 }
    }
}

impl DisparityRange {
    pub fn new(min: i32, max: i32) -> Result<Self> {
        if max < min {
            return Err(Error::EmptyRange { min, max });
        }
        Ok(DisparityRange { min, max })
    }

    /// Number of candidates, `max - min + 1`.
    pub fn len(&self) -> usize {
        (self.max - self.min + 1).max(0) as usize
    }

    pub fn is_empty(&self) -> bool {
        self.max < self.min
    }

    pub fn contains(&self, d: f64) -> bool {
        d >= self.min as f64 && d <= self.max as f64
    }
}

/// Placement of a canonical crop pair in the full images.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoiFrame {
    pub left: BBox2D,
    pub right: BBox2D,
    pub width: usize,
    pub height: usize,
}

impl RoiFrame {
    pub fn new(left: BBox2D, right: BBox2D, width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Config(format!(
                "canonical size must be at least 1x1, got {width}x{height}"
            )));
        }
        if !(left.width() > 0.0 && right.width() > 0.0 && left.height() > 0.0) {
            return Err(Error::InvalidBox("zero-width RoI".into()));
        }
        Ok(RoiFrame {
            left,
            right,
            width,
            height,
        })
    }

    /// Left edge of the left RoI, `e_l`.
    pub fn e_left(&self) -> f64 {
        self.left.x_min
    }

    /// Left edge of the right RoI, `e_r`.
    pub fn e_right(&self) -> f64 {
        self.right.x_min
    }

    fn left_scale(&self) -> f64 {
        self.left.width() / self.width as f64
    }

    fn right_scale(&self) -> f64 {
        self.right.width() / self.width as f64
    }

    fn row_scale(&self) -> f64 {
        self.left.height() / self.height as f64
    }

    /// Global column of canonical left column `i`.
    pub fn x_left(&self, i: f64) -> f64 {
        self.e_left() + i * self.left_scale()
    }

    /// Global column of canonical right column `i_r`.
    pub fn x_right(&self, i_r: f64) -> f64 {
        self.e_right() + i_r * self.right_scale()
    }

    /// Global row of canonical row `j` (shared by both crops).
    pub fn y(&self, j: f64) -> f64 {
        self.left.y_min + j * self.row_scale()
    }

    pub fn local_from_global(&self, i: f64, d_global: f64) -> f64 {
        let x_r = self.x_left(i) - d_global;
        let i_r = (x_r - self.e_right()) / self.right_scale();
        i - i_r
    }

    pub fn global_from_local(&self, i: f64, d_local: f64) -> f64 {
        self.x_left(i) - self.x_right(i - d_local)
    }

    /// Top-left global pixel and size of the original-resolution region
    /// covered by the left box.
    pub fn global_region(&self) -> ((i64, i64), usize, usize) {
        let u0 = self.left.x_min.ceil() as i64;
        let u1 = self.left.x_max.ceil() as i64;
        let v0 = self.left.y_min.ceil() as i64;
        let v1 = self.left.y_max.ceil() as i64;
        ((u0, v0), (u1 - u0).max(0) as usize, (v1 - v0).max(0) as usize)
    }

    /// Canonical column nearest to global column `u` of the left box.
    fn nearest_col(&self, u: f64) -> usize {
        let i = ((u - self.e_left()) / self.left_scale()).round();
        i.clamp(0.0, (self.width - 1) as f64) as usize
    }

    fn nearest_row(&self, v: f64) -> usize {
        let j = ((v - self.left.y_min) / self.row_scale()).round();
        j.clamp(0.0, (self.height - 1) as f64) as usize
    }
}

/// Canonical column coordinates `i_l`: every row holds `0, 1, ..., w-1`.
pub fn local_coords(width: usize, height: usize) -> Vec<Vec<f64>> {
    let row: Vec<f64> = (0..width).map(|i| i as f64).collect();
    vec![row; height]
}

/// Canonical-grid local disparity with a validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalDisparityMap {
    pub frame: RoiFrame,
    pub range: DisparityRange,
    values: Vec<f64>,
    valid: Vec<bool>,
}

impl LocalDisparityMap {
    pub fn new(frame: RoiFrame, range: DisparityRange) -> Self {
        let n = frame.width * frame.height;
        LocalDisparityMap {
            frame,
            range,
            values: vec![0.0; n],
            valid: vec![false; n],
        }
    }

    pub fn width(&self) -> usize {
        self.frame.width
    }

    pub fn height(&self) -> usize {
        self.frame.height
    }

    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        let k = j * self.frame.width + i;
        self.valid[k].then(|| self.values[k])
    }

    /// Stores a value; returns false (and leaves the cell invalid) when the
    /// value is outside the range or not finite.
    pub fn set(&mut self, i: usize, j: usize, d: f64) -> bool {
        let k = j * self.frame.width + i;
        if d.is_finite() && self.range.contains(d) {
            self.values[k] = d;
            self.valid[k] = true;
            true
        } else {
            self.values[k] = 0.0;
            self.valid[k] = false;
            false
        }
    }

    pub fn invalidate(&mut self, i: usize, j: usize) {
        let k = j * self.frame.width + i;
        self.valid[k] = false;
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    /// Clears every cell outside the mask.
    pub fn apply_mask(&mut self, mask: &InstanceMask) -> Result<()> {
        if mask.width != self.frame.width || mask.height != self.frame.height {
            return Err(Error::SizeMismatch(format!(
                "mask {}x{} vs map {}x{}",
                mask.width, mask.height, self.frame.width, self.frame.height
            )));
        }
        for (v, m) in self.valid.iter_mut().zip(&mask.mask) {
            *v &= *m;
        }
        Ok(())
    }
}

/// Foreground mask on the canonical left RoI grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstanceMask {
    pub instance_id: u32,
    pub width: usize,
    pub height: usize,
    pub mask: Vec<bool>,
}

impl InstanceMask {
    pub fn full(instance_id: u32, width: usize, height: usize) -> Self {
        InstanceMask {
            instance_id,
            width,
            height,
            mask: vec![true; width * height],
        }
    }

    pub fn empty(instance_id: u32, width: usize, height: usize) -> Self {
        InstanceMask {
            instance_id,
            width,
            height,
            mask: vec![false; width * height],
        }
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.mask[j * self.width + i]
    }

    pub fn count(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }

    /// Nearest-neighbor resampling of one label of a full-resolution label
    /// image onto the canonical left RoI.
    pub fn from_labels(labels: &LabelImage, label: u8, frame: &RoiFrame, instance_id: u32) -> Self {
        let mut mask = InstanceMask::empty(instance_id, frame.width, frame.height);
        for j in 0..frame.height {
            let v = frame.y(j as f64).round();
            if v < 0.0 || v >= labels.height as f64 {
                continue;
            }
            for i in 0..frame.width {
                let u = frame.x_left(i as f64).round();
                if u < 0.0 || u >= labels.width as f64 {
                    continue;
                }
                mask.mask[j * frame.width + i] = labels.get(u as usize, v as usize) == label;
            }
        }
        mask
    }
}

/// Most frequent non-zero label inside a box, if any.
pub fn dominant_label(labels: &LabelImage, b: &BBox2D) -> Option<u8> {
    let mut counts = [0usize; 256];
    let u0 = b.x_min.ceil().max(0.0) as usize;
    let v0 = b.y_min.ceil().max(0.0) as usize;
    let u1 = (b.x_max.ceil().max(0.0) as usize).min(labels.width);
    let v1 = (b.y_max.ceil().max(0.0) as usize).min(labels.height);
    for v in v0..v1 {
        for u in u0..u1 {
            counts[labels.get(u, v) as usize] += 1;
        }
    }
    (1..256)
        .filter(|&l| counts[l] > 0)
        .max_by_key(|&l| (counts[l], std::cmp::Reverse(l)))
        .map(|l| l as u8)
}

/// Ground-truth local disparity for a RoI pair.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalGroundTruth {
    pub map: LocalDisparityMap,
    /// Cells with a valid global disparity sample.
    pub sampled: usize,
    /// Sampled cells whose local disparity fell outside the range.
    pub out_of_range: usize,
}

impl LocalGroundTruth {
    pub fn out_of_range_fraction(&self) -> f64 {
        if self.sampled == 0 {
            0.0
        } else {
            self.out_of_range as f64 / self.sampled as f64
        }
    }
}

/// Nearest-neighbor samples the global disparity onto the canonical left grid
/// and converts each sample to local disparity. Cells outside `mask` (when
/// given) or without a valid global value stay invalid.
pub fn global_to_local(
    global: &PixelMap,
    frame: &RoiFrame,
    range: DisparityRange,
    mask: Option<&InstanceMask>,
) -> Result<LocalGroundTruth> {
    if global.unit != MapUnit::Disparity {
        return Err(Error::UnitMismatch {
            expected: MapUnit::Disparity,
            actual: global.unit,
        });
    }
    if let Some(m) = mask {
        if m.width != frame.width || m.height != frame.height {
            return Err(Error::SizeMismatch("mask does not match canonical size".into()));
        }
    }
    let mut map = LocalDisparityMap::new(*frame, range);
    let mut sampled = 0;
    let mut out_of_range = 0;
    for j in 0..frame.height {
        let v = frame.y(j as f64).round() as i64;
        for i in 0..frame.width {
            if mask.is_some_and(|m| !m.get(i, j)) {
                continue;
            }
            let u = frame.x_left(i as f64).round() as i64;
            let Some(dg) = global.at_global(u, v) else {
                continue;
            };
            sampled += 1;
            if !map.set(i, j, frame.local_from_global(i as f64, dg)) {
                out_of_range += 1;
            }
        }
    }
    Ok(LocalGroundTruth {
        map,
        sampled,
        out_of_range,
    })
}

/// Converts each canonical cell back to global disparity, then
/// nearest-neighbor resizes the result to the left box at original resolution.
pub fn local_to_global(local: &LocalDisparityMap) -> PixelMap {
    let f = &local.frame;
    let mut canonical = vec![None; f.width * f.height];
    for j in 0..f.height {
        for i in 0..f.width {
            if let Some(dl) = local.get(i, j) {
                canonical[j * f.width + i] = Some(f.global_from_local(i as f64, dl));
            }
        }
    }
    let (origin, w, h) = f.global_region();
    let mut out = PixelMap::new(MapUnit::Disparity, origin, w, h);
    for row in 0..h {
        let j = f.nearest_row((origin.1 + row as i64) as f64);
        for col in 0..w {
            let i = f.nearest_col((origin.0 + col as i64) as f64);
            if let Some(dg) = canonical[j * f.width + i] {
                out.set(col, row, dg);
            }
        }
    }
    out
}

/// Full-image disparity assembled from several instances.
#[derive(Debug, Clone, PartialEq)]
pub struct CompositeMap {
    pub disparity: PixelMap,
    /// Instance owning each pixel, row-major.
    pub owner: Vec<Option<u32>>,
    /// Instance ids in painting order (farthest first).
    pub order: Vec<u32>,
}

/// Paints instances farthest first so nearer instances win on overlap.
/// Instance depth is the median depth of its reconstructed pixels.
pub fn composite(instances: &[(u32, LocalDisparityMap)], rig: &CameraRig) -> CompositeMap {
    let (w, h) = (rig.image_width, rig.image_height);
    let mut regions: Vec<(f64, u32, PixelMap)> = instances
        .iter()
        .filter_map(|(id, local)| {
            let g = local_to_global(local);
            let depths: Vec<f64> = g
                .iter_valid()
                .filter_map(|(_, _, d)| rig.depth_for_disparity(d))
                .collect();
            median(depths).map(|m| (m, *id, g))
        })
        .collect();
    regions.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));

    let mut disparity = PixelMap::new(MapUnit::Disparity, (0, 0), w, h);
    let mut owner = vec![None; w * h];
    for (_, id, g) in &regions {
        for (u, v, d) in g.iter_valid() {
            if disparity.set_global(u, v, d) {
                owner[v as usize * w + u as usize] = Some(*id);
            }
        }
    }
    CompositeMap {
        disparity,
        owner,
        order: regions.iter().map(|r| r.1).collect(),
    }
}
