//! Classical object-centric stereo matcher.
//!
//! Each associated RoI pair is resampled to a canonical square, matched with
//! a census cost volume over the local disparity range, aggregated with SGM
//! and reduced with a soft-argmin. The instance mask and a confidence floor
//! select the pixels that are lifted to 3D. A full-image mode running the same
//! stages over the whole frame serves as the baseline.

pub mod cost;
pub mod sgm;

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

pub use cost::{build_cost_volume, census_transform, CensusWindow, CostVolume};
pub use sgm::{aggregate, SgmParams};

use crate::association::RoiPair;
use crate::boxes::BBox2D;
use crate::error::{Error, Result};
use crate::geometry::{back_project, disparity_to_depth, CameraRig, MapUnit, ObjectPointCloud, PixelMap};
use crate::imaging::{Image, LabelImage};
use crate::local_disparity::{local_to_global, DisparityRange, InstanceMask, LocalDisparityMap, RoiFrame};

/// Global disparity candidates of the full-image baseline.
pub const FULL_IMAGE_RANGE: DisparityRange = DisparityRange { min: 0, max: 191 };

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatcherOptions {
    pub range: DisparityRange,
    pub canonical_size: usize,
    pub census: CensusWindow,
    pub sgm: SgmParams,
    pub temperature: f64,
    pub confidence_min: f64,
}

impl Default for MatcherOptions {
    fn default() -> Self {
        MatcherOptions {
            range: DisparityRange::default(),
            canonical_size: 224,
            census: CensusWindow::default(),
            sgm: SgmParams::default(),
            temperature: 1.0,
            confidence_min: 0.3,
        }
    }
}

impl MatcherOptions {
    pub fn validate(&self) -> Result<()> {
        if self.range.is_empty() {
            return Err(Error::EmptyRange {
                min: self.range.min,
                max: self.range.max,
            });
        }
        CensusWindow::new(self.census.width, self.census.height)?;
        if self.canonical_size < self.census.width.max(self.census.height) {
            return Err(Error::Config(format!(
                "canonical size {} smaller than the census window",
                self.canonical_size
            )));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::Config(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        if !(0.0..=1.0).contains(&self.confidence_min) {
            return Err(Error::Config(format!(
                "confidence floor must be in [0, 1], got {}",
                self.confidence_min
            )));
        }
        if !(self.sgm.p1 >= 0.0 && self.sgm.p2 >= self.sgm.p1) {
            return Err(Error::Config("SGM penalties need 0 <= P1 <= P2".into()));
        }
        Ok(())
    }

    /// Cells in one object cost volume.
    pub fn cost_volume_cells(&self) -> usize {
        self.canonical_size * self.canonical_size * self.range.len()
    }
}

/// Per-pixel disparity and peak softmax mass.
#[derive(Debug, Clone, PartialEq)]
pub struct DisparityEstimate {
    pub width: usize,
    pub height: usize,
    pub disparity: Vec<f64>,
    pub confidence: Vec<f64>,
}

/// Terms whose scaled cost exceeds the minimum by more than this contribute
/// less than `exp(-40)` relative weight and are skipped.
const SOFTMAX_CUTOFF: f64 = 40.0;

/// Softmax-weighted mean disparity over `exp(-cost / T)`.
pub fn soft_argmin(cv: &CostVolume, temperature: f64) -> DisparityEstimate {
    let n = cv.width * cv.height;
    let r = cv.depth();
    let lo = cv.range.min as f64;
    let hi = cv.range.max as f64;
    let mut disparity = vec![0.0; n];
    let mut confidence = vec![0.0; n];
    let costs = cv.costs();
    for p in 0..n {
        let cell = &costs[p * r..(p + 1) * r];
        let m = cell.iter().copied().fold(f32::INFINITY, f32::min) as f64;
        let mut z = 0.0;
        let mut acc = 0.0;
        for (k, &c) in cell.iter().enumerate() {
            let e = (c as f64 - m) / temperature;
            if e > SOFTMAX_CUTOFF {
                continue;
            }
            let wgt = (-e).exp();
            z += wgt;
            acc += wgt * (lo + k as f64);
        }
        disparity[p] = (acc / z).clamp(lo, hi);
        // the minimum-cost term has weight 1
        confidence[p] = 1.0 / z;
    }
    DisparityEstimate {
        width: cv.width,
        height: cv.height,
        disparity,
        confidence,
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct StageTimings {
    pub cost_volume: Duration,
    pub aggregation: Duration,
    pub reconstruction: Duration,
}

impl StageTimings {
    pub fn total(&self) -> Duration {
        self.cost_volume + self.aggregation + self.reconstruction
    }
}

impl std::ops::AddAssign for StageTimings {
    fn add_assign(&mut self, o: Self) {
        self.cost_volume += o.cost_volume;
        self.aggregation += o.aggregation;
        self.reconstruction += o.reconstruction;
    }
}

/// Output of matching one RoI pair.
#[derive(Debug, Clone)]
pub struct ObjectMatch {
    pub local: LocalDisparityMap,
    pub confidence: Vec<f64>,
    /// Global disparity over the left box at original resolution.
    pub global: PixelMap,
    pub cloud: ObjectPointCloud,
    pub cost_volume_cells: usize,
    pub timings: StageTimings,
}

/// Canonical left and right grayscale crops. The right crop spans the
/// right box horizontally and the left box vertically. Only pixels inside
/// each box are sampled.
pub fn canonical_crops(frame: &RoiFrame, left_image: &Image, right_image: &Image) -> (Image, Image) {
    let size_w = frame.width;
    let size_h = frame.height;
    let l = &frame.left;
    let r = &frame.right;
    let lc = left_image
        .resample_inside(l.x_min, l.y_min, l.width(), l.height(), size_w, size_h)
        .to_luma();
    let rc = right_image
        .resample_inside(r.x_min, l.y_min, r.width(), l.height(), size_w, size_h)
        .to_luma();
    (lc, rc)
}

/// Whether the census window around `(x, y)` lies inside a `w x h` grid.
/// Cells whose window needs border padding are not reconstructed.
fn window_inside(census: CensusWindow, x: usize, y: usize, w: usize, h: usize) -> bool {
    let (rx, ry) = (census.width / 2, census.height / 2);
    x >= rx && y >= ry && x + rx < w && y + ry < h
}

/// Matches an associated pair and lifts the masked, confident pixels to 3D.
pub fn match_pair(
    pair: &RoiPair,
    left_image: &Image,
    right_image: &Image,
    mask: &InstanceMask,
    rig: &CameraRig,
    options: &MatcherOptions,
) -> Result<ObjectMatch> {
    match_boxes(&pair.left.bbox, &pair.right.bbox, left_image, right_image, mask, rig, options)
}

pub fn match_boxes(
    left_box: &BBox2D,
    right_box: &BBox2D,
    left_image: &Image,
    right_image: &Image,
    mask: &InstanceMask,
    rig: &CameraRig,
    options: &MatcherOptions,
) -> Result<ObjectMatch> {
    options.validate()?;
    let size = options.canonical_size;
    let frame = RoiFrame::new(*left_box, *right_box, size, size)?;
    if mask.width != size || mask.height != size {
        return Err(Error::SizeMismatch(format!(
            "mask {}x{} does not match canonical size {size}",
            mask.width, mask.height
        )));
    }
    let mut timings = StageTimings::default();
    if mask.count() == 0 {
        let local = LocalDisparityMap::new(frame, options.range);
        let global = local_to_global(&local);
        return Ok(ObjectMatch {
            local,
            confidence: vec![0.0; size * size],
            global,
            cloud: ObjectPointCloud::empty(mask.instance_id),
            cost_volume_cells: 0,
            timings,
        });
    }

    let t = Instant::now();
    let (lc, rc) = canonical_crops(&frame, left_image, right_image);
    let cv = build_cost_volume(&lc, &rc, options.range, options.census)?;
    let cells = cv.cells();
    timings.cost_volume = t.elapsed();

    let t = Instant::now();
    let agg = aggregate(cv, &options.sgm);
    timings.aggregation = t.elapsed();

    let t = Instant::now();
    let est = soft_argmin(&agg, options.temperature);
    drop(agg);
    let mut local = LocalDisparityMap::new(frame, options.range);
    for j in 0..size {
        for i in 0..size {
            let p = j * size + i;
            if mask.get(i, j) && window_inside(options.census, i, j, size, size) && est.confidence[p] >= options.confidence_min {
                local.set(i, j, est.disparity[p]);
            }
        }
    }
    let global = local_to_global(&local);
    let depth = disparity_to_depth(&global, rig)?;
    let cloud = back_project(&depth, rig, mask.instance_id)?;
    timings.reconstruction = t.elapsed();

    Ok(ObjectMatch {
        local,
        confidence: est.confidence,
        global,
        cloud,
        cost_volume_cells: cells,
        timings,
    })
}

/// Output of the full-image baseline.
#[derive(Debug, Clone)]
pub struct FullImageMatch {
    /// Confident global disparities.
    pub disparity: PixelMap,
    pub confidence: Vec<f64>,
    pub cost_volume_cells: usize,
    pub timings: StageTimings,
}

/// Runs the same stages over the whole image with a global disparity range.
pub fn match_full_image(
    left_image: &Image,
    right_image: &Image,
    range: DisparityRange,
    options: &MatcherOptions,
) -> Result<FullImageMatch> {
    options.validate()?;
    let mut timings = StageTimings::default();
    let t = Instant::now();
    let lg = left_image.to_luma();
    let rg = right_image.to_luma();
    let cv = build_cost_volume(&lg, &rg, range, options.census)?;
    let cells = cv.cells();
    timings.cost_volume = t.elapsed();

    let t = Instant::now();
    let agg = aggregate(cv, &options.sgm);
    timings.aggregation = t.elapsed();

    let t = Instant::now();
    let est = soft_argmin(&agg, options.temperature);
    drop(agg);
    let (w, h) = (lg.width(), lg.height());
    let mut disparity = PixelMap::new(MapUnit::Disparity, (0, 0), w, h);
    for v in 0..h {
        for u in 0..w {
            let p = v * w + u;
            if window_inside(options.census, u, v, w, h) && est.confidence[p] >= options.confidence_min {
                disparity.set(u, v, est.disparity[p]);
            }
        }
    }
    timings.reconstruction = t.elapsed();
    Ok(FullImageMatch {
        disparity,
        confidence: est.confidence,
        cost_volume_cells: cells,
        timings,
    })
}

/// Points of one labelled instance taken from a full-image disparity map.
pub fn masked_cloud(
    disparity: &PixelMap,
    labels: &LabelImage,
    label: u8,
    rig: &CameraRig,
    instance_id: u32,
) -> Result<ObjectPointCloud> {
    let mut masked = PixelMap::new(MapUnit::Disparity, (0, 0), labels.width, labels.height);
    for v in 0..labels.height {
        for u in 0..labels.width {
            if labels.get(u, v) == label {
                if let Some(d) = disparity.at_global(u as i64, v as i64) {
                    masked.set(u, v, d);
                }
            }
        }
    }
    back_project(&disparity_to_depth(&masked, rig)?, rig, instance_id)
}
