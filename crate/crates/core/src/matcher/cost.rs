//! Census transform and Hamming matching cost.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::Image;
use crate::local_disparity::DisparityRange;

/// Census window size in pixels; both sides odd, at most 65 samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CensusWindow {
    pub width: usize,
    pub height: usize,
}

impl Default for CensusWindow {
    fn default() -> Self {
        CensusWindow {
            width: 9,
            height: 7,
        }
    }
}

impl CensusWindow {
    pub fn new(width: usize, height: usize) -> Result<Self> {
        if width.is_multiple_of(2) || height.is_multiple_of(2) || width * height > 65 || width * height < 3 {
            return Err(Error::Config(format!(
                "census window must be odd-sized with at most 64 comparisons, got {width}x{height}"
            )));
        }
        Ok(CensusWindow { width, height })
    }

    /// Number of comparison bits, which is also the largest possible cost.
    pub fn bits(&self) -> u32 {
        (self.width * self.height - 1) as u32
    }
}

/// Census descriptors of a single-channel image with replicated borders.
/// Bit set means the neighbor is darker than the center.
pub fn census_transform(img: &Image, window: CensusWindow) -> Vec<u64> {
    debug_assert_eq!(img.channels(), 1);
    let (w, h) = (img.width(), img.height());
    let rx = (window.width / 2) as isize;
    let ry = (window.height / 2) as isize;
    let px = img.data();
    let mut out = vec![0u64; w * h];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let center = px[y as usize * w + x as usize];
            let mut desc = 0u64;
            for dy in -ry..=ry {
                let yy = (y + dy).clamp(0, h as isize - 1) as usize;
                let row = &px[yy * w..(yy + 1) * w];
                for dx in -rx..=rx {
                    if dx == 0 && dy == 0 {
                        continue;
                    }
                    let xx = (x + dx).clamp(0, w as isize - 1) as usize;
                    desc = (desc << 1) | u64::from(row[xx] < center);
                }
            }
            out[y as usize * w + x as usize] = desc;
        }
    }
    out
}

/// Matching costs on an `h x w x R` grid, stored with the disparity index fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct CostVolume {
    pub width: usize,
    pub height: usize,
    pub range: DisparityRange,
    costs: Vec<f32>,
}

impl CostVolume {
    pub fn from_costs(width: usize, height: usize, range: DisparityRange, costs: Vec<f32>) -> Result<Self> {
        if range.is_empty() {
            return Err(Error::EmptyRange {
                min: range.min,
                max: range.max,
            });
        }
        if costs.len() != width * height * range.len() {
            return Err(Error::SizeMismatch(format!(
                "{}x{}x{} volume needs {} costs, got {}",
                height,
                width,
                range.len(),
                width * height * range.len(),
                costs.len()
            )));
        }
        if costs.iter().any(|c| !c.is_finite() || *c < 0.0) {
            return Err(Error::Config("costs must be finite and non-negative".into()));
        }
        Ok(CostVolume {
            width,
            height,
            range,
            costs,
        })
    }

    pub fn depth(&self) -> usize {
        self.range.len()
    }

    /// Total number of cells, `h * w * R`.
    pub fn cells(&self) -> usize {
        self.costs.len()
    }

    pub fn costs(&self) -> &[f32] {
        &self.costs
    }

    pub(crate) fn into_costs(self) -> Vec<f32> {
        self.costs
    }

    #[inline]
    pub fn cost(&self, u: usize, v: usize, k: usize) -> f32 {
        self.costs[(v * self.width + u) * self.range.len() + k]
    }

    /// Cost slice over all candidates at one pixel.
    pub fn pixel(&self, u: usize, v: usize) -> &[f32] {
        let r = self.range.len();
        let s = (v * self.width + u) * r;
        &self.costs[s..s + r]
    }

    /// Disparity value of candidate `k`.
    pub fn disparity_of(&self, k: usize) -> f64 {
        (self.range.min + k as i32) as f64
    }
}

/// Hamming-distance cost between the census descriptors of left pixel
/// `(u, v)` and right pixel `(u - d, v)`; shifts that leave the right image
/// get the maximum cost.
pub fn build_cost_volume(
    left: &Image,
    right: &Image,
    range: DisparityRange,
    window: CensusWindow,
) -> Result<CostVolume> {
    if range.is_empty() {
        return Err(Error::EmptyRange {
            min: range.min,
            max: range.max,
        });
    }
    if left.width() != right.width() || left.height() != right.height() {
        return Err(Error::SizeMismatch(format!(
            "left {}x{} vs right {}x{}",
            left.width(),
            left.height(),
            right.width(),
            right.height()
        )));
    }
    if left.channels() != 1 || right.channels() != 1 {
        return Err(Error::SizeMismatch("cost volume needs single-channel images".into()));
    }
    let (w, h) = (left.width(), left.height());
    let cl = census_transform(left, window);
    let cr = census_transform(right, window);
    let r = range.len();
    let max_cost = window.bits() as f32;
    let mut costs = vec![max_cost; w * h * r];
    for v in 0..h {
        let row_l = &cl[v * w..(v + 1) * w];
        let row_r = &cr[v * w..(v + 1) * w];
        for u in 0..w {
            let base = (v * w + u) * r;
            let dl = row_l[u];
            // candidate k is in bounds when 0 <= u - (min + k) < w
            let k_lo = (u as i64 - (w as i64 - 1) - range.min as i64).max(0);
            let k_hi = (u as i64 - range.min as i64).min(r as i64 - 1);
            for k in k_lo..=k_hi {
                let ur = (u as i64 - range.min as i64 - k) as usize;
                costs[base + k as usize] = (dl ^ row_r[ur]).count_ones() as f32;
            }
        }
    }
    Ok(CostVolume {
        width: w,
        height: h,
        range,
        costs,
    })
}
