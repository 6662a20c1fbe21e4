//! Cost aggregation: a per-slice box filter followed by four-path
//! semi-global aggregation. The result is the mean over the four paths.

use serde::{Deserialize, Serialize};

use super::cost::CostVolume;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SgmParams {
    /// Penalty for a one-step disparity change between neighbors.
    pub p1: f32,
    /// Penalty for larger disparity jumps.
    pub p2: f32,
    /// Box filter radius (2 gives a 5x5 window).
    pub box_radius: usize,
}

impl Default for SgmParams {
    fn default() -> Self {
        SgmParams {
            p1: 8.0,
            p2: 96.0,
            box_radius: 2,
        }
    }
}

/// Mean filter over a `(2r+1) x (2r+1)` window of each disparity slice,
/// averaging only in-bounds neighbors.
pub fn box_filter(cv: CostVolume, radius: usize) -> CostVolume {
    if radius == 0 {
        return cv;
    }
    let (w, h, r) = (cv.width, cv.height, cv.depth());
    let range = cv.range;
    let src = cv.into_costs();
    let mut tmp = vec![0f32; src.len()];
    let mut acc = vec![0f32; r];
    for v in 0..h {
        for u in 0..w {
            let lo = u.saturating_sub(radius);
            let hi = (u + radius).min(w - 1);
            acc.iter_mut().for_each(|a| *a = 0.0);
            for uu in lo..=hi {
                let s = (v * w + uu) * r;
                for (a, c) in acc.iter_mut().zip(&src[s..s + r]) {
                    *a += *c;
                }
            }
            let inv = 1.0 / (hi - lo + 1) as f32;
            let d = (v * w + u) * r;
            for (o, a) in tmp[d..d + r].iter_mut().zip(&acc) {
                *o = a * inv;
            }
        }
    }
    let mut out = src;
    for v in 0..h {
        let lo = v.saturating_sub(radius);
        let hi = (v + radius).min(h - 1);
        let inv = 1.0 / (hi - lo + 1) as f32;
        for u in 0..w {
            acc.iter_mut().for_each(|a| *a = 0.0);
            for vv in lo..=hi {
                let s = (vv * w + u) * r;
                for (a, c) in acc.iter_mut().zip(&tmp[s..s + r]) {
                    *a += *c;
                }
            }
            let d = (v * w + u) * r;
            for (o, a) in out[d..d + r].iter_mut().zip(&acc) {
                *o = a * inv;
            }
        }
    }
    CostVolume::from_costs(w, h, range, out).expect("shape preserved")
}

/// One SGM recursion step: `cur = cost + min(prev[k], prev[k+-1] + p1, min(prev) + p2) - min(prev)`.
#[inline]
fn path_step(cost: &[f32], prev: &[f32], cur: &mut [f32], p1: f32, p2: f32) {
    let r = cost.len();
    let min_prev = prev.iter().copied().fold(f32::INFINITY, f32::min);
    let jump = min_prev + p2;
    for k in 0..r {
        let mut best = prev[k];
        if k > 0 {
            best = best.min(prev[k - 1] + p1);
        }
        if k + 1 < r {
            best = best.min(prev[k + 1] + p1);
        }
        best = best.min(jump);
        cur[k] = cost[k] + best - min_prev;
    }
}

/// Four-path (left, right, up, down) semi-global aggregation, averaged.
fn semi_global(cv: &CostVolume, p1: f32, p2: f32) -> Vec<f32> {
    let (w, h, r) = (cv.width, cv.height, cv.depth());
    let c = cv.costs();
    let mut sum = vec![0f32; c.len()];
    let mut prev = vec![0f32; r];
    let mut cur = vec![0f32; r];

    // horizontal paths
    for v in 0..h {
        for forward in [true, false] {
            for step in 0..w {
                let u = if forward { step } else { w - 1 - step };
                let s = (v * w + u) * r;
                let cost = &c[s..s + r];
                if step == 0 {
                    cur.copy_from_slice(cost);
                } else {
                    path_step(cost, &prev, &mut cur, p1, p2);
                }
                for (o, x) in sum[s..s + r].iter_mut().zip(&cur) {
                    *o += *x;
                }
                std::mem::swap(&mut prev, &mut cur);
            }
        }
    }

    // vertical paths keep one row of path costs
    let mut prev_row = vec![0f32; w * r];
    let mut cur_row = vec![0f32; w * r];
    for downward in [true, false] {
        for step in 0..h {
            let v = if downward { step } else { h - 1 - step };
            let row = &c[v * w * r..(v + 1) * w * r];
            if step == 0 {
                cur_row.copy_from_slice(row);
            } else {
                for u in 0..w {
                    let s = u * r;
                    path_step(&row[s..s + r], &prev_row[s..s + r], &mut cur_row[s..s + r], p1, p2);
                }
            }
            for (o, x) in sum[v * w * r..(v + 1) * w * r].iter_mut().zip(&cur_row) {
                *o += *x;
            }
            std::mem::swap(&mut prev_row, &mut cur_row);
        }
    }

    sum.iter_mut().for_each(|s| *s *= 0.25);
    sum
}

/// Box filter then four-path semi-global aggregation.
pub fn aggregate(cv: CostVolume, params: &SgmParams) -> CostVolume {
    let filtered = box_filter(cv, params.box_radius);
    let costs = semi_global(&filtered, params.p1, params.p2);
    let (w, h, range) = (filtered.width, filtered.height, filtered.range);
    drop(filtered);
    CostVolume::from_costs(w, h, range, costs).expect("shape preserved")
}
