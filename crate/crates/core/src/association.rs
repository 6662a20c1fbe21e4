//! Left/right 2D box association.
//!
//! Candidate pairs must share a class and have a horizontal center offset
//! close to the disparity predicted from the left box height. Surviving
//! candidates are scored with SSIM over canonically resized crops and matched
//! greedily from the highest score down.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::boxes::BBox2D;
use crate::error::{Error, Result};
use crate::imaging::Image;

/// SSIM stabilizers for unit dynamic range.
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

/// Gate tolerance used when the regression residual spread is exactly zero.
pub const ZERO_SIGMA_GATE_PX: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection2D {
    pub class: String,
    pub score: f64,
    pub bbox: BBox2D,
}

impl Detection2D {
    pub fn new(class: impl Into<String>, score: f64, bbox: BBox2D) -> Self {
        Detection2D {
            class: class.into(),
            score,
            bbox,
        }
    }
}

/// Keeps detections scoring at least `min_score`.
pub fn threshold_detections(dets: &[Detection2D], min_score: f64) -> Vec<Detection2D> {
    dets.iter().filter(|d| d.score >= min_score).cloned().collect()
}

/// Linear map from left box height to expected center disparity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeightDisparityModel {
    pub slope: f64,
    pub intercept: f64,
    /// Standard deviation of the fit residuals (pixels).
    pub sigma: f64,
}

impl HeightDisparityModel {
    /// Ordinary least squares fit of `(box height, center disparity)` samples.
    pub fn fit(samples: &[(f64, f64)]) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::DegenerateFit(format!(
                "need at least 2 samples, got {}",
                samples.len()
            )));
        }
        let n = samples.len() as f64;
        let mean_h = samples.iter().map(|s| s.0).sum::<f64>() / n;
        let mean_d = samples.iter().map(|s| s.1).sum::<f64>() / n;
        let mut sxx = 0.0;
        let mut sxy = 0.0;
        for &(h, d) in samples {
            sxx += (h - mean_h) * (h - mean_h);
            sxy += (h - mean_h) * (d - mean_d);
        }
        if sxx <= f64::EPSILON * mean_h.abs().max(1.0) {
            return Err(Error::DegenerateFit("all box heights are equal".into()));
        }
        let slope = sxy / sxx;
        if !(slope > 0.0) {
            return Err(Error::DegenerateFit(format!(
                "slope {slope} is not positive; taller boxes must have larger disparity"
            )));
        }
        let intercept = mean_d - slope * mean_h;
        let ssr: f64 = samples
            .iter()
            .map(|&(h, d)| {
                let r = d - (slope * h + intercept);
                r * r
            })
            .sum();
        let mut sigma = (ssr / n).sqrt();
        // residuals at rounding level mean the samples lie on a line
        if sigma <= 1e-9 * mean_d.abs().max(1.0) {
            sigma = 0.0;
        }
        Ok(HeightDisparityModel {
            slope,
            intercept,
            sigma,
        })
    }

    pub fn expected_disparity(&self, box_height: f64) -> f64 {
        self.slope * box_height + self.intercept
    }

    /// Maximum allowed deviation from the expected disparity: three sigma,
    /// or [`ZERO_SIGMA_GATE_PX`] for a noiseless fit.
    pub fn gate_tolerance(&self) -> f64 {
        if self.sigma > 0.0 {
            3.0 * self.sigma
        } else {
            ZERO_SIGMA_GATE_PX
        }
    }

    /// Whether the center offset of a left/right box pair passes the gate.
    pub fn admits(&self, left: &BBox2D, right: &BBox2D) -> bool {
        let delta = left.center_u() - right.center_u();
        delta >= 0.0 && (delta - self.expected_disparity(left.height())).abs() <= self.gate_tolerance()
    }
}

/// Height/disparity models keyed by class, with an optional shared fallback.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AssociationModel {
    pub per_class: BTreeMap<String, HeightDisparityModel>,
    #[serde(default)]
    pub fallback: Option<HeightDisparityModel>,
}

impl AssociationModel {
    /// Fits one model per class plus a pooled fallback. Classes whose samples
    /// cannot be fit on their own use the fallback.
    pub fn fit(samples: &[(String, f64, f64)]) -> Result<Self> {
        let mut by_class: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
        for (class, h, d) in samples {
            by_class.entry(class.clone()).or_default().push((*h, *d));
        }
        let pooled: Vec<(f64, f64)> = samples.iter().map(|s| (s.1, s.2)).collect();
        let fallback = HeightDisparityModel::fit(&pooled).ok();
        let per_class: BTreeMap<_, _> = by_class
            .into_iter()
            .filter_map(|(c, s)| HeightDisparityModel::fit(&s).ok().map(|m| (c, m)))
            .collect();
        if per_class.is_empty() && fallback.is_none() {
            return Err(Error::DegenerateFit("no class could be fit".into()));
        }
        Ok(AssociationModel {
            per_class,
            fallback,
        })
    }

    pub fn model_for(&self, class: &str) -> Option<&HeightDisparityModel> {
        self.per_class.get(class).or(self.fallback.as_ref())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))
    }
}

/// Single-window SSIM per channel, averaged over channels.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    if a.width() != b.width() || a.height() != b.height() || a.channels() != b.channels() {
        return Err(Error::SizeMismatch(format!(
            "ssim on {}x{}x{} vs {}x{}x{}",
            a.width(),
            a.height(),
            a.channels(),
            b.width(),
            b.height(),
            b.channels()
        )));
    }
    let ch = a.channels();
    let n = (a.width() * a.height()) as f64;
    if n == 0.0 {
        return Err(Error::SizeMismatch("empty crops".into()));
    }
    let (da, db) = (a.data(), b.data());
    let mut total = 0.0;
    for c in 0..ch {
        let mut sa = 0.0;
        let mut sb = 0.0;
        for i in (c..da.len()).step_by(ch) {
            sa += da[i] as f64;
            sb += db[i] as f64;
        }
        let ma = sa / n;
        let mb = sb / n;
        let mut vaa = 0.0;
        let mut vbb = 0.0;
        let mut vab = 0.0;
        for i in (c..da.len()).step_by(ch) {
            let x = da[i] as f64 - ma;
            let y = db[i] as f64 - mb;
            vaa += x * x;
            vbb += y * y;
            vab += x * y;
        }
        let (vaa, vbb, vab) = (vaa / n, vbb / n, vab / n);
        total += ((2.0 * ma * mb + SSIM_C1) * (2.0 * vab + SSIM_C2))
            / ((ma * ma + mb * mb + SSIM_C1) * (vaa + vbb + SSIM_C2));
    }
    Ok(total / ch as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AssociationConfig {
    /// Side of the square crops compared with SSIM.
    pub crop_size: usize,
    /// Detection score threshold `t_d`.
    pub score_threshold: f64,
}

impl Default for AssociationConfig {
    fn default() -> Self {
        AssociationConfig {
            crop_size: 128,
            score_threshold: 0.6,
        }
    }
}

/// An associated left/right detection pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoiPair {
    pub left_index: usize,
    pub right_index: usize,
    pub left: Detection2D,
    pub right: Detection2D,
    pub ssim: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AssociationResult {
    pub pairs: Vec<RoiPair>,
    /// Left detections left without a partner (false positives).
    pub unmatched_left: Vec<usize>,
    pub unmatched_right: Vec<usize>,
    /// Number of pairs that passed the gate and were scored.
    pub candidates_scored: usize,
}

pub fn crop_box(img: &Image, b: &BBox2D, size: usize) -> Image {
    img.resample_region(b.x_min, b.y_min, b.width(), b.height(), size, size)
}

/// Greedy SSIM association of already score-thresholded detections.
pub fn associate(
    left: &[Detection2D],
    right: &[Detection2D],
    model: &AssociationModel,
    left_image: &Image,
    right_image: &Image,
    config: &AssociationConfig,
) -> AssociationResult {
    let mut candidates: Vec<(usize, usize)> = Vec::new();
    for (i, l) in left.iter().enumerate() {
        let Some(m) = model.model_for(&l.class) else {
            continue;
        };
        for (j, r) in right.iter().enumerate() {
            if l.class == r.class && m.admits(&l.bbox, &r.bbox) {
                candidates.push((i, j));
            }
        }
    }

    let mut left_crops: Vec<Option<Image>> = vec![None; left.len()];
    let mut right_crops: Vec<Option<Image>> = vec![None; right.len()];
    let mut scored: Vec<(f64, usize, usize)> = Vec::with_capacity(candidates.len());
    for &(i, j) in &candidates {
        let lc = left_crops[i].get_or_insert_with(|| crop_box(left_image, &left[i].bbox, config.crop_size));
        let rc = right_crops[j].get_or_insert_with(|| crop_box(right_image, &right[j].bbox, config.crop_size));
        let s = ssim(lc, rc).expect("crops share the configured size");
        scored.push((s, i, j));
    }
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

    let mut left_used = vec![false; left.len()];
    let mut right_used = vec![false; right.len()];
    let mut pairs = Vec::new();
    for (s, i, j) in scored.iter().copied() {
        if left_used[i] || right_used[j] {
            continue;
        }
        left_used[i] = true;
        right_used[j] = true;
        pairs.push(RoiPair {
            left_index: i,
            right_index: j,
            left: left[i].clone(),
            right: right[j].clone(),
            ssim: s,
        });
    }
    AssociationResult {
        pairs,
        unmatched_left: (0..left.len()).filter(|&i| !left_used[i]).collect(),
        unmatched_right: (0..right.len()).filter(|&j| !right_used[j]).collect(),
        candidates_scored: scored.len(),
    }
}
