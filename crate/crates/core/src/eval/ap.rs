//! Average precision with KITTI difficulty buckets, and stereo 2D AP.

use serde::{Deserialize, Serialize};

use crate::association::Detection2D;
use crate::boxes::BBox2D;
use crate::error::Result;

use super::iou::{iou_3d, iou_bev};
use super::labels::KittiObject;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Difficulty {
    Easy,
    Moderate,
    Hard,
}

impl Difficulty {
    pub const ALL: [Difficulty; 3] = [Difficulty::Easy, Difficulty::Moderate, Difficulty::Hard];

    /// Minimum 2D box height, maximum occlusion level and maximum truncation.
    pub fn limits(self) -> (f64, i32, f64) {
        match self {
            Difficulty::Easy => (40.0, 0, 0.15),
            Difficulty::Moderate => (25.0, 1, 0.30),
            Difficulty::Hard => (25.0, 2, 0.50),
        }
    }

    pub fn admits(self, o: &KittiObject) -> bool {
        let (min_h, max_occ, max_trunc) = self.limits();
        o.box_height() >= min_h && o.occluded <= max_occ && o.truncated <= max_trunc
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Interpolation {
    ElevenPoint,
    FortyPoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Overlap {
    Box2D,
    Bev,
    Box3D,
}

/// AP in percent (absent when there is no ground truth) with the counts
/// behind it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ApReport {
    pub ap: Option<f64>,
    pub true_positives: usize,
    pub false_positives: usize,
    pub ground_truth: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Outcome {
    TruePositive,
    FalsePositive,
    Ignored,
}

/// Greedy matching in descending score order (ties by index). Each detection
/// takes the free ground truth with the largest overlap at or above the
/// threshold; a detection that only overlaps ignored ground truth is ignored.
pub(crate) fn greedy_match(
    scores: &[f64],
    ignored_gt: &[bool],
    overlap: impl Fn(usize, usize) -> f64,
    threshold: f64,
) -> Vec<Outcome> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut taken = vec![false; ignored_gt.len()];
    let mut out = vec![Outcome::FalsePositive; scores.len()];
    for d in order {
        let mut best: Option<(usize, f64)> = None;
        let mut hits_ignored = false;
        for g in 0..ignored_gt.len() {
            if taken[g] {
                continue;
            }
            let o = overlap(d, g);
            if o < threshold {
                continue;
            }
            if ignored_gt[g] {
                hits_ignored = true;
            } else if best.is_none_or(|(_, bo)| o > bo) {
                best = Some((g, o));
            }
        }
        out[d] = match best {
            Some((g, _)) => {
                taken[g] = true;
                Outcome::TruePositive
            }
            None if hits_ignored => Outcome::Ignored,
            None => Outcome::FalsePositive,
        };
    }
    out
}

/// Interpolated AP over the pooled, score-ranked outcomes.
pub(crate) fn interpolated_ap(mut scored: Vec<(f64, Outcome)>, num_gt: usize, interp: Interpolation) -> ApReport {
    scored.retain(|s| s.1 != Outcome::Ignored);
    // stable: equal scores keep their pooled order
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    let tp_total = scored.iter().filter(|s| s.1 == Outcome::TruePositive).count();
    let fp_total = scored.len() - tp_total;
    if num_gt == 0 {
        return ApReport {
            ap: None,
            true_positives: tp_total,
            false_positives: fp_total,
            ground_truth: 0,
        };
    }
    let mut curve = Vec::with_capacity(scored.len());
    let mut tp = 0usize;
    for (i, (_, o)) in scored.iter().enumerate() {
        if *o == Outcome::TruePositive {
            tp += 1;
        }
        curve.push((tp as f64 / num_gt as f64, tp as f64 / (i + 1) as f64));
    }
    let recalls: Vec<f64> = match interp {
        Interpolation::ElevenPoint => (0..=10).map(|i| i as f64 / 10.0).collect(),
        Interpolation::FortyPoint => (1..=40).map(|i| i as f64 / 40.0).collect(),
    };
    let sum: f64 = recalls
        .iter()
        .map(|&r| {
            curve
                .iter()
                .filter(|(rec, _)| *rec >= r - 1e-12)
                .map(|(_, p)| *p)
                .fold(0.0, f64::max)
        })
        .sum();
    ApReport {
        ap: Some(100.0 * sum / recalls.len() as f64),
        true_positives: tp_total,
        false_positives: fp_total,
        ground_truth: num_gt,
    }
}

/// Detections and ground truth of one frame.
#[derive(Debug, Clone, Default)]
pub struct FrameObjects {
    pub detections: Vec<KittiObject>,
    pub ground_truth: Vec<KittiObject>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ApQuery<'a> {
    pub class: &'a str,
    pub overlap: Overlap,
    pub threshold: f64,
    pub difficulty: Difficulty,
    pub interpolation: Interpolation,
}

/// AP for one class. Ground truth of the class outside the difficulty bucket
/// is ignored; objects of other classes play no part.
pub fn average_precision(frames: &[FrameObjects], q: &ApQuery) -> Result<ApReport> {
    let mut pooled = Vec::new();
    let mut num_gt = 0;
    for f in frames {
        let dets: Vec<&KittiObject> = f.detections.iter().filter(|d| d.class == q.class).collect();
        let gts: Vec<&KittiObject> = f.ground_truth.iter().filter(|g| g.class == q.class).collect();
        let ignored: Vec<bool> = gts.iter().map(|g| !q.difficulty.admits(g)).collect();
        num_gt += ignored.iter().filter(|i| !**i).count();
        let overlaps = pairwise(&dets, &gts, q.overlap)?;
        let scores: Vec<f64> = dets.iter().map(|d| d.score.unwrap_or(1.0)).collect();
        let outcomes = greedy_match(&scores, &ignored, |d, g| overlaps[d][g], q.threshold);
        pooled.extend(scores.into_iter().zip(outcomes));
    }
    Ok(interpolated_ap(pooled, num_gt, q.interpolation))
}

fn pairwise(dets: &[&KittiObject], gts: &[&KittiObject], kind: Overlap) -> Result<Vec<Vec<f64>>> {
    let mut out = vec![vec![0.0; gts.len()]; dets.len()];
    for (i, d) in dets.iter().enumerate() {
        for (j, g) in gts.iter().enumerate() {
            out[i][j] = match kind {
                Overlap::Box2D => d.bbox2d()?.iou(&g.bbox2d()?),
                Overlap::Bev => iou_bev(&d.box3d()?, &g.box3d()?),
                Overlap::Box3D => iou_3d(&d.box3d()?, &g.box3d()?),
            };
        }
    }
    Ok(out)
}

/// IoU each side of a stereo pair must reach.
pub const STEREO_IOU: f64 = 0.7;

/// One frame of the stereo 2D evaluation.
#[derive(Debug, Clone, Default)]
pub struct StereoFrame {
    pub left: Vec<Detection2D>,
    pub right: Vec<Detection2D>,
    /// Associated (left index, right index) pairs.
    pub pairs: Vec<(usize, usize)>,
    /// Ground-truth (left box, right box) per object.
    pub ground_truth: Vec<(BBox2D, BBox2D)>,
}

/// Stereo AP: a pair is a true positive when its left and right boxes both
/// reach `threshold` IoU with the boxes of the same object. Pairs are scored
/// by their left detection; detections left out of every pair count as false
/// positives.
pub fn stereo_ap(frames: &[StereoFrame], threshold: f64, interp: Interpolation) -> ApReport {
    let mut pooled = Vec::new();
    let mut num_gt = 0;
    for f in frames {
        num_gt += f.ground_truth.len();
        let scores: Vec<f64> = f.pairs.iter().map(|&(l, _)| f.left[l].score).collect();
        let ignored = vec![false; f.ground_truth.len()];
        let overlap = |p: usize, g: usize| {
            let (l, r) = f.pairs[p];
            let (gl, gr) = &f.ground_truth[g];
            f.left[l].bbox.iou(gl).min(f.right[r].bbox.iou(gr))
        };
        let outcomes = greedy_match(&scores, &ignored, overlap, threshold);
        pooled.extend(scores.into_iter().zip(outcomes));
        let mut used_l = vec![false; f.left.len()];
        let mut used_r = vec![false; f.right.len()];
        for &(l, r) in &f.pairs {
            used_l[l] = true;
            used_r[r] = true;
        }
        for (d, used) in f.left.iter().zip(&used_l).chain(f.right.iter().zip(&used_r)) {
            if !used {
                pooled.push((d.score, Outcome::FalsePositive));
            }
        }
    }
    interpolated_ap(pooled, num_gt, interp)
}

/// Single-view 2D AP over plain boxes.
pub fn average_precision_2d(
    frames: &[(Vec<Detection2D>, Vec<BBox2D>)],
    threshold: f64,
    interp: Interpolation,
) -> ApReport {
    let mut pooled = Vec::new();
    let mut num_gt = 0;
    for (dets, gts) in frames {
        num_gt += gts.len();
        let scores: Vec<f64> = dets.iter().map(|d| d.score).collect();
        let outcomes = greedy_match(&scores, &vec![false; gts.len()], |d, g| dets[d].bbox.iou(&gts[g]), threshold);
        pooled.extend(scores.into_iter().zip(outcomes));
    }
    interpolated_ap(pooled, num_gt, interp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::boxes::OrientedBox3D;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn obj(x: f64, z: f64, score: Option<f64>) -> KittiObject {
        let b = OrientedBox3D::new([x, 1.0, z], 4.0, 1.8, 1.5, 0.0).unwrap();
        let bb = BBox2D::new(100.0 + 10.0 * x, 100.0, 160.0 + 10.0 * x, 150.0).unwrap();
        KittiObject::from_boxes("Car", &bb, &b, score)
    }

    fn query(overlap: Overlap, difficulty: Difficulty) -> ApQuery<'static> {
        ApQuery {
            class: "Car",
            overlap,
            threshold: 0.7,
            difficulty,
            interpolation: Interpolation::ElevenPoint,
        }
    }

    #[test]
    fn ground_truth_as_detections_scores_100() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let frames: Vec<FrameObjects> = (0..5)
            .map(|f| {
                let gts: Vec<KittiObject> = (0..3).map(|i| obj(-8.0 + 8.0 * i as f64, 10.0 + f as f64, None)).collect();
                let dets = gts.iter().map(|g| KittiObject { score: Some(rng.gen()), ..g.clone() }).collect();
                FrameObjects { detections: dets, ground_truth: gts }
            })
            .collect();
        for ov in [Overlap::Box2D, Overlap::Bev, Overlap::Box3D] {
            for d in Difficulty::ALL {
                let r = average_precision(&frames, &query(ov, d)).unwrap();
                assert_eq!(r.ap, Some(100.0));
                assert_eq!(r.true_positives, 15);
            }
        }
        let q = ApQuery { interpolation: Interpolation::FortyPoint, ..query(Overlap::Bev, Difficulty::Hard) };
        assert_eq!(average_precision(&frames, &q).unwrap().ap, Some(100.0));
    }

    #[test]
    fn high_score_miss_then_low_score_hit() {
        // ranked: miss (P=0, R=0), hit (P=1/2, R=1); every recall level
        // interpolates to 1/2
        let gt = obj(0.0, 10.0, None);
        let frames = vec![FrameObjects {
            detections: vec![obj(30.0, 10.0, Some(0.9)), obj(0.0, 10.0, Some(0.4))],
            ground_truth: vec![gt],
        }];
        let r = average_precision(&frames, &query(Overlap::Bev, Difficulty::Moderate)).unwrap();
        let manual = (0..=10).map(|_| 0.5).sum::<f64>() / 11.0 * 100.0;
        assert!((r.ap.unwrap() - manual).abs() < 1e-9);
        assert_eq!((r.true_positives, r.false_positives), (1, 1));
    }

    #[test]
    fn two_gt_hand_trace() {
        // ranked: hit (1/1, R=.5), miss (1/2, R=.5), hit (2/3, R=1)
        // 11-point: r<=0.5 -> 1 (6 levels), r>0.5 -> 2/3 (5 levels)
        let frames = vec![FrameObjects {
            detections: vec![obj(0.0, 10.0, Some(0.9)), obj(30.0, 10.0, Some(0.8)), obj(10.0, 10.0, Some(0.7))],
            ground_truth: vec![obj(0.0, 10.0, None), obj(10.0, 10.0, None)],
        }];
        let r = average_precision(&frames, &query(Overlap::Bev, Difficulty::Easy)).unwrap();
        let manual = (6.0 * 1.0 + 5.0 * 2.0 / 3.0) / 11.0 * 100.0;
        assert!((r.ap.unwrap() - manual).abs() < 1e-9);
    }

    #[test]
    fn empty_detections_and_missing_ground_truth() {
        let frames = vec![FrameObjects { detections: vec![], ground_truth: vec![obj(0.0, 10.0, None)] }];
        assert_eq!(average_precision(&frames, &query(Overlap::Bev, Difficulty::Easy)).unwrap().ap, Some(0.0));
        let none = vec![FrameObjects { detections: vec![obj(0.0, 10.0, Some(0.5))], ground_truth: vec![] }];
        assert_eq!(average_precision(&none, &query(Overlap::Bev, Difficulty::Easy)).unwrap().ap, None);
    }

    #[test]
    fn out_of_bucket_ground_truth_is_ignored() {
        let mut hard = obj(0.0, 10.0, None);
        hard.occluded = 2;
        let frames = vec![FrameObjects {
            detections: vec![obj(0.0, 10.0, Some(0.9)), obj(10.0, 10.0, Some(0.5))],
            ground_truth: vec![hard, obj(10.0, 10.0, None)],
        }];
        let easy = average_precision(&frames, &query(Overlap::Bev, Difficulty::Easy)).unwrap();
        assert_eq!((easy.ground_truth, easy.true_positives, easy.false_positives), (1, 1, 0));
        assert_eq!(easy.ap, Some(100.0));
        let h = average_precision(&frames, &query(Overlap::Bev, Difficulty::Hard)).unwrap();
        assert_eq!(h.ground_truth, 2);
    }

    #[test]
    fn adding_a_top_scoring_true_positive_never_lowers_ap() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..200 {
            let n = rng.gen_range(1..6);
            let gts: Vec<KittiObject> = (0..n).map(|i| obj(-10.0 + 5.0 * i as f64, 15.0, None)).collect();
            let mut dets: Vec<KittiObject> = (0..rng.gen_range(0..6))
                .map(|_| {
                    let x = -10.0 + 5.0 * rng.gen_range(0..n + 2) as f64;
                    obj(x, 15.0, Some(rng.gen_range(0.0..0.9)))
                })
                .collect();
            let frames = vec![FrameObjects { detections: dets.clone(), ground_truth: gts.clone() }];
            let before = average_precision(&frames, &query(Overlap::Bev, Difficulty::Hard)).unwrap().ap.unwrap();
            // an extra ground-truth object and its perfect detection at the top
            let extra = obj(40.0, 15.0, None);
            dets.push(KittiObject { score: Some(1.0), ..extra.clone() });
            let mut g2 = gts;
            g2.push(extra);
            let after = average_precision(
                &[FrameObjects { detections: dets, ground_truth: g2 }],
                &query(Overlap::Bev, Difficulty::Hard),
            )
            .unwrap()
            .ap
            .unwrap();
            assert!(after >= before - 1e-9, "{before} -> {after}");
        }
    }

    fn d(x: f64, score: f64) -> Detection2D {
        Detection2D::new("Car", score, BBox2D::new(x, 50.0, x + 40.0, 90.0).unwrap())
    }

    #[test]
    fn stereo_pairs_must_match_the_same_object() {
        let gt = vec![
            (d(100.0, 1.0).bbox, d(80.0, 1.0).bbox),
            (d(300.0, 1.0).bbox, d(270.0, 1.0).bbox),
        ];
        let left = vec![d(100.0, 0.9), d(300.0, 0.8)];
        let right = vec![d(80.0, 0.9), d(270.0, 0.8)];
        let good = StereoFrame { left: left.clone(), right: right.clone(), pairs: vec![(0, 0), (1, 1)], ground_truth: gt.clone() };
        let r = stereo_ap(&[good], STEREO_IOU, Interpolation::ElevenPoint);
        assert_eq!(r.ap, Some(100.0));
        let swapped = StereoFrame { left, right, pairs: vec![(0, 1), (1, 0)], ground_truth: gt };
        let r = stereo_ap(&[swapped], STEREO_IOU, Interpolation::ElevenPoint);
        assert_eq!(r.true_positives, 0);
        assert_eq!(r.false_positives, 2);
        assert_eq!(r.ap, Some(0.0));
    }

    #[test]
    fn unpaired_detections_count_against_precision() {
        let gt = vec![(d(100.0, 1.0).bbox, d(80.0, 1.0).bbox)];
        let f = StereoFrame {
            left: vec![d(100.0, 0.5), d(400.0, 0.9)],
            right: vec![d(80.0, 0.5)],
            pairs: vec![(0, 0)],
            ground_truth: gt,
        };
        let r = stereo_ap(&[f], STEREO_IOU, Interpolation::ElevenPoint);
        assert_eq!((r.true_positives, r.false_positives), (1, 1));
        assert!((r.ap.unwrap() - 50.0).abs() < 1e-9);
    }

    #[test]
    fn stereo_matches_exhaustive_oracle() {
        // oracle: a pair is a true positive iff some still-free object clears
        // the threshold on both sides; with well-separated objects at most one
        // object can, so the greedy result is exact
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let n = rng.gen_range(1..5);
            let gt: Vec<(BBox2D, BBox2D)> = (0..n)
                .map(|i| (d(100.0 * i as f64, 1.0).bbox, d(100.0 * i as f64 - 20.0, 1.0).bbox))
                .collect();
            let left: Vec<Detection2D> = (0..n)
                .map(|i| d(100.0 * i as f64 + rng.gen_range(-8.0..8.0), rng.gen()))
                .collect();
            let right: Vec<Detection2D> = (0..n)
                .map(|i| d(100.0 * i as f64 - 20.0 + rng.gen_range(-8.0..8.0), rng.gen()))
                .collect();
            let mut perm: Vec<usize> = (0..n).collect();
            for i in (1..n).rev() {
                perm.swap(i, rng.gen_range(0..=i));
            }
            let pairs: Vec<(usize, usize)> = (0..n).map(|i| (i, perm[i])).collect();
            let mut tp = 0;
            let mut free = vec![true; n];
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| left[b].score.total_cmp(&left[a].score));
            for p in order {
                let (l, r) = pairs[p];
                if let Some(g) = (0..n).find(|&g| {
                    free[g] && left[l].bbox.iou(&gt[g].0) >= 0.7 && right[r].bbox.iou(&gt[g].1) >= 0.7
                }) {
                    free[g] = false;
                    tp += 1;
                }
            }
            let f = StereoFrame { left, right, pairs, ground_truth: gt };
            let rep = stereo_ap(&[f], STEREO_IOU, Interpolation::ElevenPoint);
            assert_eq!(rep.true_positives, tp);
            assert_eq!(rep.false_positives, n - tp);
        }
    }

    #[test]
    fn plain_2d_ap() {
        let gts = vec![d(100.0, 1.0).bbox, d(300.0, 1.0).bbox];
        let dets = vec![d(100.0, 0.7), d(300.0, 0.6)];
        assert_eq!(average_precision_2d(&[(dets, gts)], 0.7, Interpolation::ElevenPoint).ap, Some(100.0));
    }
}
