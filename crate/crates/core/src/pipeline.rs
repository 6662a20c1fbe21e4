//! End-to-end runs over a dataset directory, synthetic suites and timing.

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::association::{associate, AssociationConfig, AssociationModel, AssociationResult};
use crate::dataset::{write_synth_frame, Dataset, FrameData, FrameError, ASSOCIATION_MODEL};
use crate::error::{Error, Result};
use crate::eval::{
    average_precision, consistent_indices, load_labels, stereo_ap, ApQuery, ApReport, Difficulty, FrameObjects,
    Interpolation, KittiObject, Overlap, StereoFrame, CONSISTENCY_IOU, STEREO_IOU,
};
use crate::geometry::{back_project, disparity_to_depth, PixelMap};
use crate::imaging::save_disparity_png;
use crate::local_disparity::{composite, dominant_label, DisparityRange, InstanceMask, LocalDisparityMap, RoiFrame};
use crate::matcher::{match_full_image, match_pair, masked_cloud, MatcherOptions, StageTimings, FULL_IMAGE_RANGE};
use crate::metrics::{depth_rmse, point_cloud_loss, streaking_index, STREAK_TOLERANCE};
use crate::ply::{cloud_points, save_ply, LabeledPoint, PlyFormat};
use crate::synth::{association_samples, generate, SceneConfig, SynthFrame};

/// Environment variable capping the number of worker threads.
pub const THREADS_ENV: &str = "OCSTEREO_THREADS";

/// Minimum IoU for a detection to be identified with a ground-truth object.
pub const IDENTITY_IOU: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub matcher: MatcherOptions,
    pub association: AssociationConfig,
    /// Association model file; the dataset's own model when unset.
    pub association_model: Option<PathBuf>,
    pub streak_tolerance: f64,
    pub ply_format: PlyFormat,
    pub write_clouds: bool,
    /// Worker threads; `OCSTEREO_THREADS` caps this.
    pub threads: Option<usize>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            matcher: MatcherOptions::default(),
            association: AssociationConfig::default(),
            association_model: None,
            streak_tolerance: STREAK_TOLERANCE,
            ply_format: PlyFormat::default(),
            write_clouds: true,
            threads: None,
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.matcher.validate()?;
        if self.association.crop_size == 0 {
            return Err(Error::Config("association crop size must be positive".into()));
        }
        if !(self.streak_tolerance >= 0.0) {
            return Err(Error::Config("streak tolerance must be non-negative".into()));
        }
        if self.threads == Some(0) {
            return Err(Error::Config("threads must be positive".into()));
        }
        Ok(())
    }
}

/// Worker count: the request (or all cores), capped by `OCSTEREO_THREADS`.
pub fn worker_threads(requested: Option<usize>) -> Result<usize> {
    let available = std::thread::available_parallelism().map_or(1, |n| n.get());
    let mut n = requested.unwrap_or(available).max(1);
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let cap = v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|c| *c > 0)
            .ok_or_else(|| Error::Config(format!("{THREADS_ENV} must be a positive integer, got {v:?}")))?;
        n = n.min(cap);
    }
    Ok(n)
}

fn thread_pool(requested: Option<usize>) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(worker_threads(requested)?)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))
}

/// Association of one frame with indices into the unfiltered detection lists.
pub fn associate_frame(frame: &FrameData, model: &AssociationModel, config: &AssociationConfig) -> AssociationResult {
    let keep = |dets: &[crate::association::Detection2D]| -> Vec<usize> {
        (0..dets.len()).filter(|&i| dets[i].score >= config.score_threshold).collect()
    };
    let kl = keep(&frame.left_detections);
    let kr = keep(&frame.right_detections);
    let left: Vec<_> = kl.iter().map(|&i| frame.left_detections[i].clone()).collect();
    let right: Vec<_> = kr.iter().map(|&i| frame.right_detections[i].clone()).collect();
    let mut res = associate(&left, &right, model, &frame.left, &frame.right, config);
    for p in &mut res.pairs {
        p.left_index = kl[p.left_index];
        p.right_index = kr[p.right_index];
    }
    res.unmatched_left = res.unmatched_left.iter().map(|&i| kl[i]).collect();
    res.unmatched_right = res.unmatched_right.iter().map(|&j| kr[j]).collect();
    res
}

/// Fits the association gate from paired ground-truth labels of a dataset.
pub fn fit_association_model(dataset: &Dataset) -> Result<AssociationModel> {
    let mut samples = Vec::new();
    for id in &dataset.frames {
        for (l, r) in dataset.label_pairs(id)?.into_iter().flatten() {
            let (lb, rb) = (l.bbox2d()?, r.bbox2d()?);
            samples.push((l.class.clone(), lb.height(), lb.center_u() - rb.center_u()));
        }
    }
    AssociationModel::fit(&samples)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameStatus {
    Ok,
    MissingCalib,
    Error,
}

impl FrameStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            FrameStatus::Ok => "ok",
            FrameStatus::MissingCalib => "missing_calib",
            FrameStatus::Error => "error",
        }
    }
}

/// Metrics of one reconstructed object.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ObjectRecord {
    /// Instance id, starting at 1, in association order.
    pub object: u32,
    pub class: String,
    pub left_index: usize,
    pub right_index: usize,
    pub score: f64,
    pub ssim: f64,
    /// Ground-truth object the left detection belongs to.
    pub ground_truth: Option<usize>,
    /// Whether both boxes belong to the same ground-truth object.
    pub correct: Option<bool>,
    pub mask_pixels: usize,
    pub points: usize,
    pub median_depth: Option<f64>,
    pub gt_median_depth: Option<f64>,
    pub streaking_index: Option<f64>,
    pub point_cloud_loss: Option<f64>,
}

impl ObjectRecord {
    pub fn median_depth_error(&self) -> Option<f64> {
        Some((self.median_depth? - self.gt_median_depth?).abs())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct FrameTimings {
    pub association: Duration,
    pub matching: StageTimings,
}

/// Outcome of one frame.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrameResult {
    pub frame: String,
    pub status: FrameStatus,
    pub message: Option<String>,
    pub left_detections: usize,
    pub right_detections: usize,
    /// Ground-truth objects, when labels for both views exist.
    pub ground_truth_objects: Option<usize>,
    pub objects: Vec<ObjectRecord>,
    pub points: usize,
    pub depth_rmse: Option<f64>,
    pub cost_volume_cells: usize,
    pub timings: FrameTimings,
}

impl FrameResult {
    fn failed(frame: &str, status: FrameStatus, message: String) -> Self {
        FrameResult {
            frame: frame.to_string(),
            status,
            message: Some(message),
            left_detections: 0,
            right_detections: 0,
            ground_truth_objects: None,
            objects: Vec::new(),
            points: 0,
            depth_rmse: None,
            cost_volume_cells: 0,
            timings: FrameTimings::default(),
        }
    }

    pub fn correct_pairs(&self) -> usize {
        self.objects.iter().filter(|o| o.correct == Some(true)).count()
    }
}

struct FrameOutput {
    result: FrameResult,
    clouds: Vec<Vec<LabeledPoint>>,
    merged: Vec<LabeledPoint>,
    disparity: Option<PixelMap>,
}

fn best_match(b: &crate::boxes::BBox2D, gts: &[crate::boxes::BBox2D]) -> Option<(usize, f64)> {
    gts.iter()
        .enumerate()
        .map(|(k, g)| (k, b.iou(g)))
        .filter(|(_, iou)| *iou >= IDENTITY_IOU)
        .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)))
}

fn process_frame(
    fd: &FrameData,
    gt: Option<&[(KittiObject, KittiObject)]>,
    model: &AssociationModel,
    cfg: &PipelineConfig,
) -> Result<FrameOutput> {
    let t = Instant::now();
    let assoc = associate_frame(fd, model, &cfg.association);
    let mut timings = FrameTimings {
        association: t.elapsed(),
        ..Default::default()
    };

    let gt_boxes = match gt {
        Some(g) => Some((
            g.iter().map(|(l, _)| l.bbox2d()).collect::<Result<Vec<_>>>()?,
            g.iter().map(|(_, r)| r.bbox2d()).collect::<Result<Vec<_>>>()?,
        )),
        None => None,
    };
    let size = cfg.matcher.canonical_size;
    let mut objects = Vec::with_capacity(assoc.pairs.len());
    let mut locals: Vec<(u32, LocalDisparityMap)> = Vec::new();
    let mut clouds = Vec::new();
    let mut cells = 0;
    for (k, p) in assoc.pairs.iter().enumerate() {
        let id = (k + 1) as u32;
        let frame = RoiFrame::new(p.left.bbox, p.right.bbox, size, size)?;
        let label = fd.masks.as_ref().and_then(|m| dominant_label(m, &p.left.bbox));
        let mask = match (&fd.masks, label) {
            (Some(m), Some(l)) => InstanceMask::from_labels(m, l, &frame, id),
            (Some(_), None) => InstanceMask::empty(id, size, size),
            (None, _) => InstanceMask::full(id, size, size),
        };
        let m = match_pair(p, &fd.left, &fd.right, &mask, &fd.rig, &cfg.matcher)?;
        timings.matching += m.timings;
        cells += m.cost_volume_cells;

        let (mut ground_truth, mut correct) = (None, None);
        if let Some((gl, gr)) = &gt_boxes {
            let l = best_match(&p.left.bbox, gl);
            let r = best_match(&p.right.bbox, gr);
            ground_truth = l.map(|x| x.0);
            correct = Some(match (l, r) {
                (Some(a), Some(b)) => a.0 == b.0 && a.1.min(b.1) >= STEREO_IOU,
                _ => false,
            });
        }
        let streak = match (gt, ground_truth) {
            (Some(g), Some(i)) => streaking_index(&m.cloud, &g[i].0.box3d()?, cfg.streak_tolerance).ok(),
            _ => None,
        };
        let gt_cloud = match (&fd.disparity, &fd.masks, label) {
            (Some(d), Some(masks), Some(l)) => Some(masked_cloud(d, masks, l, &fd.rig, id)?),
            _ => None,
        };
        objects.push(ObjectRecord {
            object: id,
            class: p.left.class.clone(),
            left_index: p.left_index,
            right_index: p.right_index,
            score: p.left.score,
            ssim: p.ssim,
            ground_truth,
            correct,
            mask_pixels: mask.count(),
            points: m.cloud.len(),
            median_depth: m.cloud.median_depth(),
            gt_median_depth: gt_cloud.as_ref().and_then(|c| c.median_depth()),
            streaking_index: streak,
            point_cloud_loss: gt_cloud.as_ref().and_then(|c| point_cloud_loss(&m.cloud, c).ok()),
        });
        clouds.push(cloud_points(&m.cloud));
        locals.push((id, m.local));
    }

    let comp = composite(&locals, &fd.rig);
    let w = fd.rig.image_width;
    let merged_cloud = back_project(&disparity_to_depth(&comp.disparity, &fd.rig)?, &fd.rig, 0)?;
    let merged: Vec<LabeledPoint> = merged_cloud
        .points
        .iter()
        .zip(&merged_cloud.pixels)
        .map(|(p, &(u, v))| LabeledPoint {
            position: *p,
            instance: comp.owner[v as usize * w + u as usize].unwrap_or(0),
        })
        .collect();
    let depth_rmse = match &fd.disparity {
        Some(d) if comp.disparity.valid_count() > 0 => depth_rmse(
            &disparity_to_depth(&comp.disparity, &fd.rig)?,
            &disparity_to_depth(d, &fd.rig)?,
        )
        .ok(),
        _ => None,
    };
    Ok(FrameOutput {
        result: FrameResult {
            frame: fd.id.clone(),
            status: FrameStatus::Ok,
            message: None,
            left_detections: fd.left_detections.len(),
            right_detections: fd.right_detections.len(),
            ground_truth_objects: gt.map(|g| g.len()),
            points: merged.len(),
            objects,
            depth_rmse,
            cost_volume_cells: cells,
            timings,
        },
        clouds,
        merged,
        disparity: Some(comp.disparity),
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct AssociationSummary {
    pub pairs: usize,
    pub correct_pairs: usize,
    pub ground_truth_objects: usize,
    /// Correct pairs over ground-truth objects.
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct TimingSummary {
    pub association_s: f64,
    pub cost_volume_s: f64,
    pub aggregation_s: f64,
    pub reconstruction_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrameIssue {
    pub frame: String,
    pub status: FrameStatus,
    pub message: String,
}

/// Summary written to `report.json`.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RunReport {
    pub dry_run: bool,
    pub frames: usize,
    pub frames_ok: usize,
    pub issues: Vec<FrameIssue>,
    pub objects: usize,
    pub points: usize,
    pub association: AssociationSummary,
    pub depth_rmse_mean: Option<f64>,
    pub streaking_index_mean: Option<f64>,
    pub point_cloud_loss_mean: Option<f64>,
    pub median_depth_error_mean: Option<f64>,
    pub cost_volume_cells: usize,
    pub timings: TimingSummary,
    #[serde(skip)]
    pub frame_results: Vec<FrameResult>,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (mut sum, mut n) = (0.0, 0usize);
    for v in values {
        sum += v;
        n += 1;
    }
    (n > 0).then(|| sum / n as f64)
}

impl RunReport {
    fn summarize(results: Vec<FrameResult>, dry_run: bool) -> Self {
        let objects = || results.iter().flat_map(|f| f.objects.iter());
        let labelled: Vec<&FrameResult> = results.iter().filter(|f| f.ground_truth_objects.is_some()).collect();
        let gt_objects: usize = labelled.iter().filter_map(|f| f.ground_truth_objects).sum();
        let correct: usize = labelled.iter().map(|f| f.correct_pairs()).sum();
        let mut timings = TimingSummary::default();
        for f in &results {
            timings.association_s += f.timings.association.as_secs_f64();
            timings.cost_volume_s += f.timings.matching.cost_volume.as_secs_f64();
            timings.aggregation_s += f.timings.matching.aggregation.as_secs_f64();
            timings.reconstruction_s += f.timings.matching.reconstruction.as_secs_f64();
        }
        RunReport {
            dry_run,
            frames: results.len(),
            frames_ok: results.iter().filter(|f| f.status == FrameStatus::Ok).count(),
            issues: results
                .iter()
                .filter(|f| f.status != FrameStatus::Ok)
                .map(|f| FrameIssue {
                    frame: f.frame.clone(),
                    status: f.status,
                    message: f.message.clone().unwrap_or_default(),
                })
                .collect(),
            objects: objects().count(),
            points: results.iter().map(|f| f.points).sum(),
            association: AssociationSummary {
                pairs: objects().count(),
                correct_pairs: correct,
                ground_truth_objects: gt_objects,
                accuracy: (!labelled.is_empty() && gt_objects > 0).then(|| correct as f64 / gt_objects as f64),
            },
            depth_rmse_mean: mean(results.iter().filter_map(|f| f.depth_rmse)),
            streaking_index_mean: mean(objects().filter_map(|o| o.streaking_index)),
            point_cloud_loss_mean: mean(objects().filter_map(|o| o.point_cloud_loss)),
            median_depth_error_mean: mean(objects().filter_map(|o| o.median_depth_error())),
            cost_volume_cells: results.iter().map(|f| f.cost_volume_cells).sum(),
            timings,
            frame_results: results,
        }
    }
}

fn load_model(dataset: &Dataset, cfg: &PipelineConfig) -> Result<AssociationModel> {
    let path = cfg
        .association_model
        .clone()
        .unwrap_or_else(|| dataset.association_model_path());
    if !path.is_file() {
        return Err(Error::Config(format!(
            "association model not found at {}; fit one with `ocstereo associate --fit`",
            path.display()
        )));
    }
    AssociationModel::load(&path)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

fn write_frames_csv(path: &Path, results: &[FrameResult]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::parse(path, e.to_string()))?;
    w.write_record([
        "frame",
        "status",
        "left_detections",
        "right_detections",
        "pairs",
        "correct_pairs",
        "ground_truth_objects",
        "points",
        "depth_rmse",
    ])?;
    for f in results {
        let labelled = f.ground_truth_objects.is_some();
        w.write_record([
            f.frame.clone(),
            f.status.as_str().to_string(),
            f.left_detections.to_string(),
            f.right_detections.to_string(),
            f.objects.len().to_string(),
            if labelled { f.correct_pairs().to_string() } else { String::new() },
            f.ground_truth_objects.map(|n| n.to_string()).unwrap_or_default(),
            f.points.to_string(),
            opt(f.depth_rmse),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_objects_csv(path: &Path, results: &[FrameResult]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::parse(path, e.to_string()))?;
    w.write_record([
        "frame",
        "object",
        "class",
        "left_index",
        "right_index",
        "score",
        "ssim",
        "ground_truth",
        "correct",
        "mask_pixels",
        "points",
        "median_depth",
        "gt_median_depth",
        "median_depth_error",
        "streaking_index",
        "point_cloud_loss",
    ])?;
    for f in results {
        for o in &f.objects {
            w.write_record([
                f.frame.clone(),
                o.object.to_string(),
                o.class.clone(),
                o.left_index.to_string(),
                o.right_index.to_string(),
                format!("{:.6}", o.score),
                format!("{:.6}", o.ssim),
                o.ground_truth.map(|g| g.to_string()).unwrap_or_default(),
                o.correct.map(|c| c.to_string()).unwrap_or_default(),
                o.mask_pixels.to_string(),
                o.points.to_string(),
                opt(o.median_depth),
                opt(o.gt_median_depth),
                opt(o.median_depth_error()),
                opt(o.streaking_index),
                opt(o.point_cloud_loss),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_frame_outputs(out: &Path, o: &FrameOutput, cfg: &PipelineConfig) -> Result<()> {
    if let Some(d) = &o.disparity {
        save_disparity_png(d, &out.join("disparity").join(format!("{}.png", o.result.frame)))?;
    }
    if cfg.write_clouds {
        let dir = out.join("clouds").join(&o.result.frame);
        create_dir(&dir)?;
        for (rec, pts) in o.result.objects.iter().zip(&o.clouds) {
            save_ply(&dir.join(format!("object_{:03}.ply", rec.object)), pts, cfg.ply_format)?;
        }
        save_ply(&dir.join("frame.ply"), &o.merged, cfg.ply_format)?;
    }
    Ok(())
}

/// Runs association, matching, compositing and evaluation on every frame of
/// a dataset. Outputs go to `out`: `config.json`, `frames.csv`,
/// `objects.csv`, `report.json`, composite disparities and PLY clouds. A dry
/// run only validates the inputs and writes nothing.
pub fn run_pipeline(dataset_dir: &Path, out: &Path, cfg: &PipelineConfig, dry_run: bool) -> Result<RunReport> {
    cfg.validate()?;
    let dataset = Dataset::open(dataset_dir)?;
    let model = load_model(&dataset, cfg)?;
    let pool = thread_pool(cfg.threads)?;

    if dry_run {
        let results = pool.install(|| {
            dataset
                .frames
                .par_iter()
                .map(|id| match dataset.load_frame(id) {
                    Ok(fd) => {
                        dataset.label_pairs(id)?;
                        let mut r = FrameResult::failed(id, FrameStatus::Ok, String::new());
                        r.message = None;
                        r.left_detections = fd.left_detections.len();
                        r.right_detections = fd.right_detections.len();
                        Ok(r)
                    }
                    Err(FrameError::Missing(p)) => Ok(FrameResult::failed(
                        id,
                        FrameStatus::MissingCalib,
                        format!("{}: file not found", p.display()),
                    )),
                    Err(FrameError::Fatal(e)) => Err(e),
                })
                .collect::<Result<Vec<_>>>()
        })?;
        return Ok(RunReport::summarize(results, true));
    }

    create_dir(out)?;
    create_dir(&out.join("disparity"))?;
    write_json(&out.join("config.json"), cfg)?;
    let outputs = pool.install(|| {
        dataset
            .frames
            .par_iter()
            .map(|id| {
                let fd = match dataset.load_frame(id) {
                    Ok(fd) => fd,
                    Err(FrameError::Missing(p)) => {
                        let msg = format!("{}: file not found", p.display());
                        return Ok(FrameOutput {
                            result: FrameResult::failed(id, FrameStatus::MissingCalib, msg),
                            clouds: Vec::new(),
                            merged: Vec::new(),
                            disparity: None,
                        });
                    }
                    Err(FrameError::Fatal(e)) => return Err(e),
                };
                let gt = dataset.label_pairs(id)?;
                let out = process_frame(&fd, gt.as_deref(), &model, cfg).unwrap_or_else(|e| FrameOutput {
                    result: FrameResult::failed(id, FrameStatus::Error, e.to_string()),
                    clouds: Vec::new(),
                    merged: Vec::new(),
                    disparity: None,
                });
                Ok(out)
            })
            .collect::<Result<Vec<_>>>()
    })?;

    for o in &outputs {
        write_frame_outputs(out, o, cfg)?;
    }
    let results: Vec<FrameResult> = outputs.into_iter().map(|o| o.result).collect();
    write_frames_csv(&out.join("frames.csv"), &results)?;
    write_objects_csv(&out.join("objects.csv"), &results)?;
    let report = RunReport::summarize(results, false);
    write_json(&out.join("report.json"), &report)?;
    Ok(report)
}

/// Association pairs recorded in a run's `objects.csv`, keyed by frame.
pub fn load_run_pairs(path: &Path) -> Result<std::collections::BTreeMap<String, Vec<(usize, usize)>>> {
    #[derive(Deserialize)]
    struct Row {
        frame: String,
        left_index: usize,
        right_index: usize,
    }
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::parse(path, e.to_string()))?;
    let mut out: std::collections::BTreeMap<String, Vec<(usize, usize)>> = Default::default();
    for row in rdr.deserialize::<Row>() {
        let r = row.map_err(|e| Error::parse(path, e.to_string()))?;
        out.entry(r.frame).or_default().push((r.left_index, r.right_index));
    }
    Ok(out)
}

/// One line of a detection evaluation table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ApRow {
    pub class: String,
    pub overlap: Overlap,
    pub threshold: f64,
    pub difficulty: Difficulty,
    pub report: ApReport,
}

/// Per-class IoU threshold of the official benchmark.
pub fn class_threshold(class: &str) -> f64 {
    if class == "Car" {
        0.7
    } else {
        0.5
    }
}

/// AP of KITTI-format result labels against ground-truth labels, matched by
/// file name. Frames without a result file have no detections. With a
/// dataset, results are first passed through the 2D-3D consistency filter
/// against that dataset's left detections.
pub fn evaluate_labels(
    gt_dir: &Path,
    result_dir: &Path,
    interpolation: Interpolation,
    consistency: Option<&Dataset>,
) -> Result<Vec<ApRow>> {
    let mut ids = Vec::new();
    for entry in std::fs::read_dir(gt_dir).map_err(|e| Error::io(gt_dir, e))? {
        let path = entry.map_err(|e| Error::io(gt_dir, e))?.path();
        if path.extension().is_some_and(|e| e == "txt") {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                ids.push(stem.to_string());
            }
        }
    }
    ids.sort();
    let mut frames = Vec::with_capacity(ids.len());
    for id in &ids {
        let ground_truth = load_labels(&gt_dir.join(format!("{id}.txt")))?;
        let det_path = result_dir.join(format!("{id}.txt"));
        let mut detections = if det_path.is_file() { load_labels(&det_path)? } else { Vec::new() };
        if let Some(ds) = consistency {
            let fd = match ds.load_frame(id) {
                Ok(fd) => fd,
                Err(FrameError::Missing(p)) => return Err(Error::parse(p, "file not found")),
                Err(FrameError::Fatal(e)) => return Err(e),
            };
            let boxes = detections.iter().map(|d| d.box3d()).collect::<Result<Vec<_>>>()?;
            let dets: Vec<_> = fd.left_detections.iter().map(|d| d.bbox).collect();
            let keep = consistent_indices(&boxes, &dets, &fd.rig, CONSISTENCY_IOU);
            detections = keep.into_iter().map(|i| detections[i].clone()).collect();
        }
        frames.push(FrameObjects {
            detections,
            ground_truth,
        });
    }
    let mut classes: Vec<String> = frames
        .iter()
        .flat_map(|f| f.ground_truth.iter().chain(&f.detections))
        .map(|o| o.class.clone())
        .filter(|c| c != "DontCare")
        .collect();
    classes.sort();
    classes.dedup();
    let mut rows = Vec::new();
    for class in &classes {
        let threshold = class_threshold(class);
        for overlap in [Overlap::Box2D, Overlap::Bev, Overlap::Box3D] {
            for difficulty in Difficulty::ALL {
                let q = ApQuery {
                    class,
                    overlap,
                    threshold,
                    difficulty,
                    interpolation,
                };
                rows.push(ApRow {
                    class: class.clone(),
                    overlap,
                    threshold,
                    difficulty,
                    report: average_precision(&frames, &q)?,
                });
            }
        }
    }
    Ok(rows)
}

/// Stereo AP of the pairs recorded in a pipeline run against the dataset's
/// paired labels.
pub fn evaluate_stereo(dataset: &Dataset, run_dir: &Path, interpolation: Interpolation) -> Result<ApReport> {
    let pairs = load_run_pairs(&run_dir.join("objects.csv"))?;
    let mut frames = Vec::with_capacity(dataset.frames.len());
    for id in &dataset.frames {
        let Some(gt) = dataset.label_pairs(id)? else {
            continue;
        };
        let (ll, rl) = dataset.load_labels(id)?;
        let (left, right) = dataset.load_detections(id, &ll, &rl)?;
        let ground_truth = gt
            .iter()
            .map(|(l, r)| Ok((l.bbox2d()?, r.bbox2d()?)))
            .collect::<Result<Vec<_>>>()?;
        let frame_pairs = pairs.get(id).cloned().unwrap_or_default();
        if let Some(&(l, r)) = frame_pairs.iter().find(|&&(l, r)| l >= left.len() || r >= right.len()) {
            return Err(Error::parse(
                run_dir.join("objects.csv"),
                format!("frame {id}: pair ({l}, {r}) refers to a missing detection"),
            ));
        }
        frames.push(StereoFrame {
            left,
            right,
            pairs: frame_pairs,
            ground_truth,
        });
    }
    Ok(stereo_ap(&frames, STEREO_IOU, interpolation))
}

fn fit_frames(frames: &[SynthFrame], scene: &SceneConfig, seed: u64) -> Result<AssociationModel> {
    if let Ok(m) = AssociationModel::fit(&association_samples(frames)) {
        return Ok(m);
    }
    // fixed object layouts can leave too little height variation to fit
    let random = SceneConfig {
        objects: Vec::new(),
        decoys: 0,
        ..scene.clone()
    };
    let training: Vec<SynthFrame> = (0..20u64)
        .into_par_iter()
        .filter_map(|i| generate(&random, seed.wrapping_add(1_000_000 + i)).ok())
        .collect();
    AssociationModel::fit(&association_samples(&training))
}

/// Decoys are kept this many residual deviations away from the gate.
pub const DECOY_SIGMAS: f64 = 5.0;

/// Result of writing a synthetic dataset.
#[derive(Debug, Clone, Serialize)]
pub struct SuiteSummary {
    pub frames: usize,
    pub objects: usize,
    pub decoys_per_view: usize,
    pub model: AssociationModel,
}

/// Renders `count` frames (seeds `seed`, `seed + 1`, ...) into the dataset
/// layout, fits the association model from the true detection pairs and adds
/// the configured decoys.
pub fn generate_suite(scene: &SceneConfig, count: usize, seed: u64) -> Result<(Vec<SynthFrame>, AssociationModel)> {
    scene.validate()?;
    let mut frames = (0..count as u64)
        .into_par_iter()
        .map(|i| generate(scene, seed.wrapping_add(i)))
        .collect::<Result<Vec<_>>>()?;
    let model = fit_frames(&frames, scene, seed)?;
    if scene.decoys > 0 {
        for (i, f) in frames.iter_mut().enumerate() {
            f.add_decoys(&model, scene.decoys, DECOY_SIGMAS, seed.wrapping_add(i as u64) ^ 0x5eed);
        }
    }
    Ok((frames, model))
}

pub fn write_synth_dataset(root: &Path, scene: &SceneConfig, count: usize, seed: u64) -> Result<SuiteSummary> {
    let (frames, model) = generate_suite(scene, count, seed)?;
    create_dir(root)?;
    for (i, f) in frames.iter().enumerate() {
        write_synth_frame(root, &format!("{i:06}"), f)?;
    }
    model.save(&root.join(ASSOCIATION_MODEL))?;
    write_json(&root.join("scene.json"), scene)?;
    Ok(SuiteSummary {
        frames: frames.len(),
        objects: frames.iter().map(|f| f.objects.len()).sum(),
        decoys_per_view: frames
            .iter()
            .map(|f| f.left_truth.iter().filter(|t| t.is_none()).count())
            .min()
            .unwrap_or(0),
        model,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub scene: SceneConfig,
    pub seed: u64,
    /// Timed repetitions; the fastest is reported.
    pub repeats: usize,
    pub matcher: MatcherOptions,
    pub association: AssociationConfig,
    pub full_range: DisparityRange,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            scene: SceneConfig::two_object(),
            seed: 0,
            repeats: 3,
            matcher: MatcherOptions::default(),
            association: AssociationConfig::default(),
            full_range: FULL_IMAGE_RANGE,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct StageReport {
    pub cost_volume_s: f64,
    pub aggregation_s: f64,
    pub reconstruction_s: f64,
    pub total_s: f64,
    pub cells: usize,
}

impl StageReport {
    fn new(t: &StageTimings, cells: usize) -> Self {
        StageReport {
            cost_volume_s: t.cost_volume.as_secs_f64(),
            aggregation_s: t.aggregation.as_secs_f64(),
            reconstruction_s: t.reconstruction.as_secs_f64(),
            total_s: t.total().as_secs_f64(),
            cells,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub image_width: usize,
    pub image_height: usize,
    pub objects: usize,
    pub pairs: usize,
    /// Fastest association time for the frame.
    pub association_s: f64,
    pub object_centric: StageReport,
    pub full_image: StageReport,
    /// Cells of one object volume over cells of the full-image volume.
    pub cell_ratio_per_object: f64,
    /// Summed object volumes over the full-image volume.
    pub cell_ratio_frame: f64,
    /// Full-image matching time over object-centric matching time.
    pub speed_ratio: f64,
}

/// Times both matcher modes on the same synthetic frame, single-threaded.
pub fn bench(cfg: &BenchConfig) -> Result<BenchReport> {
    cfg.matcher.validate()?;
    if cfg.repeats == 0 {
        return Err(Error::Config("repeats must be positive".into()));
    }
    let frame = generate(&cfg.scene, cfg.seed)?;
    let model = fit_frames(std::slice::from_ref(&frame), &cfg.scene, cfg.seed)?;
    let fd = FrameData {
        id: "bench".into(),
        left: frame.left.clone(),
        right: frame.right.clone(),
        rig: frame.rig,
        left_detections: frame.left_detections.clone(),
        right_detections: frame.right_detections.clone(),
        left_labels: None,
        right_labels: None,
        masks: Some(frame.labels.clone()),
        disparity: None,
    };
    let size = cfg.matcher.canonical_size;

    let mut association = Duration::MAX;
    let mut assoc = AssociationResult::default();
    for _ in 0..cfg.repeats {
        let t = Instant::now();
        assoc = associate_frame(&fd, &model, &cfg.association);
        association = association.min(t.elapsed());
    }
    let masks: Vec<InstanceMask> = assoc
        .pairs
        .iter()
        .enumerate()
        .map(|(k, p)| {
            let frame_k = RoiFrame::new(p.left.bbox, p.right.bbox, size, size)?;
            Ok(match dominant_label(&frame.labels, &p.left.bbox) {
                Some(l) => InstanceMask::from_labels(&frame.labels, l, &frame_k, k as u32 + 1),
                None => InstanceMask::empty(k as u32 + 1, size, size),
            })
        })
        .collect::<Result<_>>()?;

    let mut oc_best: Option<(StageTimings, usize)> = None;
    let mut full_best: Option<(StageTimings, usize)> = None;
    for _ in 0..cfg.repeats {
        let mut t = StageTimings::default();
        let mut cells = 0;
        for (p, mask) in assoc.pairs.iter().zip(&masks) {
            let m = match_pair(p, &frame.left, &frame.right, mask, &frame.rig, &cfg.matcher)?;
            t += m.timings;
            cells += m.cost_volume_cells;
        }
        if oc_best.as_ref().is_none_or(|b| t.total() < b.0.total()) {
            oc_best = Some((t, cells));
        }
        let full = match_full_image(&frame.left, &frame.right, cfg.full_range, &cfg.matcher)?;
        if full_best.as_ref().is_none_or(|b| full.timings.total() < b.0.total()) {
            full_best = Some((full.timings, full.cost_volume_cells));
        }
    }
    let (oc_t, oc_cells) = oc_best.expect("at least one repeat");
    let (full_t, full_cells) = full_best.expect("at least one repeat");
    let (w, h) = (frame.rig.image_width, frame.rig.image_height);
    let full_volume = w * h * cfg.full_range.len();
    Ok(BenchReport {
        image_width: w,
        image_height: h,
        objects: frame.objects.len(),
        pairs: assoc.pairs.len(),
        association_s: association.as_secs_f64(),
        object_centric: StageReport::new(&oc_t, oc_cells),
        full_image: StageReport::new(&full_t, full_cells),
        cell_ratio_per_object: cfg.matcher.cost_volume_cells() as f64 / full_volume as f64,
        cell_ratio_frame: oc_cells as f64 / full_cells as f64,
        speed_ratio: full_t.total().as_secs_f64() / oc_t.total().as_secs_f64().max(f64::MIN_POSITIVE),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_round_trips_and_rejects_unknown_keys() {
        let cfg = PipelineConfig::default();
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<PipelineConfig>(&text).unwrap(), cfg);
        let partial: PipelineConfig = serde_json::from_str(r#"{"matcher": {"temperature": 0.5}}"#).unwrap();
        assert_eq!(partial.matcher.temperature, 0.5);
        assert_eq!(partial.matcher.canonical_size, 224);
        assert!(serde_json::from_str::<PipelineConfig>(r#"{"matchr": {}}"#).is_err());
        let ascii: PipelineConfig = serde_json::from_str(r#"{"ply_format": "ascii"}"#).unwrap();
        assert_eq!(ascii.ply_format, PlyFormat::Ascii);
    }

    #[test]
    fn thread_request_is_at_least_one() {
        assert!(worker_threads(Some(3)).unwrap() >= 1);
        assert!(worker_threads(Some(3)).unwrap() <= 3);
    }

    #[test]
    fn mean_of_nothing_is_none() {
        assert_eq!(mean(std::iter::empty()), None);
        assert_eq!(mean([1.0, 2.0].into_iter()), Some(1.5));
    }
}
