//! KITTI-style dataset layout.
//!
//! ```text
//! root/
//!   image_2/000000.png      left image
//!   image_3/000000.png      right image
//!   calib/000000.txt        P2/P3 projection matrices
//!   detection_2/000000.csv  left detections (class,score,x_min,y_min,x_max,y_max)
//!   detection_3/000000.csv  right detections
//!   label_2/000000.txt      ground-truth objects with left 2D boxes (optional)
//!   label_3/000000.txt      the same objects with right 2D boxes (optional)
//!   mask_2/000000.png       8-bit instance labels; label k is line k of label_2 (optional)
//!   disparity/000000.png    16-bit ground-truth disparity (optional)
//!   association_model.json  height/disparity gate model (optional)
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::association::Detection2D;
use crate::boxes::BBox2D;
use crate::error::{Error, Result};
use crate::eval::{load_labels, save_labels, KittiObject};
use crate::geometry::{CameraRig, PixelMap};
use crate::imaging::{load_disparity_png, save_disparity_png, Image, LabelImage};
use crate::synth::SynthFrame;

pub const LEFT_IMAGES: &str = "image_2";
pub const RIGHT_IMAGES: &str = "image_3";
pub const CALIB: &str = "calib";
pub const LEFT_DETECTIONS: &str = "detection_2";
pub const RIGHT_DETECTIONS: &str = "detection_3";
pub const LEFT_LABELS: &str = "label_2";
pub const RIGHT_LABELS: &str = "label_3";
pub const MASKS: &str = "mask_2";
pub const DISPARITY: &str = "disparity";
pub const ASSOCIATION_MODEL: &str = "association_model.json";

#[derive(Debug, Serialize, Deserialize)]
struct DetectionRow {
    class: String,
    score: f64,
    x_min: f64,
    y_min: f64,
    x_max: f64,
    y_max: f64,
}

pub fn load_detections(path: &Path) -> Result<Vec<Detection2D>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::parse(path, e.to_string()))?;
    let mut out = Vec::new();
    for (i, row) in rdr.deserialize::<DetectionRow>().enumerate() {
        let r = row.map_err(|e| Error::parse(path, e.to_string()))?;
        let b = BBox2D::new(r.x_min, r.y_min, r.x_max, r.y_max)
            .map_err(|e| Error::parse(path, format!("row {}: {e}", i + 1)))?;
        out.push(Detection2D::new(r.class, r.score, b));
    }
    Ok(out)
}

pub fn save_detections(path: &Path, dets: &[Detection2D]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::parse(path, e.to_string()))?;
    for d in dets {
        w.serialize(DetectionRow {
            class: d.class.clone(),
            score: d.score,
            x_min: d.bbox.x_min,
            y_min: d.bbox.y_min,
            x_max: d.bbox.x_max,
            y_max: d.bbox.y_max,
        })?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// A dataset directory and its frame ids.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub frames: Vec<String>,
}

/// Everything known about one frame.
#[derive(Debug, Clone)]
pub struct FrameData {
    pub id: String,
    pub left: Image,
    pub right: Image,
    pub rig: CameraRig,
    pub left_detections: Vec<Detection2D>,
    pub right_detections: Vec<Detection2D>,
    pub left_labels: Option<Vec<KittiObject>>,
    pub right_labels: Option<Vec<KittiObject>>,
    pub masks: Option<LabelImage>,
    pub disparity: Option<PixelMap>,
}

/// Why a frame could not be loaded.
#[derive(Debug)]
pub enum FrameError {
    /// A required per-frame file is absent; the run can continue.
    Missing(PathBuf),
    /// A file exists but cannot be used; the run must stop.
    Fatal(Error),
}

impl From<Error> for FrameError {
    fn from(e: Error) -> Self {
        FrameError::Fatal(e)
    }
}

impl Dataset {
    /// Lists frames and checks the directory layout.
    pub fn open(root: &Path) -> Result<Self> {
        for dir in [LEFT_IMAGES, RIGHT_IMAGES] {
            let p = root.join(dir);
            if !p.is_dir() {
                return Err(Error::parse(p, "missing image directory"));
            }
        }
        let left_dir = root.join(LEFT_IMAGES);
        let mut frames = Vec::new();
        for entry in std::fs::read_dir(&left_dir).map_err(|e| Error::io(&left_dir, e))? {
            let entry = entry.map_err(|e| Error::io(&left_dir, e))?;
            let path = entry.path();
            if path.extension().is_some_and(|e| e == "png") {
                if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                    frames.push(stem.to_string());
                }
            }
        }
        frames.sort();
        let ds = Dataset {
            root: root.to_path_buf(),
            frames,
        };
        for id in &ds.frames {
            let right = ds.path(RIGHT_IMAGES, id, "png");
            if !right.is_file() {
                return Err(Error::parse(right, "right image missing for left image"));
            }
            if !ds.path(LEFT_DETECTIONS, id, "csv").is_file() && !ds.path(LEFT_LABELS, id, "txt").is_file() {
                return Err(Error::parse(
                    ds.path(LEFT_DETECTIONS, id, "csv"),
                    "frame has neither detections nor labels",
                ));
            }
        }
        Ok(ds)
    }

    pub fn path(&self, dir: &str, id: &str, ext: &str) -> PathBuf {
        self.root.join(dir).join(format!("{id}.{ext}"))
    }

    pub fn association_model_path(&self) -> PathBuf {
        self.root.join(ASSOCIATION_MODEL)
    }

    fn optional<T>(&self, path: PathBuf, load: impl FnOnce(&Path) -> Result<T>) -> Result<Option<T>> {
        if path.is_file() {
            load(&path).map(Some)
        } else {
            Ok(None)
        }
    }

    /// Left and right ground-truth labels. When both exist, line `k` of each
    /// file must describe the same object.
    #[allow(clippy::type_complexity)]
    pub fn load_labels(&self, id: &str) -> Result<(Option<Vec<KittiObject>>, Option<Vec<KittiObject>>)> {
        let left = self.optional(self.path(LEFT_LABELS, id, "txt"), load_labels)?;
        let right_path = self.path(RIGHT_LABELS, id, "txt");
        let right = self.optional(right_path.clone(), load_labels)?;
        if let (Some(l), Some(r)) = (&left, &right) {
            if l.len() != r.len() || l.iter().zip(r).any(|(a, b)| a.class != b.class) {
                return Err(Error::parse(right_path, "objects do not line up with the left labels"));
            }
        }
        Ok((left, right))
    }

    /// Ground-truth (left, right) object pairs, without `DontCare` entries.
    pub fn label_pairs(&self, id: &str) -> Result<Option<Vec<(KittiObject, KittiObject)>>> {
        Ok(match self.load_labels(id)? {
            (Some(l), Some(r)) => Some(l.into_iter().zip(r).filter(|(a, _)| a.class != "DontCare").collect()),
            _ => None,
        })
    }

    /// Detections of both views; labels stand in for missing detection files.
    pub fn load_detections(
        &self,
        id: &str,
        left_labels: &Option<Vec<KittiObject>>,
        right_labels: &Option<Vec<KittiObject>>,
    ) -> Result<(Vec<Detection2D>, Vec<Detection2D>)> {
        let from_labels = |labels: &Option<Vec<KittiObject>>| -> Result<Vec<Detection2D>> {
            labels
                .iter()
                .flatten()
                .filter(|o| o.class != "DontCare")
                .map(|o| Ok(Detection2D::new(&o.class, o.score.unwrap_or(1.0), o.bbox2d()?)))
                .collect()
        };
        let left = match self.optional(self.path(LEFT_DETECTIONS, id, "csv"), load_detections)? {
            Some(d) => d,
            None => from_labels(left_labels)?,
        };
        let right = match self.optional(self.path(RIGHT_DETECTIONS, id, "csv"), load_detections)? {
            Some(d) => d,
            None => from_labels(right_labels)?,
        };
        Ok((left, right))
    }

    /// Loads a frame. A missing calibration file is reported as
    /// [`FrameError::Missing`]; unreadable or malformed files are fatal.
    pub fn load_frame(&self, id: &str) -> std::result::Result<FrameData, FrameError> {
        let left = Image::load_png(&self.path(LEFT_IMAGES, id, "png"))?;
        let right = Image::load_png(&self.path(RIGHT_IMAGES, id, "png"))?;
        if (left.width(), left.height()) != (right.width(), right.height()) {
            return Err(FrameError::Fatal(Error::parse(
                self.path(RIGHT_IMAGES, id, "png"),
                "right image size differs from the left image",
            )));
        }
        let calib = self.path(CALIB, id, "txt");
        if !calib.is_file() {
            return Err(FrameError::Missing(calib));
        }
        let rig = CameraRig::load_kitti_calib(&calib, left.width(), left.height())?;
        let (left_labels, right_labels) = self.load_labels(id)?;
        let (left_detections, right_detections) = self.load_detections(id, &left_labels, &right_labels)?;
        let masks = self.optional(self.path(MASKS, id, "png"), LabelImage::load_png)?;
        if let Some(m) = &masks {
            if (m.width, m.height) != (left.width(), left.height()) {
                return Err(FrameError::Fatal(Error::parse(
                    self.path(MASKS, id, "png"),
                    "mask size differs from the left image",
                )));
            }
        }
        let disparity = self.optional(self.path(DISPARITY, id, "png"), load_disparity_png)?;
        Ok(FrameData {
            id: id.to_string(),
            left,
            right,
            rig,
            left_detections,
            right_detections,
            left_labels,
            right_labels,
            masks,
            disparity,
        })
    }
}

/// Occlusion level from the visible fraction of an object.
fn occlusion_level(visible: f64) -> i32 {
    if visible >= 0.95 {
        0
    } else if visible >= 0.5 {
        1
    } else {
        2
    }
}

/// Ground-truth labels of a generated frame; object `k` has mask label `k + 1`.
pub fn synth_labels(frame: &SynthFrame) -> (Vec<KittiObject>, Vec<KittiObject>) {
    let mut left = Vec::new();
    let mut right = Vec::new();
    for o in &frame.objects {
        let b = &o.left_box;
        let mut area = 0usize;
        let mut visible = 0usize;
        for v in (b.y_min.ceil() as usize)..(b.y_max.ceil() as usize) {
            for u in (b.x_min.ceil() as usize)..(b.x_max.ceil() as usize) {
                area += 1;
                visible += usize::from(frame.labels.get(u, v) == o.label);
            }
        }
        let mut l = KittiObject::from_boxes(&o.class, &o.left_box, &o.box3d, None);
        l.occluded = occlusion_level(visible as f64 / area.max(1) as f64);
        let mut r = KittiObject::from_boxes(&o.class, &o.right_box, &o.box3d, None);
        r.occluded = l.occluded;
        left.push(l);
        right.push(r);
    }
    (left, right)
}

/// Writes a generated frame into the dataset layout under `root`.
pub fn write_synth_frame(root: &Path, id: &str, frame: &SynthFrame) -> Result<()> {
    for dir in [LEFT_IMAGES, RIGHT_IMAGES, CALIB, LEFT_DETECTIONS, RIGHT_DETECTIONS, LEFT_LABELS, RIGHT_LABELS, MASKS, DISPARITY] {
        let p = root.join(dir);
        std::fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    let p = |dir: &str, ext: &str| root.join(dir).join(format!("{id}.{ext}"));
    frame.left.save_png(&p(LEFT_IMAGES, "png"))?;
    frame.right.save_png(&p(RIGHT_IMAGES, "png"))?;
    let calib = p(CALIB, "txt");
    std::fs::write(&calib, frame.rig.to_kitti_calib()).map_err(|e| Error::io(&calib, e))?;
    save_detections(&p(LEFT_DETECTIONS, "csv"), &frame.left_detections)?;
    save_detections(&p(RIGHT_DETECTIONS, "csv"), &frame.right_detections)?;
    let (l, r) = synth_labels(frame);
    save_labels(&l, &p(LEFT_LABELS, "txt"))?;
    save_labels(&r, &p(RIGHT_LABELS, "txt"))?;
    frame.labels.save_png(&p(MASKS, "png"))?;
    save_disparity_png(&frame.disparity, &p(DISPARITY, "png"))?;
    Ok(())
}
