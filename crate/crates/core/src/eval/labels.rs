//! KITTI object label files.
//!
//! One object per line:
//! `type truncated occluded alpha x1 y1 x2 y2 h w l x y z rotation_y [score]`,
//! where `(x, y, z)` is the bottom-face center in camera coordinates.

use std::fmt::Write as _;
use std::path::Path;

use crate::boxes::{BBox2D, OrientedBox3D};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct KittiObject {
    pub class: String,
    pub truncated: f64,
    pub occluded: i32,
    pub alpha: f64,
    pub bbox: [f64; 4],
    /// Height, width, length in meters.
    pub dimensions: [f64; 3],
    /// Bottom-face center.
    pub location: [f64; 3],
    pub rotation_y: f64,
    pub score: Option<f64>,
}

impl KittiObject {
    /// A fully visible object built from a 3D box and its 2D box.
    pub fn from_boxes(class: &str, bbox: &BBox2D, b: &OrientedBox3D, score: Option<f64>) -> Self {
        let alpha = crate::boxes::normalize_angle(b.yaw - b.center[0].atan2(b.center[2]));
        KittiObject {
            class: class.to_string(),
            truncated: 0.0,
            occluded: 0,
            alpha,
            bbox: [bbox.x_min, bbox.y_min, bbox.x_max, bbox.y_max],
            dimensions: [b.height, b.width, b.length],
            location: [b.center[0], b.center[1] + 0.5 * b.height, b.center[2]],
            rotation_y: b.yaw,
            score,
        }
    }

    pub fn bbox2d(&self) -> Result<BBox2D> {
        let [x0, y0, x1, y1] = self.bbox;
        BBox2D::new(x0, y0, x1, y1)
    }

    pub fn box3d(&self) -> Result<OrientedBox3D> {
        let [h, w, l] = self.dimensions;
        let [x, y, z] = self.location;
        OrientedBox3D::new([x, y - 0.5 * h, z], l, w, h, self.rotation_y)
    }

    pub fn box_height(&self) -> f64 {
        self.bbox[3] - self.bbox[1]
    }

    pub fn parse(line: &str) -> std::result::Result<Self, String> {
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 15 && f.len() != 16 {
            return Err(format!("expected 15 or 16 fields, found {}", f.len()));
        }
        let num = |i: usize| -> std::result::Result<f64, String> {
            f[i].parse::<f64>().map_err(|_| format!("field {} is not a number: {:?}", i + 1, f[i]))
        };
        let occluded = f[2]
            .parse::<i32>()
            .or_else(|_| f[2].parse::<f64>().map(|v| v as i32))
            .map_err(|_| format!("occlusion is not an integer: {:?}", f[2]))?;
        Ok(KittiObject {
            class: f[0].to_string(),
            truncated: num(1)?,
            occluded,
            alpha: num(3)?,
            bbox: [num(4)?, num(5)?, num(6)?, num(7)?],
            dimensions: [num(8)?, num(9)?, num(10)?],
            location: [num(11)?, num(12)?, num(13)?],
            rotation_y: num(14)?,
            score: if f.len() == 16 { Some(num(15)?) } else { None },
        })
    }

    pub fn to_line(&self) -> String {
        let mut s = format!(
            "{} {:.2} {} {:.2} {:.2} {:.2} {:.2} {:.2} {:.2} {:.2} {:.2} {:.2} {:.2} {:.2} {:.2}",
            self.class,
            self.truncated,
            self.occluded,
            self.alpha,
            self.bbox[0],
            self.bbox[1],
            self.bbox[2],
            self.bbox[3],
            self.dimensions[0],
            self.dimensions[1],
            self.dimensions[2],
            self.location[0],
            self.location[1],
            self.location[2],
            self.rotation_y
        );
        if let Some(sc) = self.score {
            let _ = write!(s, " {sc:.4}");
        }
        s
    }
}

pub fn parse_labels(text: &str) -> std::result::Result<Vec<KittiObject>, String> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| KittiObject::parse(l).map_err(|e| format!("line {}: {e}", i + 1)))
        .collect()
}

pub fn load_labels(path: &Path) -> Result<Vec<KittiObject>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_labels(&text).map_err(|m| Error::parse(path, m))
}

pub fn save_labels(objects: &[KittiObject], path: &Path) -> Result<()> {
    let mut text = String::new();
    for o in objects {
        text.push_str(&o.to_line());
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
