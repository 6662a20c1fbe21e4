//! 2D image boxes and oriented 3D boxes.
//!
//! Camera frame convention: x right, y down, z forward (meters). Yaw rotates
//! about the camera y axis, with the box length along the local x axis, as in
//! KITTI `rotation_y`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned image box in pixels, `(x_min, y_min)` to `(x_max, y_max)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox2D {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BBox2D {
    /// Builds a box with strictly positive width and height.
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self> {
        let b = BBox2D {
            x_min,
            y_min,
            x_max,
            y_max,
        };
        if !(x_max > x_min && y_max > y_min) || ![x_min, y_min, x_max, y_max].iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidBox(format!(
                "need x_max > x_min and y_max > y_min, got {b:?}"
            )));
        }
        Ok(b)
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn center_u(&self) -> f64 {
        0.5 * (self.x_min + self.x_max)
    }

    pub fn center_v(&self) -> f64 {
        0.5 * (self.y_min + self.y_max)
    }

    pub fn area(&self) -> f64 {
        self.width().max(0.0) * self.height().max(0.0)
    }

    pub fn intersection_area(&self, other: &BBox2D) -> f64 {
        let w = self.x_max.min(other.x_max) - self.x_min.max(other.x_min);
        let h = self.y_max.min(other.y_max) - self.y_min.max(other.y_min);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }

    pub fn iou(&self, other: &BBox2D) -> f64 {
        let inter = self.intersection_area(other);
        let union = self.area() + other.area() - inter;
        if union <= 0.0 {
            0.0
        } else {
            inter / union
        }
    }

    /// Shifts the box horizontally.
    pub fn translated(&self, du: f64, dv: f64) -> BBox2D {
        BBox2D {
            x_min: self.x_min + du,
            y_min: self.y_min + dv,
            x_max: self.x_max + du,
            y_max: self.y_max + dv,
        }
    }
}

/// A 3D box in the camera frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrientedBox3D {
    /// Geometric center (meters).
    pub center: [f64; 3],
    /// Extent along the local heading axis.
    pub length: f64,
    /// Extent across the heading, in the ground plane.
    pub width: f64,
    /// Vertical extent.
    pub height: f64,
    /// Rotation about the camera y axis, in (-pi, pi].
    pub yaw: f64,
}

impl OrientedBox3D {
    pub fn new(center: [f64; 3], length: f64, width: f64, height: f64, yaw: f64) -> Result<Self> {
        if !(length > 0.0 && width > 0.0 && height > 0.0) {
            return Err(Error::InvalidBox(format!(
                "dimensions must be positive, got l={length} w={width} h={height}"
            )));
        }
        if !center.iter().all(|c| c.is_finite()) || !yaw.is_finite() {
            return Err(Error::InvalidBox("non-finite center or yaw".into()));
        }
        Ok(OrientedBox3D {
            center,
            length,
            width,
            height,
            yaw: normalize_angle(yaw),
        })
    }

    fn axes(&self) -> ([f64; 2], [f64; 2]) {
        let (s, c) = self.yaw.sin_cos();
        // Local x (length) and local z (width) in (x, z) ground coordinates.
        ([c, -s], [s, c])
    }

    /// Ground-plane (x, z) corners in counter-clockwise order when viewed with
    /// x to the right and z up.
    pub fn bev_corners(&self) -> [[f64; 2]; 4] {
        let (ax, az) = self.axes();
        let hl = 0.5 * self.length;
        let hw = 0.5 * self.width;
        let cx = self.center[0];
        let cz = self.center[2];
        let corner = |sl: f64, sw: f64| {
            [
                cx + sl * hl * ax[0] + sw * hw * az[0],
                cz + sl * hl * ax[1] + sw * hw * az[1],
            ]
        };
        let mut pts = [
            corner(1.0, 1.0),
            corner(-1.0, 1.0),
            corner(-1.0, -1.0),
            corner(1.0, -1.0),
        ];
        if signed_area(&pts) < 0.0 {
            pts.reverse();
        }
        pts
    }

    /// All eight corners in the camera frame.
    pub fn corners(&self) -> [[f64; 3]; 8] {
        let bev = self.bev_corners();
        let y0 = self.center[1] - 0.5 * self.height;
        let y1 = self.center[1] + 0.5 * self.height;
        let mut out = [[0.0; 3]; 8];
        for (i, c) in bev.iter().enumerate() {
            out[i] = [c[0], y0, c[1]];
            out[i + 4] = [c[0], y1, c[1]];
        }
        out
    }

    pub fn y_range(&self) -> (f64, f64) {
        (
            self.center[1] - 0.5 * self.height,
            self.center[1] + 0.5 * self.height,
        )
    }

    pub fn volume(&self) -> f64 {
        self.length * self.width * self.height
    }

    /// Whether `p` lies inside the box grown by `margin` on every face.
    pub fn contains(&self, p: [f64; 3], margin: f64) -> bool {
        let (s, c) = self.yaw.sin_cos();
        let dx = p[0] - self.center[0];
        let dz = p[2] - self.center[2];
        let along = c * dx - s * dz;
        let across = s * dx + c * dz;
        let dy = p[1] - self.center[1];
        along.abs() <= 0.5 * self.length + margin
            && across.abs() <= 0.5 * self.width + margin
            && dy.abs() <= 0.5 * self.height + margin
    }

    /// Largest depth (z) reached by any corner.
    pub fn far_z(&self) -> f64 {
        self.corners().iter().map(|c| c[2]).fold(f64::MIN, f64::max)
    }
}

/// Wraps an angle into (-pi, pi].
pub fn normalize_angle(a: f64) -> f64 {
    let mut r = a % (2.0 * PI);
    if r <= -PI {
        r += 2.0 * PI;
    } else if r > PI {
        r -= 2.0 * PI;
    }
    r
}

pub(crate) fn signed_area(poly: &[[f64; 2]]) -> f64 {
    let n = poly.len();
    let mut acc = 0.0;
    for i in 0..n {
        let a = poly[i];
        let b = poly[(i + 1) % n];
        acc += a[0] * b[1] - b[0] * a[1];
    }
    0.5 * acc
}
