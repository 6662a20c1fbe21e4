//! Deterministic synthetic rectified stereo scenes with exact ground truth.
//!
//! A scene is a textured background plane plus fronto-parallel textured
//! rectangles standing on the ground. Textures are continuous value noise
//! attached to each surface, so the right view is rendered exactly by
//! sampling every surface at `u + d` and keeping the nearest one.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::association::{AssociationModel, Detection2D};
use crate::boxes::{BBox2D, OrientedBox3D};
use crate::error::{Error, Result};
use crate::geometry::{CameraRig, MapUnit, PixelMap};
use crate::imaging::{Image, LabelImage};
use crate::local_disparity::DisparityRange;
use crate::matcher::FULL_IMAGE_RANGE;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub class: String,
    /// Depth of the visible front face (meters).
    pub depth: f64,
    /// Lateral position of the face center (meters, camera x).
    pub lateral: f64,
    pub width: f64,
    pub height: f64,
    /// Extent behind the front face.
    pub length: f64,
}

impl ObjectSpec {
    /// Typical dimensions for a class: (width, height, length).
    pub fn class_dimensions(class: &str) -> (f64, f64, f64) {
        match class {
            "Pedestrian" => (0.6, 1.75, 0.8),
            "Cyclist" => (0.6, 1.7, 1.8),
            _ => (1.7, 1.5, 4.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    pub image_width: usize,
    pub image_height: usize,
    pub focal_baseline: f64,
    pub background_depth: f64,
    /// Camera height above the ground plane (meters).
    pub camera_height: f64,
    /// Explicit objects; when empty, objects are drawn at random.
    pub objects: Vec<ObjectSpec>,
    pub min_objects: usize,
    pub max_objects: usize,
    pub depth_range: (f64, f64),
    pub classes: Vec<String>,
    /// Largest detection edge displacement in pixels.
    pub jitter: f64,
    /// False-positive detections added to each view.
    pub decoys: usize,
    /// Lattice spacing of the coarsest noise octave (pixels).
    pub texture_scale: f64,
    /// Minimum standard deviation of a rendered surface's luma.
    pub min_texture_std: f64,
    /// Local and global disparity ranges every object must fit.
    pub local_range: DisparityRange,
    pub global_range: DisparityRange,
    /// Canonical crop width used to express local disparities.
    pub canonical_size: usize,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            image_width: 1242,
            image_height: 375,
            focal_baseline: 389.4,
            background_depth: 80.0,
            camera_height: 1.65,
            objects: Vec::new(),
            min_objects: 1,
            max_objects: 8,
            depth_range: (7.0, 40.0),
            classes: vec!["Car".into(), "Pedestrian".into(), "Cyclist".into()],
            jitter: 1.5,
            decoys: 0,
            texture_scale: 3.0,
            min_texture_std: 0.08,
            local_range: DisparityRange::default(),
            global_range: FULL_IMAGE_RANGE,
            canonical_size: 224,
        }
    }
}

impl SceneConfig {
    /// Two cars at different depths in front of the background.
    pub fn two_object() -> Self {
        let (w, h, l) = ObjectSpec::class_dimensions("Car");
        let car = |depth: f64, lateral: f64| ObjectSpec {
            class: "Car".into(),
            depth,
            lateral,
            width: w,
            height: h,
            length: l,
        };
        SceneConfig {
            objects: vec![car(10.0, -2.5), car(18.0, 3.0)],
            jitter: 0.0,
            ..Default::default()
        }
    }

    pub fn rig(&self) -> CameraRig {
        let mut rig = CameraRig::kitti_like(self.focal_baseline);
        if (self.image_width, self.image_height) != (rig.image_width, rig.image_height) {
            rig.image_width = self.image_width;
            rig.image_height = self.image_height;
            rig.cu = 0.5 * self.image_width as f64;
            rig.cv = 0.5 * self.image_height as f64;
        }
        rig
    }

    pub fn validate(&self) -> Result<()> {
        if self.image_width < 16 || self.image_height < 16 {
            return Err(Error::Config("image must be at least 16x16".into()));
        }
        if !(self.focal_baseline > 0.0 && self.background_depth > 0.0) {
            return Err(Error::Config("focal baseline and background depth must be positive".into()));
        }
        if self.objects.is_empty() && (self.min_objects > self.max_objects || self.classes.is_empty()) {
            return Err(Error::Config("invalid random object settings".into()));
        }
        let (z0, z1) = self.depth_range;
        if !(z0 > 0.0 && z1 >= z0 && z1 < self.background_depth) {
            return Err(Error::Config(format!("invalid depth range {z0}..{z1}")));
        }
        if !(0.0..=10.0).contains(&self.jitter) {
            return Err(Error::Config("jitter must be in [0, 10] pixels".into()));
        }
        if !(self.texture_scale >= 1.0) {
            return Err(Error::Config("texture scale must be at least one pixel".into()));
        }
        Ok(())
    }
}

/// Ground truth of one generated object.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthObject {
    /// Label in the mask image, starting at 1.
    pub label: u8,
    pub class: String,
    pub box3d: OrientedBox3D,
    /// Exact image extent of the front face in each view.
    pub left_box: BBox2D,
    pub right_box: BBox2D,
    pub disparity: f64,
}

#[derive(Debug, Clone)]
pub struct SynthFrame {
    pub rig: CameraRig,
    pub left: Image,
    pub right: Image,
    /// Full-image ground-truth disparity.
    pub disparity: PixelMap,
    pub labels: LabelImage,
    pub background_depth: f64,
    pub objects: Vec<SynthObject>,
    pub left_detections: Vec<Detection2D>,
    pub right_detections: Vec<Detection2D>,
    /// Object index behind each detection; `None` for decoys.
    pub left_truth: Vec<Option<usize>>,
    pub right_truth: Vec<Option<usize>>,
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

fn lattice(seed: u64, ix: i64, iy: i64) -> f64 {
    let h = splitmix(seed ^ splitmix((ix as u64).wrapping_mul(0x0100_0000_01b3) ^ splitmix(iy as u64)));
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn smooth(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

fn value_noise(seed: u64, x: f64, y: f64, scale: f64) -> f64 {
    let gx = x / scale;
    let gy = y / scale;
    let ix = gx.floor();
    let iy = gy.floor();
    let fx = smooth(gx - ix);
    let fy = smooth(gy - iy);
    let (ix, iy) = (ix as i64, iy as i64);
    let a = lattice(seed, ix, iy);
    let b = lattice(seed, ix + 1, iy);
    let c = lattice(seed, ix, iy + 1);
    let d = lattice(seed, ix + 1, iy + 1);
    let top = a + (b - a) * fx;
    let bottom = c + (d - c) * fx;
    top + (bottom - top) * fy
}

/// Band-limited colored noise anchored to a surface.
#[derive(Debug, Clone, Copy)]
struct Texture {
    seed: u64,
    scale: f64,
    tint: [f64; 3],
    /// Texture coordinates are relative to this left-image point.
    anchor: (f64, f64),
}

impl Texture {
    fn random(rng: &mut ChaCha8Rng, scale: f64, anchor: (f64, f64)) -> Self {
        Texture {
            seed: rng.gen(),
            scale,
            tint: [rng.gen_range(0.6..1.0), rng.gen_range(0.6..1.0), rng.gen_range(0.6..1.0)],
            anchor,
        }
    }

    fn sample(&self, x: f64, y: f64) -> [f32; 3] {
        let (x, y) = (x - self.anchor.0, y - self.anchor.1);
        let t = 0.65 * value_noise(self.seed, x, y, self.scale) + 0.35 * value_noise(self.seed ^ 0x5bd1, x, y, 0.5 * self.scale);
        let mut out = [0f32; 3];
        for (o, k) in out.iter_mut().zip(self.tint) {
            *o = (0.1 + 0.8 * (k * t + (1.0 - k) * 0.5)) as f32;
        }
        out
    }
}

/// A surface in the scene: the background (no extent) or an object face.
struct Layer {
    disparity: f64,
    /// Left-image extent `[u0, u1) x [v0, v1)`; `None` covers everything.
    extent: Option<BBox2D>,
    texture: Texture,
    label: u8,
}

impl Layer {
    fn covers(&self, x: f64, y: f64) -> bool {
        match &self.extent {
            None => true,
            Some(b) => x >= b.x_min && x < b.x_max && y >= b.y_min && y < b.y_max,
        }
    }
}

fn luma(c: [f32; 3]) -> f64 {
    0.299 * c[0] as f64 + 0.587 * c[1] as f64 + 0.114 * c[2] as f64
}

/// Draws textures until the face rendered on `extent` has enough contrast.
fn textured(rng: &mut ChaCha8Rng, extent: &BBox2D, cfg: &SceneConfig) -> Result<Texture> {
    for _ in 0..32 {
        let tex = Texture::random(rng, cfg.texture_scale, (extent.x_min, extent.y_min));
        let (mut s, mut s2, mut n) = (0.0, 0.0, 0.0);
        let step = (extent.width().min(extent.height()) / 16.0).max(1.0);
        let mut y = extent.y_min;
        while y < extent.y_max {
            let mut x = extent.x_min;
            while x < extent.x_max {
                let l = luma(tex.sample(x, y));
                s += l;
                s2 += l * l;
                n += 1.0;
                x += step;
            }
            y += step;
        }
        let var = s2 / n - (s / n) * (s / n);
        if var.max(0.0).sqrt() >= cfg.min_texture_std {
            return Ok(tex);
        }
    }
    Err(Error::Config("could not draw a texture with the requested contrast".into()))
}

/// Randomly displaces each box edge by up to `amount` pixels while keeping at
/// least 0.7 IoU with the original and staying inside the image.
pub fn jitter_box(b: &BBox2D, amount: f64, width: usize, height: usize, rng: &mut impl Rng) -> BBox2D {
    let mut amount = amount;
    while amount > 1e-3 {
        for _ in 0..200 {
            let mut d = || rng.gen_range(-amount..=amount);
            let x0 = (b.x_min + d()).max(0.0);
            let y0 = (b.y_min + d()).max(0.0);
            let x1 = (b.x_max + d()).min(width as f64 - 1.0);
            let y1 = (b.y_max + d()).min(height as f64 - 1.0);
            if let Ok(j) = BBox2D::new(x0, y0, x1, y1) {
                if j.iou(b) >= 0.7 {
                    return j;
                }
            }
        }
        // too small a box for this much noise
        amount *= 0.5;
    }
    *b
}

fn face_box(rig: &CameraRig, spec: &ObjectSpec, camera_height: f64) -> (f64, f64, f64, f64) {
    let z = spec.depth;
    let u0 = rig.fu * (spec.lateral - 0.5 * spec.width) / z + rig.cu;
    let u1 = rig.fu * (spec.lateral + 0.5 * spec.width) / z + rig.cu;
    let v0 = rig.fv * (camera_height - spec.height) / z + rig.cv;
    let v1 = rig.fv * camera_height / z + rig.cv;
    (u0, v0, u1, v1)
}

/// Checks that the object is fully visible in both views and that its
/// disparities fit the local and global ranges.
fn check_object(index: usize, spec: &ObjectSpec, rig: &CameraRig, cfg: &SceneConfig) -> Result<(BBox2D, f64)> {
    let fail = |detail: String| Error::ObjectOutOfRange {
        index,
        class: spec.class.clone(),
        detail,
    };
    if !(spec.depth > 0.0 && spec.width > 0.0 && spec.height > 0.0 && spec.length > 0.0) {
        return Err(fail("depth and dimensions must be positive".into()));
    }
    if spec.depth + spec.length >= cfg.background_depth {
        return Err(fail(format!("extends past the background at {} m", cfg.background_depth)));
    }
    let d = rig.disparity_for_depth(spec.depth);
    if !cfg.global_range.contains(d) {
        return Err(fail(format!(
            "disparity {d:.2} px outside the global range [{}, {}]",
            cfg.global_range.min, cfg.global_range.max
        )));
    }
    let (u0, v0, u1, v1) = face_box(rig, spec, cfg.camera_height);
    let (w, h) = (rig.image_width as f64, rig.image_height as f64);
    if u0 - d < 0.0 || u1 > w - 1.0 || v0 < 0.0 || v1 > h - 1.0 {
        return Err(fail(format!(
            "image extent [{u0:.1}, {u1:.1}] x [{v0:.1}, {v1:.1}] with disparity {d:.2} leaves the image"
        )));
    }
    let b = BBox2D::new(u0, v0, u1, v1).map_err(|e| fail(e.to_string()))?;
    Ok((b, d))
}

/// Local disparity of a left-image column `x` with global disparity `d`
/// when the boxes are resampled to `size` columns.
pub fn local_disparity_at(left: &BBox2D, right: &BBox2D, x: f64, d: f64, size: usize) -> f64 {
    let w = size as f64;
    (x - left.x_min) * w / left.width() - (x - d - right.x_min) * w / right.width()
}

fn random_objects(rng: &mut ChaCha8Rng, rig: &CameraRig, cfg: &SceneConfig) -> Vec<ObjectSpec> {
    let n = rng.gen_range(cfg.min_objects..=cfg.max_objects);
    let mut out: Vec<ObjectSpec> = Vec::new();
    let mut boxes: Vec<BBox2D> = Vec::new();
    let mut attempts = 0;
    while out.len() < n && attempts < 400 {
        attempts += 1;
        let class = cfg.classes[rng.gen_range(0..cfg.classes.len())].clone();
        let (w0, h0, l0) = ObjectSpec::class_dimensions(&class);
        let mut scale = || rng.gen_range(0.9..1.1);
        // one height per class keeps box height an exact predictor of depth
        let (width, height, length) = (w0 * scale(), h0, l0 * scale());
        let depth = rng.gen_range(cfg.depth_range.0..=cfg.depth_range.1);
        let d = rig.disparity_for_depth(depth);
        let half = 0.5 * rig.fu * width / depth;
        let lo = d + half + 1.0;
        let hi = rig.image_width as f64 - 2.0 - half;
        if lo >= hi {
            continue;
        }
        let uc = rng.gen_range(lo..hi);
        let spec = ObjectSpec {
            class,
            depth,
            lateral: (uc - rig.cu) * depth / rig.fu,
            width,
            height,
            length,
        };
        let Ok((b, _)) = check_object(out.len(), &spec, rig, cfg) else {
            continue;
        };
        // keep objects mostly visible in both views
        let shadowed = boxes.iter().zip(&out).any(|(o, os)| {
            let d_o = rig.disparity_for_depth(os.depth);
            let overlap = |a: &BBox2D, b: &BBox2D| (a.x_max.min(b.x_max) - a.x_min.max(b.x_min)).max(0.0);
            let ol = overlap(&b, o);
            let or = overlap(&b.translated(-d, 0.0), &o.translated(-d_o, 0.0));
            ol.max(or) > 0.25 * b.width().min(o.width())
        });
        if shadowed {
            continue;
        }
        boxes.push(b);
        out.push(spec);
    }
    out
}

/// Renders one frame. The same configuration and seed give bit-identical
/// output.
pub fn generate(cfg: &SceneConfig, seed: u64) -> Result<SynthFrame> {
    cfg.validate()?;
    let rig = cfg.rig();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let specs = if cfg.objects.is_empty() {
        random_objects(&mut rng, &rig, cfg)
    } else {
        cfg.objects.clone()
    };
    if specs.len() > 254 {
        return Err(Error::Config("at most 254 objects per frame".into()));
    }

    let (w, h) = (cfg.image_width, cfg.image_height);
    let full = BBox2D::new(0.0, 0.0, w as f64, h as f64)?;
    let mut layers = vec![Layer {
        disparity: rig.disparity_for_depth(cfg.background_depth),
        extent: None,
        texture: textured(&mut rng, &full, cfg)?,
        label: 0,
    }];
    let mut objects = Vec::with_capacity(specs.len());
    for (i, spec) in specs.iter().enumerate() {
        let (b, d) = check_object(i, spec, &rig, cfg)?;
        let label = (i + 1) as u8;
        layers.push(Layer {
            disparity: d,
            extent: Some(b),
            texture: textured(&mut rng, &b, cfg)?,
            label,
        });
        let center = [
            spec.lateral,
            cfg.camera_height - 0.5 * spec.height,
            spec.depth + 0.5 * spec.length,
        ];
        // yaw pi/2 aligns the length axis with the optical axis
        let box3d = OrientedBox3D::new(center, spec.length, spec.width, spec.height, std::f64::consts::FRAC_PI_2)?;
        objects.push(SynthObject {
            label,
            class: spec.class.clone(),
            box3d,
            left_box: b,
            right_box: b.translated(-d, 0.0),
            disparity: d,
        });
    }
    // nearest first; ties keep the later object on top
    let mut order: Vec<usize> = (0..layers.len()).collect();
    order.sort_by(|&a, &b| layers[b].disparity.total_cmp(&layers[a].disparity).then(b.cmp(&a)));

    let mut left = Image::new(w, h, 3);
    let mut right = Image::new(w, h, 3);
    let mut disparity = PixelMap::new(MapUnit::Disparity, (0, 0), w, h);
    let mut labels = LabelImage::new(w, h);
    for v in 0..h {
        let y = v as f64;
        for u in 0..w {
            let x = u as f64;
            let l = order.iter().map(|&k| &layers[k]).find(|l| l.covers(x, y)).expect("background covers");
            let c = l.texture.sample(x, y);
            for (ch, val) in c.iter().enumerate() {
                left.set(u, v, ch, *val);
            }
            disparity.set(u, v, l.disparity);
            labels.set(u, v, l.label);

            let r = order
                .iter()
                .map(|&k| &layers[k])
                .find(|l| l.covers(x + l.disparity, y))
                .expect("background covers");
            let c = r.texture.sample(x + r.disparity, y);
            for (ch, val) in c.iter().enumerate() {
                right.set(u, v, ch, *val);
            }
        }
    }
    left.quantize_u8();
    right.quantize_u8();

    let mut left_detections = Vec::new();
    let mut right_detections = Vec::new();
    for (i, o) in objects.iter().enumerate() {
        let score_l = rng.gen_range(0.7..1.0);
        let score_r = rng.gen_range(0.7..1.0);
        // local disparity is linear in x, so the face edges bound it
        let worst = |lb: &BBox2D, rb: &BBox2D| {
            [o.left_box.x_min, o.left_box.x_max]
                .map(|x| local_disparity_at(lb, rb, x, o.disparity, cfg.canonical_size))
                .into_iter()
                .find(|dl| !cfg.local_range.contains(*dl))
        };
        let mut drawn = None;
        let mut last = 0.0;
        for _ in 0..50 {
            let lb = jitter_box(&o.left_box, cfg.jitter, w, h, &mut rng);
            let rb = jitter_box(&o.right_box, cfg.jitter, w, h, &mut rng);
            match worst(&lb, &rb) {
                None => {
                    drawn = Some((lb, rb));
                    break;
                }
                Some(dl) => last = dl,
            }
        }
        let Some((lb, rb)) = drawn else {
            return Err(Error::ObjectOutOfRange {
                index: i,
                class: o.class.clone(),
                detail: format!(
                    "local disparity {last:.2} outside [{}, {}]",
                    cfg.local_range.min, cfg.local_range.max
                ),
            });
        };
        left_detections.push(Detection2D::new(&o.class, score_l, lb));
        right_detections.push(Detection2D::new(&o.class, score_r, rb));
    }
    let n = objects.len();
    Ok(SynthFrame {
        rig,
        left,
        right,
        disparity,
        labels,
        background_depth: cfg.background_depth,
        objects,
        left_detections,
        right_detections,
        left_truth: (0..n).map(Some).collect(),
        right_truth: (0..n).map(Some).collect(),
    })
}

impl SynthFrame {
    /// Adds `count` false-positive boxes to each view, each placed so that
    /// its center offset against every opposite-view box of the same class
    /// is at least `sigmas` standard deviations off the regression line (or
    /// negative). Returns the number of decoys actually placed per view.
    pub fn add_decoys(&mut self, model: &AssociationModel, count: usize, sigmas: f64, seed: u64) -> usize {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (w, h) = (self.rig.image_width as f64, self.rig.image_height as f64);
        let mut placed = usize::MAX;
        for left_side in [true, false] {
            let mut n = 0;
            for _ in 0..count {
                for _attempt in 0..500 {
                    let class = match self.objects.len() {
                        0 => "Car".to_string(),
                        n => self.objects[rng.gen_range(0..n)].class.clone(),
                    };
                    let Some(m) = model.model_for(&class) else { break };
                    let bh = rng.gen_range(20.0..(0.8 * h).max(21.0));
                    let bw = bh * rng.gen_range(0.5..1.5);
                    if bw >= w - 2.0 {
                        continue;
                    }
                    let x0 = rng.gen_range(0.0..w - 1.0 - bw);
                    let y0 = rng.gen_range(0.0..h - 1.0 - bh);
                    let Ok(b) = BBox2D::new(x0, y0, x0 + bw, y0 + bh) else { continue };
                    let opposite = if left_side { &self.right_detections } else { &self.left_detections };
                    let tol = sigmas * m.sigma.max(crate::association::ZERO_SIGMA_GATE_PX / 3.0);
                    let clear = opposite.iter().filter(|d| d.class == class).all(|d| {
                        let (l, r) = if left_side { (&b, &d.bbox) } else { (&d.bbox, &b) };
                        let delta = l.center_u() - r.center_u();
                        delta < 0.0 || (delta - m.expected_disparity(l.height())).abs() >= tol
                    });
                    if !clear {
                        continue;
                    }
                    let det = Detection2D::new(class, rng.gen_range(0.7..1.0), b);
                    if left_side {
                        self.left_detections.push(det);
                        self.left_truth.push(None);
                    } else {
                        self.right_detections.push(det);
                        self.right_truth.push(None);
                    }
                    n += 1;
                    break;
                }
            }
            placed = placed.min(n);
        }
        placed
    }

    /// Ground-truth depth map.
    pub fn depth(&self) -> Result<PixelMap> {
        crate::geometry::disparity_to_depth(&self.disparity, &self.rig)
    }
}

/// Height/disparity samples `(class, left height, center offset)` of the
/// true detection pairs of a set of frames.
pub fn association_samples(frames: &[SynthFrame]) -> Vec<(String, f64, f64)> {
    let mut out = Vec::new();
    for f in frames {
        for (i, lt) in f.left_truth.iter().enumerate() {
            let Some(obj) = lt else { continue };
            if let Some(j) = f.right_truth.iter().position(|rt| rt == &Some(*obj)) {
                let l = &f.left_detections[i].bbox;
                let r = &f.right_detections[j].bbox;
                out.push((f.left_detections[i].class.clone(), l.height(), l.center_u() - r.center_u()));
            }
        }
    }
    out
}
