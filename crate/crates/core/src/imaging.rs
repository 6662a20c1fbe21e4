//! Float images, resampling and the PNG encodings used on disk.

use std::path::Path;

use image::{GrayImage, ImageBuffer, Luma, RgbImage};

use crate::error::{Error, Result};
use crate::geometry::{MapUnit, PixelMap};

/// Interleaved float image with intensities in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Image {
            width,
            height,
            channels,
            data: vec![0.0; width * height * channels],
        }
    }

    pub fn from_vec(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height * channels {
            return Err(Error::SizeMismatch(format!(
                "{}x{}x{} image needs {} samples, got {}",
                width,
                height,
                channels,
                width * height * channels,
                data.len()
            )));
        }
        Ok(Image {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f32) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    /// Samples channel `c` at a continuous position with edge clamping.
    pub fn sample_bilinear(&self, x: f64, y: f64, c: usize) -> f32 {
        let xm = (self.width - 1) as f64;
        let ym = (self.height - 1) as f64;
        let x = x.clamp(0.0, xm);
        let y = y.clamp(0.0, ym);
        let x0 = x.floor() as usize;
        let y0 = y.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = (x - x0 as f64) as f32;
        let fy = (y - y0 as f64) as f32;
        let top = self.get(x0, y0, c) * (1.0 - fx) + self.get(x1, y0, c) * fx;
        let bottom = self.get(x0, y1, c) * (1.0 - fx) + self.get(x1, y1, c) * fx;
        top * (1.0 - fy) + bottom * fy
    }

    /// ITU-R BT.601 luma; single-channel images are returned unchanged.
    pub fn to_luma(&self) -> Image {
        if self.channels == 1 {
            return self.clone();
        }
        let mut out = Image::new(self.width, self.height, 1);
        for (i, px) in self.data.chunks_exact(self.channels).enumerate() {
            out.data[i] = 0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2];
        }
        out
    }

    /// Bilinear resampling at the separable grid of positions `xs` x `ys`,
    /// with edge clamping.
    fn resample_grid(&self, xs: impl Iterator<Item = f64>, ys: impl Iterator<Item = f64>) -> Image {
        let taps = |p: f64, n: usize| {
            let p = p.clamp(0.0, (n - 1) as f64);
            let i0 = p.floor() as usize;
            (i0, (i0 + 1).min(n - 1), (p - i0 as f64) as f32)
        };
        let cols: Vec<_> = xs.map(|x| taps(x, self.width)).collect();
        let rows: Vec<_> = ys.map(|y| taps(y, self.height)).collect();
        let ch = self.channels;
        let mut out = Image::new(cols.len(), rows.len(), ch);
        let mut k = 0;
        for &(y0, y1, fy) in &rows {
            let top = &self.data[y0 * self.width * ch..(y0 + 1) * self.width * ch];
            let bottom = &self.data[y1 * self.width * ch..(y1 + 1) * self.width * ch];
            for &(x0, x1, fx) in &cols {
                for c in 0..ch {
                    let t = top[x0 * ch + c] * (1.0 - fx) + top[x1 * ch + c] * fx;
                    let b = bottom[x0 * ch + c] * (1.0 - fx) + bottom[x1 * ch + c] * fx;
                    out.data[k] = t * (1.0 - fy) + b * fy;
                    k += 1;
                }
            }
        }
        out
    }

    /// Bilinear resampling of the region starting at `(x0, y0)` spanning
    /// `src_w x src_h` pixels onto an `out_w x out_h` grid. Output cell `i`
    /// samples `x0 + i * src_w / out_w`.
    pub fn resample_region(
        &self,
        x0: f64,
        y0: f64,
        src_w: f64,
        src_h: f64,
        out_w: usize,
        out_h: usize,
    ) -> Image {
        let sx = src_w / out_w as f64;
        let sy = src_h / out_h as f64;
        self.resample_grid(
            (0..out_w).map(|i| x0 + i as f64 * sx),
            (0..out_h).map(|j| y0 + j as f64 * sy),
        )
    }

    /// Like [`Image::resample_region`], but samples are clamped to the pixel
    /// centers inside the region, so nothing outside it leaks in through
    /// interpolation.
    pub fn resample_inside(
        &self,
        x0: f64,
        y0: f64,
        src_w: f64,
        src_h: f64,
        out_w: usize,
        out_h: usize,
    ) -> Image {
        let inner = |lo: f64, len: f64, n: usize| {
            let a = lo.ceil().max(0.0);
            let b = ((lo + len).ceil() - 1.0).min(n as f64 - 1.0);
            if a <= b {
                (a, b)
            } else {
                let c = (lo + 0.5 * len).round().clamp(0.0, n as f64 - 1.0);
                (c, c)
            }
        };
        let (xa, xb) = inner(x0, src_w, self.width);
        let (ya, yb) = inner(y0, src_h, self.height);
        let sx = src_w / out_w as f64;
        let sy = src_h / out_h as f64;
        self.resample_grid(
            (0..out_w).map(|i| (x0 + i as f64 * sx).clamp(xa, xb)),
            (0..out_h).map(|j| (y0 + j as f64 * sy).clamp(ya, yb)),
        )
    }

    /// Rounds every sample to the nearest 8-bit level.
    pub fn quantize_u8(&mut self) {
        for v in &mut self.data {
            *v = (v.clamp(0.0, 1.0) * 255.0).round() / 255.0;
        }
    }

    pub fn load_png(path: &Path) -> Result<Image> {
        let img = image::open(path).map_err(|source| Error::Image {
            path: path.into(),
            source,
        })?;
        let out = match img.color().channel_count() {
            1 | 2 => {
                let g = img.to_luma8();
                let data = g.as_raw().iter().map(|&v| v as f32 / 255.0).collect();
                Image::from_vec(g.width() as usize, g.height() as usize, 1, data)?
            }
            _ => {
                let rgb = img.to_rgb8();
                let data = rgb.as_raw().iter().map(|&v| v as f32 / 255.0).collect();
                Image::from_vec(rgb.width() as usize, rgb.height() as usize, 3, data)?
            }
        };
        Ok(out)
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let bytes: Vec<u8> = self
            .data
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        let (w, h) = (self.width as u32, self.height as u32);
        let res = match self.channels {
            1 => GrayImage::from_raw(w, h, bytes).map(|b| b.save(path)),
            3 => RgbImage::from_raw(w, h, bytes).map(|b| b.save(path)),
            n => {
                return Err(Error::SizeMismatch(format!(
                    "cannot encode {n}-channel image as PNG"
                )))
            }
        };
        res.expect("buffer length matches dimensions")
            .map_err(|source| Error::Image {
                path: path.into(),
                source,
            })
    }
}

/// Writes a disparity map as a 16-bit PNG (value = disparity * 256, 0 = invalid).
pub fn save_disparity_png(map: &PixelMap, path: &Path) -> Result<()> {
    if map.unit != MapUnit::Disparity {
        return Err(Error::UnitMismatch {
            expected: MapUnit::Disparity,
            actual: map.unit,
        });
    }
    let mut buf: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::new(map.width() as u32, map.height() as u32);
    for (x, y, px) in buf.enumerate_pixels_mut() {
        let v = map
            .get(x as usize, y as usize)
            .filter(|d| *d > 0.0)
            .map(|d| (d * 256.0).round().clamp(1.0, 65535.0) as u16)
            .unwrap_or(0);
        *px = Luma([v]);
    }
    buf.save(path).map_err(|source| Error::Image {
        path: path.into(),
        source,
    })
}

pub fn load_disparity_png(path: &Path) -> Result<PixelMap> {
    let img = image::open(path).map_err(|source| Error::Image {
        path: path.into(),
        source,
    })?;
    let buf = img.to_luma16();
    let mut map = PixelMap::new(
        MapUnit::Disparity,
        (0, 0),
        buf.width() as usize,
        buf.height() as usize,
    );
    for (x, y, px) in buf.enumerate_pixels() {
        if px[0] > 0 {
            map.set(x as usize, y as usize, px[0] as f64 / 256.0);
        }
    }
    Ok(map)
}

/// Per-pixel instance labels; 0 is background.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelImage {
    pub width: usize,
    pub height: usize,
    pub labels: Vec<u8>,
}

impl LabelImage {
    pub fn new(width: usize, height: usize) -> Self {
        LabelImage {
            width,
            height,
            labels: vec![0; width * height],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.labels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, label: u8) {
        self.labels[y * self.width + x] = label;
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        GrayImage::from_raw(self.width as u32, self.height as u32, self.labels.clone())
            .expect("buffer length matches dimensions")
            .save(path)
            .map_err(|source| Error::Image {
                path: path.into(),
                source,
            })
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|source| Error::Image {
            path: path.into(),
            source,
        })?;
        let g = img.to_luma8();
        Ok(LabelImage {
            width: g.width() as usize,
            height: g.height() as usize,
            labels: g.into_raw(),
        })
    }
}
