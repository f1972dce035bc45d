//! Image-to-tensor preprocessing and training-time augmentation.
//!
//! All resampling is bilinear with half-pixel centers: output pixel `x` of a
//! resize from `w` to `ow` samples source coordinate `(x + 0.5)·w/ow − 0.5`,
//! clamped to the image. At unit scale this is exactly the identity.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::rng::SeedStream;
use crate::tensor::Tensor;
use crate::{Error, Result};

/// Side length of model inputs.
pub const TARGET_SIZE: usize = 224;

/// 8-bit image, row-major, channels interleaved.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    pixels: Vec<u8>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Argument(format!("empty image {width}×{height}")));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::Argument(format!(
                "images have 1 or 3 channels, got {channels}"
            )));
        }
        if pixels.len() != width * height * channels {
            return Err(Error::Shape(format!(
                "{width}×{height}×{channels} image needs {} bytes, got {}",
                width * height * channels,
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: u8) -> Result<Self> {
        Self::new(
            width,
            height,
            channels,
            vec![value; width * height * channels],
        )
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

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    fn plane_f32(&self, ch: usize) -> Vec<f32> {
        self.pixels
            .iter()
            .skip(ch)
            .step_by(self.channels)
            .map(|&p| p as f32)
            .collect()
    }

    /// BT.601 luma (0.299 R + 0.587 G + 0.114 B) as floats in [0, 255];
    /// grayscale images pass through.
    fn luma_f32(&self) -> Vec<f32> {
        if self.channels == 1 {
            return self.plane_f32(0);
        }
        self.pixels
            .chunks_exact(3)
            .map(|p| {
                (0.299 * p[0] as f32 + 0.587 * p[1] as f32 + 0.114 * p[2] as f32).clamp(0.0, 255.0)
            })
            .collect()
    }

    fn from_planes(width: usize, height: usize, planes: &[Vec<f32>]) -> Self {
        let channels = planes.len();
        let mut pixels = Vec::with_capacity(width * height * channels);
        for i in 0..width * height {
            for plane in planes {
                pixels.push(round_u8(plane[i]));
            }
        }
        Self {
            width,
            height,
            channels,
            pixels,
        }
    }
}

fn round_u8(v: f32) -> u8 {
    libm::floorf(v + 0.5).clamp(0.0, 255.0) as u8
}

/// Per-channel `(x − mean) / std` applied after scaling pixels to [0, 1].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizationSpec {
    pub mean: [f32; 3],
    pub std: [f32; 3],
}

impl NormalizationSpec {
    /// Constants used for the chest X-ray models.
    pub const CHEST_XRAY: Self = Self {
        mean: [0.0960; 3],
        std: [0.9341; 3],
    };

    pub fn validate(&self) -> Result<()> {
        if self.std.iter().any(|&s| s.is_nan() || s <= 0.0) {
            return Err(Error::Argument(format!(
                "normalization std must be positive, got {:?}",
                self.std
            )));
        }
        Ok(())
    }
}

impl Default for NormalizationSpec {
    fn default() -> Self {
        Self::CHEST_XRAY
    }
}

/// Random-resized-crop and rotation settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentConfig {
    pub enabled: bool,
    /// Crop area as a fraction of the source area.
    pub crop_scale_range: (f64, f64),
    /// Crop width/height ratio, sampled log-uniformly.
    pub crop_aspect_range: (f64, f64),
    /// Rotation angle is uniform in ±this many degrees.
    pub rotation_degrees: f64,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            crop_scale_range: (0.6, 1.0),
            crop_aspect_range: (3.0 / 4.0, 4.0 / 3.0),
            rotation_degrees: 15.0,
            seed: 0,
        }
    }
}

impl AugmentConfig {
    pub fn disabled() -> Self {
        Self {
            enabled: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (slo, shi) = self.crop_scale_range;
        let (alo, ahi) = self.crop_aspect_range;
        if !(slo > 0.0 && slo <= shi && shi <= 1.0) {
            return Err(Error::Argument(format!(
                "crop scale range ({slo}, {shi}) must satisfy 0 < lo <= hi <= 1"
            )));
        }
        if !(alo > 0.0 && alo <= ahi && ahi.is_finite()) {
            return Err(Error::Argument(format!(
                "crop aspect range ({alo}, {ahi}) must satisfy 0 < lo <= hi"
            )));
        }
        if !(self.rotation_degrees >= 0.0 && self.rotation_degrees.is_finite()) {
            return Err(Error::Argument(format!(
                "rotation range {} must be non-negative",
                self.rotation_degrees
            )));
        }
        Ok(())
    }
}

/// Pixel box `[x, x+width) × [y, y+height)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CropBox {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

/// One augmentation draw.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentDraw {
    pub crop: CropBox,
    pub angle_degrees: f64,
}

/// Samples a crop box (up to ten area/aspect attempts, then a centered crop
/// with clamped aspect) followed by a rotation angle.
pub fn sample_augment(
    cfg: &AugmentConfig,
    width: usize,
    height: usize,
    rng: &mut SeedStream,
) -> AugmentDraw {
    let area = (width * height) as f64;
    let (alo, ahi) = cfg.crop_aspect_range;
    let (log_lo, log_hi) = (libm::log(alo), libm::log(ahi));
    let mut crop = None;
    for _ in 0..10 {
        let target = area * rng.uniform(cfg.crop_scale_range.0, cfg.crop_scale_range.1);
        let aspect = libm::exp(rng.uniform(log_lo, log_hi));
        let cw = libm::round(libm::sqrt(target * aspect)) as usize;
        let ch = libm::round(libm::sqrt(target / aspect)) as usize;
        if cw > 0 && cw <= width && ch > 0 && ch <= height {
            let y = rng.below((height - ch + 1) as u64) as usize;
            let x = rng.below((width - cw + 1) as u64) as usize;
            crop = Some(CropBox {
                x,
                y,
                width: cw,
                height: ch,
            });
            break;
        }
    }
    let crop = crop.unwrap_or_else(|| {
        let ratio = width as f64 / height as f64;
        let (cw, ch) = if ratio < alo {
            (
                width,
                (libm::round(width as f64 / alo) as usize).clamp(1, height),
            )
        } else if ratio > ahi {
            (
                (libm::round(height as f64 * ahi) as usize).clamp(1, width),
                height,
            )
        } else {
            (width, height)
        };
        CropBox {
            x: (width - cw) / 2,
            y: (height - ch) / 2,
            width: cw,
            height: ch,
        }
    });
    let angle_degrees = rng.uniform(-cfg.rotation_degrees, cfg.rotation_degrees);
    AugmentDraw {
        crop,
        angle_degrees,
    }
}

/// Bilinear resample of `region` of a `w`-wide plane to `ow × oh`.
fn resize_region(src: &[f32], w: usize, region: CropBox, ow: usize, oh: usize) -> Vec<f32> {
    let sx = region.width as f32 / ow as f32;
    let sy = region.height as f32 / oh as f32;
    let max_x = (region.width - 1) as f32;
    let max_y = (region.height - 1) as f32;
    let cols: Vec<(usize, usize, f32)> = (0..ow)
        .map(|x| {
            let fx = ((x as f32 + 0.5) * sx - 0.5).clamp(0.0, max_x);
            let x0 = fx as usize;
            let x1 = (x0 + 1).min(region.width - 1);
            (region.x + x0, region.x + x1, fx - x0 as f32)
        })
        .collect();
    let mut out = Vec::with_capacity(ow * oh);
    for y in 0..oh {
        let fy = ((y as f32 + 0.5) * sy - 0.5).clamp(0.0, max_y);
        let y0 = fy as usize;
        let y1 = (y0 + 1).min(region.height - 1);
        let ty = fy - y0 as f32;
        let r0 = &src[(region.y + y0) * w..];
        let r1 = &src[(region.y + y1) * w..];
        for &(x0, x1, tx) in &cols {
            let top = (1.0 - tx) * r0[x0] + tx * r0[x1];
            let bottom = (1.0 - tx) * r1[x0] + tx * r1[x1];
            out.push((1.0 - ty) * top + ty * bottom);
        }
    }
    out
}

fn full_box(w: usize, h: usize) -> CropBox {
    CropBox {
        x: 0,
        y: 0,
        width: w,
        height: h,
    }
}

/// Rotates a square-ish plane about its center; samples outside read as 0.
fn rotate_plane(src: &[f32], w: usize, h: usize, degrees: f64) -> Vec<f32> {
    let theta = degrees.to_radians();
    let (s, c) = (libm::sin(theta) as f32, libm::cos(theta) as f32);
    let (cx, cy) = ((w as f32 - 1.0) / 2.0, (h as f32 - 1.0) / 2.0);
    let at = |x: isize, y: isize| -> f32 {
        if x < 0 || y < 0 || x >= w as isize || y >= h as isize {
            0.0
        } else {
            src[y as usize * w + x as usize]
        }
    };
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        let dy = y as f32 - cy;
        for x in 0..w {
            let dx = x as f32 - cx;
            let sx = c * dx + s * dy + cx;
            let sy = -s * dx + c * dy + cy;
            let fx = libm::floorf(sx);
            let fy = libm::floorf(sy);
            let (tx, ty) = (sx - fx, sy - fy);
            let (x0, y0) = (fx as isize, fy as isize);
            let top = (1.0 - tx) * at(x0, y0) + tx * at(x0 + 1, y0);
            let bottom = (1.0 - tx) * at(x0, y0 + 1) + tx * at(x0 + 1, y0 + 1);
            out.push((1.0 - ty) * top + ty * bottom);
        }
    }
    out
}

/// Bilinear resize to `ow × oh`, rounding back to 8 bits.
pub fn resize(img: &Image, ow: usize, oh: usize) -> Image {
    let planes: Vec<Vec<f32>> = (0..img.channels)
        .map(|ch| {
            resize_region(
                &img.plane_f32(ch),
                img.width,
                full_box(img.width, img.height),
                ow,
                oh,
            )
        })
        .collect();
    Image::from_planes(ow, oh, &planes)
}

/// Training augmentation: crop → resize to 224 → rotate (zero fill). With
/// augmentation disabled this is a plain 224 resize. The draw is a pure
/// function of `(cfg.seed, draw_index)`.
pub fn augment(img: &Image, cfg: &AugmentConfig, draw_index: u64) -> Result<Image> {
    cfg.validate()?;
    if !cfg.enabled {
        return Ok(resize(img, TARGET_SIZE, TARGET_SIZE));
    }
    let mut rng = SeedStream::derive(cfg.seed, draw_index);
    let draw = sample_augment(cfg, img.width, img.height, &mut rng);
    Ok(apply_augment(img, &draw))
}

pub fn apply_augment(img: &Image, draw: &AugmentDraw) -> Image {
    let planes: Vec<Vec<f32>> = (0..img.channels)
        .map(|ch| {
            let cropped = resize_region(
                &img.plane_f32(ch),
                img.width,
                draw.crop,
                TARGET_SIZE,
                TARGET_SIZE,
            );
            rotate_plane(&cropped, TARGET_SIZE, TARGET_SIZE, draw.angle_degrees)
        })
        .collect();
    Image::from_planes(TARGET_SIZE, TARGET_SIZE, &planes)
}

/// 3×224×224 model input: grayscale (luma for RGB), bilinear resize, scale
/// to [0, 1], replicate to three channels and normalize each channel.
pub fn to_model_input(img: &Image, norm: &NormalizationSpec) -> Result<Tensor> {
    norm.validate()?;
    let gray = resize_region(
        &img.luma_f32(),
        img.width,
        full_box(img.width, img.height),
        TARGET_SIZE,
        TARGET_SIZE,
    );
    let plane = TARGET_SIZE * TARGET_SIZE;
    let mut data = Vec::with_capacity(3 * plane);
    for ch in 0..3 {
        let (m, s) = (norm.mean[ch], norm.std[ch]);
        data.extend(gray.iter().map(|&v| (v / 255.0 - m) / s));
    }
    Tensor::new(&[3, TARGET_SIZE, TARGET_SIZE], data)
}
