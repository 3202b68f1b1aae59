//! The parameterized preprocessing graph.
//!
//! Training synthesizes each (input, target) pair from a target image alone:
//! scale, crop, flip, grayscale, a 24x area-down / cubic-up blur, then
//! brightness and contrast jitter. The live path runs the same chain with
//! fixed, performer-controlled parameters plus a levels remap.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::imaging::{self, Image8};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreprocessConfig {
    /// Side of the square training crop and model input.
    pub desired_size: usize,
    pub scale_min: f64,
    pub scale_max: f64,
    pub allow_flip_h: bool,
    pub allow_flip_v: bool,
    pub downscale_factor: f64,
    /// Brightness factors are drawn from `1 ± brightness_range`.
    pub brightness_range: f64,
    /// Contrast factors are drawn from `1 ± contrast_range`.
    pub contrast_range: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            desired_size: 128,
            scale_min: 1.0,
            scale_max: 1.3,
            allow_flip_h: true,
            allow_flip_v: false,
            downscale_factor: 24.0,
            brightness_range: 0.2,
            contrast_range: 0.15,
        }
    }
}

impl PreprocessConfig {
    /// A config with every random range collapsed: no scaling, flips or jitter.
    pub fn collapsed(desired_size: usize) -> Self {
        Self {
            desired_size,
            scale_min: 1.0,
            scale_max: 1.0,
            allow_flip_h: false,
            allow_flip_v: false,
            brightness_range: 0.0,
            contrast_range: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.desired_size == 0 {
            return Err(invalid("desired_size must be >= 1"));
        }
        if !(1.0 <= self.scale_min && self.scale_min <= self.scale_max && self.scale_max.is_finite()) {
            return Err(invalid(format!(
                "need 1.0 <= scale_min <= scale_max, got {} and {}",
                self.scale_min, self.scale_max
            )));
        }
        if !(self.downscale_factor > 1.0 && self.downscale_factor.is_finite()) {
            return Err(invalid(format!("downscale_factor must be > 1, got {}", self.downscale_factor)));
        }
        for (name, r) in [("brightness_range", self.brightness_range), ("contrast_range", self.contrast_range)] {
            if !(0.0..1.0).contains(&r) {
                return Err(invalid(format!("{name} must be in [0, 1), got {r}")));
            }
        }
        Ok(())
    }

    /// Side of the blurred intermediate: `max(1, round(desired_size / downscale_factor))`.
    pub fn low_res_size(&self) -> usize {
        ((self.desired_size as f64 / self.downscale_factor).round() as usize).max(1)
    }
}

/// One random draw of the operator chain's parameters.
///
/// Crop offsets are normalized to `[0, 1)` and mapped onto the valid pixel
/// range once the scaled image size is known.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreprocessParams {
    pub scale: f64,
    pub crop_x: f64,
    pub crop_y: f64,
    pub flip_h: bool,
    pub flip_v: bool,
    pub brightness: f64,
    pub contrast: f64,
}

impl PreprocessParams {
    pub fn identity() -> Self {
        Self { scale: 1.0, crop_x: 0.0, crop_y: 0.0, flip_h: false, flip_v: false, brightness: 1.0, contrast: 1.0 }
    }
}

/// Performer-controlled parameters of the live path.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LiveParams {
    pub norm_low: u8,
    pub norm_high: u8,
    pub brightness: f64,
    pub contrast: f64,
}

impl Default for LiveParams {
    fn default() -> Self {
        Self { norm_low: 0, norm_high: 255, brightness: 1.0, contrast: 1.0 }
    }
}

impl LiveParams {
    /// Smallest brightness/contrast factor the live path will apply.
    pub const MIN_FACTOR: f64 = 0.01;
    pub const MAX_FACTOR: f64 = 4.0;

    /// Parses `"norm_low=10,norm_high=200,brightness=1.1"`; unspecified keys
    /// keep their defaults.
    pub fn parse(s: &str) -> Result<Self> {
        let mut p = Self::default();
        for item in s.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let (k, v) = item.split_once('=').ok_or_else(|| invalid(format!("expected key=value, got {item:?}")))?;
            let v: f64 = v.trim().parse().map_err(|_| invalid(format!("bad number in {item:?}")))?;
            p.set(k.trim(), v)?;
        }
        Ok(p)
    }

    /// Sets one named parameter, clamping to its legal range. Returns the
    /// stored value.
    pub fn set(&mut self, name: &str, value: f64) -> Result<f64> {
        if !value.is_finite() {
            return Err(invalid(format!("{name} must be a finite number")));
        }
        let clamp_norm = |v: f64| v.round().clamp(0.0, 255.0) as u8;
        let clamp_factor = |v: f64| v.clamp(Self::MIN_FACTOR, Self::MAX_FACTOR);
        Ok(match name {
            "norm_low" => {
                self.norm_low = clamp_norm(value);
                self.norm_low as f64
            }
            "norm_high" => {
                self.norm_high = clamp_norm(value);
                self.norm_high as f64
            }
            "brightness" => {
                self.brightness = clamp_factor(value);
                self.brightness
            }
            "contrast" => {
                self.contrast = clamp_factor(value);
                self.contrast
            }
            other => return Err(crate::Error::UnknownParameter(other.to_string())),
        })
    }

    pub const NAMES: [&'static str; 4] = ["norm_low", "norm_high", "brightness", "contrast"];
}

pub fn sample_params(config: &PreprocessConfig, rng: &mut impl Rng) -> PreprocessParams {
    let scale = rng.random_range(config.scale_min..=config.scale_max);
    let crop_x = rng.random::<f64>();
    let crop_y = rng.random::<f64>();
    let flip_h = config.allow_flip_h && rng.random_bool(0.5);
    let flip_v = config.allow_flip_v && rng.random_bool(0.5);
    let b = config.brightness_range;
    let c = config.contrast_range;
    let brightness = rng.random_range(1.0 - b..=1.0 + b);
    let contrast = rng.random_range(1.0 - c..=1.0 + c);
    PreprocessParams { scale, crop_x, crop_y, flip_h, flip_v, brightness, contrast }
}

/// Maps a normalized offset in `[0, 1)` to a pixel offset in `0..=max`.
pub fn crop_origin(u: f64, max: usize) -> usize {
    ((u * (max + 1) as f64).floor() as usize).min(max)
}

/// Dimensions after scaling the short side to `short`, keeping aspect.
pub fn fit_short_side(width: usize, height: usize, short: usize) -> (usize, usize) {
    if width <= height {
        let h = ((height as f64 * short as f64 / width as f64).round() as usize).max(short);
        (short, h)
    } else {
        let w = ((width as f64 * short as f64 / height as f64).round() as usize).max(short);
        (w, short)
    }
}

/// Grayscale, blur through the low-res bottleneck, then brightness/contrast.
fn derive_input(rgb_or_gray: &Image8, config: &PreprocessConfig, brightness: f64, contrast: f64) -> Image8 {
    let gray = if rgb_or_gray.channels() == 3 {
        imaging::to_grayscale(rgb_or_gray).expect("3-channel input")
    } else {
        rgb_or_gray.clone()
    };
    let s = config.desired_size;
    let low = config.low_res_size();
    let small = imaging::resize_area(&gray, low, low).expect("low-res size >= 1");
    let blurred = imaging::resize_cubic(&small, s, s).expect("desired_size >= 1");
    let bright = imaging::brightness_unchecked(&blurred, brightness);
    imaging::contrast_unchecked(&bright, contrast)
}

/// A synthesized training pair.
#[derive(Clone, Debug, PartialEq)]
pub struct Pair {
    /// Gray, blurred, jittered model input.
    pub input: Image8,
    /// RGB ground-truth crop.
    pub target: Image8,
}

pub fn make_pair(target: &Image8, config: &PreprocessConfig, params: &PreprocessParams) -> Result<Pair> {
    let s = config.desired_size;
    if target.channels() != 3 {
        return Err(invalid(format!("target must be RGB, got {} channel(s)", target.channels())));
    }
    if target.width().min(target.height()) < s {
        return Err(invalid(format!("target {}x{} is smaller than desired_size {s}", target.width(), target.height())));
    }
    if !(params.brightness > 0.0 && params.contrast > 0.0) {
        return Err(invalid("brightness and contrast factors must be positive"));
    }
    let short = ((s as f64 * params.scale).round() as usize).max(s);
    let (w, h) = fit_short_side(target.width(), target.height(), short);
    let scaled = imaging::resize_cubic(target, w, h)?;
    let x = crop_origin(params.crop_x, w - s);
    let y = crop_origin(params.crop_y, h - s);
    let cropped = imaging::crop(&scaled, x, y, s, s)?;
    let target_crop = imaging::flip(&cropped, params.flip_h, params.flip_v);
    let input = derive_input(&target_crop, config, params.brightness, params.contrast);
    Ok(Pair { input, target: target_crop })
}

/// Center square crop resized to `desired_size`, in the frame's channel count.
pub fn center_square(frame: &Image8, size: usize) -> Image8 {
    let side = frame.width().min(frame.height());
    let x = (frame.width() - side) / 2;
    let y = (frame.height() - side) / 2;
    let square = imaging::crop(frame, x, y, side, side).expect("square fits inside the frame");
    imaging::resize_cubic(&square, size, size).expect("size >= 1")
}

/// Deterministic live variant of the input path, followed by levels.
pub fn apply_live(frame: &Image8, config: &PreprocessConfig, live: &LiveParams) -> Image8 {
    let square = center_square(frame, config.desired_size);
    let b = live.brightness.clamp(LiveParams::MIN_FACTOR, LiveParams::MAX_FACTOR);
    let c = live.contrast.clamp(LiveParams::MIN_FACTOR, LiveParams::MAX_FACTOR);
    let input = derive_input(&square, config, b, c);
    imaging::apply_levels(&input, live.norm_low, live.norm_high)
}
