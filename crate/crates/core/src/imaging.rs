//! 8-bit image primitives shared by the training-time preprocessing graph and
//! the live inference path.
//!
//! Every operation is a pure function of its arguments. Intermediate math is
//! done in `f64` and rounded half away from zero once, at the end, so results
//! are bit-identical across runs and platforms.

use crate::error::{invalid, Error, Result};

/// Row-major interleaved 8-bit raster with 1 (gray) or 3 (RGB) channels.
#[derive(Clone, PartialEq, Eq)]
pub struct Image8 {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<u8>,
}

impl std::fmt::Debug for Image8 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Image8")
            .field("width", &self.width)
            .field("height", &self.height)
            .field("channels", &self.channels)
            .finish_non_exhaustive()
    }
}

impl Image8 {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(invalid(format!("image dimensions must be >= 1, got {width}x{height}")));
        }
        if channels != 1 && channels != 3 {
            return Err(invalid(format!("image must have 1 or 3 channels, got {channels}")));
        }
        let expected = width * height * channels;
        if data.len() != expected {
            return Err(Error::Shape(format!(
                "{width}x{height}x{channels} image needs {expected} samples, got {}",
                data.len()
            )));
        }
        Ok(Self { width, height, channels, data })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: u8) -> Result<Self> {
        Self::new(width, height, channels, vec![value; width * height * channels])
    }

    /// Builds an image by evaluating `f(x, y, channel)` for every sample.
    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> u8,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(x, y, c));
                }
            }
        }
        Self::new(width, height, channels, data)
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

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> u8 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> &[u8] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    /// Replicates a gray image into three channels; RGB images are cloned.
    pub fn to_rgb(&self) -> Image8 {
        if self.channels == 3 {
            return self.clone();
        }
        let data = self.data.iter().flat_map(|&v| [v, v, v]).collect();
        Image8 { width: self.width, height: self.height, channels: 3, data }
    }

    fn with_data(&self, width: usize, height: usize, data: Vec<u8>) -> Image8 {
        debug_assert_eq!(data.len(), width * height * self.channels);
        Image8 { width, height, channels: self.channels, data }
    }

    fn map_samples(&self, f: impl Fn(u8) -> u8) -> Image8 {
        self.with_data(self.width, self.height, self.data.iter().map(|&v| f(v)).collect())
    }
}

/// Rounds half away from zero and clamps to the 8-bit range.
#[inline]
pub fn quantize(v: f64) -> u8 {
    // f64::round rounds half away from zero; NaN saturates to 0 on cast.
    v.round().clamp(0.0, 255.0) as u8
}

pub fn to_grayscale(img: &Image8) -> Result<Image8> {
    if img.channels != 3 {
        return Err(invalid(format!("to_grayscale expects a 3-channel image, got {} channel(s)", img.channels)));
    }
    let data = img
        .data
        .chunks_exact(3)
        .map(|p| quantize(0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64))
        .collect();
    Ok(Image8 { width: img.width, height: img.height, channels: 1, data })
}

/// One output coordinate's contributing source taps.
struct Taps {
    start: usize,
    weights: Vec<f64>,
}

fn check_target(out_w: usize, out_h: usize) -> Result<()> {
    if out_w == 0 || out_h == 0 {
        return Err(invalid(format!("resize target must be >= 1x1, got {out_w}x{out_h}")));
    }
    Ok(())
}

/// Box weights for area averaging along one axis: output cell `o` covers the
/// source interval `[o * n_in / n_out, (o + 1) * n_in / n_out)`.
fn area_taps(n_in: usize, n_out: usize) -> Vec<Taps> {
    let scale = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|o| {
            let lo = o as f64 * scale;
            let hi = (o + 1) as f64 * scale;
            let first = lo.floor() as usize;
            let last = (hi.ceil() as usize).min(n_in).max(first + 1);
            let weights = (first..last)
                .map(|i| {
                    let overlap = hi.min((i + 1) as f64) - lo.max(i as f64);
                    overlap.max(0.0) / scale
                })
                .collect();
            Taps { start: first, weights }
        })
        .collect()
}

/// Catmull-Rom cubic (a = -0.5).
#[inline]
pub fn cubic_kernel(x: f64) -> f64 {
    const A: f64 = -0.5;
    let x = x.abs();
    if x <= 1.0 {
        ((A + 2.0) * x - (A + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((A * x - 5.0 * A) * x + 8.0 * A) * x - 4.0 * A
    } else {
        0.0
    }
}

/// Cubic taps along one axis with pixel-center alignment. When shrinking, the
/// kernel is stretched by the scale factor so it low-passes instead of
/// aliasing. Out-of-range taps clamp to the edge sample.
///
/// The table is mirror-symmetric (the second half reflects the first and an
/// odd middle position gets paired symmetric taps), so together with the
/// pairwise accumulation in [`dot`] resizing commutes exactly with flips.
fn cubic_taps(n_in: usize, n_out: usize) -> Vec<(Vec<usize>, Vec<f64>)> {
    let support_scale = (n_in as f64 / n_out as f64).max(1.0);
    let support = 2.0 * support_scale;
    let last = n_in as i64 - 1;
    let raw = |o: usize| {
        // (o + 0.5) * n_in / n_out - 0.5 with a single rounding.
        let center = ((2 * o + 1) as i64 * n_in as i64 - n_out as i64) as f64 / (2 * n_out) as f64;
        let lo = (center - support).ceil() as i64;
        let hi = (center + support).floor() as i64;
        (lo..=hi)
            .filter_map(|i| {
                let k = cubic_kernel((i as f64 - center) / support_scale);
                (k != 0.0).then_some((i, k))
            })
            .collect::<Vec<_>>()
    };
    let normalize = |idx: Vec<usize>, mut w: Vec<f64>| {
        let sum: f64 = w.iter().sum();
        for v in &mut w {
            *v /= sum;
        }
        (idx, w)
    };
    let mut table = vec![(Vec::new(), Vec::new()); n_out];
    for o in 0..n_out / 2 {
        let (idx, w): (Vec<usize>, Vec<f64>) = raw(o).into_iter().map(|(i, k)| (i.clamp(0, last) as usize, k)).unzip();
        let (idx, w) = normalize(idx, w);
        table[n_out - 1 - o] = (idx.iter().map(|&i| n_in - 1 - i).collect(), w.clone());
        table[o] = (idx, w);
    }
    if n_out % 2 == 1 {
        // The center is exactly (n_in - 1) / 2; build the left half and reflect it.
        let twice_center = last;
        let (mut idx, mut w) = (Vec::new(), Vec::new());
        let mut middle = None;
        for (i, k) in raw(n_out / 2) {
            if 2 * i < twice_center {
                idx.extend([i.clamp(0, last) as usize, (twice_center - i).clamp(0, last) as usize]);
                w.extend([k, k]);
            } else if 2 * i == twice_center {
                middle = Some((i as usize, k));
            }
        }
        if let Some((i, k)) = middle {
            idx.push(i);
            w.push(k);
        }
        table[n_out / 2] = normalize(idx, w);
    }
    table
}

/// Weighted sum accumulated two taps at a time. Floating-point addition is
/// commutative, so a reflected tap pair yields the same bits.
#[inline]
fn dot(idx: &[usize], w: &[f64], sample: impl Fn(usize) -> f64) -> f64 {
    let mut acc = 0.0;
    let mut k = 0;
    while k + 1 < idx.len() {
        acc += w[k] * sample(idx[k]) + w[k + 1] * sample(idx[k + 1]);
        k += 2;
    }
    if k < idx.len() {
        acc += w[k] * sample(idx[k]);
    }
    acc
}

/// Applies separable per-axis weights: horizontal pass into an `f64` buffer,
/// vertical pass, then a single quantization.
fn separable(
    img: &Image8,
    out_w: usize,
    out_h: usize,
    cols: &[(Vec<usize>, Vec<f64>)],
    rows: &[(Vec<usize>, Vec<f64>)],
) -> Image8 {
    let ch = img.channels;
    let mut tmp = vec![0.0f64; out_w * img.height * ch];
    for y in 0..img.height {
        let src = &img.data[y * img.width * ch..(y + 1) * img.width * ch];
        let dst = &mut tmp[y * out_w * ch..(y + 1) * out_w * ch];
        for (ox, (idx, w)) in cols.iter().enumerate() {
            for c in 0..ch {
                dst[ox * ch + c] = dot(idx, w, |i| src[i * ch + c] as f64);
            }
        }
    }
    let mut out = vec![0u8; out_w * out_h * ch];
    let row_len = out_w * ch;
    for (oy, (idx, w)) in rows.iter().enumerate() {
        let dst = &mut out[oy * row_len..(oy + 1) * row_len];
        for (j, d) in dst.iter_mut().enumerate() {
            *d = quantize(dot(idx, w, |i| tmp[i * row_len + j]));
        }
    }
    img.with_data(out_w, out_h, out)
}

fn expand(taps: Vec<Taps>) -> Vec<(Vec<usize>, Vec<f64>)> {
    taps.into_iter().map(|t| ((t.start..t.start + t.weights.len()).collect(), t.weights)).collect()
}

/// Area-weighted box average (general fractional boxes).
pub fn resize_area(img: &Image8, out_w: usize, out_h: usize) -> Result<Image8> {
    check_target(out_w, out_h)?;
    if out_w == img.width && out_h == img.height {
        return Ok(img.clone());
    }
    let cols = expand(area_taps(img.width, out_w));
    let rows = expand(area_taps(img.height, out_h));
    Ok(separable(img, out_w, out_h, &cols, &rows))
}

/// Separable Catmull-Rom resampling with edge clamping.
pub fn resize_cubic(img: &Image8, out_w: usize, out_h: usize) -> Result<Image8> {
    check_target(out_w, out_h)?;
    if out_w == img.width && out_h == img.height {
        return Ok(img.clone());
    }
    let cols = cubic_taps(img.width, out_w);
    let rows = cubic_taps(img.height, out_h);
    Ok(separable(img, out_w, out_h, &cols, &rows))
}

fn check_factor(name: &str, factor: f64) -> Result<()> {
    if !(factor > 0.0 && factor.is_finite()) {
        return Err(invalid(format!("{name} factor must be positive and finite, got {factor}")));
    }
    Ok(())
}

pub fn adjust_brightness(img: &Image8, factor: f64) -> Result<Image8> {
    check_factor("brightness", factor)?;
    Ok(brightness_unchecked(img, factor))
}

pub(crate) fn brightness_unchecked(img: &Image8, factor: f64) -> Image8 {
    if factor == 1.0 {
        return img.clone();
    }
    let lut: Vec<u8> = (0..=255u8).map(|v| quantize(v as f64 * factor)).collect();
    img.map_samples(|v| lut[v as usize])
}

/// Contrast around the mid-gray pivot 127.5.
pub fn adjust_contrast(img: &Image8, factor: f64) -> Result<Image8> {
    check_factor("contrast", factor)?;
    Ok(contrast_unchecked(img, factor))
}

pub(crate) fn contrast_unchecked(img: &Image8, factor: f64) -> Image8 {
    if factor == 1.0 {
        return img.clone();
    }
    let lut: Vec<u8> = (0..=255u8).map(|v| quantize((v as f64 - 127.5) * factor + 127.5)).collect();
    img.map_samples(|v| lut[v as usize])
}

/// Transfer table of the levels remap. A degenerate range (`high <= low`)
/// is widened to `low + 1`.
pub fn levels_lut(norm_low: u8, norm_high: u8) -> [u8; 256] {
    let low = norm_low as f64;
    let high = if norm_high <= norm_low { low + 1.0 } else { norm_high as f64 };
    let mut lut = [0u8; 256];
    for (v, out) in lut.iter_mut().enumerate() {
        *out = quantize((v as f64 - low) * 255.0 / (high - low));
    }
    lut
}

pub fn apply_levels(img: &Image8, norm_low: u8, norm_high: u8) -> Image8 {
    if norm_low == 0 && norm_high == 255 {
        return img.clone();
    }
    let lut = levels_lut(norm_low, norm_high);
    img.map_samples(|v| lut[v as usize])
}

pub fn crop(img: &Image8, x: usize, y: usize, w: usize, h: usize) -> Result<Image8> {
    if w == 0 || h == 0 || x + w > img.width || y + h > img.height {
        return Err(invalid(format!("crop {w}x{h} at ({x},{y}) is outside the {}x{} image", img.width, img.height)));
    }
    let ch = img.channels;
    let mut data = Vec::with_capacity(w * h * ch);
    for row in y..y + h {
        let start = (row * img.width + x) * ch;
        data.extend_from_slice(&img.data[start..start + w * ch]);
    }
    Ok(img.with_data(w, h, data))
}

pub fn flip(img: &Image8, horizontal: bool, vertical: bool) -> Image8 {
    if !horizontal && !vertical {
        return img.clone();
    }
    let (w, h) = (img.width, img.height);
    let mut data = Vec::with_capacity(img.data.len());
    for y in 0..h {
        let sy = if vertical { h - 1 - y } else { y };
        for x in 0..w {
            let sx = if horizontal { w - 1 - x } else { x };
            data.extend_from_slice(img.pixel(sx, sy));
        }
    }
    img.with_data(w, h, data)
}

/// Places images left to right, top-aligned, on a black canvas. Gray images
/// are promoted to RGB.
pub fn hconcat(images: &[&Image8]) -> Result<Image8> {
    if images.is_empty() {
        return Err(invalid("hconcat needs at least one image"));
    }
    let width: usize = images.iter().map(|i| i.width).sum();
    let height = images.iter().map(|i| i.height).max().unwrap_or(1);
    let mut data = vec![0u8; width * height * 3];
    let mut x0 = 0;
    for img in images {
        let rgb = img.to_rgb();
        for y in 0..rgb.height {
            let src = &rgb.data[y * rgb.width * 3..(y + 1) * rgb.width * 3];
            let dst = (y * width + x0) * 3;
            data[dst..dst + src.len()].copy_from_slice(src);
        }
        x0 += rgb.width;
    }
    Image8::new(width, height, 3, data)
}

/// Stacks images top to bottom, left-aligned, on a black canvas.
pub fn vconcat(images: &[&Image8]) -> Result<Image8> {
    if images.is_empty() {
        return Err(invalid("vconcat needs at least one image"));
    }
    let width = images.iter().map(|i| i.width).max().unwrap_or(1);
    let height: usize = images.iter().map(|i| i.height).sum();
    let mut data = vec![0u8; width * height * 3];
    let mut y0 = 0;
    for img in images {
        let rgb = img.to_rgb();
        for y in 0..rgb.height {
            let src = &rgb.data[y * rgb.width * 3..(y + 1) * rgb.width * 3];
            let dst = ((y0 + y) * width) * 3;
            data[dst..dst + src.len()].copy_from_slice(src);
        }
        y0 += rgb.height;
    }
    Image8::new(width, height, 3, data)
}
