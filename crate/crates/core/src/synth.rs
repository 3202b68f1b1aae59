//! Procedural test corpus: soft gradient backgrounds with blurry blobs of a
//! random hue. Used by tests and demos so nothing depends on external data.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::codec;
use crate::error::Result;
use crate::imaging::Image8;

/// HSV in `[0, 1]` to RGB in `[0, 1]`.
fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h = h.rem_euclid(1.0) * 6.0;
    let i = h.floor();
    let f = h - i;
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match i as u32 {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

struct Blob {
    cx: f64,
    cy: f64,
    radius: f64,
    color: [f64; 3],
    strength: f64,
}

pub fn blob_image(size: usize, rng: &mut impl Rng) -> Image8 {
    let s = size as f64;
    let hue = rng.random::<f64>();
    let top = hsv_to_rgb(hue, rng.random_range(0.4..0.9), rng.random_range(0.05..0.3));
    let bottom =
        hsv_to_rgb(hue + rng.random_range(-0.08..0.08), rng.random_range(0.4..0.9), rng.random_range(0.2..0.5));
    let n = rng.random_range(3..7);
    let blobs: Vec<Blob> = (0..n)
        .map(|_| Blob {
            cx: rng.random_range(0.0..s),
            cy: rng.random_range(0.0..s),
            radius: rng.random_range(s / 12.0..s / 4.0),
            color: hsv_to_rgb(
                hue + rng.random_range(-0.1..0.1),
                rng.random_range(0.2..0.8),
                rng.random_range(0.6..1.0),
            ),
            strength: rng.random_range(0.5..1.0),
        })
        .collect();
    Image8::from_fn(size, size, 3, |x, y, c| {
        let t = y as f64 / (s - 1.0).max(1.0);
        let mut v = top[c] * (1.0 - t) + bottom[c] * t;
        for b in &blobs {
            let d2 = (x as f64 - b.cx).powi(2) + (y as f64 - b.cy).powi(2);
            let a = b.strength * (-d2 / (2.0 * b.radius * b.radius)).exp();
            v = v * (1.0 - a) + b.color[c] * a;
        }
        (v * 255.0).round().clamp(0.0, 255.0) as u8
    })
    .expect("valid dimensions")
}

/// Writes `count` images named `synth_0000.png`, ... into `dir`.
pub fn write_corpus(dir: impl AsRef<Path>, count: usize, size: usize, seed: u64) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let path = dir.join(format!("synth_{i:04}.png"));
            codec::write_png(&path, &blob_image(size, &mut rng))?;
            Ok(path)
        })
        .collect()
}
