//! Preprocessing checks shared with the acceptance runner.

use std::collections::HashSet;

use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use visinst::imaging::{self, Image8};
use visinst::preprocess::{self, LiveParams, PreprocessConfig, PreprocessParams};
use visinst::synth;

pub type Outcome = Result<(), String>;

fn runner(cases: u32) -> TestRunner {
    TestRunner::new(Config { cases, failure_persistence: None, ..Config::default() })
}

/// `draws` samples from the default config stay inside the configured
/// ranges, and the brightness mean is centered.
pub fn ranges(draws: usize, seed: u64) -> Outcome {
    let cfg = PreprocessConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut violations = Vec::new();
    let mut sum_b = 0.0;
    let mut flips_h = 0;
    for i in 0..draws {
        let p = preprocess::sample_params(&cfg, &mut rng);
        let ok = (1.0..=1.3).contains(&p.scale)
            && (0.8..=1.2).contains(&p.brightness)
            && (0.85..=1.15).contains(&p.contrast)
            && (0.0..1.0).contains(&p.crop_x)
            && (0.0..1.0).contains(&p.crop_y)
            && !p.flip_v;
        if !ok {
            violations.push(format!("draw {i}: {p:?}"));
        }
        sum_b += p.brightness;
        flips_h += p.flip_h as usize;
    }
    if !violations.is_empty() {
        return Err(format!("{} violation(s), first {}", violations.len(), violations[0]));
    }
    let mean = sum_b / draws as f64;
    if (mean - 1.0).abs() > 0.01 {
        return Err(format!("brightness mean {mean}"));
    }
    let share = flips_h as f64 / draws as f64;
    if !(0.4..0.6).contains(&share) {
        return Err(format!("horizontal flip share {share}"));
    }
    Ok(())
}

fn key(p: &PreprocessParams) -> [u64; 7] {
    [
        p.scale.to_bits(),
        p.crop_x.to_bits(),
        p.crop_y.to_bits(),
        p.flip_h as u64,
        p.flip_v as u64,
        p.brightness.to_bits(),
        p.contrast.to_bits(),
    ]
}

/// No two of `draws` consecutive draws are identical.
pub fn uniqueness(draws: usize, seed: u64) -> Outcome {
    let cfg = PreprocessConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = HashSet::new();
    for i in 0..draws {
        if !seen.insert(key(&preprocess::sample_params(&cfg, &mut rng))) {
            return Err(format!("draw {i} repeats an earlier draw"));
        }
    }
    Ok(())
}

/// Every pixel offset in `0..=max` is reachable and nothing beyond it.
pub fn crop_mapping() -> Outcome {
    for max in [0usize, 1, 7, 38, 255] {
        let mut hit = vec![false; max + 1];
        for k in 0..=(4 * (max + 1)) {
            let u = k as f64 / (4 * (max + 1) + 1) as f64;
            let o = preprocess::crop_origin(u, max);
            if o > max {
                return Err(format!("u={u} maps to {o} > {max}"));
            }
            hit[o] = true;
        }
        if preprocess::crop_origin(1.0 - f64::EPSILON, max) != max {
            return Err(format!("u -> 1 does not reach {max}"));
        }
        if hit.iter().any(|h| !h) {
            return Err(format!("some offsets in 0..={max} unreachable"));
        }
    }
    Ok(())
}

fn pearson(a: &[u8], b: &[u8]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().map(|&v| v as f64).sum::<f64>() / n;
    let mb = b.iter().map(|&v| v as f64).sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let (dx, dy) = (x as f64 - ma, y as f64 - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    sab / (saa * sbb).sqrt()
}

/// A target of `w x h`: blob scene cropped out of a larger square.
fn target_image(w: usize, h: usize, seed: u64) -> Image8 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scene = synth::blob_image(w.max(h), &mut rng);
    imaging::crop(&scene, 0, 0, w, h).unwrap()
}

#[derive(Debug, Clone)]
struct PairCase {
    s: usize,
    w: usize,
    h: usize,
    seed: u64,
    params: PreprocessParams,
}

fn pair_strategy() -> impl Strategy<Value = PairCase> {
    (prop_oneof![Just(32usize), Just(64), Just(96)], 0..48usize, 0..48usize, any::<u64>())
        .prop_flat_map(|(s, dw, dh, seed)| {
            (
                Just((s, s + dw, s + dh, seed)),
                1.0..=1.3f64,
                0.0..1.0f64,
                0.0..1.0f64,
                any::<bool>(),
                any::<bool>(),
                0.8..=1.2f64,
                0.85..=1.15f64,
            )
        })
        .prop_map(|((s, w, h, seed), scale, crop_x, crop_y, flip_h, flip_v, brightness, contrast)| PairCase {
            s,
            w,
            h,
            seed,
            params: PreprocessParams { scale, crop_x, crop_y, flip_h, flip_v, brightness, contrast },
        })
}

/// Shape contract, purity, and structure preservation: with identity
/// brightness/contrast, the input and the gray target crop, both brought down
/// to the low-res size, correlate at >= `min_corr`.
pub fn pair_properties(cases: u32, min_corr: f64) -> Outcome {
    runner(cases)
        .run(&pair_strategy(), |k| {
            let cfg = PreprocessConfig { desired_size: k.s, ..PreprocessConfig::default() };
            let target = target_image(k.w, k.h, k.seed);
            let pair = preprocess::make_pair(&target, &cfg, &k.params).unwrap();
            prop_assert_eq!(&pair, &preprocess::make_pair(&target, &cfg, &k.params).unwrap());
            prop_assert_eq!((pair.input.width(), pair.input.height(), pair.input.channels()), (k.s, k.s, 1));
            prop_assert_eq!((pair.target.width(), pair.target.height(), pair.target.channels()), (k.s, k.s, 3));

            let plain = PreprocessParams { brightness: 1.0, contrast: 1.0, ..k.params.clone() };
            let pair = preprocess::make_pair(&target, &cfg, &plain).unwrap();
            let low = cfg.low_res_size();
            let a = imaging::resize_area(&pair.input, low, low).unwrap();
            let gray = imaging::to_grayscale(&pair.target).unwrap();
            let b = imaging::resize_area(&gray, low, low).unwrap();
            let spread = |img: &Image8| {
                let d = img.data();
                d.iter().max().unwrap() - d.iter().min().unwrap()
            };
            if spread(&a) > 1 && spread(&b) > 1 {
                let r = pearson(a.data(), b.data());
                prop_assert!(r >= min_corr, "correlation {} at S={}", r, k.s);
            } else {
                let diff = a.data().iter().zip(b.data()).map(|(x, y)| x.abs_diff(*y)).max().unwrap();
                prop_assert!(diff <= 2, "flat low-res images differ by {}", diff);
            }
            Ok(())
        })
        .map_err(|e| e.to_string())
}

/// Offset that selects the mirrored crop position.
fn mirrored(u: f64, max: usize) -> f64 {
    let o = preprocess::crop_origin(u, max);
    ((max - o) as f64 + 0.5) / (max + 1) as f64
}

/// Flipping the target up front with flips off gives the same pair as
/// flipping inside `make_pair`.
pub fn flip_commutation(cases: u32) -> Outcome {
    runner(cases)
        .run(&pair_strategy(), |k| {
            let cfg = PreprocessConfig { desired_size: k.s, ..PreprocessConfig::default() };
            let target = target_image(k.w, k.h, k.seed);
            let p = &k.params;
            let inside = preprocess::make_pair(&target, &cfg, p).unwrap();

            let short = ((k.s as f64 * p.scale).round() as usize).max(k.s);
            let (w, h) = preprocess::fit_short_side(k.w, k.h, short);
            let pre = PreprocessParams {
                flip_h: false,
                flip_v: false,
                crop_x: if p.flip_h { mirrored(p.crop_x, w - k.s) } else { p.crop_x },
                crop_y: if p.flip_v { mirrored(p.crop_y, h - k.s) } else { p.crop_y },
                ..p.clone()
            };
            let flipped = imaging::flip(&target, p.flip_h, p.flip_v);
            let outside = preprocess::make_pair(&flipped, &cfg, &pre).unwrap();
            prop_assert_eq!(&inside.target, &outside.target);
            prop_assert_eq!(&inside.input, &outside.input);
            Ok(())
        })
        .map_err(|e| e.to_string())
}

/// Constants survive the whole chain and the live path.
pub fn constants() -> Outcome {
    for v in [0u8, 37, 128, 255] {
        let target = Image8::filled(150, 130, 3, v).unwrap();
        let cfg = PreprocessConfig { desired_size: 96, ..PreprocessConfig::default() };
        if cfg.low_res_size() != 4 {
            return Err(format!("low-res size {} for S=96", cfg.low_res_size()));
        }
        let p =
            PreprocessParams { scale: 1.17, crop_x: 0.3, crop_y: 0.9, flip_h: true, ..PreprocessParams::identity() };
        let pair = preprocess::make_pair(&target, &cfg, &p).map_err(|e| e.to_string())?;
        if pair.target != Image8::filled(96, 96, 3, v).unwrap() || pair.input != Image8::filled(96, 96, 1, v).unwrap() {
            return Err(format!("constant {v} not preserved by make_pair"));
        }
        let live = preprocess::apply_live(&target, &cfg, &LiveParams::default());
        if live != Image8::filled(96, 96, 1, v).unwrap() {
            return Err(format!("constant {v} not preserved by apply_live"));
        }
    }
    Ok(())
}

/// `apply_live` is pure, and lowering `norm_high` never darkens a pixel.
pub fn live_properties(cases: u32) -> Outcome {
    let strategy = (any::<u64>(), 20..90usize, 20..90usize, 1..=255u8, 0.5..2.0f64, 0.5..2.0f64);
    runner(cases)
        .run(&strategy, |(seed, w, h, high, b, c)| {
            let frame = target_image(w, h, seed);
            let cfg = PreprocessConfig { desired_size: 32, ..PreprocessConfig::default() };
            let base = LiveParams { brightness: b, contrast: c, ..LiveParams::default() };
            let lowered = LiveParams { norm_high: high, ..base };
            let out = preprocess::apply_live(&frame, &cfg, &lowered);
            prop_assert_eq!(&out, &preprocess::apply_live(&frame, &cfg, &lowered));
            prop_assert_eq!((out.width(), out.height(), out.channels()), (32, 32, 1));
            let reference = preprocess::apply_live(&frame, &cfg, &base);
            prop_assert!(out.data().iter().zip(reference.data()).all(|(a, r)| a >= r));
            Ok(())
        })
        .map_err(|e| e.to_string())
}
