//! Imaging kernel checks: the documented examples (bit-exact) and randomized
//! properties against brute-force oracles. Shared with the acceptance runner,
//! which calls the property runs with a larger case count.

use proptest::prelude::*;
use proptest::test_runner::{Config, TestCaseError, TestRunner};
use visinst::imaging::{self, Image8};

pub type Outcome = Result<(), String>;

fn gray(w: usize, h: usize, data: &[u8]) -> Image8 {
    Image8::new(w, h, 1, data.to_vec()).unwrap()
}

fn ensure(cond: bool, what: &str) -> Outcome {
    if cond {
        Ok(())
    } else {
        Err(what.to_string())
    }
}

/// The per-operation examples, all bit-exact.
pub fn examples() -> Outcome {
    let px = |rgb: [u8; 3]| imaging::to_grayscale(&Image8::new(1, 1, 3, rgb.to_vec()).unwrap()).unwrap().data()[0];
    ensure(px([255, 255, 255]) == 255, "gray(white) = 255")?;
    ensure(px([0, 0, 0]) == 0, "gray(black) = 0")?;
    ensure(px([255, 0, 0]) == 76, "gray(red) = 76")?;
    ensure(imaging::to_grayscale(&gray(1, 1, &[3])).is_err(), "gray rejects 1-channel")?;

    let checker = gray(2, 2, &[0, 255, 255, 0]);
    ensure(imaging::resize_area(&checker, 1, 1).unwrap().data() == [128], "area 2x2 checker -> 128")?;
    for (w, h) in [(1, 1), (3, 7), (13, 2), (40, 40)] {
        let c = Image8::filled(9, 5, 3, 77).unwrap();
        ensure(imaging::resize_area(&c, w, h).unwrap() == Image8::filled(w, h, 3, 77).unwrap(), "area constant")?;
        ensure(imaging::resize_cubic(&c, w, h).unwrap() == Image8::filled(w, h, 3, 77).unwrap(), "cubic constant")?;
    }
    let ramp = Image8::from_fn(6, 4, 3, |x, y, c| (x * 40 + y * 9 + c) as u8).unwrap();
    ensure(imaging::resize_area(&ramp, 6, 4).unwrap() == ramp, "area same dims")?;
    ensure(imaging::resize_cubic(&ramp, 6, 4).unwrap() == ramp, "cubic same dims")?;
    ensure(imaging::resize_area(&ramp, 0, 4).is_err(), "area zero width")?;
    ensure(imaging::resize_cubic(&ramp, 4, 0).is_err(), "cubic zero height")?;
    let up = imaging::resize_cubic(&gray(1, 1, &[201]), 4, 4).unwrap();
    ensure(up == gray(4, 4, &[201; 16]), "cubic 1x1 -> 4x4 constant")?;
    ensure(up == cubic_oracle_image(&gray(1, 1, &[201]), 4, 4), "cubic 1x1 brute force")?;

    ensure(imaging::adjust_brightness(&ramp, 1.0).unwrap() == ramp, "brightness 1.0")?;
    let b = imaging::adjust_brightness(&gray(2, 1, &[128, 255]), 1.2).unwrap();
    ensure(b.data() == [154, 255], "brightness 1.2")?;
    ensure(imaging::adjust_brightness(&ramp, 0.0).is_err(), "brightness 0 rejected")?;
    ensure(imaging::adjust_brightness(&ramp, -1.0).is_err(), "brightness < 0 rejected")?;

    ensure(imaging::adjust_contrast(&ramp, 1.0).unwrap() == ramp, "contrast 1.0")?;
    ensure(imaging::adjust_contrast(&gray(1, 1, &[0]), 1.15).unwrap().data() == [0], "contrast 0 at 1.15")?;
    ensure(imaging::adjust_contrast(&ramp, 0.0).is_err(), "contrast 0 rejected")?;

    ensure(imaging::apply_levels(&ramp, 0, 255) == ramp, "levels identity")?;
    let l = imaging::apply_levels(&gray(3, 1, &[40, 200, 128]), 40, 200);
    ensure(l.data()[..2] == [0, 255], "levels endpoints")?;
    ensure(imaging::apply_levels(&gray(1, 1, &[128]), 0, 128).data() == [255], "levels 128 at (0,128)")?;

    ensure(imaging::crop(&ramp, 0, 0, 6, 4).unwrap() == ramp, "full crop")?;
    ensure(imaging::crop(&ramp, 0, 0, 1, 1).unwrap().data() == ramp.pixel(0, 0), "1x1 crop")?;
    let cc = imaging::crop(&imaging::crop(&ramp, 1, 1, 4, 3).unwrap(), 2, 1, 2, 2).unwrap();
    ensure(cc == imaging::crop(&ramp, 3, 2, 2, 2).unwrap(), "crop of crop")?;
    ensure(imaging::crop(&ramp, 5, 0, 2, 1).is_err(), "crop out of bounds")?;

    ensure(imaging::flip(&ramp, false, false) == ramp, "flip none")?;
    for (h, v) in [(true, false), (false, true), (true, true)] {
        ensure(imaging::flip(&imaging::flip(&ramp, h, v), h, v) == ramp, "flip involution")?;
    }
    ensure(imaging::flip(&gray(2, 1, &[1, 2]), true, false).data() == [2, 1], "flip [A,B]")?;
    Ok(())
}

fn oracle_round(v: f64) -> f64 {
    v.clamp(0.0, 255.0)
}

/// Quantized value `q` is the correct rounding of exact value `v`, allowing
/// only floating-point noise at half-way ties.
fn rounds_to(q: u8, v: f64) -> bool {
    (q as f64 - oracle_round(v)).abs() <= 0.5 + 1e-9
}

/// Brute-force fractional box average of one output sample.
fn area_oracle(img: &Image8, out_w: usize, out_h: usize, ox: usize, oy: usize, c: usize) -> f64 {
    let sx = img.width() as f64 / out_w as f64;
    let sy = img.height() as f64 / out_h as f64;
    let (x0, x1) = (ox as f64 * sx, (ox + 1) as f64 * sx);
    let (y0, y1) = (oy as f64 * sy, (oy + 1) as f64 * sy);
    let mut acc = 0.0;
    for y in 0..img.height() {
        let wy = (y1.min(y as f64 + 1.0) - y0.max(y as f64)).max(0.0);
        if wy == 0.0 {
            continue;
        }
        for x in 0..img.width() {
            let wx = (x1.min(x as f64 + 1.0) - x0.max(x as f64)).max(0.0);
            acc += wx * wy * img.get(x, y, c) as f64;
        }
    }
    acc / (sx * sy)
}

fn catmull_rom(x: f64) -> f64 {
    let x = x.abs();
    if x < 1.0 {
        1.5 * x * x * x - 2.5 * x * x + 1.0
    } else if x < 2.0 {
        -0.5 * x * x * x + 2.5 * x * x - 4.0 * x + 2.0
    } else {
        0.0
    }
}

/// Normalized per-axis weights over clamped source indices. When shrinking,
/// the kernel is widened by the scale factor.
fn cubic_axis(n_in: usize, n_out: usize, o: usize) -> Vec<(usize, f64)> {
    let scale = n_in as f64 / n_out as f64;
    let widen = scale.max(1.0);
    let center = (o as f64 + 0.5) * scale - 0.5;
    let reach = (2.0 * widen).ceil() as i64 + 1;
    let mut taps = Vec::new();
    for i in (center.floor() as i64 - reach)..=(center.floor() as i64 + reach) {
        let w = catmull_rom((i as f64 - center) / widen);
        if w != 0.0 {
            taps.push((i.clamp(0, n_in as i64 - 1) as usize, w));
        }
    }
    let sum: f64 = taps.iter().map(|t| t.1).sum();
    taps.iter().map(|&(i, w)| (i, w / sum)).collect()
}

/// Direct two-dimensional kernel sum of one output sample.
fn cubic_oracle(img: &Image8, out_w: usize, out_h: usize, ox: usize, oy: usize, c: usize) -> f64 {
    let xs = cubic_axis(img.width(), out_w, ox);
    let ys = cubic_axis(img.height(), out_h, oy);
    let mut acc = 0.0;
    for &(y, wy) in &ys {
        for &(x, wx) in &xs {
            acc += wx * wy * img.get(x, y, c) as f64;
        }
    }
    acc
}

fn cubic_oracle_image(img: &Image8, out_w: usize, out_h: usize) -> Image8 {
    Image8::from_fn(out_w, out_h, img.channels(), |x, y, c| imaging::quantize(cubic_oracle(img, out_w, out_h, x, y, c)))
        .unwrap()
}

fn image_strategy(max_side: usize) -> impl Strategy<Value = Image8> {
    (1..=max_side, 1..=max_side, prop_oneof![Just(1usize), Just(3usize)]).prop_flat_map(|(w, h, c)| {
        proptest::collection::vec(any::<u8>(), w * h * c).prop_map(move |d| Image8::new(w, h, c, d).unwrap())
    })
}

fn runner(cases: u32) -> TestRunner {
    TestRunner::new(Config { cases, failure_persistence: None, ..Config::default() })
}

fn check_shape(out: &Image8, w: usize, h: usize, c: usize) -> Result<(), TestCaseError> {
    prop_assert_eq!((out.width(), out.height(), out.channels()), (w, h, c));
    prop_assert_eq!(out.data().len(), w * h * c);
    Ok(())
}

#[derive(Debug, Clone)]
struct Case {
    img: Image8,
    out_w: usize,
    out_h: usize,
    brightness: f64,
    contrast: f64,
    low: u8,
    high: u8,
    rect: (f64, f64, f64, f64),
    flips: (bool, bool),
}

fn case_strategy() -> impl Strategy<Value = Case> {
    (
        image_strategy(9),
        1..=14usize,
        1..=14usize,
        0.01..4.0f64,
        0.01..4.0f64,
        any::<u8>(),
        any::<u8>(),
        (0.0..1.0f64, 0.0..1.0f64, 0.0..1.0f64, 0.0..1.0f64),
        (any::<bool>(), any::<bool>()),
    )
        .prop_map(|(img, out_w, out_h, brightness, contrast, low, high, rect, flips)| Case {
            img,
            out_w,
            out_h,
            brightness,
            contrast,
            low,
            high,
            rect,
            flips,
        })
}

/// Purity, shape and range of every operation on random inputs, with each
/// output sample checked against an independent per-sample oracle.
pub fn properties(cases: u32) -> Outcome {
    runner(cases)
        .run(&case_strategy(), |k| {
            let img = &k.img;
            let (w, h, ch) = (img.width(), img.height(), img.channels());

            if ch == 3 {
                let g = imaging::to_grayscale(img).unwrap();
                prop_assert_eq!(&g, &imaging::to_grayscale(img).unwrap());
                check_shape(&g, w, h, 1)?;
                for y in 0..h {
                    for x in 0..w {
                        let p = img.pixel(x, y);
                        let v = 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64;
                        prop_assert!(rounds_to(g.get(x, y, 0), v));
                    }
                }
            } else {
                prop_assert!(imaging::to_grayscale(img).is_err());
            }

            let area = imaging::resize_area(img, k.out_w, k.out_h).unwrap();
            prop_assert_eq!(&area, &imaging::resize_area(img, k.out_w, k.out_h).unwrap());
            check_shape(&area, k.out_w, k.out_h, ch)?;
            let cubic = imaging::resize_cubic(img, k.out_w, k.out_h).unwrap();
            prop_assert_eq!(&cubic, &imaging::resize_cubic(img, k.out_w, k.out_h).unwrap());
            check_shape(&cubic, k.out_w, k.out_h, ch)?;
            for c in 0..ch {
                let (lo, hi) = (0..h)
                    .flat_map(|y| (0..w).map(move |x| (x, y)))
                    .map(|(x, y)| img.get(x, y, c))
                    .fold((255u8, 0u8), |(a, b), v| (a.min(v), b.max(v)));
                for y in 0..k.out_h {
                    for x in 0..k.out_w {
                        let a = area.get(x, y, c);
                        prop_assert!(rounds_to(a, area_oracle(img, k.out_w, k.out_h, x, y, c)));
                        prop_assert!(lo <= a && a <= hi, "area output outside the input range");
                        let q = cubic.get(x, y, c);
                        prop_assert!(rounds_to(q, cubic_oracle(img, k.out_w, k.out_h, x, y, c)));
                    }
                }
            }

            let b = imaging::adjust_brightness(img, k.brightness).unwrap();
            let ct = imaging::adjust_contrast(img, k.contrast).unwrap();
            let lv = imaging::apply_levels(img, k.low, k.high);
            prop_assert_eq!(&b, &imaging::adjust_brightness(img, k.brightness).unwrap());
            prop_assert_eq!(&ct, &imaging::adjust_contrast(img, k.contrast).unwrap());
            prop_assert_eq!(&lv, &imaging::apply_levels(img, k.low, k.high));
            for out in [&b, &ct, &lv] {
                check_shape(out, w, h, ch)?;
            }
            let high = if k.high <= k.low { k.low as f64 + 1.0 } else { k.high as f64 };
            for (i, &v) in img.data().iter().enumerate() {
                let v = v as f64;
                prop_assert!(rounds_to(b.data()[i], v * k.brightness));
                prop_assert!(rounds_to(ct.data()[i], (v - 127.5) * k.contrast + 127.5));
                prop_assert!(rounds_to(lv.data()[i], (v - k.low as f64) * 255.0 / (high - k.low as f64)));
            }

            let (fx, fy, fw, fh) = k.rect;
            let cw = 1 + (fw * w as f64) as usize % w;
            let chh = 1 + (fh * h as f64) as usize % h;
            let cx = (fx * (w - cw + 1) as f64) as usize;
            let cy = (fy * (h - chh + 1) as f64) as usize;
            let cr = imaging::crop(img, cx, cy, cw, chh).unwrap();
            check_shape(&cr, cw, chh, ch)?;
            for y in 0..chh {
                for x in 0..cw {
                    prop_assert_eq!(cr.pixel(x, y), img.pixel(cx + x, cy + y));
                }
            }
            let inner = imaging::crop(&cr, cw / 2, chh / 2, cw - cw / 2, chh - chh / 2).unwrap();
            prop_assert_eq!(inner, imaging::crop(img, cx + cw / 2, cy + chh / 2, cw - cw / 2, chh - chh / 2).unwrap());
            prop_assert!(imaging::crop(img, cx, cy, w - cx + 1, 1).is_err());

            let (fh_, fv) = k.flips;
            let f = imaging::flip(img, fh_, fv);
            check_shape(&f, w, h, ch)?;
            prop_assert_eq!(&imaging::flip(&f, fh_, fv), img);
            prop_assert_eq!(imaging::resize_cubic(&f, k.out_w, k.out_h).unwrap(), imaging::flip(&cubic, fh_, fv));
            for y in 0..h {
                for x in 0..w {
                    let sx = if fh_ { w - 1 - x } else { x };
                    let sy = if fv { h - 1 - y } else { y };
                    prop_assert_eq!(f.pixel(x, y), img.pixel(sx, sy));
                }
            }
            Ok(())
        })
        .map_err(|e| e.to_string())
}

/// The four parameter values that must leave any image untouched, and the
/// constant-image behaviour of both resamplers.
pub fn identities(cases: u32) -> Outcome {
    let strategy = (image_strategy(12), any::<u8>(), 1..=20usize, 1..=20usize);
    runner(cases)
        .run(&strategy, |(img, v, w, h)| {
            prop_assert_eq!(&imaging::adjust_contrast(&img, 1.0).unwrap(), &img);
            prop_assert_eq!(&imaging::adjust_brightness(&img, 1.0).unwrap(), &img);
            prop_assert_eq!(&imaging::apply_levels(&img, 0, 255), &img);
            prop_assert_eq!(&imaging::flip(&img, false, false), &img);
            prop_assert_eq!(&imaging::resize_area(&img, img.width(), img.height()).unwrap(), &img);
            prop_assert_eq!(&imaging::resize_cubic(&img, img.width(), img.height()).unwrap(), &img);

            let ch = img.channels();
            let c = Image8::filled(img.width(), img.height(), ch, v).unwrap();
            let target = Image8::filled(w, h, ch, v).unwrap();
            let once = imaging::resize_area(&c, w, h).unwrap();
            prop_assert_eq!(&once, &target);
            prop_assert_eq!(&imaging::resize_area(&once, w, h).unwrap(), &target);
            prop_assert_eq!(&imaging::resize_cubic(&c, w, h).unwrap(), &target);

            for f in [0.5, 0.85, 1.15, 2.0, 3.9] {
                let mid = Image8::new(2, 1, 1, vec![127, 128]).unwrap();
                let out = imaging::adjust_contrast(&mid, f).unwrap();
                prop_assert!(out.data()[0].abs_diff(127) <= 1 && out.data()[1].abs_diff(128) <= 1);
            }
            Ok(())
        })
        .map_err(|e| e.to_string())
}

/// Levels: identity at (0, 255), endpoints to 0/255, monotone in the input
/// for every (low, high) pair, and brighter (pointwise) as `high` drops.
pub fn levels() -> Outcome {
    let all = Image8::from_fn(256, 1, 1, |x, _, _| x as u8).unwrap();
    ensure(imaging::apply_levels(&all, 0, 255) == all, "levels(0,255) identity")?;
    for low in 0..=255u8 {
        for high in 0..=255u8 {
            let lut = imaging::levels_lut(low, high);
            let out = imaging::apply_levels(&all, low, high);
            if out.data() != lut {
                return Err(format!("apply_levels disagrees with its table at ({low},{high})"));
            }
            if lut.windows(2).any(|p| p[0] > p[1]) {
                return Err(format!("levels({low},{high}) not monotone"));
            }
            if lut[low as usize] != 0 {
                return Err(format!("levels({low},{high}): low maps to {}", lut[low as usize]));
            }
            let eff_high = if high <= low { low as usize + 1 } else { high as usize };
            if eff_high <= 255 && lut[eff_high] != 255 {
                return Err(format!("levels({low},{high}): high maps to {}", lut[eff_high]));
            }
            if high > low && high < 255 {
                let wider = imaging::levels_lut(low, high + 1);
                if lut.iter().zip(&wider).any(|(a, b)| a < b) {
                    return Err(format!("lowering high below {} darkened a sample", high + 1));
                }
            }
        }
    }
    Ok(())
}
