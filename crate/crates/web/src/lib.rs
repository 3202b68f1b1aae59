//! WebAssembly bindings for the browser demo: the live input path under
//! performer parameters, randomized training-pair synthesis, and the levels
//! transfer curve. No model weights are shipped to the page.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use visinst::imaging::{self, Image8};
use visinst::preprocess::{self, LiveParams, PreprocessConfig, PreprocessParams};
use visinst::synth;
use wasm_bindgen::prelude::*;

/// RGBA bytes for a canvas `ImageData`.
pub fn to_rgba(img: &Image8) -> Vec<u8> {
    let rgb = img.to_rgb();
    rgb.data().chunks_exact(3).flat_map(|p| [p[0], p[1], p[2], 255]).collect()
}

fn js_err(e: visinst::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// A synthetic "camera" frame standing in for live input.
#[wasm_bindgen]
pub struct Scene {
    frame: Image8,
}

#[wasm_bindgen]
impl Scene {
    /// 4:3 frame of soft colored blobs, `width` pixels wide.
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32, width: usize) -> Result<Scene, JsError> {
        let width = width.max(8);
        let height = width * 3 / 4;
        let blobs = synth::blob_image(width, &mut ChaCha8Rng::seed_from_u64(seed as u64));
        let frame = imaging::crop(&blobs, 0, (width - height) / 2, width, height).map_err(js_err)?;
        Ok(Scene { frame })
    }

    pub fn width(&self) -> usize {
        self.frame.width()
    }

    pub fn height(&self) -> usize {
        self.frame.height()
    }

    pub fn frame_rgba(&self) -> Vec<u8> {
        to_rgba(&self.frame)
    }

    /// The network input the instrument would feed the model for this frame,
    /// as a `size`² RGBA image.
    pub fn live_input(
        &self,
        size: usize,
        norm_low: u8,
        norm_high: u8,
        brightness: f64,
        contrast: f64,
    ) -> Result<Vec<u8>, JsError> {
        let config = PreprocessConfig { desired_size: size, ..PreprocessConfig::default() };
        config.validate().map_err(js_err)?;
        let live = LiveParams { norm_low, norm_high, brightness, contrast };
        Ok(to_rgba(&preprocess::apply_live(&self.frame, &config, &live)))
    }

    /// A randomly parameterized training pair drawn from this frame.
    pub fn sample_pair(&self, size: usize, seed: u32) -> Result<SampledPair, JsError> {
        let config = PreprocessConfig { desired_size: size, ..PreprocessConfig::default() };
        config.validate().map_err(js_err)?;
        let params = preprocess::sample_params(&config, &mut ChaCha8Rng::seed_from_u64(seed as u64));
        let pair = preprocess::make_pair(&self.frame, &config, &params).map_err(js_err)?;
        Ok(SampledPair { size, target: to_rgba(&pair.target), input: to_rgba(&pair.input), params })
    }
}

#[wasm_bindgen]
pub struct SampledPair {
    size: usize,
    target: Vec<u8>,
    input: Vec<u8>,
    params: PreprocessParams,
}

#[wasm_bindgen]
impl SampledPair {
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn target_rgba(&self) -> Vec<u8> {
        self.target.clone()
    }

    pub fn input_rgba(&self) -> Vec<u8> {
        self.input.clone()
    }

    pub fn describe(&self) -> String {
        let p = &self.params;
        format!(
            "scale {:.3}, crop ({:.3}, {:.3}), flip {}, brightness {:.3}, contrast {:.3}",
            p.scale,
            p.crop_x,
            p.crop_y,
            if p.flip_h { "yes" } else { "no" },
            p.brightness,
            p.contrast
        )
    }
}

/// Output value for each of the 256 input intensities.
#[wasm_bindgen]
pub fn levels_curve(norm_low: u8, norm_high: u8) -> Vec<u8> {
    imaging::levels_lut(norm_low, norm_high).to_vec()
}
