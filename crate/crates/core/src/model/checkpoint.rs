//! Binary checkpoint format.
//!
//! ```text
//! offset  size  field
//! 0       4     magic "L2SC"
//! 4       4     version, u32 LE (= 1)
//! 8       8     manifest length M, u64 LE
//! 16      M     manifest, UTF-8 text (see below)
//! 16+M    P     payload: f32 LE tensors in manifest order
//! end-16  8     iteration counter, u64 LE
//! end-8   8     root seed, u64 LE
//! ```
//!
//! Manifest lines:
//!
//! ```text
//! generator depth=4 base_channels=32 in_channels=1 out_channels=3
//! discriminator base_channels=32 in_channels=4
//! optimizer gen_step=120 disc_step=0        (only when moments are stored)
//! tensor gen.enc0.conv.weight 32,1,4,4 0    (name, shape, payload byte offset)
//! ```
//!
//! Optimizer moments, when present, follow the network tensors as
//! `opt.gen.m.<name>`, `opt.gen.v.<name>`, `opt.disc.m.<name>`,
//! `opt.disc.v.<name>`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::{Adam, DiscriminatorSpec, DiscriminatorWeights, GeneratorSpec, GeneratorWeights, Parameters, TrainState};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"L2SC";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 16;
const TRAILER_LEN: usize = 16;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub generator: GeneratorWeights,
    pub discriminator: DiscriminatorWeights,
    /// Adam moments for exact resumption; absent in inference-only files.
    pub optimizers: Option<(Adam, Adam)>,
    pub iteration: u64,
    pub seed: u64,
}

impl Checkpoint {
    pub fn from_state(state: &TrainState, seed: u64) -> Self {
        Self {
            generator: state.generator.clone(),
            discriminator: state.discriminator.clone(),
            optimizers: Some((state.gen_opt.clone(), state.disc_opt.clone())),
            iteration: state.iteration,
            seed,
        }
    }

    /// Rebuilds a training state; missing optimizer moments start from zero.
    pub fn into_state(self) -> TrainState {
        let (gen_opt, disc_opt) =
            self.optimizers.unwrap_or_else(|| (Adam::new(&self.generator), Adam::new(&self.discriminator)));
        TrainState {
            generator: self.generator,
            discriminator: self.discriminator,
            gen_opt,
            disc_opt,
            iteration: self.iteration,
        }
    }

    fn tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = self.generator.named();
        out.extend(self.discriminator.named());
        if let Some((g, d)) = &self.optimizers {
            push_moments(&mut out, "gen", &self.generator, g);
            push_moments(&mut out, "disc", &self.discriminator, d);
        }
        out
    }
}

fn push_moments<'a>(out: &mut Vec<(String, &'a Tensor)>, net: &str, params: &impl Parameters, opt: &'a Adam) {
    let names: Vec<String> = params.named().into_iter().map(|(n, _)| n).collect();
    for (n, t) in names.iter().zip(&opt.m) {
        out.push((format!("opt.{net}.m.{n}"), t));
    }
    for (n, t) in names.iter().zip(&opt.v) {
        out.push((format!("opt.{net}.v.{n}"), t));
    }
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Vec<u8> {
    let g = &ckpt.generator.spec;
    let d = &ckpt.discriminator.spec;
    let mut manifest = String::new();
    let _ = writeln!(
        manifest,
        "generator depth={} base_channels={} in_channels={} out_channels={}",
        g.depth, g.base_channels, g.in_channels, g.out_channels
    );
    let _ = writeln!(manifest, "discriminator base_channels={} in_channels={}", d.base_channels, d.in_channels);
    if let Some((go, dop)) = &ckpt.optimizers {
        let _ = writeln!(manifest, "optimizer gen_step={} disc_step={}", go.step, dop.step);
    }
    let tensors = ckpt.tensors();
    let mut offset = 0usize;
    for (name, t) in &tensors {
        let shape: Vec<String> = t.shape().iter().map(|d| d.to_string()).collect();
        let _ = writeln!(manifest, "tensor {name} {} {offset}", shape.join(","));
        offset += t.numel() * 4;
    }

    let mut out = Vec::with_capacity(HEADER_LEN + manifest.len() + offset + TRAILER_LEN);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
    out.extend_from_slice(manifest.as_bytes());
    for (_, t) in &tensors {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out.extend_from_slice(&ckpt.iteration.to_le_bytes());
    out.extend_from_slice(&ckpt.seed.to_le_bytes());
    out
}

pub fn save_checkpoint(path: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<()> {
    let path = path.as_ref();
    let tmp = path.with_extension("partial");
    fs::write(&tmp, encode_checkpoint(ckpt))?;
    fs::rename(&tmp, path)?;
    Ok(())
}

struct ManifestEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

fn manifest_err(msg: impl Into<String>) -> Error {
    Error::Manifest(msg.into())
}

fn key_values(rest: &str) -> Result<Vec<(&str, usize)>> {
    rest.split_whitespace()
        .map(|kv| {
            let (k, v) = kv.split_once('=').ok_or_else(|| manifest_err(format!("bad field {kv:?}")))?;
            let v = v.parse().map_err(|_| manifest_err(format!("bad number in {kv:?}")))?;
            Ok((k, v))
        })
        .collect()
}

fn field(kvs: &[(&str, usize)], key: &str) -> Result<usize> {
    kvs.iter().find(|(k, _)| *k == key).map(|(_, v)| *v).ok_or_else(|| manifest_err(format!("missing field {key}")))
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::NotACheckpoint("bad magic bytes".into()));
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::PayloadLength(format!("file is {} bytes, shorter than the header", bytes.len())));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(Error::CheckpointVersion { found: version, expected: VERSION });
    }
    let mlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let manifest_end = HEADER_LEN
        .checked_add(mlen)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| Error::PayloadLength(format!("manifest of {mlen} bytes runs past end of file")))?;
    let manifest = std::str::from_utf8(&bytes[HEADER_LEN..manifest_end])
        .map_err(|_| manifest_err("manifest is not valid UTF-8"))?;

    let mut gspec = None;
    let mut dspec = None;
    let mut steps = None;
    let mut entries = Vec::new();
    for line in manifest.lines().filter(|l| !l.trim().is_empty()) {
        let (kind, rest) = line.split_once(' ').unwrap_or((line, ""));
        match kind {
            "generator" => {
                let kv = key_values(rest)?;
                gspec = Some(GeneratorSpec {
                    depth: field(&kv, "depth")?,
                    base_channels: field(&kv, "base_channels")?,
                    in_channels: field(&kv, "in_channels")?,
                    out_channels: field(&kv, "out_channels")?,
                });
            }
            "discriminator" => {
                let kv = key_values(rest)?;
                dspec = Some(DiscriminatorSpec {
                    base_channels: field(&kv, "base_channels")?,
                    in_channels: field(&kv, "in_channels")?,
                });
            }
            "optimizer" => {
                let kv = key_values(rest)?;
                steps = Some((field(&kv, "gen_step")? as u64, field(&kv, "disc_step")? as u64));
            }
            "tensor" => {
                let parts: Vec<&str> = rest.split_whitespace().collect();
                let [name, shape, offset] = parts[..] else {
                    return Err(manifest_err(format!("bad tensor line {line:?}")));
                };
                let shape = shape
                    .split(',')
                    .map(|d| d.parse().map_err(|_| manifest_err(format!("bad shape in {line:?}"))))
                    .collect::<Result<Vec<usize>>>()?;
                let offset = offset.parse().map_err(|_| manifest_err(format!("bad offset in {line:?}")))?;
                entries.push(ManifestEntry { name: name.to_string(), shape, offset });
            }
            other => return Err(manifest_err(format!("unknown manifest record {other:?}"))),
        }
    }
    let gspec = gspec.ok_or_else(|| manifest_err("missing generator spec"))?;
    let dspec = dspec.ok_or_else(|| manifest_err("missing discriminator spec"))?;
    gspec.validate()?;

    let payload_len: usize = entries.iter().map(|e| e.shape.iter().product::<usize>() * 4).sum();
    let expected_len = manifest_end + payload_len + TRAILER_LEN;
    if bytes.len() != expected_len {
        return Err(Error::PayloadLength(format!(
            "manifest describes {payload_len} payload bytes; file is {} bytes, expected {expected_len}",
            bytes.len()
        )));
    }

    let mut template = Checkpoint {
        generator: GeneratorWeights::zeros(gspec),
        discriminator: DiscriminatorWeights::zeros(dspec),
        optimizers: None,
        iteration: 0,
        seed: 0,
    };
    if let Some((gs, ds)) = steps {
        let mut g = Adam::new(&template.generator);
        let mut d = Adam::new(&template.discriminator);
        g.step = gs;
        d.step = ds;
        template.optimizers = Some((g, d));
    }

    let expected: Vec<(String, Vec<usize>)> =
        template.tensors().into_iter().map(|(n, t)| (n, t.shape().to_vec())).collect();
    if expected.len() != entries.len() {
        return Err(manifest_err(format!(
            "manifest lists {} tensors, the declared specs need {}",
            entries.len(),
            expected.len()
        )));
    }
    let mut offset = 0;
    for (e, (name, shape)) in entries.iter().zip(&expected) {
        if &e.name != name || &e.shape != shape {
            return Err(manifest_err(format!(
                "tensor {} with shape {:?} does not match expected {name} {shape:?}",
                e.name, e.shape
            )));
        }
        if e.offset != offset {
            return Err(manifest_err(format!("tensor {} offset {} should be {offset}", e.name, e.offset)));
        }
        offset += shape.iter().product::<usize>() * 4;
    }

    let payload = &bytes[manifest_end..manifest_end + payload_len];
    let mut values = payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")));
    let mut fill = |t: &mut Tensor| {
        for v in t.data_mut() {
            *v = values.next().expect("payload length already checked");
        }
    };
    for t in template.generator.params_mut() {
        fill(t);
    }
    for t in template.discriminator.params_mut() {
        fill(t);
    }
    if let Some((g, d)) = &mut template.optimizers {
        for t in g.m.iter_mut().chain(g.v.iter_mut()).chain(d.m.iter_mut()).chain(d.v.iter_mut()) {
            fill(t);
        }
    }

    let trailer = &bytes[bytes.len() - TRAILER_LEN..];
    template.iteration = u64::from_le_bytes(trailer[..8].try_into().expect("8 bytes"));
    template.seed = u64::from_le_bytes(trailer[8..].try_into().expect("8 bytes"));
    Ok(template)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path)
        .map_err(|e| Error::InvalidArgument(format!("cannot read checkpoint {}: {e}", path.display())))?;
    decode_checkpoint(&bytes)
}

/// Loads a checkpoint and checks that its generator matches `expected`.
pub fn load_generator(path: impl AsRef<Path>, expected: Option<&GeneratorSpec>) -> Result<GeneratorWeights> {
    let ckpt = load_checkpoint(path)?;
    if let Some(spec) = expected {
        if spec != &ckpt.generator.spec {
            return Err(Error::Shape(format!(
                "checkpoint generator {:?} does not match requested {spec:?}",
                ckpt.generator.spec
            )));
        }
    }
    Ok(ckpt.generator)
}

pub fn model_card_path(checkpoint: &Path) -> PathBuf {
    checkpoint.with_extension("card.txt")
}

pub fn write_model_card(checkpoint: &Path, ckpt: &Checkpoint, dataset: Option<&Path>) -> Result<PathBuf> {
    let g = &ckpt.generator.spec;
    let d = &ckpt.discriminator.spec;
    let mut card = String::new();
    let _ = writeln!(card, "checkpoint: {}", checkpoint.display());
    let _ = writeln!(
        card,
        "generator: U-Net depth={} base_channels={} in_channels={} out_channels={} ({} parameters)",
        g.depth,
        g.base_channels,
        g.in_channels,
        g.out_channels,
        ckpt.generator.num_params()
    );
    let _ = writeln!(
        card,
        "discriminator: patch, base_channels={} in_channels={} ({} parameters)",
        d.base_channels,
        d.in_channels,
        ckpt.discriminator.num_params()
    );
    let _ = writeln!(card, "dataset: {}", dataset.map(|p| p.display().to_string()).unwrap_or_else(|| "-".into()));
    let _ = writeln!(card, "iteration: {}", ckpt.iteration);
    let _ = writeln!(card, "seed: {}", ckpt.seed);
    let path = model_card_path(checkpoint);
    fs::write(&path, card)?;
    Ok(path)
}
