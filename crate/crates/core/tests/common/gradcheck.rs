//! Central finite-difference oracle for every differentiable operation.
//!
//! Each check contracts the op's output with a fixed random tensor `r`,
//! `L = Σ r·y` accumulated in f64, and compares the analytic gradient
//! (backward called with `dy = r`) against `(L(x + h) - L(x - h)) / (x⁺ - x⁻)`
//! where `x⁺`, `x⁻` are the perturbed values as actually stored in f32.
//! Errors are norm-wise per tensor: `‖g - n‖ / max(‖g‖, ‖n‖)`.
//!
//! Whole networks are checked against an independent f64 re-implementation
//! of their forward pass ([`reference`]), differenced with a tiny step. In
//! f32, a step large enough to rise above rounding noise regularly carries
//! some ReLU unit across its kink, which says nothing about the backward
//! pass. Tensors whose gradient vanishes by construction (a conv bias
//! feeding an instance norm) are compared against the network's overall
//! gradient scale instead of their own.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use visinst::model::{DiscriminatorSpec, DiscriminatorWeights, GeneratorSpec, GeneratorWeights, Parameters};
use visinst::nn::{self, ConvGeometry};
use visinst::Tensor;

pub const TOLERANCE: f64 = 1e-3;

pub struct Check {
    pub name: String,
    pub rel_err: f64,
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f32, hi: f32) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Values with `|v| >= margin`, so small perturbations never cross a kink at 0.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize], margin: f32) -> Tensor {
    let t = uniform(rng, shape, margin, 1.0);
    let signs: Vec<f32> = t.data().iter().map(|&v| if rng.random::<bool>() { v } else { -v }).collect();
    Tensor::new(shape.to_vec(), signs).unwrap()
}

fn contract(y: &Tensor, r: &Tensor) -> f64 {
    y.data().iter().zip(r.data()).map(|(&a, &b)| a as f64 * b as f64).sum()
}

fn numeric(x: &Tensor, h: f32, mut f: impl FnMut(&Tensor) -> f64) -> Vec<f64> {
    let mut probe = x.clone();
    (0..x.numel())
        .map(|i| {
            let v = x.data()[i];
            let (xp, xm) = (v + h, v - h);
            probe.data_mut()[i] = xp;
            let lp = f(&probe);
            probe.data_mut()[i] = xm;
            let lm = f(&probe);
            probe.data_mut()[i] = v;
            (lp - lm) / (xp as f64 - xm as f64)
        })
        .collect()
}

pub fn rel_err(analytic: &Tensor, numeric: &[f64]) -> f64 {
    rel_err_floor(analytic, numeric, 0.0)
}

fn rel_err_floor(analytic: &Tensor, numeric: &[f64], floor: f64) -> f64 {
    let mut diff = 0.0;
    let (mut na, mut nn) = (0.0, 0.0);
    for (&a, &n) in analytic.data().iter().zip(numeric) {
        diff += (a as f64 - n).powi(2);
        na += (a as f64).powi(2);
        nn += n * n;
    }
    let denom = na.sqrt().max(nn.sqrt()).max(floor);
    if denom < 1e-12 {
        diff.sqrt()
    } else {
        diff.sqrt() / denom
    }
}

struct Recorder(Vec<Check>);

impl Recorder {
    fn push(&mut self, name: impl Into<String>, analytic: &Tensor, numeric: &[f64]) {
        self.0.push(Check { name: name.into(), rel_err: rel_err(analytic, numeric) });
    }
}

const H: f32 = 1e-2;
const H_SMOOTH: f32 = 1e-3;

fn conv_checks(out: &mut Recorder, rng: &mut ChaCha8Rng) {
    for (label, g, size) in [("conv4x4s2", ConvGeometry::DOWN4, 8), ("conv3x3s1", ConvGeometry::SAME3, 10)] {
        let x = uniform(rng, &[2, 3, size, size], -1.0, 1.0);
        let w = uniform(rng, &[4, 3, g.kernel, g.kernel], -0.5, 0.5);
        let b = uniform(rng, &[4], -0.5, 0.5);
        let y = nn::conv2d_forward(&x, &w, &b, g);
        let r = uniform(rng, y.shape(), -1.0, 1.0);
        let grads = nn::conv2d_backward(&x, &w, g, &r);
        let n = numeric(&x, H, |p| contract(&nn::conv2d_forward(p, &w, &b, g), &r));
        out.push(format!("{label}.dx"), &grads.dx, &n);
        let n = numeric(&w, H, |p| contract(&nn::conv2d_forward(&x, p, &b, g), &r));
        out.push(format!("{label}.dweight"), &grads.dweight, &n);
        let n = numeric(&b, H, |p| contract(&nn::conv2d_forward(&x, &w, p, g), &r));
        out.push(format!("{label}.dbias"), &grads.dbias, &n);
    }
}

fn norm_checks(out: &mut Recorder, rng: &mut ChaCha8Rng) {
    let x = uniform(rng, &[2, 3, 8, 8], -2.0, 2.0);
    let gamma = uniform(rng, &[3], 0.5, 1.5);
    let beta = uniform(rng, &[3], -0.5, 0.5);
    let (y, cache) = nn::instance_norm_forward(&x, &gamma, &beta);
    let r = uniform(rng, y.shape(), -1.0, 1.0);
    let grads = nn::instance_norm_backward(&cache, &gamma, &r);
    let f = |x: &Tensor, g: &Tensor, b: &Tensor| contract(&nn::instance_norm_forward(x, g, b).0, &r);
    out.push("instance_norm.dx", &grads.dx, &numeric(&x, H_SMOOTH, |p| f(p, &gamma, &beta)));
    out.push("instance_norm.dgamma", &grads.dgamma, &numeric(&gamma, H_SMOOTH, |p| f(&x, p, &beta)));
    out.push("instance_norm.dbeta", &grads.dbeta, &numeric(&beta, H_SMOOTH, |p| f(&x, &gamma, p)));
}

fn activation_checks(out: &mut Recorder, rng: &mut ChaCha8Rng) {
    let x = away_from_zero(rng, &[2, 2, 8, 8], 2.0 * H);
    let r = uniform(rng, x.shape(), -1.0, 1.0);
    out.push("leaky_relu", &nn::leaky_relu_backward(&x, &r), &numeric(&x, H, |p| contract(&nn::leaky_relu(p), &r)));
    out.push("relu", &nn::relu_backward(&x, &r), &numeric(&x, H, |p| contract(&nn::relu(p), &r)));
    let y = nn::tanh(&x);
    out.push("tanh", &nn::tanh_backward(&y, &r), &numeric(&x, H_SMOOTH, |p| contract(&nn::tanh(p), &r)));
}

fn shape_op_checks(out: &mut Recorder, rng: &mut ChaCha8Rng) {
    let x = uniform(rng, &[2, 2, 8, 8], -1.0, 1.0);
    let r = uniform(rng, &[2, 2, 16, 16], -1.0, 1.0);
    out.push("upsample2x", &nn::upsample2x_backward(&r), &numeric(&x, H, |p| contract(&nn::upsample2x(p), &r)));

    let a = uniform(rng, &[2, 2, 8, 8], -1.0, 1.0);
    let b = uniform(rng, &[2, 3, 8, 8], -1.0, 1.0);
    let r = uniform(rng, &[2, 5, 8, 8], -1.0, 1.0);
    let (da, db) = nn::split_channels(&r, 2);
    out.push("concat.da", &da, &numeric(&a, H, |p| contract(&nn::concat_channels(p, &b), &r)));
    out.push("concat.db", &db, &numeric(&b, H, |p| contract(&nn::concat_channels(&a, p), &r)));
}

fn loss_checks(out: &mut Recorder, rng: &mut ChaCha8Rng) {
    let target = uniform(rng, &[2, 3, 8, 8], -1.0, 1.0);
    let offset = away_from_zero(rng, target.shape(), 2.0 * H);
    let mut pred = target.clone();
    pred.add_assign(&offset);
    let (_, g) = nn::l1_loss(&pred, &target);
    out.push("l1", &g, &numeric(&pred, H, |p| nn::l1_loss(p, &target).0 as f64));

    let logits = uniform(rng, &[2, 1, 8, 8], -4.0, 4.0);
    for real in [true, false] {
        let (_, g) = nn::bce_with_logits(&logits, real);
        let n = numeric(&logits, H, |p| nn::bce_with_logits(p, real).0 as f64);
        out.push(if real { "bce.real" } else { "bce.fake" }, &g, &n);
    }
}

const H_REF: f64 = 1e-6;
/// Fraction of the network's total gradient norm below which a tensor's
/// error is measured absolutely.
const VANISHING: f64 = 1e-4;

fn randomize(params: &mut impl Parameters, rng: &mut ChaCha8Rng, scale: f32) {
    for t in params.params_mut() {
        for v in t.data_mut() {
            *v = rng.random_range(-scale..scale);
        }
    }
}

fn to_ref(t: &Tensor) -> reference::T {
    reference::T { shape: t.shape().to_vec(), data: t.data().iter().map(|&v| v as f64).collect() }
}

fn numeric_ref(x: &reference::T, mut f: impl FnMut(&reference::T) -> f64) -> Vec<f64> {
    let mut probe = x.clone();
    (0..x.data.len())
        .map(|i| {
            let v = x.data[i];
            probe.data[i] = v + H_REF;
            let lp = f(&probe);
            probe.data[i] = v - H_REF;
            let lm = f(&probe);
            probe.data[i] = v;
            (lp - lm) / (2.0 * H_REF)
        })
        .collect()
}

fn contract_ref(y: &reference::T, r: &Tensor) -> f64 {
    y.data.iter().zip(r.data()).map(|(&a, &b)| a * b as f64).sum()
}

fn forward_gap(lib: &Tensor, reference: &reference::T) -> f64 {
    lib.data().iter().zip(&reference.data).map(|(&a, &b)| (a as f64 - b).abs()).fold(0.0, f64::max)
}

/// Checks parameter gradients of a network given the analytic gradients and
/// a reference loss over the f64 parameter list.
fn param_checks(
    out: &mut Recorder,
    names: &[String],
    analytic: &[Tensor],
    params: &[reference::T],
    loss: impl Fn(&[reference::T]) -> f64,
) {
    let numeric: Vec<Vec<f64>> = (0..params.len())
        .map(|k| {
            let mut probe = params.to_vec();
            numeric_ref(&params[k], |p| {
                probe[k] = p.clone();
                loss(&probe)
            })
        })
        .collect();
    let total = numeric.iter().flatten().map(|v| v * v).sum::<f64>().sqrt();
    for ((name, g), n) in names.iter().zip(analytic).zip(&numeric) {
        out.0.push(Check { name: name.clone(), rel_err: rel_err_floor(g, n, VANISHING * total) });
    }
}

fn generator_checks(out: &mut Recorder, rng: &mut ChaCha8Rng) {
    let spec = GeneratorSpec { depth: 2, base_channels: 2, in_channels: 1, out_channels: 3 };
    let mut gen = GeneratorWeights::zeros(spec);
    randomize(&mut gen, rng, 0.5);
    let x = uniform(rng, &[2, 1, 8, 8], -1.0, 1.0);
    let trace = gen.forward_traced(&x).unwrap();
    let r = uniform(rng, trace.output.shape(), -1.0, 1.0);
    let (grads, dx) = gen.backward(&trace, &r);

    let params: Vec<reference::T> = gen.named().into_iter().map(|(_, t)| to_ref(t)).collect();
    let xr = to_ref(&x);
    let gap = forward_gap(&trace.output, &reference::generator(spec.depth, &params, &xr));
    out.0.push(Check { name: "generator.forward".into(), rel_err: gap });

    let n = numeric_ref(&xr, |p| contract_ref(&reference::generator(spec.depth, &params, p), &r));
    out.push("generator.dx", &dx, &n);
    let names: Vec<String> = gen.named().into_iter().map(|(n, _)| n).collect();
    let analytic: Vec<Tensor> = grads.named().into_iter().map(|(_, t)| t.clone()).collect();
    param_checks(out, &names, &analytic, &params, |p| contract_ref(&reference::generator(spec.depth, p, &xr), &r));
}

fn discriminator_checks(out: &mut Recorder, rng: &mut ChaCha8Rng) {
    let spec = DiscriminatorSpec { base_channels: 2, in_channels: 4 };
    let mut disc = DiscriminatorWeights::zeros(spec);
    randomize(&mut disc, rng, 0.5);
    let input = uniform(rng, &[2, 1, 16, 16], -1.0, 1.0);
    let cand = uniform(rng, &[2, 3, 16, 16], -1.0, 1.0);
    let trace = disc.forward_traced(&input, &cand).unwrap();
    let r = uniform(rng, trace.logits.shape(), -1.0, 1.0);
    let (grads, dcand) = disc.backward(&trace, &r);

    let params: Vec<reference::T> = disc.named().into_iter().map(|(_, t)| to_ref(t)).collect();
    let (ir, cr) = (to_ref(&input), to_ref(&cand));
    let gap = forward_gap(&trace.logits, &reference::discriminator(&params, &ir, &cr));
    out.0.push(Check { name: "discriminator.forward".into(), rel_err: gap });

    let n = numeric_ref(&cr, |p| contract_ref(&reference::discriminator(&params, &ir, p), &r));
    out.push("discriminator.dcandidate", &dcand, &n);
    let names: Vec<String> = disc.named().into_iter().map(|(n, _)| n).collect();
    let analytic: Vec<Tensor> = grads.named().into_iter().map(|(_, t)| t.clone()).collect();
    param_checks(out, &names, &analytic, &params, |p| contract_ref(&reference::discriminator(p, &ir, &cr), &r));
}

pub fn run_all(seed: u64) -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Recorder(Vec::new());
    conv_checks(&mut out, &mut rng);
    norm_checks(&mut out, &mut rng);
    activation_checks(&mut out, &mut rng);
    shape_op_checks(&mut out, &mut rng);
    loss_checks(&mut out, &mut rng);
    generator_checks(&mut out, &mut rng);
    discriminator_checks(&mut out, &mut rng);
    out.0
}

/// Straightforward f64 forward passes, written from the architecture
/// description with plain loops.
mod reference {
    #[derive(Clone, Debug)]
    pub struct T {
        pub shape: Vec<usize>,
        pub data: Vec<f64>,
    }

    impl T {
        fn zeros(shape: [usize; 4]) -> T {
            T { shape: shape.to_vec(), data: vec![0.0; shape.iter().product()] }
        }

        fn dims(&self) -> (usize, usize, usize, usize) {
            (self.shape[0], self.shape[1], self.shape[2], self.shape[3])
        }

        fn at(&self, n: usize, c: usize, y: usize, x: usize) -> f64 {
            let (_, cs, h, w) = self.dims();
            self.data[((n * cs + c) * h + y) * w + x]
        }

        fn map(mut self, f: impl Fn(f64) -> f64) -> T {
            self.data.iter_mut().for_each(|v| *v = f(*v));
            self
        }
    }

    fn conv(x: &T, w: &T, b: &T, stride: usize, pad: usize) -> T {
        let (n, cin, h, wd) = x.dims();
        let (cout, _, k, _) = w.dims();
        let oh = (h + 2 * pad - k) / stride + 1;
        let ow = (wd + 2 * pad - k) / stride + 1;
        let mut y = T::zeros([n, cout, oh, ow]);
        let mut i = 0;
        for b_ in 0..n {
            for o in 0..cout {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = b.data[o];
                        for c in 0..cin {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let iy = (oy * stride + ky) as isize - pad as isize;
                                    let ix = (ox * stride + kx) as isize - pad as isize;
                                    if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                                        acc += w.at(o, c, ky, kx) * x.at(b_, c, iy as usize, ix as usize);
                                    }
                                }
                            }
                        }
                        y.data[i] = acc;
                        i += 1;
                    }
                }
            }
        }
        y
    }

    fn instance_norm(x: &T, gamma: &T, beta: &T) -> T {
        let (n, c, h, w) = x.dims();
        let hw = h * w;
        let mut y = x.clone();
        for b in 0..n {
            for ch in 0..c {
                let s = &mut y.data[(b * c + ch) * hw..(b * c + ch + 1) * hw];
                let mean = s.iter().sum::<f64>() / hw as f64;
                let var = s.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / hw as f64;
                let inv = 1.0 / (var + 1e-5).sqrt();
                for v in s.iter_mut() {
                    *v = gamma.data[ch] * (*v - mean) * inv + beta.data[ch];
                }
            }
        }
        y
    }

    fn leaky(x: T) -> T {
        x.map(|v| if v > 0.0 { v } else { 0.2 * v })
    }

    fn relu(x: T) -> T {
        x.map(|v| v.max(0.0))
    }

    fn upsample(x: &T) -> T {
        let (n, c, h, w) = x.dims();
        let mut y = T::zeros([n, c, 2 * h, 2 * w]);
        let mut i = 0;
        for b in 0..n {
            for ch in 0..c {
                for yy in 0..2 * h {
                    for xx in 0..2 * w {
                        y.data[i] = x.at(b, ch, yy / 2, xx / 2);
                        i += 1;
                    }
                }
            }
        }
        y
    }

    fn concat(a: &T, b: &T) -> T {
        let (n, ca, h, w) = a.dims();
        let cb = b.shape[1];
        let hw = h * w;
        let mut data = Vec::with_capacity(n * (ca + cb) * hw);
        for i in 0..n {
            data.extend_from_slice(&a.data[i * ca * hw..(i + 1) * ca * hw]);
            data.extend_from_slice(&b.data[i * cb * hw..(i + 1) * cb * hw]);
        }
        T { shape: vec![n, ca + cb, h, w], data }
    }

    /// Parameters in network order: conv weight, conv bias, then gamma and
    /// beta when the block is normalized.
    struct Params<'a>(std::slice::Iter<'a, T>);

    impl<'a> Params<'a> {
        fn next(&mut self) -> &'a T {
            self.0.next().expect("parameter list too short")
        }

        fn block(&mut self, x: &T, stride: usize, pad: usize, norm: bool) -> T {
            let (w, b) = (self.next(), self.next());
            let z = conv(x, w, b, stride, pad);
            if norm {
                let (g, bt) = (self.next(), self.next());
                instance_norm(&z, g, bt)
            } else {
                z
            }
        }
    }

    pub fn generator(depth: usize, params: &[T], x: &T) -> T {
        let mut p = Params(params.iter());
        let mut skips = Vec::new();
        let mut h = x.clone();
        for k in 0..depth {
            h = leaky(p.block(&h, 2, 1, k > 0));
            skips.push(h.clone());
        }
        for level in (0..depth).rev() {
            let a = relu(p.block(&upsample(&h), 1, 1, true));
            h = if level > 0 { concat(&a, &skips[level - 1]) } else { a };
        }
        let y = p.block(&h, 1, 1, false).map(f64::tanh);
        assert!(p.0.next().is_none(), "parameter list too long");
        y
    }

    pub fn discriminator(params: &[T], input: &T, candidate: &T) -> T {
        let mut p = Params(params.iter());
        let mut h = concat(input, candidate);
        for k in 0..3 {
            h = leaky(p.block(&h, 2, 1, k > 0));
        }
        let y = p.block(&h, 1, 1, false);
        assert!(p.0.next().is_none(), "parameter list too long");
        y
    }
}
