//! Differentiable primitives with hand-written backward passes.
//!
//! Each op is a pair of functions: a forward that returns its output (plus
//! whatever the backward needs) and a backward that maps the output gradient
//! to input and parameter gradients.

use crate::tensor::Tensor;

pub const LEAKY_SLOPE: f32 = 0.2;
pub const NORM_EPS: f32 = 1e-5;

/// `c = a · b + beta · c` for row-major slices with explicit strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    (rsa, csa): (usize, usize),
    b: &[f32],
    (rsb, csb): (usize, usize),
    beta: f32,
    c: &mut [f32],
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(k == 0 || (m - 1) * rsa + (k - 1) * csa < a.len(), "gemm: lhs out of bounds");
    assert!(k == 0 || (k - 1) * rsb + (n - 1) * csb < b.len(), "gemm: rhs out of bounds");
    assert!(m * n <= c.len(), "gemm: output out of bounds");
    // SAFETY: the asserts above bound every index touched by the kernel.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeometry {
    pub const DOWN4: ConvGeometry = ConvGeometry { kernel: 4, stride: 2, pad: 1 };
    pub const SAME3: ConvGeometry = ConvGeometry { kernel: 3, stride: 1, pad: 1 };

    pub fn output_size(&self, n: usize) -> usize {
        (n + 2 * self.pad - self.kernel) / self.stride + 1
    }
}

struct ConvDims {
    cin: usize,
    h: usize,
    w: usize,
    ho: usize,
    wo: usize,
    g: ConvGeometry,
}

impl ConvDims {
    fn rows(&self) -> usize {
        self.cin * self.g.kernel * self.g.kernel
    }

    fn cols(&self) -> usize {
        self.ho * self.wo
    }
}

fn im2col(x: &[f32], d: &ConvDims, cols: &mut [f32]) {
    let k = d.g.kernel;
    let hw = d.cols();
    for ci in 0..d.cin {
        let plane = &x[ci * d.h * d.w..(ci + 1) * d.h * d.w];
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut cols[((ci * k + ky) * k + kx) * hw..][..hw];
                for oy in 0..d.ho {
                    let iy = (oy * d.g.stride + ky) as isize - d.g.pad as isize;
                    let dst = &mut row[oy * d.wo..(oy + 1) * d.wo];
                    if iy < 0 || iy >= d.h as isize {
                        dst.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * d.w..(iy as usize + 1) * d.w];
                    for (ox, v) in dst.iter_mut().enumerate() {
                        let ix = (ox * d.g.stride + kx) as isize - d.g.pad as isize;
                        *v = if ix < 0 || ix >= d.w as isize { 0.0 } else { src[ix as usize] };
                    }
                }
            }
        }
    }
}

fn col2im(cols: &[f32], d: &ConvDims, dx: &mut [f32]) {
    let k = d.g.kernel;
    let hw = d.cols();
    for ci in 0..d.cin {
        let plane = &mut dx[ci * d.h * d.w..(ci + 1) * d.h * d.w];
        for ky in 0..k {
            for kx in 0..k {
                let row = &cols[((ci * k + ky) * k + kx) * hw..][..hw];
                for oy in 0..d.ho {
                    let iy = (oy * d.g.stride + ky) as isize - d.g.pad as isize;
                    if iy < 0 || iy >= d.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * d.w..(iy as usize + 1) * d.w];
                    for ox in 0..d.wo {
                        let ix = (ox * d.g.stride + kx) as isize - d.g.pad as isize;
                        if ix >= 0 && (ix as usize) < d.w {
                            dst[ix as usize] += row[oy * d.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

fn conv_dims(x: &Tensor, weight: &Tensor, g: ConvGeometry) -> (usize, usize, ConvDims) {
    let (b, cin, h, w) = x.dims4();
    let (cout, wcin, kh, kw) = weight.dims4();
    assert_eq!(wcin, cin, "conv: weight expects {wcin} input channels, got {cin}");
    assert!(kh == g.kernel && kw == g.kernel, "conv: kernel {kh}x{kw} does not match geometry {}", g.kernel);
    assert!(h + 2 * g.pad >= g.kernel && w + 2 * g.pad >= g.kernel, "conv: input {h}x{w} smaller than kernel");
    (b, cout, ConvDims { cin, h, w, ho: g.output_size(h), wo: g.output_size(w), g })
}

pub fn conv2d_forward(x: &Tensor, weight: &Tensor, bias: &Tensor, g: ConvGeometry) -> Tensor {
    let (b, cout, d) = conv_dims(x, weight, g);
    assert_eq!(bias.numel(), cout, "conv: bias length");
    let (rows, hw) = (d.rows(), d.cols());
    let mut y = Tensor::zeros(&[b, cout, d.ho, d.wo]);
    let mut cols = vec![0.0; rows * hw];
    for i in 0..b {
        im2col(x.item(i), &d, &mut cols);
        let yi = y.item_mut(i);
        for (co, plane) in yi.chunks_exact_mut(hw).enumerate() {
            plane.fill(bias.data()[co]);
        }
        gemm(cout, rows, hw, weight.data(), (rows, 1), &cols, (hw, 1), 1.0, yi);
    }
    y
}

pub struct ConvGrads {
    pub dx: Tensor,
    pub dweight: Tensor,
    pub dbias: Tensor,
}

pub fn conv2d_backward(x: &Tensor, weight: &Tensor, g: ConvGeometry, dy: &Tensor) -> ConvGrads {
    let (b, cout, d) = conv_dims(x, weight, g);
    assert_eq!(dy.shape(), [b, cout, d.ho, d.wo], "conv backward: dy shape");
    let (rows, hw) = (d.rows(), d.cols());
    let mut dx = Tensor::zeros_like(x);
    let mut dweight = Tensor::zeros_like(weight);
    let mut dbias = Tensor::zeros(&[cout]);
    let mut cols = vec![0.0; rows * hw];
    let mut dcols = vec![0.0; rows * hw];
    for i in 0..b {
        let dyi = dy.item(i);
        for (co, plane) in dyi.chunks_exact(hw).enumerate() {
            dbias.data_mut()[co] += plane.iter().sum::<f32>();
        }
        im2col(x.item(i), &d, &mut cols);
        // dW += dy_i · colsᵀ
        gemm(cout, hw, rows, dyi, (hw, 1), &cols, (1, hw), 1.0, dweight.data_mut());
        // dcols = Wᵀ · dy_i
        gemm(rows, cout, hw, weight.data(), (1, rows), dyi, (hw, 1), 0.0, &mut dcols);
        col2im(&dcols, &d, dx.item_mut(i));
    }
    ConvGrads { dx, dweight, dbias }
}

/// Saved statistics of an instance-norm forward pass.
pub struct NormCache {
    xhat: Tensor,
    inv_std: Vec<f32>,
}

/// Per-(sample, channel) normalization over the spatial plane, followed by a
/// learned per-channel affine transform.
pub fn instance_norm_forward(x: &Tensor, gamma: &Tensor, beta: &Tensor) -> (Tensor, NormCache) {
    let (b, c, h, w) = x.dims4();
    assert!(gamma.numel() == c && beta.numel() == c, "instance norm: affine length");
    let n = h * w;
    let mut xhat = Tensor::zeros_like(x);
    let mut y = Tensor::zeros_like(x);
    let mut inv_std = Vec::with_capacity(b * c);
    for (p, ((src, xh), out)) in x
        .data()
        .chunks_exact(n)
        .zip(xhat.data_mut().chunks_exact_mut(n))
        .zip(y.data_mut().chunks_exact_mut(n))
        .enumerate()
    {
        let ch = p % c;
        let mean = src.iter().map(|&v| v as f64).sum::<f64>() / n as f64;
        let var = src.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n as f64;
        let istd = 1.0 / (var + NORM_EPS as f64).sqrt();
        let (gm, bt) = (gamma.data()[ch], beta.data()[ch]);
        for ((s, xh), o) in src.iter().zip(xh.iter_mut()).zip(out.iter_mut()) {
            *xh = ((*s as f64 - mean) * istd) as f32;
            *o = gm * *xh + bt;
        }
        inv_std.push(istd as f32);
    }
    (y, NormCache { xhat, inv_std })
}

pub struct NormGrads {
    pub dx: Tensor,
    pub dgamma: Tensor,
    pub dbeta: Tensor,
}

pub fn instance_norm_backward(cache: &NormCache, gamma: &Tensor, dy: &Tensor) -> NormGrads {
    let (_, c, h, w) = dy.dims4();
    let n = h * w;
    let mut dx = Tensor::zeros_like(dy);
    let mut dgamma = Tensor::zeros(&[c]);
    let mut dbeta = Tensor::zeros(&[c]);
    for (p, ((g, xh), d)) in dy
        .data()
        .chunks_exact(n)
        .zip(cache.xhat.data().chunks_exact(n))
        .zip(dx.data_mut().chunks_exact_mut(n))
        .enumerate()
    {
        let ch = p % c;
        let gm = gamma.data()[ch] as f64;
        let mut sum_g = 0.0f64;
        let mut sum_gx = 0.0f64;
        for (&gi, &xi) in g.iter().zip(xh) {
            sum_g += gi as f64;
            sum_gx += gi as f64 * xi as f64;
        }
        dgamma.data_mut()[ch] += sum_gx as f32;
        dbeta.data_mut()[ch] += sum_g as f32;
        let istd = cache.inv_std[p] as f64;
        let nf = n as f64;
        for ((di, &gi), &xi) in d.iter_mut().zip(g).zip(xh) {
            let v = gm * istd / nf * (nf * gi as f64 - sum_g - xi as f64 * sum_gx);
            *di = v as f32;
        }
    }
    NormGrads { dx, dgamma, dbeta }
}

pub fn leaky_relu(x: &Tensor) -> Tensor {
    x.map(|v| if v > 0.0 { v } else { LEAKY_SLOPE * v })
}

/// Gradient through leaky ReLU given the op's input.
pub fn leaky_relu_backward(x: &Tensor, dy: &Tensor) -> Tensor {
    zip_map(x, dy, |x, g| if x > 0.0 { g } else { LEAKY_SLOPE * g })
}

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| v.max(0.0))
}

pub fn relu_backward(x: &Tensor, dy: &Tensor) -> Tensor {
    zip_map(x, dy, |x, g| if x > 0.0 { g } else { 0.0 })
}

pub fn tanh(x: &Tensor) -> Tensor {
    x.map(f32::tanh)
}

/// Gradient through tanh given the op's output.
pub fn tanh_backward(y: &Tensor, dy: &Tensor) -> Tensor {
    zip_map(y, dy, |y, g| g * (1.0 - y * y))
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f32, f32) -> f32) -> Tensor {
    assert_eq!(a.shape(), b.shape());
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("same shape")
}

pub fn upsample2x(x: &Tensor) -> Tensor {
    let (b, c, h, w) = x.dims4();
    let mut y = Tensor::zeros(&[b, c, 2 * h, 2 * w]);
    for (src, dst) in x.data().chunks_exact(h * w).zip(y.data_mut().chunks_exact_mut(4 * h * w)) {
        for yy in 0..2 * h {
            let row = &src[(yy / 2) * w..(yy / 2 + 1) * w];
            for (xx, d) in dst[yy * 2 * w..(yy + 1) * 2 * w].iter_mut().enumerate() {
                *d = row[xx / 2];
            }
        }
    }
    y
}

pub fn upsample2x_backward(dy: &Tensor) -> Tensor {
    let (b, c, h2, w2) = dy.dims4();
    let (h, w) = (h2 / 2, w2 / 2);
    let mut dx = Tensor::zeros(&[b, c, h, w]);
    for (src, dst) in dy.data().chunks_exact(h2 * w2).zip(dx.data_mut().chunks_exact_mut(h * w)) {
        for yy in 0..h2 {
            for xx in 0..w2 {
                dst[(yy / 2) * w + xx / 2] += src[yy * w2 + xx];
            }
        }
    }
    dx
}

pub fn concat_channels(a: &Tensor, b: &Tensor) -> Tensor {
    let (n, ca, h, w) = a.dims4();
    let (nb, cb, hb, wb) = b.dims4();
    assert!(n == nb && h == hb && w == wb, "concat: {:?} vs {:?}", a.shape(), b.shape());
    let mut data = Vec::with_capacity((ca + cb) * n * h * w);
    for i in 0..n {
        data.extend_from_slice(a.item(i));
        data.extend_from_slice(b.item(i));
    }
    Tensor::new(vec![n, ca + cb, h, w], data).expect("concat shape")
}

/// Splits a gradient of `concat_channels(a, b)` back into its two parts.
pub fn split_channels(dy: &Tensor, ca: usize) -> (Tensor, Tensor) {
    let (n, c, h, w) = dy.dims4();
    let cb = c - ca;
    let mut da = Vec::with_capacity(n * ca * h * w);
    let mut db = Vec::with_capacity(n * cb * h * w);
    for i in 0..n {
        let item = dy.item(i);
        da.extend_from_slice(&item[..ca * h * w]);
        db.extend_from_slice(&item[ca * h * w..]);
    }
    (Tensor::new(vec![n, ca, h, w], da).expect("split shape"), Tensor::new(vec![n, cb, h, w], db).expect("split shape"))
}

/// Mean absolute error and its gradient with respect to `pred`.
pub fn l1_loss(pred: &Tensor, target: &Tensor) -> (f32, Tensor) {
    assert_eq!(pred.shape(), target.shape(), "l1: shape mismatch");
    let n = pred.numel() as f64;
    let mut sum = 0.0f64;
    let mut grad = Tensor::zeros_like(pred);
    let g = (1.0 / n) as f32;
    for ((p, t), d) in pred.data().iter().zip(target.data()).zip(grad.data_mut()) {
        let diff = p - t;
        sum += diff.abs() as f64;
        *d = if diff > 0.0 {
            g
        } else if diff < 0.0 {
            -g
        } else {
            0.0
        };
    }
    ((sum / n) as f32, grad)
}

/// Mean binary cross-entropy of `sigmoid(logits)` against a constant label,
/// in the stable logit form `max(x, 0) - x·y + ln(1 + e^{-|x|})`.
pub fn bce_with_logits(logits: &Tensor, is_real: bool) -> (f32, Tensor) {
    let y = if is_real { 1.0f64 } else { 0.0 };
    let n = logits.numel() as f64;
    let mut sum = 0.0f64;
    let mut grad = Tensor::zeros_like(logits);
    for (&x, d) in logits.data().iter().zip(grad.data_mut()) {
        let x = x as f64;
        sum += x.max(0.0) - x * y + (-x.abs()).exp().ln_1p();
        let sig = 1.0 / (1.0 + (-x).exp());
        *d = ((sig - y) / n) as f32;
    }
    ((sum / n) as f32, grad)
}
