//! Grouped 2-D cross-correlation. Standard convolution is one group;
//! depthwise convolution uses one group per input map.

use ndarray::linalg::general_mat_mul;
use ndarray::{ArrayView2, ArrayViewMut2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::tensornn::tensor::{Shape, Tensor};
use crate::tensornn::{NnError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    Valid,
    Same,
}

/// Output length and leading pad along one axis, or `None` if the kernel
/// does not fit.
pub fn axis_output(input: usize, kernel: usize, stride: usize, padding: Padding) -> Option<(usize, usize)> {
    if kernel == 0 || stride == 0 || input == 0 {
        return None;
    }
    match padding {
        Padding::Valid => (input >= kernel).then(|| ((input - kernel) / stride + 1, 0)),
        Padding::Same => {
            let out = input.div_ceil(stride);
            let total = ((out - 1) * stride + kernel).saturating_sub(input);
            Some((out, total / 2))
        }
    }
}

/// Output positions `lo..hi` whose input index `o * stride + tap - pad`
/// falls inside `0..input`.
#[inline]
fn valid_span(out: usize, input: usize, tap: usize, stride: usize, pad: usize) -> (usize, usize) {
    let lo = if pad > tap { (pad - tap).div_ceil(stride) } else { 0 };
    let hi = if input + pad > tap {
        ((input - 1 + pad - tap) / stride + 1).min(out)
    } else {
        0
    };
    (lo.min(hi), hi)
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 4];
    let chunks = n / 4;
    for i in 0..chunks {
        let j = 4 * i;
        acc[0] += a[j] * b[j];
        acc[1] += a[j + 1] * b[j + 1];
        acc[2] += a[j + 2] * b[j + 2];
        acc[3] += a[j + 3] * b[j + 3];
    }
    let mut tail = 0.0;
    for j in 4 * chunks..n {
        tail += a[j] * b[j];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (o, i) in y.iter_mut().zip(x) {
        *o += alpha * i;
    }
}

#[derive(Debug, Clone, Copy)]
struct Geom {
    n: usize,
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
    ph: usize,
    pw: usize,
}

/// Convolution weights `(out_maps, in_maps / groups, kh, kw)` with optional
/// per-filter bias.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub in_maps: usize,
    pub out_maps: usize,
    pub groups: usize,
    pub kernel: [usize; 2],
    pub stride: [usize; 2],
    pub padding: Padding,
    pub weight: Vec<f64>,
    pub bias: Option<Vec<f64>>,
    pub grad_weight: Vec<f64>,
    pub grad_bias: Option<Vec<f64>>,
}

/// Gradients returned by [`Conv2d::backward`].
#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrads {
    pub input: Tensor,
    pub weight: Vec<f64>,
    pub bias: Option<Vec<f64>>,
}

impl Conv2d {
    pub fn new(
        in_maps: usize,
        out_maps: usize,
        groups: usize,
        kernel: [usize; 2],
        stride: [usize; 2],
        padding: Padding,
        bias: bool,
    ) -> Result<Self> {
        if in_maps == 0 || out_maps == 0 || groups == 0 {
            return Err(NnError::Config("map and group counts must be positive".into()));
        }
        if !in_maps.is_multiple_of(groups) || !out_maps.is_multiple_of(groups) {
            return Err(NnError::Config(format!(
                "{in_maps} input / {out_maps} output maps not divisible into {groups} groups"
            )));
        }
        if kernel.contains(&0) || stride.contains(&0) {
            return Err(NnError::Config("kernel and stride must be at least 1".into()));
        }
        let n_weights = out_maps * (in_maps / groups) * kernel[0] * kernel[1];
        Ok(Conv2d {
            in_maps,
            out_maps,
            groups,
            kernel,
            stride,
            padding,
            weight: vec![0.0; n_weights],
            bias: bias.then(|| vec![0.0; out_maps]),
            grad_weight: vec![0.0; n_weights],
            grad_bias: bias.then(|| vec![0.0; out_maps]),
        })
    }

    /// Depthwise convolution: each input map gets `multiplier` kernels of its own.
    pub fn depthwise(
        in_maps: usize,
        multiplier: usize,
        kernel: [usize; 2],
        stride: [usize; 2],
        padding: Padding,
    ) -> Result<Self> {
        if multiplier == 0 {
            return Err(NnError::Config("depth multiplier must be at least 1".into()));
        }
        Conv2d::new(in_maps, in_maps * multiplier, in_maps, kernel, stride, padding, false)
    }

    pub fn fan_in(&self) -> usize {
        (self.in_maps / self.groups) * self.kernel[0] * self.kernel[1]
    }

    /// He-style uniform initialization, zero bias.
    pub fn init<R: Rng>(&mut self, rng: &mut R) {
        let bound = (6.0 / self.fan_in() as f64).sqrt();
        for w in &mut self.weight {
            *w = rng.random_range(-bound..bound);
        }
        if let Some(b) = &mut self.bias {
            b.fill(0.0);
        }
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.as_ref().map_or(0, Vec::len)
    }

    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        let [n, f, h, w] = input;
        if f != self.in_maps {
            return Err(NnError::Shape(format!(
                "convolution expects {} input maps, got {}",
                self.in_maps, f
            )));
        }
        let (oh, _) = axis_output(h, self.kernel[0], self.stride[0], self.padding)
            .ok_or_else(|| self.no_fit(input))?;
        let (ow, _) = axis_output(w, self.kernel[1], self.stride[1], self.padding)
            .ok_or_else(|| self.no_fit(input))?;
        Ok([n, self.out_maps, oh, ow])
    }

    fn no_fit(&self, input: Shape) -> NnError {
        NnError::Shape(format!(
            "kernel {:?} does not fit input {:?} with {:?} padding",
            self.kernel, input, self.padding
        ))
    }

    fn geometry(&self, input: Shape) -> Result<Geom> {
        let [n, _, h, w] = input;
        let [_, _, oh, ow] = self.output_shape(input)?;
        let (_, ph) = axis_output(h, self.kernel[0], self.stride[0], self.padding).unwrap();
        let (_, pw) = axis_output(w, self.kernel[1], self.stride[1], self.padding).unwrap();
        Ok(Geom { n, h, w, oh, ow, ph, pw })
    }

    #[inline]
    fn widx(&self, oc: usize, icg: usize, ky: usize, kx: usize) -> usize {
        ((oc * (self.in_maps / self.groups) + icg) * self.kernel[0] + ky) * self.kernel[1] + kx
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        if self.groups == 1 {
            self.forward_gemm(x)
        } else {
            self.forward_direct(x)
        }
    }

    pub fn backward(&self, x: &Tensor, grad_out: &Tensor) -> Result<ConvGrads> {
        if self.groups == 1 {
            self.backward_gemm(x, grad_out)
        } else {
            self.backward_direct(x, grad_out)
        }
    }

    /// Unrolls one sample into a `(in_maps * kh * kw, oh * ow)` matrix.
    fn im2col(&self, g: &Geom, xs: &[f64], col: &mut [f64]) {
        let [kh, kw] = self.kernel;
        let [sh, sw] = self.stride;
        let p = g.oh * g.ow;
        col.fill(0.0);
        for ic in 0..self.in_maps {
            let iplane = &xs[ic * g.h * g.w..][..g.h * g.w];
            for ky in 0..kh {
                let (oy_lo, oy_hi) = valid_span(g.oh, g.h, ky, sh, g.ph);
                for kx in 0..kw {
                    let (ox_lo, ox_hi) = valid_span(g.ow, g.w, kx, sw, g.pw);
                    if ox_lo >= ox_hi {
                        continue;
                    }
                    let row = &mut col[((ic * kh + ky) * kw + kx) * p..][..p];
                    let ix0 = ox_lo * sw + kx - g.pw;
                    for oy in oy_lo..oy_hi {
                        let irow = &iplane[(oy * sh + ky - g.ph) * g.w..][..g.w];
                        let dst = &mut row[oy * g.ow + ox_lo..oy * g.ow + ox_hi];
                        if sw == 1 {
                            dst.copy_from_slice(&irow[ix0..ix0 + dst.len()]);
                        } else {
                            for (j, d) in dst.iter_mut().enumerate() {
                                *d = irow[ix0 + j * sw];
                            }
                        }
                    }
                }
            }
        }
    }

    /// Adds an unrolled gradient matrix back onto one sample's input planes.
    fn col2im(&self, g: &Geom, col: &[f64], gs: &mut [f64]) {
        let [kh, kw] = self.kernel;
        let [sh, sw] = self.stride;
        let p = g.oh * g.ow;
        for ic in 0..self.in_maps {
            let gplane = &mut gs[ic * g.h * g.w..][..g.h * g.w];
            for ky in 0..kh {
                let (oy_lo, oy_hi) = valid_span(g.oh, g.h, ky, sh, g.ph);
                for kx in 0..kw {
                    let (ox_lo, ox_hi) = valid_span(g.ow, g.w, kx, sw, g.pw);
                    if ox_lo >= ox_hi {
                        continue;
                    }
                    let row = &col[((ic * kh + ky) * kw + kx) * p..][..p];
                    let ix0 = ox_lo * sw + kx - g.pw;
                    for oy in oy_lo..oy_hi {
                        let grow = &mut gplane[(oy * sh + ky - g.ph) * g.w..][..g.w];
                        let src = &row[oy * g.ow + ox_lo..oy * g.ow + ox_hi];
                        if sw == 1 {
                            axpy(1.0, src, &mut grow[ix0..ix0 + src.len()]);
                        } else {
                            for (j, v) in src.iter().enumerate() {
                                grow[ix0 + j * sw] += v;
                            }
                        }
                    }
                }
            }
        }
    }

    fn forward_gemm(&self, x: &Tensor) -> Result<Tensor> {
        let g = self.geometry(x.shape())?;
        let kdim = self.weight.len() / self.out_maps;
        let p = g.oh * g.ow;
        let mut out = Tensor::zeros([g.n, self.out_maps, g.oh, g.ow]);
        let mut col = vec![0.0; kdim * p];
        let w = ArrayView2::from_shape((self.out_maps, kdim), &self.weight).expect("weight layout");
        let in_len = self.in_maps * g.h * g.w;
        for (xs, os) in x.data().chunks(in_len).zip(out.data_mut().chunks_mut(self.out_maps * p)) {
            self.im2col(&g, xs, &mut col);
            if let Some(b) = &self.bias {
                for (plane, &bv) in os.chunks_mut(p).zip(b) {
                    plane.fill(bv);
                }
            }
            let colv = ArrayView2::from_shape((kdim, p), &col).expect("col layout");
            let mut ov = ArrayViewMut2::from_shape((self.out_maps, p), os).expect("out layout");
            general_mat_mul(1.0, &w, &colv, 1.0, &mut ov);
        }
        Ok(out)
    }

    fn backward_gemm(&self, x: &Tensor, grad_out: &Tensor) -> Result<ConvGrads> {
        let g = self.geometry(x.shape())?;
        grad_out.expect_shape([g.n, self.out_maps, g.oh, g.ow], "convolution upstream gradient")?;
        let kdim = self.weight.len() / self.out_maps;
        let p = g.oh * g.ow;
        let mut gin = Tensor::zeros(x.shape());
        let mut gw = vec![0.0; self.weight.len()];
        let mut gb = self.bias.as_ref().map(|b| vec![0.0; b.len()]);
        let mut col = vec![0.0; kdim * p];
        let mut gcol = vec![0.0; kdim * p];
        let w = ArrayView2::from_shape((self.out_maps, kdim), &self.weight).expect("weight layout");
        let in_len = self.in_maps * g.h * g.w;
        let samples = x
            .data()
            .chunks(in_len)
            .zip(grad_out.data().chunks(self.out_maps * p))
            .zip(gin.data_mut().chunks_mut(in_len));
        for ((xs, gs), gis) in samples {
            if let Some(gb) = &mut gb {
                for (acc, plane) in gb.iter_mut().zip(gs.chunks(p)) {
                    *acc += plane.iter().sum::<f64>();
                }
            }
            self.im2col(&g, xs, &mut col);
            let gv = ArrayView2::from_shape((self.out_maps, p), gs).expect("grad layout");
            let colv = ArrayView2::from_shape((kdim, p), &col).expect("col layout");
            let mut gwv = ArrayViewMut2::from_shape((self.out_maps, kdim), &mut gw[..]).expect("weight layout");
            general_mat_mul(1.0, &gv, &colv.t(), 1.0, &mut gwv);
            let mut gcv = ArrayViewMut2::from_shape((kdim, p), &mut gcol[..]).expect("col layout");
            general_mat_mul(1.0, &w.t(), &gv, 0.0, &mut gcv);
            self.col2im(&g, &gcol, gis);
        }
        Ok(ConvGrads {
            input: gin,
            weight: gw,
            bias: gb,
        })
    }

    /// Direct loop implementation; handles grouped convolutions.
    pub(crate) fn forward_direct(&self, x: &Tensor) -> Result<Tensor> {
        let g = self.geometry(x.shape())?;
        let mut out = Tensor::zeros([g.n, self.out_maps, g.oh, g.ow]);
        let cin_g = self.in_maps / self.groups;
        let cout_g = self.out_maps / self.groups;
        let [kh, kw] = self.kernel;
        let [sh, sw] = self.stride;
        let in_plane = g.h * g.w;
        let out_plane = g.oh * g.ow;
        let xd = x.data();
        let od = out.data_mut();
        for n in 0..g.n {
            for oc in 0..self.out_maps {
                let group = oc / cout_g;
                let o_off = (n * self.out_maps + oc) * out_plane;
                let oplane = &mut od[o_off..o_off + out_plane];
                if let Some(b) = &self.bias {
                    oplane.fill(b[oc]);
                }
                for icg in 0..cin_g {
                    let ic = group * cin_g + icg;
                    let iplane = &xd[(n * self.in_maps + ic) * in_plane..][..in_plane];
                    for ky in 0..kh {
                        let (oy_lo, oy_hi) = valid_span(g.oh, g.h, ky, sh, g.ph);
                        for kx in 0..kw {
                            let wv = self.weight[self.widx(oc, icg, ky, kx)];
                            let (ox_lo, ox_hi) = valid_span(g.ow, g.w, kx, sw, g.pw);
                            if ox_lo >= ox_hi {
                                continue;
                            }
                            for oy in oy_lo..oy_hi {
                                let iy = oy * sh + ky - g.ph;
                                let orow = &mut oplane[oy * g.ow..(oy + 1) * g.ow];
                                let irow = &iplane[iy * g.w..(iy + 1) * g.w];
                                let ix0 = ox_lo * sw + kx - g.pw;
                                if sw == 1 {
                                    axpy(wv, &irow[ix0..ix0 + (ox_hi - ox_lo)], &mut orow[ox_lo..ox_hi]);
                                } else {
                                    for (j, o) in orow[ox_lo..ox_hi].iter_mut().enumerate() {
                                        *o += wv * irow[ix0 + j * sw];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    pub(crate) fn backward_direct(&self, x: &Tensor, grad_out: &Tensor) -> Result<ConvGrads> {
        let g = self.geometry(x.shape())?;
        grad_out.expect_shape([g.n, self.out_maps, g.oh, g.ow], "convolution upstream gradient")?;
        let cin_g = self.in_maps / self.groups;
        let cout_g = self.out_maps / self.groups;
        let [kh, kw] = self.kernel;
        let [sh, sw] = self.stride;
        let in_plane = g.h * g.w;
        let out_plane = g.oh * g.ow;
        let mut gin = Tensor::zeros(x.shape());
        let mut gw = vec![0.0; self.weight.len()];
        let mut gb = self.bias.as_ref().map(|b| vec![0.0; b.len()]);
        let xd = x.data();
        let gd = grad_out.data();
        let gid = gin.data_mut();
        for n in 0..g.n {
            for oc in 0..self.out_maps {
                let group = oc / cout_g;
                let gplane = &gd[(n * self.out_maps + oc) * out_plane..][..out_plane];
                if let Some(gb) = &mut gb {
                    gb[oc] += gplane.iter().sum::<f64>();
                }
                for icg in 0..cin_g {
                    let ic = group * cin_g + icg;
                    let i_off = (n * self.in_maps + ic) * in_plane;
                    for ky in 0..kh {
                        let (oy_lo, oy_hi) = valid_span(g.oh, g.h, ky, sh, g.ph);
                        for kx in 0..kw {
                            let wi = self.widx(oc, icg, ky, kx);
                            let wv = self.weight[wi];
                            let (ox_lo, ox_hi) = valid_span(g.ow, g.w, kx, sw, g.pw);
                            if ox_lo >= ox_hi {
                                continue;
                            }
                            let len = ox_hi - ox_lo;
                            let mut acc = 0.0;
                            for oy in oy_lo..oy_hi {
                                let iy = oy * sh + ky - g.ph;
                                let grow = &gplane[oy * g.ow + ox_lo..oy * g.ow + ox_hi];
                                let ix0 = ox_lo * sw + kx - g.pw;
                                let row = i_off + iy * g.w;
                                if sw == 1 {
                                    acc += dot(grow, &xd[row + ix0..row + ix0 + len]);
                                    axpy(wv, grow, &mut gid[row + ix0..row + ix0 + len]);
                                } else {
                                    for (j, &gv) in grow.iter().enumerate() {
                                        acc += gv * xd[row + ix0 + j * sw];
                                        gid[row + ix0 + j * sw] += wv * gv;
                                    }
                                }
                            }
                            gw[wi] += acc;
                        }
                    }
                }
            }
        }
        Ok(ConvGrads {
            input: gin,
            weight: gw,
            bias: gb,
        })
    }

    /// Rescales each filter whose L2 norm exceeds `limit`.
    pub fn apply_max_norm(&mut self, limit: f64) {
        let per_filter = self.weight.len() / self.out_maps;
        for w in self.weight.chunks_mut(per_filter) {
            let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > limit {
                let s = limit / norm;
                w.iter_mut().for_each(|v| *v *= s);
            }
        }
    }
}

/// Depthwise convolution (multiplier 1) followed by a pointwise 1×1
/// convolution with bias.
#[derive(Debug, Clone, PartialEq)]
pub struct SeparableConv2d {
    pub depthwise: Conv2d,
    pub pointwise: Conv2d,
}

impl SeparableConv2d {
    pub fn new(in_maps: usize, filters: usize, kernel: [usize; 2], padding: Padding) -> Result<Self> {
        Ok(SeparableConv2d {
            depthwise: Conv2d::depthwise(in_maps, 1, kernel, [1, 1], padding)?,
            pointwise: Conv2d::new(in_maps, filters, 1, [1, 1], [1, 1], Padding::Valid, true)?,
        })
    }

    pub fn param_count(&self) -> usize {
        self.depthwise.param_count() + self.pointwise.param_count()
    }

    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        self.pointwise.output_shape(self.depthwise.output_shape(input)?)
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.pointwise.forward(&self.depthwise.forward(x)?)
    }

    /// Returns input grad plus (depthwise, pointwise) parameter grads.
    pub fn backward(&self, x: &Tensor, grad_out: &Tensor) -> Result<(Tensor, ConvGrads, ConvGrads)> {
        let mid = self.depthwise.forward(x)?;
        let pw = self.pointwise.backward(&mid, grad_out)?;
        let dw = self.depthwise.backward(x, &pw.input)?;
        Ok((dw.input.clone(), dw, pw))
    }
}
