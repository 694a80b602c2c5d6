//! Direct 2-D convolution over `[C, H, W]` inputs.
//!
//! Zero padding is materialised before the window loops, so every kernel tap
//! is executed (and counted) even where it lands on padding.

use crate::error::{Error, Result};
use crate::ops::{counters, LayerGrad};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_channels: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    pub fn out_h(&self) -> usize {
        (self.in_h + 2 * self.padding - self.kernel) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.in_w + 2 * self.padding - self.kernel) / self.stride + 1
    }

    fn padded_h(&self) -> usize {
        self.in_h + 2 * self.padding
    }

    fn padded_w(&self) -> usize {
        self.in_w + 2 * self.padding
    }
}

fn geometry(input: &Tensor, kernels: &Tensor, stride: usize, padding: usize) -> Result<ConvGeometry> {
    let [c, h, w] = input.shape() else {
        return Err(Error::shape(format!(
            "convolution input must be [C, H, W], got {:?}",
            input.shape()
        )));
    };
    let [o, kc, kh, kw] = kernels.shape() else {
        return Err(Error::shape(format!(
            "kernels must be [C_out, C_in, k, k], got {:?}",
            kernels.shape()
        )));
    };
    if kc != c {
        return Err(Error::shape(format!(
            "kernels expect {kc} input channels, input has {c}"
        )));
    }
    if kh != kw {
        return Err(Error::shape(format!("kernels must be square, got {kh}x{kw}")));
    }
    if stride == 0 {
        return Err(Error::invalid("stride must be positive"));
    }
    if *kh > h + 2 * padding || *kw > w + 2 * padding {
        return Err(Error::shape(format!(
            "kernel {kh}x{kw} larger than padded input {}x{}",
            h + 2 * padding,
            w + 2 * padding
        )));
    }
    Ok(ConvGeometry {
        in_channels: *c,
        in_h: *h,
        in_w: *w,
        out_channels: *o,
        kernel: *kh,
        stride,
        padding,
    })
}

fn pad(input: &[f64], g: &ConvGeometry) -> Vec<f64> {
    if g.padding == 0 {
        return input.to_vec();
    }
    let (ph, pw) = (g.padded_h(), g.padded_w());
    let mut out = vec![0.0; g.in_channels * ph * pw];
    for c in 0..g.in_channels {
        for y in 0..g.in_h {
            let src = &input[(c * g.in_h + y) * g.in_w..][..g.in_w];
            let dst = &mut out[(c * ph + y + g.padding) * pw + g.padding..][..g.in_w];
            dst.copy_from_slice(src);
        }
    }
    out
}

fn unpad(padded: &[f64], g: &ConvGeometry) -> Vec<f64> {
    if g.padding == 0 {
        return padded.to_vec();
    }
    let (ph, pw) = (g.padded_h(), g.padded_w());
    let mut out = vec![0.0; g.in_channels * g.in_h * g.in_w];
    for c in 0..g.in_channels {
        for y in 0..g.in_h {
            let src = &padded[(c * ph + y + g.padding) * pw + g.padding..][..g.in_w];
            out[(c * g.in_h + y) * g.in_w..][..g.in_w].copy_from_slice(src);
        }
    }
    out
}

pub fn conv2d_forward(
    input: &Tensor,
    kernels: &Tensor,
    bias: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let g = geometry(input, kernels, stride, padding)?;
    if bias.shape() != [g.out_channels] {
        return Err(Error::shape(format!(
            "bias must be [{}], got {:?}",
            g.out_channels,
            bias.shape()
        )));
    }
    let x = pad(input.data(), &g);
    let w = kernels.data();
    let b = bias.data();
    let (oh, ow, ph, pw, k, s) = (g.out_h(), g.out_w(), g.padded_h(), g.padded_w(), g.kernel, g.stride);
    let mut out = vec![0.0; g.out_channels * oh * ow];
    let mut macs = 0u64;
    // Every output accumulates its taps in (c, ky, kx) order, then adds the bias.
    for (o, plane) in out.chunks_exact_mut(oh * ow).enumerate() {
        for c in 0..g.in_channels {
            for ky in 0..k {
                for kx in 0..k {
                    let wv = w[((o * g.in_channels + c) * k + ky) * k + kx];
                    for (oy, dst) in plane.chunks_exact_mut(ow).enumerate() {
                        let xrow = &x[(c * ph + oy * s + ky) * pw + kx..];
                        for (d, xv) in dst.iter_mut().zip(xrow.iter().step_by(s)) {
                            *d += wv * xv;
                        }
                        macs += ow as u64;
                    }
                }
            }
        }
        plane.iter_mut().for_each(|v| *v += b[o]);
    }
    counters::add_forward(macs);
    Tensor::new(vec![g.out_channels, oh, ow], out)
}

pub fn conv2d_backward(
    input: &Tensor,
    kernels: &Tensor,
    output_grad: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<LayerGrad> {
    let (input_grad, param_grads) =
        conv2d_backward_impl(input, kernels, output_grad, stride, padding, true)?;
    Ok(LayerGrad {
        input_grad: input_grad.expect("input gradient requested"),
        param_grads,
    })
}

/// Kernel and bias gradients only; used where nothing upstream is trained.
pub fn conv2d_backward_params(
    input: &Tensor,
    kernels: &Tensor,
    output_grad: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<Vec<Tensor>> {
    conv2d_backward_impl(input, kernels, output_grad, stride, padding, false).map(|(_, p)| p)
}

fn conv2d_backward_impl(
    input: &Tensor,
    kernels: &Tensor,
    output_grad: &Tensor,
    stride: usize,
    padding: usize,
    want_input_grad: bool,
) -> Result<(Option<Tensor>, Vec<Tensor>)> {
    let g = geometry(input, kernels, stride, padding)?;
    let (oh, ow, ph, pw, k, s) = (g.out_h(), g.out_w(), g.padded_h(), g.padded_w(), g.kernel, g.stride);
    if output_grad.shape() != [g.out_channels, oh, ow] {
        return Err(Error::shape(format!(
            "output gradient must be [{}, {oh}, {ow}], got {:?}",
            g.out_channels,
            output_grad.shape()
        )));
    }
    let x = pad(input.data(), &g);
    let w = kernels.data();
    let og = output_grad.data();
    let mut kgrad = vec![0.0; w.len()];
    let mut bgrad = vec![0.0; g.out_channels];
    let mut xgrad = if want_input_grad { vec![0.0; x.len()] } else { Vec::new() };
    let (mut macs_w, mut macs_in) = (0u64, 0u64);
    for (o, gplane) in og.chunks_exact(oh * ow).enumerate() {
        bgrad[o] = gplane.iter().sum();
        for c in 0..g.in_channels {
            for ky in 0..k {
                for kx in 0..k {
                    let wi = ((o * g.in_channels + c) * k + ky) * k + kx;
                    let mut acc = 0.0;
                    for (oy, grow) in gplane.chunks_exact(ow).enumerate() {
                        let off = (c * ph + oy * s + ky) * pw + kx;
                        for (gv, xv) in grow.iter().zip(x[off..].iter().step_by(s)) {
                            acc += gv * xv;
                        }
                        macs_w += ow as u64;
                        if want_input_grad {
                            let wv = w[wi];
                            for (gv, xg) in grow.iter().zip(xgrad[off..].iter_mut().step_by(s)) {
                                *xg += gv * wv;
                            }
                            macs_in += ow as u64;
                        }
                    }
                    kgrad[wi] = acc;
                }
            }
        }
    }
    counters::add_backward(macs_in, macs_w);
    let input_grad = if want_input_grad {
        Some(Tensor::new(input.shape().to_vec(), unpad(&xgrad, &g))?)
    } else {
        None
    };
    Ok((
        input_grad,
        vec![
            Tensor::new(kernels.shape().to_vec(), kgrad)?,
            Tensor::new(vec![g.out_channels], bgrad)?,
        ],
    ))
}
