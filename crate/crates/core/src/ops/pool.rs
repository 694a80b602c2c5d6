//! Non-overlapping square pooling.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PoolKind {
    Max,
    Mean,
}

/// What `pool_backward` needs to route gradients for one forward call.
#[derive(Debug, Clone)]
pub struct PoolRecord {
    pub kind: PoolKind,
    pub input_shape: Vec<usize>,
    pub window: usize,
    /// Flat input index of each output's maximum (max pooling only).
    pub argmax: Vec<usize>,
}

impl PoolRecord {
    pub fn output_shape(&self) -> [usize; 3] {
        [
            self.input_shape[0],
            self.input_shape[1] / self.window,
            self.input_shape[2] / self.window,
        ]
    }
}

pub fn pool_output_shape(input_shape: &[usize], window: usize) -> Result<[usize; 3]> {
    let [c, h, w] = input_shape else {
        return Err(Error::shape(format!(
            "pooling input must be [C, H, W], got {input_shape:?}"
        )));
    };
    if window == 0 {
        return Err(Error::invalid("pooling window must be positive"));
    }
    if window > *h || window > *w {
        return Err(Error::shape(format!(
            "pooling window {window} exceeds spatial extent {h}x{w}"
        )));
    }
    if h % window != 0 || w % window != 0 {
        return Err(Error::shape(format!(
            "pooling window {window} does not divide spatial extent {h}x{w}"
        )));
    }
    Ok([*c, h / window, w / window])
}

pub fn pool_forward(input: &Tensor, kind: PoolKind, window: usize) -> Result<(Tensor, PoolRecord)> {
    let [c, oh, ow] = pool_output_shape(input.shape(), window)?;
    let (h, w) = (input.shape()[1], input.shape()[2]);
    let x = input.data();
    let mut out = vec![0.0; c * oh * ow];
    let mut argmax = if kind == PoolKind::Max { vec![0; out.len()] } else { Vec::new() };
    let area = (window * window) as f64;
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let o = (ch * oh + oy) * ow + ox;
                match kind {
                    PoolKind::Max => {
                        let mut best = (ch * h + oy * window) * w + ox * window;
                        for dy in 0..window {
                            for dx in 0..window {
                                let i = (ch * h + oy * window + dy) * w + ox * window + dx;
                                if x[i] > x[best] {
                                    best = i;
                                }
                            }
                        }
                        out[o] = x[best];
                        argmax[o] = best;
                    }
                    PoolKind::Mean => {
                        let mut acc = 0.0;
                        for dy in 0..window {
                            let row = &x[(ch * h + oy * window + dy) * w + ox * window..][..window];
                            acc += row.iter().sum::<f64>();
                        }
                        out[o] = acc / area;
                    }
                }
            }
        }
    }
    let record = PoolRecord {
        kind,
        input_shape: input.shape().to_vec(),
        window,
        argmax,
    };
    Ok((Tensor::new(vec![c, oh, ow], out)?, record))
}

pub fn pool_backward(record: &PoolRecord, output_grad: &Tensor) -> Result<Tensor> {
    let [c, oh, ow] = record.output_shape();
    if output_grad.shape() != [c, oh, ow] {
        return Err(Error::shape(format!(
            "pool record expects output gradient [{c}, {oh}, {ow}], got {:?}",
            output_grad.shape()
        )));
    }
    let (h, w) = (record.input_shape[1], record.input_shape[2]);
    let window = record.window;
    let g = output_grad.data();
    let mut dx = vec![0.0; c * h * w];
    match record.kind {
        PoolKind::Max => {
            if record.argmax.len() != g.len() {
                return Err(Error::shape("max-pool record lost its argmax table"));
            }
            for (o, &i) in record.argmax.iter().enumerate() {
                dx[i] += g[o];
            }
        }
        PoolKind::Mean => {
            let area = (window * window) as f64;
            for ch in 0..c {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let share = g[(ch * oh + oy) * ow + ox] / area;
                        for dy in 0..window {
                            let row = &mut dx[(ch * h + oy * window + dy) * w + ox * window..][..window];
                            row.iter_mut().for_each(|v| *v += share);
                        }
                    }
                }
            }
        }
    }
    Tensor::new(record.input_shape.clone(), dx)
}
