//! Fully connected layers, pointwise activations, softmax cross-entropy and
//! the momentum SGD step.

use crate::error::{Error, Result};
use crate::ops::{counters, LayerGrad};
use crate::tensor::Tensor;

/// Probabilities below this are clamped before taking the log.
pub const PROB_FLOOR: f64 = 1e-12;

fn fc_dims(input: &Tensor, weights: &Tensor) -> Result<(usize, usize)> {
    let [m, n] = weights.shape() else {
        return Err(Error::shape(format!(
            "fc weights must be [M, N], got {:?}",
            weights.shape()
        )));
    };
    if input.len() != *n {
        return Err(Error::shape(format!(
            "fc layer takes {n} inputs, got {}",
            input.len()
        )));
    }
    Ok((*m, *n))
}

/// Affine map of the flattened input.
pub fn fc_forward(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (m, n) = fc_dims(input, weights)?;
    if bias.shape() != [m] {
        return Err(Error::shape(format!("fc bias must be [{m}], got {:?}", bias.shape())));
    }
    let x = input.data();
    let w = weights.data();
    let mut macs = 0u64;
    let out = (0..m)
        .map(|i| {
            let mut acc = 0.0;
            for (wv, xv) in w[i * n..(i + 1) * n].iter().zip(x) {
                acc += wv * xv;
                macs += 1;
            }
            acc + bias.data()[i]
        })
        .collect();
    counters::add_forward(macs);
    Tensor::new(vec![m], out)
}

pub fn fc_backward(input: &Tensor, weights: &Tensor, output_grad: &Tensor) -> Result<LayerGrad> {
    let (input_grad, param_grads) = fc_backward_impl(input, weights, output_grad, true)?;
    Ok(LayerGrad {
        input_grad: input_grad.expect("input gradient requested"),
        param_grads,
    })
}

pub fn fc_backward_params(input: &Tensor, weights: &Tensor, output_grad: &Tensor) -> Result<Vec<Tensor>> {
    fc_backward_impl(input, weights, output_grad, false).map(|(_, p)| p)
}

fn fc_backward_impl(
    input: &Tensor,
    weights: &Tensor,
    output_grad: &Tensor,
    want_input_grad: bool,
) -> Result<(Option<Tensor>, Vec<Tensor>)> {
    let (m, n) = fc_dims(input, weights)?;
    if output_grad.len() != m {
        return Err(Error::shape(format!(
            "fc output gradient must hold {m} values, got {}",
            output_grad.len()
        )));
    }
    let x = input.data();
    let w = weights.data();
    let g = output_grad.data();
    let mut wgrad = vec![0.0; m * n];
    let mut xgrad = if want_input_grad { vec![0.0; n] } else { Vec::new() };
    let (mut macs_w, mut macs_in) = (0u64, 0u64);
    for i in 0..m {
        let gi = g[i];
        let row = &mut wgrad[i * n..(i + 1) * n];
        for (r, xv) in row.iter_mut().zip(x) {
            *r += gi * xv;
            macs_w += 1;
        }
        if want_input_grad {
            for (d, wv) in xgrad.iter_mut().zip(&w[i * n..(i + 1) * n]) {
                *d += gi * wv;
                macs_in += 1;
            }
        }
    }
    counters::add_backward(macs_in, macs_w);
    let input_grad = if want_input_grad {
        Some(Tensor::new(input.shape().to_vec(), xgrad)?)
    } else {
        None
    };
    Ok((
        input_grad,
        vec![Tensor::new(vec![m, n], wgrad)?, Tensor::new(vec![m], g.to_vec())?],
    ))
}

pub fn relu_forward(input: &Tensor) -> Tensor {
    Tensor::from_fn(input.shape(), |i| input.data()[i].max(0.0))
}

/// Gradient through `relu` given the forward *input*.
pub fn relu_backward(input: &Tensor, output_grad: &Tensor) -> Result<Tensor> {
    pointwise_check(input, output_grad)?;
    Ok(Tensor::from_fn(input.shape(), |i| {
        if input.data()[i] > 0.0 {
            output_grad.data()[i]
        } else {
            0.0
        }
    }))
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid_forward(input: &Tensor) -> Tensor {
    Tensor::from_fn(input.shape(), |i| sigmoid(input.data()[i]))
}

/// Gradient through the logistic function given the forward *output*.
pub fn sigmoid_backward(output: &Tensor, output_grad: &Tensor) -> Result<Tensor> {
    pointwise_check(output, output_grad)?;
    Ok(Tensor::from_fn(output.shape(), |i| {
        let s = output.data()[i];
        output_grad.data()[i] * s * (1.0 - s)
    }))
}

fn pointwise_check(a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!(
            "pointwise gradient shape {:?} does not match {:?}",
            b.shape(),
            a.shape()
        )));
    }
    Ok(())
}

/// Max-subtracted softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

#[derive(Debug, Clone)]
pub struct XentOutput {
    pub loss: f64,
    pub logit_grad: Tensor,
    pub probs: Tensor,
}

pub fn softmax_xent(logits: &Tensor, target: usize) -> Result<XentOutput> {
    if target >= logits.len() {
        return Err(Error::invalid(format!(
            "target class {target} out of range for {} logits",
            logits.len()
        )));
    }
    let probs = softmax(logits.data());
    let loss = -probs[target].max(PROB_FLOOR).ln();
    let mut grad = probs.clone();
    grad[target] -= 1.0;
    Ok(XentOutput {
        loss,
        logit_grad: Tensor::new(logits.shape().to_vec(), grad)?,
        probs: Tensor::new(logits.shape().to_vec(), probs)?,
    })
}

fn check_sgd(lr: f64, momentum: f64) -> Result<()> {
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(Error::invalid(format!("learning rate must be positive, got {lr}")));
    }
    if !(0.0..1.0).contains(&momentum) {
        return Err(Error::invalid(format!("momentum must lie in [0, 1), got {momentum}")));
    }
    Ok(())
}

/// `velocity <- momentum * velocity - lr * grad; params <- params + velocity`.
pub fn sgd_update(params: &mut Tensor, grad: &Tensor, velocity: &mut Tensor, lr: f64, momentum: f64) -> Result<()> {
    if !params.same_shape(grad) || !params.same_shape(velocity) {
        return Err(Error::shape(format!(
            "sgd shapes disagree: params {:?}, grad {:?}, velocity {:?}",
            params.shape(),
            grad.shape(),
            velocity.shape()
        )));
    }
    sgd_update_slice(params.data_mut(), grad.data(), velocity.data_mut(), lr, momentum)
}

pub fn sgd_update_slice(params: &mut [f64], grad: &[f64], velocity: &mut [f64], lr: f64, momentum: f64) -> Result<()> {
    check_sgd(lr, momentum)?;
    if params.len() != grad.len() || params.len() != velocity.len() {
        return Err(Error::shape("sgd slices differ in length"));
    }
    let mut macs = 0u64;
    if momentum == 0.0 {
        for ((p, g), v) in params.iter_mut().zip(grad).zip(velocity.iter_mut()) {
            *v = -(lr * g);
            *p += *v;
            macs += 1;
        }
    } else {
        for ((p, g), v) in params.iter_mut().zip(grad).zip(velocity.iter_mut()) {
            *v = momentum * *v - lr * g;
            *p += *v;
            macs += 2;
        }
    }
    counters::add_update(macs);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_fc_passes_input_through() {
        let x = Tensor::vector(vec![1.5, -2.0, 0.25]);
        let w = Tensor::from_fn(&[3, 3], |i| if i % 4 == 0 { 1.0 } else { 0.0 });
        let y = fc_forward(&x, &w, &Tensor::zeros(&[3])).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn zero_input_fc_gives_bias() {
        let b = Tensor::vector(vec![0.1, 0.2]);
        let y = fc_forward(&Tensor::zeros(&[4]), &Tensor::filled(&[2, 4], 3.0), &b).unwrap();
        assert_eq!(y.data(), b.data());
    }

    #[test]
    fn fc_dimension_mismatch_is_rejected() {
        let r = fc_forward(&Tensor::zeros(&[5]), &Tensor::zeros(&[2, 4]), &Tensor::zeros(&[2]));
        assert!(matches!(r, Err(Error::Shape(_))));
        let r = fc_backward(&Tensor::zeros(&[4]), &Tensor::zeros(&[2, 4]), &Tensor::zeros(&[3]));
        assert!(r.is_err());
    }

    #[test]
    fn relu_and_sigmoid_values() {
        let y = relu_forward(&Tensor::vector(vec![-1.0, 2.0]));
        assert_eq!(y.data(), &[0.0, 2.0]);
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0).is_finite() && sigmoid(800.0) == 1.0);
    }

    #[test]
    fn uniform_logits_give_ln_m() {
        let out = softmax_xent(&Tensor::zeros(&[4]), 2).unwrap();
        assert!(out.probs.data().iter().all(|&p| (p - 0.25).abs() < 1e-15));
        assert!((out.loss - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn dominant_logit_is_stable() {
        let out = softmax_xent(&Tensor::vector(vec![1000.0, 0.0]), 0).unwrap();
        assert!(out.loss.abs() < 1e-12);
        assert!(out.probs.data().iter().all(|p| p.is_finite()));
        let out = softmax_xent(&Tensor::vector(vec![1000.0, 0.0]), 1).unwrap();
        assert!((out.loss - (-PROB_FLOOR.ln())).abs() < 1e-9);
    }

    #[test]
    fn target_out_of_range_is_rejected() {
        assert!(softmax_xent(&Tensor::zeros(&[3]), 3).is_err());
    }

    #[test]
    fn zero_grad_leaves_params() {
        let mut p = Tensor::vector(vec![1.0, -2.0]);
        let mut v = Tensor::zeros(&[2]);
        sgd_update(&mut p, &Tensor::zeros(&[2]), &mut v, 0.1, 0.9).unwrap();
        assert_eq!(p.data(), &[1.0, -2.0]);
    }

    #[test]
    fn plain_step_without_momentum() {
        let mut p = Tensor::vector(vec![1.0, -2.0]);
        let mut v = Tensor::zeros(&[2]);
        sgd_update(&mut p, &Tensor::vector(vec![0.5, -1.0]), &mut v, 0.1, 0.0).unwrap();
        assert_eq!(p.data(), &[1.0 - 0.1 * 0.5, -2.0 + 0.1]);
    }

    #[test]
    fn momentum_recurrence_two_steps() {
        let (lr, mu) = (0.05, 0.9);
        let (g1, g2) = (0.4, -0.3);
        let mut p = Tensor::vector(vec![2.0]);
        let mut v = Tensor::zeros(&[1]);
        sgd_update(&mut p, &Tensor::vector(vec![g1]), &mut v, lr, mu).unwrap();
        sgd_update(&mut p, &Tensor::vector(vec![g2]), &mut v, lr, mu).unwrap();
        // hand unrolled
        let v1 = mu * 0.0 - lr * g1;
        let p1 = 2.0 + v1;
        let v2 = mu * v1 - lr * g2;
        let p2 = p1 + v2;
        assert_eq!(v.data(), &[v2]);
        assert_eq!(p.data(), &[p2]);
    }

    #[test]
    fn sgd_rejects_bad_hyperparameters() {
        let mut p = Tensor::zeros(&[1]);
        let mut v = Tensor::zeros(&[1]);
        let g = Tensor::zeros(&[1]);
        assert!(sgd_update(&mut p, &g, &mut v, 0.0, 0.5).is_err());
        assert!(sgd_update(&mut p, &g, &mut v, 0.1, 1.0).is_err());
        assert!(sgd_update(&mut p, &Tensor::zeros(&[2]), &mut v, 0.1, 0.0).is_err());
    }
}
