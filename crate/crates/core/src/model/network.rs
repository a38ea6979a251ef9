//! Forward pass, negative log-likelihood and backpropagation for the fixed
//! layer set (valid conv, dense, ReLU, max-pool, dropout, log-softmax).
//!
//! Subgradients: ReLU has derivative 0 at 0, and max-pool routes the gradient
//! to the lowest-index maximum of each window.

use rand::Rng as _;

use super::arch::{LayerKind, LayerShape, LayerSpec};
use super::params::ModelParams;
use crate::error::{DflError, Result};
use crate::rng::Rng;

/// Per-sample intermediate values kept for the backward pass.
#[derive(Default)]
struct Trace {
    /// Input to each layer.
    inputs: Vec<Vec<f64>>,
    /// Conv/dense output before activation.
    pre: Vec<Vec<f64>>,
    /// For each pooled output, the flat index in `pre` it came from.
    pool_src: Vec<Vec<usize>>,
    /// Dropout keep mask, already scaled by `1 / (1 - p)`.
    masks: Vec<Option<Vec<f64>>>,
    logprobs: Vec<f64>,
}

fn conv_forward(
    spec: &LayerSpec,
    shape: &LayerShape,
    w: &[f64],
    b: &[f64],
    x: &[f64],
    out: &mut Vec<f64>,
) {
    let (ic_n, ih, iw) = shape.input;
    let (oc_n, oh, ow) = shape.pre_pool;
    let (kh, kw) = match spec.kind {
        LayerKind::Conv {
            kernel_h, kernel_w, ..
        } => (kernel_h, kernel_w),
        LayerKind::Dense { .. } => unreachable!(),
    };
    out.clear();
    out.resize(oc_n * oh * ow, 0.0);
    for oc in 0..oc_n {
        let plane = &mut out[oc * oh * ow..(oc + 1) * oh * ow];
        plane.iter_mut().for_each(|v| *v = b[oc]);
        for ic in 0..ic_n {
            let xin = &x[ic * ih * iw..(ic + 1) * ih * iw];
            let kern = &w[(oc * ic_n + ic) * kh * kw..(oc * ic_n + ic + 1) * kh * kw];
            for ky in 0..kh {
                for kx in 0..kw {
                    let wv = kern[ky * kw + kx];
                    for oy in 0..oh {
                        let src = &xin[(oy + ky) * iw + kx..(oy + ky) * iw + kx + ow];
                        let dst = &mut plane[oy * ow..(oy + 1) * ow];
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d += wv * s;
                        }
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn conv_backward(
    spec: &LayerSpec,
    shape: &LayerShape,
    w: &[f64],
    x: &[f64],
    g: &[f64],
    gw: &mut [f64],
    gb: &mut [f64],
    gx: Option<&mut Vec<f64>>,
) {
    let (ic_n, ih, iw) = shape.input;
    let (oc_n, oh, ow) = shape.pre_pool;
    let (kh, kw) = match spec.kind {
        LayerKind::Conv {
            kernel_h, kernel_w, ..
        } => (kernel_h, kernel_w),
        LayerKind::Dense { .. } => unreachable!(),
    };
    for oc in 0..oc_n {
        let gplane = &g[oc * oh * ow..(oc + 1) * oh * ow];
        gb[oc] += gplane.iter().sum::<f64>();
        for ic in 0..ic_n {
            let xin = &x[ic * ih * iw..(ic + 1) * ih * iw];
            let base = (oc * ic_n + ic) * kh * kw;
            for ky in 0..kh {
                for kx in 0..kw {
                    let mut acc = 0.0;
                    for oy in 0..oh {
                        let src = &xin[(oy + ky) * iw + kx..(oy + ky) * iw + kx + ow];
                        let gr = &gplane[oy * ow..(oy + 1) * ow];
                        for (s, gv) in src.iter().zip(gr) {
                            acc += s * gv;
                        }
                    }
                    gw[base + ky * kw + kx] += acc;
                }
            }
        }
    }
    if let Some(gx) = gx {
        gx.clear();
        gx.resize(ic_n * ih * iw, 0.0);
        for oc in 0..oc_n {
            let gplane = &g[oc * oh * ow..(oc + 1) * oh * ow];
            for ic in 0..ic_n {
                let kern = &w[(oc * ic_n + ic) * kh * kw..(oc * ic_n + ic + 1) * kh * kw];
                let gxin = &mut gx[ic * ih * iw..(ic + 1) * ih * iw];
                for ky in 0..kh {
                    for kx in 0..kw {
                        let wv = kern[ky * kw + kx];
                        for oy in 0..oh {
                            let dst = &mut gxin[(oy + ky) * iw + kx..(oy + ky) * iw + kx + ow];
                            let gr = &gplane[oy * ow..(oy + 1) * ow];
                            for (d, gv) in dst.iter_mut().zip(gr) {
                                *d += wv * gv;
                            }
                        }
                    }
                }
            }
        }
    }
}

fn dense_forward(in_dim: usize, out_dim: usize, w: &[f64], b: &[f64], x: &[f64], out: &mut Vec<f64>) {
    out.clear();
    out.extend_from_slice(b);
    for i in 0..in_dim {
        let xi = x[i];
        if xi == 0.0 {
            continue;
        }
        let row = &w[i * out_dim..(i + 1) * out_dim];
        for (o, wv) in out.iter_mut().zip(row) {
            *o += xi * wv;
        }
    }
}

fn max_pool(pre: &[f64], shape: &LayerShape, pool: usize, out: &mut Vec<f64>, src: &mut Vec<usize>) {
    let (c, ph, pw) = shape.pre_pool;
    let (_, oh, ow) = shape.output;
    out.clear();
    src.clear();
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = f64::NEG_INFINITY;
                let mut best_idx = 0;
                for dy in 0..pool {
                    for dx in 0..pool {
                        let idx = ch * ph * pw + (oy * pool + dy) * pw + ox * pool + dx;
                        // strict comparison keeps the lowest index on ties
                        if pre[idx] > best {
                            best = pre[idx];
                            best_idx = idx;
                        }
                    }
                }
                out.push(best);
                src.push(best_idx);
            }
        }
    }
}

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    logits.iter().map(|z| z - lse).collect()
}

fn forward_sample(
    params: &ModelParams,
    x: &[f64],
    mut dropout: Option<&mut Rng>,
    trace: &mut Trace,
) {
    let arch = params.arch();
    let n = arch.num_layers();
    trace.inputs.resize_with(n, Vec::new);
    trace.pre.resize_with(n, Vec::new);
    trace.pool_src.resize_with(n, Vec::new);
    trace.masks.resize_with(n, || None);
    trace.inputs[0].clear();
    trace.inputs[0].extend_from_slice(x);
    let mut act = Vec::new();
    for (l, (spec, shape)) in arch.layers().iter().zip(arch.shapes()).enumerate() {
        let lp = params.layer(l);
        let mut pre = std::mem::take(&mut trace.pre[l]);
        match spec.kind {
            LayerKind::Conv { .. } => {
                conv_forward(spec, shape, &lp.weights, &lp.bias, &trace.inputs[l], &mut pre)
            }
            LayerKind::Dense { in_dim, out_dim } => {
                dense_forward(in_dim, out_dim, &lp.weights, &lp.bias, &trace.inputs[l], &mut pre)
            }
        }
        act.clear();
        if spec.relu {
            act.extend(pre.iter().map(|&v| if v > 0.0 { v } else { 0.0 }));
        } else {
            act.extend_from_slice(&pre);
        }
        trace.pre[l] = pre;
        if spec.pool > 1 {
            let mut pooled = Vec::new();
            max_pool(&act, shape, spec.pool, &mut pooled, &mut trace.pool_src[l]);
            act = pooled;
        } else {
            trace.pool_src[l].clear();
        }
        trace.masks[l] = match (spec.dropout, dropout.as_deref_mut()) {
            (Some(p), Some(rng)) if p > 0.0 => {
                let keep = 1.0 / (1.0 - p);
                let mask: Vec<f64> = (0..act.len())
                    .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
                    .collect();
                act.iter_mut().zip(&mask).for_each(|(a, m)| *a *= m);
                Some(mask)
            }
            _ => None,
        };
        if l + 1 < n {
            trace.inputs[l + 1].clear();
            trace.inputs[l + 1].extend_from_slice(&act);
        }
    }
    trace.logprobs = log_softmax(&act);
}

fn check_inputs(params: &ModelParams, inputs: &[f64]) -> Result<usize> {
    let len = params.arch().input_len();
    if inputs.is_empty() {
        return Err(DflError::shape("empty batch"));
    }
    if !inputs.len().is_multiple_of(len) {
        return Err(DflError::shape(format!(
            "input buffer of {} values is not a multiple of the image size {len}",
            inputs.len()
        )));
    }
    Ok(inputs.len() / len)
}

/// Per-class log-probabilities for a batch of images laid out back to back
/// (`batch * C * H * W` values). Dropout is never applied here.
pub fn forward(params: &ModelParams, inputs: &[f64]) -> Result<Vec<Vec<f64>>> {
    let n = check_inputs(params, inputs)?;
    let len = params.arch().input_len();
    let mut trace = Trace::default();
    Ok((0..n)
        .map(|i| {
            forward_sample(params, &inputs[i * len..(i + 1) * len], None, &mut trace);
            std::mem::take(&mut trace.logprobs)
        })
        .collect())
}

/// Mean negative log-likelihood of the true labels.
pub fn nll_loss(logprobs: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    if logprobs.len() != labels.len() {
        return Err(DflError::shape(format!(
            "{} predictions for {} labels",
            logprobs.len(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(DflError::shape("empty batch"));
    }
    let mut total = 0.0;
    for (lp, &y) in logprobs.iter().zip(labels) {
        let v = lp
            .get(y)
            .ok_or_else(|| DflError::data(format!("label {y} outside [0, {})", lp.len())))?;
        total -= v;
    }
    Ok(total / labels.len() as f64)
}

/// Mean loss over the batch together with its gradient.
///
/// With `dropout = None` every dropout site is skipped, which makes the
/// result a pure function of `(params, inputs, labels)`.
pub fn loss_and_gradient(
    params: &ModelParams,
    inputs: &[f64],
    labels: &[usize],
    mut dropout: Option<&mut Rng>,
) -> Result<(f64, ModelParams)> {
    let n = check_inputs(params, inputs)?;
    if labels.len() != n {
        return Err(DflError::shape(format!("{n} images but {} labels", labels.len())));
    }
    let arch = params.arch();
    let classes = arch.classes();
    if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
        return Err(DflError::data(format!("label {bad} outside [0, {classes})")));
    }
    let len = arch.input_len();
    let mut grads = ModelParams::zeros(params.arch_handle().clone());
    let mut trace = Trace::default();
    let mut loss = 0.0;
    let inv_n = 1.0 / n as f64;
    let mut g: Vec<f64> = Vec::new();
    let mut g_next: Vec<f64> = Vec::new();
    for (i, &y) in labels.iter().enumerate() {
        forward_sample(
            params,
            &inputs[i * len..(i + 1) * len],
            dropout.as_deref_mut(),
            &mut trace,
        );
        loss -= trace.logprobs[y];
        // d(-log p_y)/d logits = softmax - onehot
        g.clear();
        g.extend(trace.logprobs.iter().map(|lp| lp.exp() * inv_n));
        g[y] -= inv_n;
        for l in (0..arch.num_layers()).rev() {
            let spec = &arch.layers()[l];
            let shape = &arch.shapes()[l];
            if let Some(mask) = &trace.masks[l] {
                g.iter_mut().zip(mask).for_each(|(gv, m)| *gv *= m);
            }
            if spec.pool > 1 {
                let (c, h, w) = shape.pre_pool;
                let mut un = vec![0.0; c * h * w];
                for (gv, &src) in g.iter().zip(&trace.pool_src[l]) {
                    un[src] += gv;
                }
                g = un;
            }
            if spec.relu {
                g.iter_mut()
                    .zip(&trace.pre[l])
                    .for_each(|(gv, &z)| if z <= 0.0 { *gv = 0.0 });
            }
            let lp = params.layer(l);
            let gl = grads.layer_mut(l);
            let need_input_grad = l > 0;
            match spec.kind {
                LayerKind::Conv { .. } => {
                    conv_backward(
                        spec,
                        shape,
                        &lp.weights,
                        &trace.inputs[l],
                        &g,
                        &mut gl.weights,
                        &mut gl.bias,
                        need_input_grad.then_some(&mut g_next),
                    );
                }
                LayerKind::Dense { in_dim, out_dim } => {
                    let x = &trace.inputs[l];
                    for (b, gv) in gl.bias.iter_mut().zip(&g) {
                        *b += gv;
                    }
                    for k in 0..in_dim {
                        let xk = x[k];
                        if xk != 0.0 {
                            let row = &mut gl.weights[k * out_dim..(k + 1) * out_dim];
                            for (r, gv) in row.iter_mut().zip(&g) {
                                *r += xk * gv;
                            }
                        }
                    }
                    if need_input_grad {
                        g_next.clear();
                        g_next.extend((0..in_dim).map(|k| {
                            lp.weights[k * out_dim..(k + 1) * out_dim]
                                .iter()
                                .zip(&g)
                                .map(|(w, gv)| w * gv)
                                .sum::<f64>()
                        }));
                    }
                }
            }
            if need_input_grad {
                std::mem::swap(&mut g, &mut g_next);
            }
        }
    }
    Ok((loss * inv_n, grads))
}

/// Gradient of the mean batch loss.
pub fn gradient(
    params: &ModelParams,
    inputs: &[f64],
    labels: &[usize],
    dropout: Option<&mut Rng>,
) -> Result<ModelParams> {
    loss_and_gradient(params, inputs, labels, dropout).map(|(_, g)| g)
}

/// Which side of every non-differentiable point the batch sits on: one entry
/// per ReLU unit (active or not) and per pooling window (winning index).
///
/// Two parameter vectors with equal patterns lie in the same linear piece of
/// the network, which is what finite-difference checks need to know.
pub fn activation_pattern(params: &ModelParams, inputs: &[f64]) -> Result<Vec<usize>> {
    let n = check_inputs(params, inputs)?;
    let len = params.arch().input_len();
    let mut trace = Trace::default();
    let mut pattern = Vec::new();
    for i in 0..n {
        forward_sample(params, &inputs[i * len..(i + 1) * len], None, &mut trace);
        for (l, spec) in params.arch().layers().iter().enumerate() {
            if spec.relu {
                pattern.extend(trace.pre[l].iter().map(|&z| usize::from(z > 0.0)));
            }
            pattern.extend_from_slice(&trace.pool_src[l]);
        }
    }
    Ok(pattern)
}

/// Index of the largest log-probability (lowest index on ties).
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::model::{init_params, Architecture, InitMode, LayerSpec};
    use crate::rng;

    fn small() -> Arc<Architecture> {
        Arc::new(Architecture::small((1, 8, 8), 10).unwrap())
    }

    fn random_inputs(n: usize, len: usize, seed: u64) -> Vec<f64> {
        let mut r = rng::stream(seed, &[99]);
        (0..n * len).map(|_| r.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn zero_weights_give_uniform_logprobs() {
        let p = ModelParams::zeros(small());
        let x = random_inputs(3, 64, 1);
        for row in forward(&p, &x).unwrap() {
            for v in row {
                assert!((v - (0.1f64).ln()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn outputs_are_normalized_and_finite() {
        let p = init_params(&small(), 5, InitMode::SharedUniform);
        let x = random_inputs(4, 64, 2);
        for row in forward(&p, &x).unwrap() {
            assert!(row.iter().all(|v| v.is_finite()));
            let s: f64 = row.iter().map(|v| v.exp()).sum();
            assert!((s - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn forward_rejects_bad_shapes() {
        let p = ModelParams::zeros(small());
        assert!(matches!(forward(&p, &[]), Err(DflError::Shape(_))));
        assert!(matches!(forward(&p, &[0.0; 65]), Err(DflError::Shape(_))));
    }

    #[test]
    fn nll_of_uniform_is_ln_ten() {
        let rows = vec![vec![(0.1f64).ln(); 10]; 3];
        let loss = nll_loss(&rows, &[0, 4, 9]).unwrap();
        assert!((loss - 10f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn nll_is_a_batch_mean() {
        let mut a = vec![-5.0; 10];
        a[2] = 0.0;
        let mut b = vec![-5.0; 10];
        b[1] = -3.0;
        let loss = nll_loss(&[a, b], &[2, 1]).unwrap();
        assert!((loss - 1.5).abs() < 1e-15);
    }

    #[test]
    fn nll_rejects_out_of_range_label() {
        let rows = vec![vec![(0.1f64).ln(); 10]];
        assert!(matches!(nll_loss(&rows, &[10]), Err(DflError::Data(_))));
    }

    #[test]
    fn zero_input_zero_weights_give_zero_conv_grads() {
        let p = ModelParams::zeros(small());
        let x = vec![0.0; 2 * 64];
        let g = gradient(&p, &x, &[3, 7], None).unwrap();
        assert!(g.layer(0).weights.iter().all(|&v| v == 0.0));
        assert!(g.layer(1).weights.iter().all(|&v| v == 0.0));
        // last bias sees softmax - onehot
        assert!(g.layer(3).bias.iter().any(|&v| v != 0.0));
    }

    #[test]
    fn duplicated_batch_keeps_mean_gradient() {
        let p = init_params(&small(), 9, InitMode::SharedUniform);
        let x = random_inputs(3, 64, 3);
        let y = [1, 5, 8];
        let g1 = gradient(&p, &x, &y, None).unwrap();
        let mut x2 = x.clone();
        x2.extend_from_slice(&x);
        let g2 = gradient(&p, &x2, &[1, 5, 8, 1, 5, 8], None).unwrap();
        for (a, b) in g1.values().zip(g2.values()) {
            assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn gradient_is_deterministic_with_seeded_dropout() {
        let arch = Arc::new(Architecture::reference((1, 8, 8), 10).unwrap());
        let p = init_params(&arch, 2, InitMode::SharedUniform);
        let x = random_inputs(2, 64, 4);
        let g1 = gradient(&p, &x, &[0, 1], Some(&mut rng::stream(1, &[]))).unwrap();
        let g2 = gradient(&p, &x, &[0, 1], Some(&mut rng::stream(1, &[]))).unwrap();
        assert_eq!(g1, g2);
        let g3 = gradient(&p, &x, &[0, 1], None).unwrap();
        assert_ne!(g1, g3);
    }

    #[test]
    fn loss_matches_forward_nll() {
        let arch = Arc::new(
            Architecture::new(
                (1, 5, 5),
                10,
                vec![LayerSpec::conv(1, 2, 2).with_pool(2), LayerSpec::dense(8, 10).with_relu(false)],
            )
            .unwrap(),
        );
        let p = init_params(&arch, 4, InitMode::SharedUniform);
        let x = random_inputs(2, 25, 5);
        let (loss, _) = loss_and_gradient(&p, &x, &[3, 3], None).unwrap();
        let direct = nll_loss(&forward(&p, &x).unwrap(), &[3, 3]).unwrap();
        assert!((loss - direct).abs() < 1e-12);
    }
}
