//! Straightforward double-precision reference kernels.
//!
//! Every reduction runs in ascending index order so results are reproducible
//! bit for bit. These are the correctness yardstick for the systolic engine;
//! they make no attempt at speed.

use crate::error::{Error, Result};
use crate::model::{FcParams, LayerDescriptor, LayerKind, LrnParams, ModelDescriptor, PoolParams, Source};
use crate::tensor::{Shape, Tensor};
use crate::weights::WeightStore;

/// Output of a reference kernel.
pub type OracleOutput = Tensor<f64>;

fn relu_in_place(t: &mut Tensor<f64>) {
    for v in t.data_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Standard convolution: a six-deep loop nest over OFM, output row/column,
/// input channel and the two kernel axes. Fused ReLU follows the layer flag.
pub fn conv_ref<T: Copy + Into<f64>>(
    ifm: &Tensor<T>,
    weights: &[f32],
    bias: &[f32],
    layer: &LayerDescriptor,
) -> Result<OracleOutput> {
    let p = layer.conv_params().ok_or_else(|| Error::layer(&layer.name, "conv_ref needs a conv layer"))?;
    let out_shape = p.output_shape(ifm.shape()).map_err(|m| Error::layer(&layer.name, m))?;
    if weights.len() != p.weight_len() || bias.len() != p.out_channels {
        return Err(Error::layer(
            &layer.name,
            format!(
                "expected {} weights and {} biases, got {} and {}",
                p.weight_len(),
                p.out_channels,
                weights.len(),
                bias.len()
            ),
        ));
    }
    let (ih, iw) = (ifm.shape().height as isize, ifm.shape().width as isize);
    let (icg, ocg, c) = (p.group_in(), p.group_out(), p.kernel);
    let mut out = Tensor::filled(out_shape, 0.0f64);
    for o in 0..p.out_channels {
        let g = o / ocg;
        for oy in 0..out_shape.height {
            for ox in 0..out_shape.width {
                let mut acc = 0.0f64;
                for ci in 0..icg {
                    let ch = g * icg + ci;
                    for ky in 0..c {
                        let y = (oy * p.stride + ky) as isize - p.pad as isize;
                        for kx in 0..c {
                            let x = (ox * p.stride + kx) as isize - p.pad as isize;
                            if y < 0 || y >= ih || x < 0 || x >= iw {
                                continue;
                            }
                            let w = weights[((o * icg + ci) * c + ky) * c + kx] as f64;
                            acc += w * ifm.get(ch, y as usize, x as usize).into();
                        }
                    }
                }
                out.set(o, oy, ox, acc + bias[o] as f64);
            }
        }
    }
    if layer.relu {
        relu_in_place(&mut out);
    }
    Ok(out)
}

/// `out[j] = bias[j] + Σ_i w[j][i]·x[i]` with `weights` row-major `out × in`.
pub fn fc_ref<T: Copy + Into<f64>>(input: &[T], weights: &[f32], bias: &[f32]) -> Result<Vec<f64>> {
    let out_dim = bias.len();
    if weights.len() != out_dim * input.len() {
        return Err(Error::Shape(format!(
            "fc weights hold {} values, expected {} x {}",
            weights.len(),
            out_dim,
            input.len()
        )));
    }
    Ok((0..out_dim)
        .map(|j| {
            let row = &weights[j * input.len()..(j + 1) * input.len()];
            let dot = row.iter().zip(input).fold(0.0f64, |acc, (&w, &x)| acc + w as f64 * x.into());
            bias[j] as f64 + dot
        })
        .collect())
}

/// Per-channel sliding-window maximum. Padded positions never win.
pub fn maxpool_ref<T: Copy + Into<f64>>(ifm: &Tensor<T>, pool: &PoolParams) -> Result<OracleOutput> {
    let shape = ifm.shape();
    let out_shape = pool.output_shape(shape).map_err(Error::Shape)?;
    let mut out = Tensor::filled(out_shape, 0.0f64);
    for ch in 0..shape.channels {
        for oy in 0..out_shape.height {
            for ox in 0..out_shape.width {
                let mut best = f64::NEG_INFINITY;
                for ky in 0..pool.window {
                    for kx in 0..pool.window {
                        let y = (oy * pool.stride + ky) as isize - pool.pad as isize;
                        let x = (ox * pool.stride + kx) as isize - pool.pad as isize;
                        if y < 0 || x < 0 || y >= shape.height as isize || x >= shape.width as isize {
                            continue;
                        }
                        let v: f64 = ifm.get(ch, y as usize, x as usize).into();
                        if v > best {
                            best = v;
                        }
                    }
                }
                out.set(ch, oy, ox, best);
            }
        }
    }
    Ok(out)
}

/// Cross-channel local response normalization,
/// `b[c] = a[c] / (k + alpha/n · Σ a[c']²)^beta`, window clamped at the
/// channel edges.
pub fn lrn_ref<T: Copy + Into<f64>>(ifm: &Tensor<T>, lrn: &LrnParams) -> Result<OracleOutput> {
    if lrn.local_size == 0 || lrn.local_size.is_multiple_of(2) {
        return Err(Error::Shape(format!("LRN local_size must be odd, got {}", lrn.local_size)));
    }
    let shape = ifm.shape();
    let half = lrn.local_size / 2;
    let mut out = Tensor::filled(shape, 0.0f64);
    for ch in 0..shape.channels {
        let lo = ch.saturating_sub(half);
        let hi = (ch + half).min(shape.channels - 1);
        for y in 0..shape.height {
            for x in 0..shape.width {
                let mut sq = 0.0f64;
                for c2 in lo..=hi {
                    let v: f64 = ifm.get(c2, y, x).into();
                    sq += v * v;
                }
                let base = lrn.k + lrn.alpha / lrn.local_size as f64 * sq;
                if base <= 0.0 {
                    return Err(Error::Shape(format!(
                        "LRN denominator base {base} is not positive at ({ch},{y},{x}); k must be > 0"
                    )));
                }
                let a: f64 = ifm.get(ch, y, x).into();
                out.set(ch, y, x, a / base.powf(lrn.beta));
            }
        }
    }
    Ok(out)
}

/// `a + b`, then ReLU when requested.
pub fn eltwise_relu_ref<T: Copy + Into<f64>>(a: &Tensor<T>, b: &Tensor<T>, apply_relu: bool) -> Result<OracleOutput> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!("eltwise operands {} and {}", a.shape(), b.shape())));
    }
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let s = x.into() + y.into();
            if apply_relu && s < 0.0 {
                0.0
            } else {
                s
            }
        })
        .collect();
    Tensor::from_vec(a.shape(), data)
}

fn fc_layer_ref(
    x: &Tensor<f64>,
    weights: &[f32],
    bias: &[f32],
    p: &FcParams,
    layer: &LayerDescriptor,
) -> Result<OracleOutput> {
    if x.shape().len() != p.in_channels {
        return Err(Error::layer(&layer.name, "fc input length mismatch"));
    }
    let out = fc_ref(x.data(), weights, bias).map_err(|e| Error::layer(&layer.name, e.to_string()))?;
    let mut t = Tensor::from_vec(Shape::new(p.out_channels, 1, 1), out)?;
    if layer.relu {
        relu_in_place(&mut t);
    }
    Ok(t)
}

/// Runs every layer once, in declaration order, returning each layer's output.
pub fn model_ref_forward(
    model: &ModelDescriptor,
    input: &Tensor<f32>,
    weights: &WeightStore,
) -> Result<Vec<OracleOutput>> {
    if input.shape() != model.input_shape() {
        return Err(Error::Shape(format!(
            "model `{}` expects input {}, got {}",
            model.name(),
            model.input_shape(),
            input.shape()
        )));
    }
    let input = input.to_f64();
    let mut outputs: Vec<OracleOutput> = Vec::with_capacity(model.layers().len());
    for (i, layer) in model.layers().iter().enumerate() {
        let fetch = |s: Source| -> &Tensor<f64> {
            match s {
                Source::Input => &input,
                Source::Layer(j) => &outputs[j],
            }
        };
        let srcs = model.sources(i);
        let x = fetch(srcs[0]);
        let mut out = match &layer.kind {
            LayerKind::Conv(_) => {
                let (w, b) = weights.layer_params(&layer.name)?;
                conv_ref(x, w, b, layer)?
            }
            LayerKind::Fc(p) => {
                let (w, b) = weights.layer_params(&layer.name)?;
                fc_layer_ref(x, w, b, p, layer)?
            }
            LayerKind::MaxPool(p) => maxpool_ref(x, p)?,
            LayerKind::Lrn(p) => lrn_ref(x, p).map_err(|e| Error::layer(&layer.name, e.to_string()))?,
            LayerKind::Eltwise => eltwise_relu_ref(x, fetch(srcs[1]), false)?,
            LayerKind::Relu => {
                let mut t = x.clone();
                relu_in_place(&mut t);
                t
            }
        };
        // Conv and fc apply their fused ReLU themselves.
        if layer.relu && !layer.is_parameterized() {
            relu_in_place(&mut out);
        }
        outputs.push(out);
    }
    Ok(outputs)
}
