//! POOL, LRN and MemWrite (eltwise add + ReLU) kernels.
//!
//! Each kernel consumes the same `vec_fac`-wide channel vectors the conv
//! kernel produces, so throughput is one output vector per cycle:
//! `cycles = ceil(C / vec_fac) · H · W` of the output.

use serde::Serialize;

use crate::arch::{validate_arch, ArchConfig, WORD_BYTES};
use crate::error::{Error, Result};
use crate::model::{LayerDescriptor, LayerKind, LrnParams, PoolParams};
use crate::tensor::{Shape, Tensor};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct AuxStats {
    pub cycles: u64,
    pub bytes_in: u64,
    pub bytes_out: u64,
}

impl std::ops::AddAssign for AuxStats {
    fn add_assign(&mut self, o: Self) {
        self.cycles += o.cycles;
        self.bytes_in += o.bytes_in;
        self.bytes_out += o.bytes_out;
    }
}

/// Cycles for an aux kernel producing `out`.
pub fn aux_cycles(out: Shape, cfg: &ArchConfig) -> u64 {
    (out.channels.div_ceil(cfg.vec_fac.max(1)) * out.plane()) as u64
}

fn stats(inputs: usize, out: Shape, cfg: &ArchConfig) -> AuxStats {
    AuxStats {
        cycles: aux_cycles(out, cfg),
        bytes_in: (inputs * WORD_BYTES) as u64,
        bytes_out: (out.len() * WORD_BYTES) as u64,
    }
}

fn pool_params(layer: &LayerDescriptor) -> Result<&PoolParams> {
    match &layer.kind {
        LayerKind::MaxPool(p) => Ok(p),
        k => Err(Error::layer(&layer.name, format!("expected maxpool, got {}", k.type_name()))),
    }
}

pub fn simulate_pool(ifm: &Tensor<f32>, layer: &LayerDescriptor, cfg: &ArchConfig) -> Result<(Tensor<f32>, AuxStats)> {
    validate_arch(cfg)?;
    let p = pool_params(layer)?;
    let s = ifm.shape();
    let o = p.output_shape(s).map_err(|m| Error::layer(&layer.name, m))?;
    let mut out = Tensor::filled(o, f32::NEG_INFINITY);
    for ch in 0..o.channels {
        for oy in 0..o.height {
            for ox in 0..o.width {
                let y0 = (oy * p.stride) as isize - p.pad as isize;
                let x0 = (ox * p.stride) as isize - p.pad as isize;
                let mut best = f32::NEG_INFINITY;
                for y in y0.max(0)..(y0 + p.window as isize).min(s.height as isize) {
                    for x in x0.max(0)..(x0 + p.window as isize).min(s.width as isize) {
                        best = best.max(ifm.get(ch, y as usize, x as usize));
                    }
                }
                out.set(ch, oy, ox, best);
            }
        }
    }
    if layer.relu {
        relu(&mut out);
    }
    Ok((out, stats(s.len(), o, cfg)))
}

fn lrn_params(layer: &LayerDescriptor) -> Result<&LrnParams> {
    match &layer.kind {
        LayerKind::Lrn(p) => Ok(p),
        k => Err(Error::layer(&layer.name, format!("expected lrn, got {}", k.type_name()))),
    }
}

/// Cross-channel LRN in single precision.
pub fn simulate_lrn(ifm: &Tensor<f32>, layer: &LayerDescriptor, cfg: &ArchConfig) -> Result<(Tensor<f32>, AuxStats)> {
    validate_arch(cfg)?;
    let p = lrn_params(layer)?;
    if p.local_size == 0 || p.local_size % 2 == 0 {
        return Err(Error::layer(&layer.name, format!("LRN local_size must be odd, got {}", p.local_size)));
    }
    let s = ifm.shape();
    let half = p.local_size / 2;
    let scale = (p.alpha / p.local_size as f64) as f32;
    let (k, beta) = (p.k as f32, p.beta as f32);
    let mut out = Tensor::filled(s, 0.0f32);
    for ch in 0..s.channels {
        let lo = ch.saturating_sub(half);
        let hi = (ch + half).min(s.channels - 1);
        for y in 0..s.height {
            for x in 0..s.width {
                let mut sq = 0.0f32;
                for c2 in lo..=hi {
                    let v = ifm.get(c2, y, x);
                    sq += v * v;
                }
                let base = k + scale * sq;
                if base <= 0.0 {
                    return Err(Error::layer(
                        &layer.name,
                        format!("LRN denominator base {base} is not positive; k must be > 0"),
                    ));
                }
                out.set(ch, y, x, ifm.get(ch, y, x) / base.powf(beta));
            }
        }
    }
    if layer.relu {
        relu(&mut out);
    }
    Ok((out, stats(s.len(), s, cfg)))
}

/// Optional residual add followed by optional ReLU, then write-back.
pub fn simulate_memwrite(
    a: &Tensor<f32>,
    b: Option<&Tensor<f32>>,
    apply_relu: bool,
    cfg: &ArchConfig,
) -> Result<(Tensor<f32>, AuxStats)> {
    validate_arch(cfg)?;
    let mut out = a.clone();
    let mut inputs = a.shape().len();
    if let Some(b) = b {
        if b.shape() != a.shape() {
            return Err(Error::Shape(format!("eltwise operands {} and {}", a.shape(), b.shape())));
        }
        for (o, &y) in out.data_mut().iter_mut().zip(b.data()) {
            *o += y;
        }
        inputs += b.shape().len();
    }
    if apply_relu {
        relu(&mut out);
    }
    let s = a.shape();
    Ok((out, stats(inputs, s, cfg)))
}

fn relu(t: &mut Tensor<f32>) {
    for v in t.data_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}
