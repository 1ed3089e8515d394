//! Closed-form latency, bandwidth and resource model.
//!
//! Each layer costs `max(compute, ifm load, weight traffic)` cycles and
//! layers run back to back with no overlap.

use serde::Serialize;

use crate::arch::{validate_arch, ArchConfig, FpgaSpec, WORD_BYTES};
use crate::aux_kernels::aux_cycles;
use crate::error::{Error, Result};
use crate::model::{LayerDescriptor, LayerKind, ModelDescriptor};
use crate::tensor::Shape;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Bound {
    Compute,
    IfmLoad,
    WeightMemory,
}

impl Bound {
    pub fn as_str(self) -> &'static str {
        match self {
            Bound::Compute => "compute",
            Bound::IfmLoad => "ifm_load",
            Bound::WeightMemory => "weight_memory",
        }
    }
}

impl std::fmt::Display for Bound {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LayerLatency {
    pub compute_cycles: u64,
    pub load_cycles: u64,
    pub weight_cycles: u64,
    pub bound: Bound,
    pub seconds: f64,
}

impl LayerLatency {
    /// Applies the max rule. Ties resolve to compute, then IFM load.
    pub fn from_cycles(compute_cycles: u64, load_cycles: u64, weight_cycles: u64, f_clk_hz: f64) -> Self {
        let mut bound = Bound::Compute;
        let mut worst = compute_cycles;
        if load_cycles > worst {
            bound = Bound::IfmLoad;
            worst = load_cycles;
        }
        if weight_cycles > worst {
            bound = Bound::WeightMemory;
            worst = weight_cycles;
        }
        Self { compute_cycles, load_cycles, weight_cycles, bound, seconds: worst as f64 / f_clk_hz }
    }

    pub fn cycles(&self) -> u64 {
        self.compute_cycles.max(self.load_cycles).max(self.weight_cycles)
    }
}

fn transfer_cycles(bytes: f64, fpga: &FpgaSpec) -> u64 {
    let bpc = fpga.bytes_per_cycle();
    if bytes <= 0.0 {
        0
    } else if bpc > 0.0 {
        (bytes / bpc).ceil() as u64
    } else {
        u64::MAX
    }
}

/// `(compute_cycles, load_cycles)` of a conv layer on `ifm`.
///
/// Per conv group: `ceil(op/pe) · H_out · ceil(W_out/reuse) · ceil(ic/vec)`
/// blocks, each `c²` compute cycles and `(s·(reuse − 1) + c) · c` loads.
pub fn conv_cycles(layer: &LayerDescriptor, ifm: Shape, cfg: &ArchConfig) -> Result<(u64, u64)> {
    validate_arch(cfg)?;
    let p = layer.conv_params().ok_or_else(|| Error::layer(&layer.name, "conv_cycles needs a conv layer"))?;
    if ifm.channels != p.in_channels {
        return Err(Error::layer(
            &layer.name,
            format!("expects {} input channels, got {}", p.in_channels, ifm.channels),
        ));
    }
    let out = p.output_shape(ifm).map_err(|m| Error::layer(&layer.name, m))?;
    let blocks = (p.groups
        * p.group_out().div_ceil(cfg.pe_num)
        * out.height
        * out.width.div_ceil(cfg.reuse_fac)
        * p.group_in().div_ceil(cfg.vec_fac)) as u64;
    let c = p.kernel as u64;
    let row_slides = (p.stride * (cfg.reuse_fac - 1) + p.kernel) as u64;
    Ok((blocks * c * c, blocks * row_slides * c))
}

pub fn conv_latency(layer: &LayerDescriptor, ifm: Shape, cfg: &ArchConfig, fpga: &FpgaSpec) -> Result<LayerLatency> {
    let (compute, vectors) = conv_cycles(layer, ifm, cfg)?;
    let p = layer.conv_params().expect("checked by conv_cycles");
    // One vector issue per cycle, unless the port cannot sustain it.
    let load = vectors.max(transfer_cycles((vectors * (cfg.vec_fac * WORD_BYTES) as u64) as f64, fpga));
    let weights = transfer_cycles((p.weight_len() * WORD_BYTES) as f64, fpga);
    Ok(LayerLatency::from_cycles(compute, load, weights, fpga.f_clk_hz))
}

/// FC latency in batch mode: the weight stream is shared by `batch` images,
/// so its per-image cost is divided by `batch`.
pub fn fc_latency(layer: &LayerDescriptor, cfg: &ArchConfig, fpga: &FpgaSpec, batch: usize) -> Result<LayerLatency> {
    validate_arch(cfg)?;
    let p = layer.fc_params().ok_or_else(|| Error::layer(&layer.name, "fc_latency needs an fc layer"))?;
    if batch == 0 {
        return Err(Error::layer(&layer.name, "batch must be at least 1"));
    }
    if batch > cfg.reuse_fac {
        return Err(Error::BatchTooLarge { batch, reuse_fac: cfg.reuse_fac });
    }
    let compute = (p.out_channels.div_ceil(cfg.pe_num) * p.in_channels.div_ceil(cfg.vec_fac)) as u64;
    let weight_bytes = (p.out_channels * p.in_channels * WORD_BYTES) as f64;
    let weights = transfer_cycles(weight_bytes / batch as f64, fpga);
    Ok(LayerLatency::from_cycles(compute, compute, weights, fpga.f_clk_hz))
}

/// Latency of any layer kind. Aux layers move one vector per cycle.
pub fn layer_latency(
    layer: &LayerDescriptor,
    ifm: Shape,
    out: Shape,
    cfg: &ArchConfig,
    fpga: &FpgaSpec,
    batch: usize,
) -> Result<LayerLatency> {
    match &layer.kind {
        LayerKind::Conv(_) => conv_latency(layer, ifm, cfg, fpga),
        LayerKind::Fc(_) => fc_latency(layer, cfg, fpga, batch),
        LayerKind::MaxPool(_) | LayerKind::Lrn(_) | LayerKind::Eltwise | LayerKind::Relu => {
            validate_arch(cfg)?;
            let c = aux_cycles(out, cfg);
            Ok(LayerLatency::from_cycles(c, c, 0, fpga.f_clk_hz))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ResourceReport {
    pub dsp_used: f64,
    pub dsp_utilization: f64,
    pub peak_gflops: f64,
    pub feasible: bool,
}

pub fn dsp_usage(cfg: &ArchConfig, fpga: &FpgaSpec) -> ResourceReport {
    let per_unit = cfg.vec_fac as f64 * fpga.dsp_per_lane + fpga.dsp_overhead_per_ip_unit;
    let dsp_used = (cfg.pe_num * cfg.reuse_fac) as f64 * per_unit;
    let dsp_utilization = dsp_used / fpga.dsp_count as f64;
    ResourceReport {
        dsp_used,
        dsp_utilization,
        peak_gflops: 2.0 * cfg.total_parallelism() as f64 * fpga.f_clk_hz / 1e9,
        feasible: dsp_utilization <= 1.0 + 1e-9,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerReport {
    pub name: String,
    #[serde(rename = "type")]
    pub kind: &'static str,
    pub bound: Bound,
    pub cycles: u64,
    pub seconds: f64,
    pub latency: LayerLatency,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelLatency {
    pub layers: Vec<LayerReport>,
    pub total_cycles: u64,
    pub total_seconds: f64,
    /// Seconds spent in fc layers.
    pub fc_seconds: f64,
    pub conv_seconds: f64,
    pub resources: ResourceReport,
    /// Model peak over the board's measured throughput range, when known.
    pub measured_efficiency: Option<[f64; 2]>,
}

pub fn model_latency(model: &ModelDescriptor, cfg: &ArchConfig, fpga: &FpgaSpec, batch: usize) -> Result<ModelLatency> {
    validate_arch(cfg)?;
    let mut layers = Vec::with_capacity(model.layers().len());
    let (mut total_seconds, mut fc_seconds, mut conv_seconds, mut total_cycles) = (0.0, 0.0, 0.0, 0u64);
    for (i, layer) in model.layers().iter().enumerate() {
        let lat = layer_latency(layer, model.input_shape_of(i), model.output_shape(i), cfg, fpga, batch).map_err(
            |e| match e {
                Error::Layer { .. } | Error::BatchTooLarge { .. } => e,
                other => Error::layer(&layer.name, other.to_string()),
            },
        )?;
        total_seconds += lat.seconds;
        total_cycles = total_cycles.saturating_add(lat.cycles());
        match layer.kind {
            LayerKind::Fc(_) => fc_seconds += lat.seconds,
            LayerKind::Conv(_) => conv_seconds += lat.seconds,
            _ => {}
        }
        layers.push(LayerReport {
            name: layer.name.clone(),
            kind: layer.kind.type_name(),
            bound: lat.bound,
            cycles: lat.cycles(),
            seconds: lat.seconds,
            latency: lat,
        });
    }
    let resources = dsp_usage(cfg, fpga);
    let measured_efficiency = fpga
        .annotations
        .as_ref()
        .and_then(|a| a.measured_gflops)
        .map(|[lo, hi]| [lo / resources.peak_gflops, hi / resources.peak_gflops]);
    Ok(ModelLatency { layers, total_cycles, total_seconds, fc_seconds, conv_seconds, resources, measured_efficiency })
}
