//! Three-step design space exploration: `vec_fac` from the burst width,
//! `pe_num` from the FC runtime sweep, `reuse_fac` from the DSP budget.

use std::io::{self, Write};

use rayon::prelude::*;
use serde::Serialize;

use crate::arch::{ArchConfig, FpgaSpec, DATA_BITS, WORD_BYTES};
use crate::error::{Error, Result};
use crate::model::{LayerKind, ModelDescriptor};
use crate::perf::{dsp_usage, layer_latency, model_latency, Bound};

pub const PE_SWEEP: [usize; 10] = [2, 4, 6, 8, 10, 12, 14, 16, 18, 20];
pub const REUSE_SWEEP: std::ops::RangeInclusive<usize> = 1..=16;
/// A successor step must improve by at least this fraction to be taken.
pub const KNEE_THRESHOLD: f64 = 0.05;
pub const THREADS_ENV: &str = "SCNN_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepPoint {
    pub value: usize,
    pub seconds: Option<f64>,
    pub dsp_utilization: Option<f64>,
    pub bound: Option<Bound>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepResult {
    pub parameter: &'static str,
    pub points: Vec<SweepPoint>,
    pub chosen: usize,
    pub rule: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Exploration {
    pub config: ArchConfig,
    pub vec_fac: SweepResult,
    pub pe_num: SweepResult,
    pub reuse_fac: SweepResult,
}

/// Evaluates `f` over `values`, fanning out unless `SCNN_THREADS=0`.
/// Results keep the order of `values`.
fn sweep<T, F>(values: &[usize], f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    let threads = std::env::var(THREADS_ENV).ok().and_then(|v| v.trim().parse::<usize>().ok());
    match threads {
        Some(0) => values.iter().map(|&v| f(v)).collect(),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Infeasible(format!("cannot start sweep threads: {e}")))?
            .install(|| values.par_iter().map(|&v| f(v)).collect()),
        None => values.par_iter().map(|&v| f(v)).collect(),
    }
}

/// `burst_width_bits / 32`, reduced if needed so one vector per cycle fits
/// in the board's sustained bandwidth.
pub fn select_vec_fac(fpga: &FpgaSpec) -> Result<usize> {
    if fpga.burst_width_bits == 0 || !fpga.burst_width_bits.is_multiple_of(DATA_BITS) {
        return Err(Error::Infeasible(format!(
            "burst width {} bits is not a multiple of {DATA_BITS}",
            fpga.burst_width_bits
        )));
    }
    let from_burst = fpga.burst_width_bits / DATA_BITS;
    let sustained = (fpga.bytes_per_cycle() / WORD_BYTES as f64).floor();
    Ok(if (from_burst as f64) <= sustained { from_burst } else { (sustained as usize).max(1) })
}

fn vec_sweep(fpga: &FpgaSpec) -> Result<SweepResult> {
    let v = select_vec_fac(fpga)?;
    Ok(SweepResult {
        parameter: "vec_fac",
        points: vec![SweepPoint { value: v, seconds: None, dsp_utilization: None, bound: None }],
        chosen: v,
        rule: format!("burst_width_bits / {DATA_BITS}, capped by sustained bandwidth"),
    })
}

/// Summed latency of the layers the pe_num sweep looks at, with the bound of
/// the slowest of them.
fn sweep_latency(model: &ModelDescriptor, cfg: &ArchConfig, fpga: &FpgaSpec) -> Result<(f64, Bound)> {
    let has_fc = model.layers().iter().any(|l| matches!(l.kind, LayerKind::Fc(_)));
    let mut total = 0.0;
    let mut slowest: Option<(f64, Bound)> = None;
    for (i, l) in model.layers().iter().enumerate() {
        let wanted = if has_fc { matches!(l.kind, LayerKind::Fc(_)) } else { matches!(l.kind, LayerKind::Conv(_)) };
        if !wanted {
            continue;
        }
        let lat = layer_latency(l, model.input_shape_of(i), model.output_shape(i), cfg, fpga, 1)?;
        total += lat.seconds;
        if slowest.is_none_or(|(s, _)| lat.seconds > s) {
            slowest = Some((lat.seconds, lat.bound));
        }
    }
    let (_, bound) =
        slowest.ok_or_else(|| Error::Infeasible(format!("model `{}` has no fc or conv layers", model.name())))?;
    Ok((total, bound))
}

/// Index of the knee: the first point whose successor improves by less than
/// `KNEE_THRESHOLD` or turns weight-bound; otherwise the last point.
pub fn knee(points: &[SweepPoint]) -> usize {
    for i in 0..points.len().saturating_sub(1) {
        let (a, b) = (&points[i], &points[i + 1]);
        let (Some(sa), Some(sb)) = (a.seconds, b.seconds) else { continue };
        let gain = if sa > 0.0 && sa.is_finite() { (sa - sb) / sa } else { 0.0 };
        let flips = b.bound == Some(Bound::WeightMemory) && a.bound != Some(Bound::WeightMemory);
        if gain < KNEE_THRESHOLD || flips {
            return i;
        }
    }
    points.len() - 1
}

/// Sweeps `pe_num` at `reuse_fac = 1`, batch 1. A board file carrying an FC
/// runtime profile covering every value is used as the runtime curve;
/// otherwise the FC layers (or conv layers) are modeled.
pub fn sweep_pe_num(model: &ModelDescriptor, fpga: &FpgaSpec, vec_fac: usize, values: &[usize]) -> Result<SweepResult> {
    if values.is_empty() {
        return Err(Error::Infeasible("pe_num sweep range is empty".into()));
    }
    let profile =
        fpga.fc_runtime_profile.as_ref().filter(|p| values.iter().all(|v| p.points.iter().any(|q| q.pe_num == *v)));
    let points = sweep(values, |pe| {
        let cfg = ArchConfig::new(pe, vec_fac, 1)?;
        let util = Some(dsp_usage(&cfg, fpga).dsp_utilization);
        Ok(match profile {
            Some(p) => {
                let s = p.points.iter().find(|q| q.pe_num == pe).map(|q| q.seconds);
                SweepPoint { value: pe, seconds: s, dsp_utilization: util, bound: None }
            }
            None => {
                let (s, b) = sweep_latency(model, &cfg, fpga)?;
                SweepPoint { value: pe, seconds: Some(s), dsp_utilization: util, bound: Some(b) }
            }
        })
    })?;
    let chosen = points[knee(&points)].value;
    let source = match profile {
        Some(p) => format!("board runtime profile ({})", p.source),
        None if model.layers().iter().any(|l| matches!(l.kind, LayerKind::Fc(_))) => "modeled fc layers".to_string(),
        None => "modeled conv layers".to_string(),
    };
    Ok(SweepResult {
        parameter: "pe_num",
        points,
        chosen,
        rule: format!(
            "{source}; first point whose successor improves by < {:.0}% or turns weight_memory bound",
            KNEE_THRESHOLD * 100.0
        ),
    })
}

/// Largest `reuse_fac` whose DSP usage fits the board.
pub fn sweep_reuse_fac(
    model: &ModelDescriptor,
    fpga: &FpgaSpec,
    vec_fac: usize,
    pe_num: usize,
    values: &[usize],
) -> Result<SweepResult> {
    if values.is_empty() {
        return Err(Error::Infeasible("reuse_fac sweep range is empty".into()));
    }
    let points = sweep(values, |r| {
        let cfg = ArchConfig::new(pe_num, vec_fac, r)?;
        let res = dsp_usage(&cfg, fpga);
        let lat = model_latency(model, &cfg, fpga, 1)?;
        Ok((
            SweepPoint {
                value: r,
                seconds: Some(lat.total_seconds),
                dsp_utilization: Some(res.dsp_utilization),
                bound: None,
            },
            res.feasible,
        ))
    })?;
    let chosen = points.iter().filter(|(_, ok)| *ok).map(|(p, _)| p.value).max().ok_or_else(|| {
        let per_unit = vec_fac as f64 * fpga.dsp_per_lane + fpga.dsp_overhead_per_ip_unit;
        Error::Infeasible(format!(
            "no reuse_fac fits: pe_num={pe_num}, vec_fac={vec_fac} needs {:.1} DSPs per IP unit row \
             but `{}` has only {}",
            pe_num as f64 * per_unit,
            fpga.name,
            fpga.dsp_count
        ))
    })?;
    Ok(SweepResult {
        parameter: "reuse_fac",
        points: points.into_iter().map(|(p, _)| p).collect(),
        chosen,
        rule: "largest reuse_fac with dsp_utilization <= 100%".into(),
    })
}

/// Chains the three selections in order.
pub fn explore(model: &ModelDescriptor, fpga: &FpgaSpec) -> Result<Exploration> {
    fpga.validate()?;
    let vec_fac = vec_sweep(fpga)?;
    let pe_num = sweep_pe_num(model, fpga, vec_fac.chosen, &PE_SWEEP)?;
    let reuse: Vec<usize> = REUSE_SWEEP.collect();
    let reuse_fac = sweep_reuse_fac(model, fpga, vec_fac.chosen, pe_num.chosen, &reuse)?;
    let config = ArchConfig::new(pe_num.chosen, vec_fac.chosen, reuse_fac.chosen)?;
    Ok(Exploration { config, vec_fac, pe_num, reuse_fac })
}

pub const CSV_HEADER: &str = "parameter,value,seconds,dsp_utilization,bound,chosen";

pub fn write_csv<W: Write>(x: &Exploration, mut out: W) -> io::Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for s in [&x.vec_fac, &x.pe_num, &x.reuse_fac] {
        for p in &s.points {
            let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
            writeln!(
                out,
                "{},{},{},{},{},{}",
                s.parameter,
                p.value,
                opt(p.seconds),
                opt(p.dsp_utilization),
                p.bound.map(Bound::as_str).unwrap_or(""),
                (p.value == s.chosen) as u8
            )?;
        }
    }
    out.flush()
}
