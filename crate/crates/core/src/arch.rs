use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Violation};

/// Bit width of every IFM, OFM and weight word (single precision).
pub const DATA_BITS: usize = 32;
pub const WORD_BYTES: usize = DATA_BITS / 8;

/// The three architectural parameters that fully determine an accelerator
/// instance.
///
/// `pe_num` PEs form the 1-D systolic array (parallelism across OFMs); each PE
/// holds `reuse_fac` IP units (parallelism along the IFM row); each IP unit
/// performs a `vec_fac`-lane partial inner product (parallelism across IFM
/// channels).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ArchConfig {
    pub pe_num: usize,
    pub vec_fac: usize,
    pub reuse_fac: usize,
}

impl ArchConfig {
    /// Builds a config, rejecting it with every violated invariant listed.
    pub fn new(pe_num: usize, vec_fac: usize, reuse_fac: usize) -> Result<Self> {
        let cfg = Self { pe_num, vec_fac, reuse_fac };
        validate_arch(&cfg)?;
        Ok(cfg)
    }

    pub fn total_parallelism(&self) -> usize {
        self.pe_num * self.vec_fac * self.reuse_fac
    }

    pub fn ifm_buffer_words(&self) -> usize {
        self.reuse_fac * self.vec_fac
    }
}

pub fn validate_arch(cfg: &ArchConfig) -> Result<()> {
    let mut violations = Vec::new();
    for (field, value) in [("pe_num", cfg.pe_num), ("vec_fac", cfg.vec_fac), ("reuse_fac", cfg.reuse_fac)] {
        if value < 1 {
            violations.push(Violation::new(field, format!("must be >= 1, got {value}")));
        }
    }
    if violations.is_empty() {
        Ok(())
    } else {
        Err(Error::Invalid { what: "architecture config", violations })
    }
}

pub fn ifm_buffer_words(cfg: &ArchConfig) -> usize {
    cfg.ifm_buffer_words()
}

/// Runtime of the FC layers at a given `pe_num`, as shipped with a board file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfilePoint {
    pub pe_num: usize,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuntimeProfile {
    /// Where the curve came from; carried into DSE reports verbatim.
    pub source: String,
    pub points: Vec<ProfilePoint>,
}

/// Reference figures reported for real hardware. Never used as predictions.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BoardAnnotations {
    #[serde(default)]
    pub measured_gflops: Option<[f64; 2]>,
    #[serde(default)]
    pub reported_latency_ms: BTreeMap<String, f64>,
}

/// Resource and bandwidth description of a target board.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FpgaSpec {
    pub name: String,
    pub dsp_count: usize,
    /// Off-chip data width that can be accessed per cycle.
    pub burst_width_bits: usize,
    pub mem_bandwidth_bytes_per_sec: f64,
    pub f_clk_hz: f64,
    /// DSP blocks consumed per multiply-accumulate lane.
    pub dsp_per_lane: f64,
    /// DSP blocks consumed per IP unit by its adder tree and accumulator.
    pub dsp_overhead_per_ip_unit: f64,
    /// Measured or figure-derived FC runtime curve used by the pe_num sweep.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fc_runtime_profile: Option<RuntimeProfile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotations: Option<BoardAnnotations>,
}

impl FpgaSpec {
    pub fn bytes_per_cycle(&self) -> f64 {
        self.mem_bandwidth_bytes_per_sec / self.f_clk_hz
    }

    pub fn burst_bytes(&self) -> usize {
        self.burst_width_bits / 8
    }

    pub fn validate(&self) -> Result<()> {
        let mut v = Vec::new();
        if self.dsp_count == 0 {
            v.push(Violation::new("dsp_count", "must be >= 1"));
        }
        if self.burst_width_bits == 0 || !self.burst_width_bits.is_multiple_of(DATA_BITS) {
            v.push(Violation::new(
                "burst_width_bits",
                format!("must be a positive multiple of {DATA_BITS}, got {}", self.burst_width_bits),
            ));
        }
        if self.mem_bandwidth_bytes_per_sec.is_nan() || self.mem_bandwidth_bytes_per_sec <= 0.0 {
            v.push(Violation::new("mem_bandwidth_bytes_per_sec", "must be > 0"));
        }
        if !(self.f_clk_hz > 0.0 && self.f_clk_hz.is_finite()) {
            v.push(Violation::new("f_clk_hz", "must be a finite value > 0"));
        }
        if !(self.dsp_per_lane > 0.0 && self.dsp_per_lane.is_finite()) {
            v.push(Violation::new("dsp_per_lane", "must be a finite value > 0"));
        }
        if !(self.dsp_overhead_per_ip_unit >= 0.0 && self.dsp_overhead_per_ip_unit.is_finite()) {
            v.push(Violation::new("dsp_overhead_per_ip_unit", "must be a finite value >= 0"));
        }
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Invalid { what: "FPGA spec", violations: v })
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: FpgaSpec = serde_json::from_str(text).map_err(crate::model::parse_error)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
