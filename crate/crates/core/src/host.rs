//! Host side: loads descriptors and weights, invokes one kernel per layer in
//! declaration order, routes intermediate tensors (including residual
//! operands) and collects a report.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::arch::{validate_arch, ArchConfig, FpgaSpec};
use crate::aux_kernels::{simulate_lrn, simulate_memwrite, simulate_pool, AuxStats};
use crate::error::{Error, Result};
use crate::model::{LayerKind, ModelDescriptor, Source};
use crate::pe_array::{simulate_conv, simulate_fc, CycleStats};
use crate::perf::{layer_latency, LayerLatency};
use crate::tensor::{Shape, Tensor};
use crate::weights::WeightStore;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Functional simulation with cycle counters.
    Simulate,
    /// Closed-form latency only.
    ModelOnly,
}

#[derive(Debug, Clone)]
pub struct RunOptions<'a> {
    pub mode: Mode,
    /// Images per FC pass.
    pub batch: usize,
    pub cfg: ArchConfig,
    pub fpga: &'a FpgaSpec,
    pub seed: u64,
}

impl RunOptions<'_> {
    pub fn validate(&self) -> Result<()> {
        validate_arch(&self.cfg)?;
        if self.batch == 0 {
            return Err(Error::Shape("batch must be at least 1".into()));
        }
        if self.batch > self.cfg.reuse_fac {
            return Err(Error::BatchTooLarge { batch: self.batch, reuse_fac: self.cfg.reuse_fac });
        }
        Ok(())
    }
}

/// Compact fingerprint of one layer's output across the batch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Digest {
    pub shape: Shape,
    pub sum: f64,
    pub abs_sum: f64,
}

impl Digest {
    fn of(tensors: &[Tensor<f32>]) -> Self {
        let mut d = Digest { shape: tensors[0].shape(), sum: 0.0, abs_sum: 0.0 };
        for t in tensors {
            for &v in t.data() {
                d.sum += v as f64;
                d.abs_sum += (v as f64).abs();
            }
        }
        d
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(untagged)]
pub enum SimStats {
    Array(CycleStats),
    Aux(AuxStats),
}

impl SimStats {
    pub fn cycles(&self) -> u64 {
        match self {
            SimStats::Array(s) => s.total_cycles,
            SimStats::Aux(s) => s.cycles,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerRun {
    pub name: String,
    #[serde(rename = "type")]
    pub kind: &'static str,
    pub output_shape: Shape,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub digest: Option<Digest>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub simulated: Option<SimStats>,
    pub modeled: LayerLatency,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunTotals {
    pub modeled_cycles: u64,
    pub modeled_seconds: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub simulated_cycles: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub simulated_seconds: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConfigEcho {
    pub model: String,
    pub fpga: String,
    pub mode: Mode,
    pub batch: usize,
    pub seed: u64,
    pub arch: ArchConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub config: ConfigEcho,
    pub layers: Vec<LayerRun>,
    pub totals: RunTotals,
    /// Last layer's output per image; empty in model-only mode.
    #[serde(skip)]
    pub outputs: Vec<Tensor<f32>>,
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ModelDescriptor> {
    ModelDescriptor::load(path)
}

pub fn load_weights(path: impl AsRef<Path>, model: &ModelDescriptor) -> Result<WeightStore> {
    WeightStore::load(path, model)
}

/// Seeded uniform(−1, 1) input images.
pub fn synthetic_inputs(shape: Shape, batch: usize, seed: u64) -> Vec<Tensor<f32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..batch)
        .map(|_| {
            let data = (0..shape.len()).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
            Tensor::from_vec(shape, data).expect("length matches shape")
        })
        .collect()
}

fn with_layer(name: &str, e: Error) -> Error {
    match e {
        Error::Layer { .. } | Error::BatchTooLarge { .. } | Error::Io(_) => e,
        other => Error::layer(name, other.to_string()),
    }
}

/// Runs `model` once per layer. `inputs` holds one image per batch slot and
/// is ignored in model-only mode. `opts` is only read.
pub fn run_inference(
    model: &ModelDescriptor,
    weights: &WeightStore,
    inputs: &[Tensor<f32>],
    opts: &RunOptions<'_>,
) -> Result<RunReport> {
    opts.validate()?;
    let simulate = opts.mode == Mode::Simulate;
    if simulate {
        weights.validate(model)?;
        if inputs.len() != opts.batch {
            return Err(Error::Shape(format!("expected {} input images, got {}", opts.batch, inputs.len())));
        }
        if let Some(bad) = inputs.iter().find(|t| t.shape() != model.input_shape()) {
            return Err(Error::Shape(format!(
                "model `{}` expects input {}, got {}",
                model.name(),
                model.input_shape(),
                bad.shape()
            )));
        }
    }
    let cfg = &opts.cfg;
    let mut acts: Vec<Vec<Tensor<f32>>> = Vec::with_capacity(model.layers().len());
    let mut runs = Vec::with_capacity(model.layers().len());
    let mut sim_cycles = 0u64;
    for (i, layer) in model.layers().iter().enumerate() {
        let modeled = layer_latency(layer, model.input_shape_of(i), model.output_shape(i), cfg, opts.fpga, opts.batch)
            .map_err(|e| with_layer(&layer.name, e))?;
        let mut run = LayerRun {
            name: layer.name.clone(),
            kind: layer.kind.type_name(),
            output_shape: model.output_shape(i),
            digest: None,
            simulated: None,
            modeled,
        };
        if simulate {
            let fetch = |s: Source| -> &[Tensor<f32>] {
                match s {
                    Source::Input => inputs,
                    Source::Layer(j) => &acts[j],
                }
            };
            let srcs = model.sources(i);
            let x = fetch(srcs[0]);
            let (out, stats) = run_layer(model, weights, i, x, srcs.get(1).map(|&s| fetch(s)), cfg)
                .map_err(|e| with_layer(&layer.name, e))?;
            sim_cycles += stats.cycles();
            run.digest = Some(Digest::of(&out));
            run.simulated = Some(stats);
            acts.push(out);
        }
        runs.push(run);
    }
    let modeled_seconds = runs.iter().map(|r| r.modeled.seconds).sum();
    let modeled_cycles = runs.iter().map(|r| r.modeled.cycles()).fold(0u64, u64::saturating_add);
    Ok(RunReport {
        config: ConfigEcho {
            model: model.name().to_string(),
            fpga: opts.fpga.name.clone(),
            mode: opts.mode,
            batch: opts.batch,
            seed: opts.seed,
            arch: *cfg,
        },
        layers: runs,
        totals: RunTotals {
            modeled_cycles,
            modeled_seconds,
            simulated_cycles: simulate.then_some(sim_cycles),
            simulated_seconds: simulate.then(|| sim_cycles as f64 / opts.fpga.f_clk_hz),
        },
        outputs: acts.pop().unwrap_or_default(),
    })
}

fn run_layer(
    model: &ModelDescriptor,
    weights: &WeightStore,
    index: usize,
    x: &[Tensor<f32>],
    y: Option<&[Tensor<f32>]>,
    cfg: &ArchConfig,
) -> Result<(Vec<Tensor<f32>>, SimStats)> {
    let layer = &model.layers()[index];
    match &layer.kind {
        LayerKind::Conv(_) => {
            let (w, b) = weights.layer_params(&layer.name)?;
            let mut total = CycleStats::default();
            let mut outs = Vec::with_capacity(x.len());
            for img in x {
                let (o, s) = simulate_conv(img, w, b, layer, cfg)?;
                total += s;
                outs.push(o);
            }
            Ok((outs, SimStats::Array(total)))
        }
        LayerKind::Fc(p) => {
            let (w, b) = weights.layer_params(&layer.name)?;
            let flat: Vec<Vec<f32>> = x.iter().map(|t| t.data().to_vec()).collect();
            let (rows, stats) = simulate_fc(&flat, w, b, cfg)?;
            let shape = Shape::new(p.out_channels, 1, 1);
            let outs = rows
                .into_iter()
                .map(|mut r| {
                    if layer.relu {
                        r.iter_mut().for_each(|v| *v = v.max(0.0));
                    }
                    Tensor::from_vec(shape, r)
                })
                .collect::<Result<_>>()?;
            Ok((outs, SimStats::Array(stats)))
        }
        LayerKind::MaxPool(_) | LayerKind::Lrn(_) | LayerKind::Eltwise | LayerKind::Relu => {
            let mut total = AuxStats::default();
            let mut outs = Vec::with_capacity(x.len());
            for (n, img) in x.iter().enumerate() {
                let (o, s) = match &layer.kind {
                    LayerKind::MaxPool(_) => simulate_pool(img, layer, cfg)?,
                    LayerKind::Lrn(_) => simulate_lrn(img, layer, cfg)?,
                    LayerKind::Eltwise => {
                        let other = y.ok_or_else(|| Error::layer(&layer.name, "eltwise needs two operands"))?;
                        simulate_memwrite(img, Some(&other[n]), layer.relu, cfg)?
                    }
                    _ => simulate_memwrite(img, None, true, cfg)?,
                };
                total += s;
                outs.push(o);
            }
            Ok((outs, SimStats::Aux(total)))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundled;
    use crate::oracle::model_ref_forward;

    fn arria() -> FpgaSpec {
        FpgaSpec::from_json(bundled::ARRIA10).unwrap()
    }

    fn opts(f: &FpgaSpec, cfg: ArchConfig, batch: usize) -> RunOptions<'_> {
        RunOptions { mode: Mode::Simulate, batch, cfg, fpga: f, seed: 1 }
    }

    fn close(got: &Tensor<f32>, want: &Tensor<f64>) -> bool {
        got.shape() == want.shape()
            && got.data().iter().zip(want.data()).all(|(&g, &w)| (g as f64 - w).abs() <= 1e-3 * w.abs() + 1e-6)
    }

    #[test]
    fn relu_only_model_is_exact() {
        let m =
            ModelDescriptor::from_json(r#"{"name":"r","input_shape":[2,3,3],"layers":[{"name":"r","type":"relu"}]}"#)
                .unwrap();
        let f = arria();
        let x = synthetic_inputs(m.input_shape(), 1, 4);
        let rep = run_inference(
            &m,
            &WeightStore::new(),
            &x,
            &opts(&f, ArchConfig { pe_num: 1, vec_fac: 1, reuse_fac: 1 }, 1),
        )
        .unwrap();
        let want = model_ref_forward(&m, &x[0], &WeightStore::new()).unwrap();
        assert_eq!(rep.outputs[0].to_f64(), want[0]);
    }

    #[test]
    fn residual_toy_matches_oracle() {
        let m = ModelDescriptor::from_json(bundled::TOY_RESNET).unwrap();
        let w = WeightStore::synthetic(&m, 9);
        let f = arria();
        let x = synthetic_inputs(m.input_shape(), 1, 3);
        let rep = run_inference(&m, &w, &x, &opts(&f, ArchConfig { pe_num: 4, vec_fac: 4, reuse_fac: 2 }, 1)).unwrap();
        let want = model_ref_forward(&m, &x[0], &w).unwrap();
        assert!(close(&rep.outputs[0], want.last().unwrap()));
        assert_eq!(rep.layers.len(), m.layers().len());
    }

    #[test]
    fn batch_images_run_independently() {
        let m = ModelDescriptor::from_json(bundled::TOY_ALEXNET).unwrap();
        let w = WeightStore::synthetic(&m, 2);
        let f = arria();
        let cfg = ArchConfig { pe_num: 4, vec_fac: 8, reuse_fac: 3 };
        let x = synthetic_inputs(m.input_shape(), 3, 5);
        let all = run_inference(&m, &w, &x, &opts(&f, cfg, 3)).unwrap();
        for (img, got) in x.iter().zip(&all.outputs) {
            let one = run_inference(&m, &w, std::slice::from_ref(img), &opts(&f, cfg, 1)).unwrap();
            assert_eq!(&one.outputs[0], got);
        }
    }

    #[test]
    fn batch_above_reuse_is_rejected() {
        let m = ModelDescriptor::from_json(bundled::TOY_ALEXNET).unwrap();
        let f = arria();
        let o = opts(&f, ArchConfig { pe_num: 4, vec_fac: 8, reuse_fac: 2 }, 3);
        let x = synthetic_inputs(m.input_shape(), 3, 5);
        let err = run_inference(&m, &WeightStore::synthetic(&m, 1), &x, &o).unwrap_err();
        assert!(matches!(err, Error::BatchTooLarge { .. }));
    }

    #[test]
    fn model_only_needs_no_data() {
        let m = ModelDescriptor::from_json(bundled::RESNET50).unwrap();
        let f = arria();
        let o =
            RunOptions { mode: Mode::ModelOnly, ..opts(&f, ArchConfig { pe_num: 16, vec_fac: 16, reuse_fac: 4 }, 1) };
        let rep = run_inference(&m, &WeightStore::new(), &[], &o).unwrap();
        assert_eq!(rep.layers.len(), m.layers().len());
        assert!(rep.layers.iter().all(|l| l.digest.is_none()));
        assert!(rep.totals.modeled_seconds > 0.0);
    }

    #[test]
    fn missing_weights_name_the_layer() {
        let m = ModelDescriptor::from_json(bundled::TOY_ALEXNET).unwrap();
        let f = arria();
        let x = synthetic_inputs(m.input_shape(), 1, 5);
        let err = run_inference(
            &m,
            &WeightStore::new(),
            &x,
            &opts(&f, ArchConfig { pe_num: 1, vec_fac: 1, reuse_fac: 1 }, 1),
        )
        .unwrap_err();
        assert!(err.to_string().contains("conv1"), "{err}");
    }
}
