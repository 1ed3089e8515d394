//! Model descriptors: a DAG of layers with shape inference and FLOP counting.
//!
//! The on-disk form is JSON:
//!
//! ```json
//! { "name": "toy", "input_shape": [3, 32, 32],
//!   "layers": [ { "name": "conv1", "type": "conv", "inputs": ["input"],
//!                 "out_channels": 16, "kernel": 3, "stride": 1, "pad": 1, "relu": true } ] }
//! ```
//!
//! `inputs` may be omitted, in which case the layer consumes the previous layer
//! (or the model input for the first layer). The model input is named `input`.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Shape;

/// Name by which layers refer to the model input.
pub const MODEL_INPUT: &str = "input";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvParams {
    /// Total input channels (`ic_dim`) across all groups.
    pub in_channels: usize,
    /// Output channels (`op_dim`).
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub groups: usize,
}

impl ConvParams {
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize, stride: usize, pad: usize) -> Self {
        Self { in_channels, out_channels, kernel, stride, pad, groups: 1 }
    }

    pub fn with_groups(mut self, groups: usize) -> Self {
        self.groups = groups;
        self
    }

    pub fn group_in(&self) -> usize {
        self.in_channels / self.groups
    }

    pub fn group_out(&self) -> usize {
        self.out_channels / self.groups
    }

    /// Flattened weight count, laid out `out × in/groups × kernel × kernel`.
    pub fn weight_len(&self) -> usize {
        self.out_channels * self.group_in() * self.kernel * self.kernel
    }

    pub fn output_shape(&self, input: Shape) -> std::result::Result<Shape, String> {
        if input.channels != self.in_channels {
            return Err(format!("expects {} input channels, producer has {}", self.in_channels, input.channels));
        }
        let h = window_out(input.height, self.kernel, self.stride, self.pad)?;
        let w = window_out(input.width, self.kernel, self.stride, self.pad)?;
        Ok(Shape::new(self.out_channels, h, w))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FcParams {
    pub in_channels: usize,
    pub out_channels: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolParams {
    pub window: usize,
    pub stride: usize,
    pub pad: usize,
}

impl PoolParams {
    pub fn new(window: usize, stride: usize) -> Self {
        Self { window, stride, pad: 0 }
    }

    pub fn output_shape(&self, input: Shape) -> std::result::Result<Shape, String> {
        let h = window_out(input.height, self.window, self.stride, self.pad)?;
        let w = window_out(input.width, self.window, self.stride, self.pad)?;
        Ok(Shape::new(input.channels, h, w))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrnParams {
    pub local_size: usize,
    pub alpha: f64,
    pub beta: f64,
    pub k: f64,
}

impl Default for LrnParams {
    /// AlexNet's cross-channel normalization.
    fn default() -> Self {
        Self { local_size: 5, alpha: 1e-4, beta: 0.75, k: 2.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerKind {
    Conv(ConvParams),
    Fc(FcParams),
    MaxPool(PoolParams),
    Lrn(LrnParams),
    Eltwise,
    Relu,
}

impl LayerKind {
    pub fn type_name(&self) -> &'static str {
        match self {
            LayerKind::Conv(_) => "conv",
            LayerKind::Fc(_) => "fc",
            LayerKind::MaxPool(_) => "maxpool",
            LayerKind::Lrn(_) => "lrn",
            LayerKind::Eltwise => "eltwise",
            LayerKind::Relu => "relu",
        }
    }

    fn arity(&self) -> usize {
        if matches!(self, LayerKind::Eltwise) {
            2
        } else {
            1
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerDescriptor {
    pub name: String,
    pub kind: LayerKind,
    /// Producer names; `input` denotes the model input.
    pub inputs: Vec<String>,
    /// Fused ReLU applied to this layer's output.
    pub relu: bool,
}

impl LayerDescriptor {
    pub fn new(name: impl Into<String>, kind: LayerKind, inputs: &[&str]) -> Self {
        Self { name: name.into(), kind, inputs: inputs.iter().map(|s| s.to_string()).collect(), relu: false }
    }

    pub fn with_relu(mut self, relu: bool) -> Self {
        self.relu = relu;
        self
    }

    pub fn conv_params(&self) -> Option<&ConvParams> {
        match &self.kind {
            LayerKind::Conv(p) => Some(p),
            _ => None,
        }
    }

    pub fn fc_params(&self) -> Option<&FcParams> {
        match &self.kind {
            LayerKind::Fc(p) => Some(p),
            _ => None,
        }
    }

    pub fn is_parameterized(&self) -> bool {
        matches!(self.kind, LayerKind::Conv(_) | LayerKind::Fc(_))
    }
}

/// Where a layer reads one of its operands from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    Input,
    Layer(usize),
}

/// A validated model: the DAG resolves and every layer's shape is known.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelDescriptor {
    name: String,
    input_shape: Shape,
    layers: Vec<LayerDescriptor>,
    sources: Vec<Vec<Source>>,
    shapes: Vec<Shape>,
}

impl ModelDescriptor {
    pub fn new(name: impl Into<String>, input_shape: Shape, layers: Vec<LayerDescriptor>) -> Result<Self> {
        let sources = resolve_sources(&layers)?;
        let shapes = infer_layer_shapes(input_shape, &layers, &sources)?;
        Ok(Self { name: name.into(), input_shape, layers, sources, shapes })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn input_shape(&self) -> Shape {
        self.input_shape
    }

    pub fn layers(&self) -> &[LayerDescriptor] {
        &self.layers
    }

    pub fn layer(&self, name: &str) -> Option<(usize, &LayerDescriptor)> {
        self.layers.iter().enumerate().find(|(_, l)| l.name == name)
    }

    pub fn sources(&self, layer: usize) -> &[Source] {
        &self.sources[layer]
    }

    pub fn output_shape(&self, layer: usize) -> Shape {
        self.shapes[layer]
    }

    pub fn source_shape(&self, source: Source) -> Shape {
        match source {
            Source::Input => self.input_shape,
            Source::Layer(i) => self.shapes[i],
        }
    }

    /// Shape of the first operand a layer consumes.
    pub fn input_shape_of(&self, layer: usize) -> Shape {
        self.source_shape(self.sources[layer][0])
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: RawModel = serde_json::from_str(text).map_err(parse_error)?;
        raw.into_model()
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        let raw = RawModel::from_model(self);
        serde_json::to_string_pretty(&raw).expect("model serializes")
    }
}

pub(crate) fn parse_error(e: serde_json::Error) -> Error {
    Error::Parse { line: e.line(), column: e.column(), message: e.to_string() }
}

fn window_out(extent: usize, window: usize, stride: usize, pad: usize) -> std::result::Result<usize, String> {
    if stride == 0 {
        return Err("stride must be >= 1".into());
    }
    if window == 0 {
        return Err("window must be >= 1".into());
    }
    let padded = extent + 2 * pad;
    if window > padded {
        return Err(format!("window {window} larger than padded input {padded}"));
    }
    Ok((padded - window) / stride + 1)
}

fn resolve_sources(layers: &[LayerDescriptor]) -> Result<Vec<Vec<Source>>> {
    let mut seen: HashMap<&str, usize> = HashMap::new();
    let mut out = Vec::with_capacity(layers.len());
    for (i, layer) in layers.iter().enumerate() {
        if layer.name == MODEL_INPUT {
            return Err(Error::layer(&layer.name, "`input` is reserved for the model input"));
        }
        if layer.inputs.len() != layer.kind.arity() {
            return Err(Error::layer(
                &layer.name,
                format!("{} takes {} input(s), got {}", layer.kind.type_name(), layer.kind.arity(), layer.inputs.len()),
            ));
        }
        let mut srcs = Vec::with_capacity(layer.inputs.len());
        for name in &layer.inputs {
            if name == MODEL_INPUT {
                srcs.push(Source::Input);
            } else if let Some(&j) = seen.get(name.as_str()) {
                srcs.push(Source::Layer(j));
            } else {
                return Err(Error::layer(
                    &layer.name,
                    format!("input `{name}` is not an earlier layer or the model input"),
                ));
            }
        }
        if seen.insert(layer.name.as_str(), i).is_some() {
            return Err(Error::layer(&layer.name, "duplicate layer name"));
        }
        out.push(srcs);
    }
    Ok(out)
}

fn infer_layer_shapes(input: Shape, layers: &[LayerDescriptor], sources: &[Vec<Source>]) -> Result<Vec<Shape>> {
    let mut shapes: Vec<Shape> = Vec::with_capacity(layers.len());
    for (layer, srcs) in layers.iter().zip(sources) {
        let operands: Vec<Shape> = srcs
            .iter()
            .map(|s| match *s {
                Source::Input => input,
                Source::Layer(j) => shapes[j],
            })
            .collect();
        shapes.push(layer_output_shape(layer, &operands)?);
    }
    Ok(shapes)
}

/// Output shape of one layer given the shapes of its operands.
fn layer_output_shape(layer: &LayerDescriptor, operands: &[Shape]) -> Result<Shape> {
    let x = operands[0];
    let result = match &layer.kind {
        LayerKind::Conv(p) => check_conv(p).and_then(|_| p.output_shape(x)),
        LayerKind::Fc(p) => {
            if p.out_channels == 0 {
                Err("out_channels must be >= 1".to_string())
            } else if p.in_channels != x.len() {
                Err(format!("expects {} inputs, producer has {} ({x})", p.in_channels, x.len()))
            } else {
                Ok(Shape::new(p.out_channels, 1, 1))
            }
        }
        LayerKind::MaxPool(p) => {
            if p.pad >= p.window {
                Err(format!("pad {} must be smaller than window {}", p.pad, p.window))
            } else {
                p.output_shape(x)
            }
        }
        LayerKind::Lrn(p) => check_lrn(p).map(|_| x),
        LayerKind::Relu => Ok(x),
        LayerKind::Eltwise => {
            let y = operands[1];
            if x == y {
                Ok(x)
            } else {
                Err(format!("operand shapes differ: {x} vs {y}"))
            }
        }
    };
    let shape = result.map_err(|m| Error::layer(&layer.name, m))?;
    if shape.is_empty() {
        return Err(Error::layer(&layer.name, format!("empty output shape {shape}")));
    }
    Ok(shape)
}

fn check_conv(p: &ConvParams) -> std::result::Result<(), String> {
    if p.in_channels == 0 || p.out_channels == 0 {
        return Err("channel counts must be >= 1".into());
    }
    if p.groups == 0 || !p.in_channels.is_multiple_of(p.groups) || !p.out_channels.is_multiple_of(p.groups) {
        return Err(format!(
            "groups {} must divide in_channels {} and out_channels {}",
            p.groups, p.in_channels, p.out_channels
        ));
    }
    Ok(())
}

fn check_lrn(p: &LrnParams) -> std::result::Result<(), String> {
    if p.local_size == 0 || p.local_size.is_multiple_of(2) {
        return Err(format!("local_size must be odd, got {}", p.local_size));
    }
    if !(p.alpha.is_finite() && p.beta.is_finite() && p.k.is_finite()) {
        return Err("alpha, beta and k must be finite".into());
    }
    Ok(())
}

/// Output shape of every layer, in declaration order.
pub fn infer_shapes(model: &ModelDescriptor) -> Result<Vec<Shape>> {
    infer_layer_shapes(model.input_shape, &model.layers, &model.sources)
}

/// FLOPs of one layer. One multiply-accumulate counts as two FLOPs; only conv
/// and fc layers contribute.
pub fn layer_flops(layer: &LayerDescriptor, output: Shape) -> u64 {
    match &layer.kind {
        LayerKind::Conv(p) => 2 * (output.plane() * output.channels * p.kernel * p.kernel * p.group_in()) as u64,
        LayerKind::Fc(p) => 2 * (p.out_channels * p.in_channels) as u64,
        _ => 0,
    }
}

pub fn flop_count(model: &ModelDescriptor) -> u64 {
    model.layers.iter().zip(&model.shapes).map(|(l, &s)| layer_flops(l, s)).sum()
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModel {
    name: String,
    input_shape: [usize; 3],
    layers: Vec<RawLayer>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLayer {
    name: String,
    #[serde(rename = "type")]
    kind: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    inputs: Vec<String>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    relu: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    out_channels: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    in_channels: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    kernel: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    stride: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pad: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    groups: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    window: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    local_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    k: Option<f64>,
}

impl RawLayer {
    /// Names of parameters that are set.
    fn present(&self) -> Vec<&'static str> {
        let mut v = Vec::new();
        macro_rules! check {
            ($($f:ident),*) => { $( if self.$f.is_some() { v.push(stringify!($f)); } )* };
        }
        check!(out_channels, in_channels, kernel, stride, pad, groups, window, local_size, alpha, beta, k);
        v
    }
}

impl RawModel {
    fn into_model(self) -> Result<ModelDescriptor> {
        let [c, h, w] = self.input_shape;
        let input_shape = Shape::new(c, h, w);
        // Channel counts are inferred as we go, so resolve shapes incrementally.
        let mut layers: Vec<LayerDescriptor> = Vec::with_capacity(self.layers.len());
        let mut shapes: HashMap<String, Shape> = HashMap::new();
        shapes.insert(MODEL_INPUT.to_string(), input_shape);
        for raw in self.layers {
            let inputs = if raw.inputs.is_empty() {
                vec![layers.last().map_or(MODEL_INPUT.to_string(), |l| l.name.clone())]
            } else {
                raw.inputs.clone()
            };
            let producer = inputs.first().and_then(|n| shapes.get(n)).copied();
            let kind = raw_kind(&raw, producer)?;
            let layer = LayerDescriptor { name: raw.name, kind, inputs, relu: raw.relu };
            // Shapes are tracked here only to infer channel counts; unresolved
            // inputs and arity errors are reported by `ModelDescriptor::new`.
            let operands: Option<Vec<Shape>> = layer.inputs.iter().map(|n| shapes.get(n).copied()).collect();
            if let Some(ops) = operands.filter(|o| o.len() == layer.kind.arity()) {
                let shape = layer_output_shape(&layer, &ops)?;
                shapes.insert(layer.name.clone(), shape);
            }
            layers.push(layer);
        }
        ModelDescriptor::new(self.name, input_shape, layers)
    }

    fn from_model(m: &ModelDescriptor) -> Self {
        let layers = m
            .layers
            .iter()
            .map(|l| {
                let mut raw = RawLayer {
                    name: l.name.clone(),
                    kind: l.kind.type_name().to_string(),
                    inputs: l.inputs.clone(),
                    relu: l.relu,
                    ..Default::default()
                };
                match &l.kind {
                    LayerKind::Conv(p) => {
                        raw.in_channels = Some(p.in_channels);
                        raw.out_channels = Some(p.out_channels);
                        raw.kernel = Some(p.kernel);
                        raw.stride = Some(p.stride);
                        raw.pad = Some(p.pad);
                        raw.groups = Some(p.groups);
                    }
                    LayerKind::Fc(p) => {
                        raw.in_channels = Some(p.in_channels);
                        raw.out_channels = Some(p.out_channels);
                    }
                    LayerKind::MaxPool(p) => {
                        raw.window = Some(p.window);
                        raw.stride = Some(p.stride);
                        raw.pad = Some(p.pad);
                    }
                    LayerKind::Lrn(p) => {
                        raw.local_size = Some(p.local_size);
                        raw.alpha = Some(p.alpha);
                        raw.beta = Some(p.beta);
                        raw.k = Some(p.k);
                    }
                    LayerKind::Eltwise | LayerKind::Relu => {}
                }
                raw
            })
            .collect();
        let s = m.input_shape;
        RawModel { name: m.name.clone(), input_shape: [s.channels, s.height, s.width], layers }
    }
}

fn raw_kind(raw: &RawLayer, producer: Option<Shape>) -> Result<LayerKind> {
    let allowed: &[&str] = match raw.kind.as_str() {
        "conv" => &["out_channels", "in_channels", "kernel", "stride", "pad", "groups"],
        "fc" => &["out_channels", "in_channels"],
        "maxpool" => &["window", "stride", "pad"],
        "lrn" => &["local_size", "alpha", "beta", "k"],
        "eltwise" | "relu" => &[],
        "avgpool" => return Err(Error::layer(&raw.name, "average pooling is not supported")),
        other => return Err(Error::layer(&raw.name, format!("unknown layer type `{other}`"))),
    };
    if let Some(extra) = raw.present().into_iter().find(|p| !allowed.contains(p)) {
        return Err(Error::layer(&raw.name, format!("`{extra}` is not a {} parameter", raw.kind)));
    }
    let need = |v: Option<usize>, field: &str| {
        v.ok_or_else(|| Error::layer(&raw.name, format!("{} layer requires `{field}`", raw.kind)))
    };
    let inferred_in = |declared: Option<usize>, from_producer: Option<usize>| match (declared, from_producer) {
        (Some(d), _) => Ok(d),
        (None, Some(p)) => Ok(p),
        (None, None) => Err(Error::layer(&raw.name, "cannot infer in_channels: unknown producer")),
    };
    Ok(match raw.kind.as_str() {
        "conv" => LayerKind::Conv(ConvParams {
            in_channels: inferred_in(raw.in_channels, producer.map(|s| s.channels))?,
            out_channels: need(raw.out_channels, "out_channels")?,
            kernel: need(raw.kernel, "kernel")?,
            stride: raw.stride.unwrap_or(1),
            pad: raw.pad.unwrap_or(0),
            groups: raw.groups.unwrap_or(1),
        }),
        "fc" => LayerKind::Fc(FcParams {
            in_channels: inferred_in(raw.in_channels, producer.map(|s| s.len()))?,
            out_channels: need(raw.out_channels, "out_channels")?,
        }),
        "maxpool" => LayerKind::MaxPool(PoolParams {
            window: need(raw.window, "window")?,
            stride: raw.stride.unwrap_or(1),
            pad: raw.pad.unwrap_or(0),
        }),
        "lrn" => {
            let d = LrnParams::default();
            LayerKind::Lrn(LrnParams {
                local_size: raw.local_size.unwrap_or(d.local_size),
                alpha: raw.alpha.unwrap_or(d.alpha),
                beta: raw.beta.unwrap_or(d.beta),
                k: raw.k.unwrap_or(d.k),
            })
        }
        "eltwise" => LayerKind::Eltwise,
        "relu" => LayerKind::Relu,
        _ => unreachable!(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundled;

    fn single(input: Shape, kind: LayerKind) -> Result<ModelDescriptor> {
        ModelDescriptor::new("t", input, vec![LayerDescriptor::new("l", kind, &[MODEL_INPUT])])
    }

    #[test]
    fn alexnet_conv1_shape() {
        let m = single(Shape::new(3, 227, 227), LayerKind::Conv(ConvParams::new(3, 96, 11, 4, 0))).unwrap();
        assert_eq!(infer_shapes(&m).unwrap(), vec![Shape::new(96, 55, 55)]);
    }

    #[test]
    fn relu_preserves_shape() {
        let m = single(Shape::new(512, 7, 7), LayerKind::Relu).unwrap();
        assert_eq!(m.output_shape(0), Shape::new(512, 7, 7));
    }

    #[test]
    fn full_window_conv() {
        let m = single(Shape::new(1, 5, 5), LayerKind::Conv(ConvParams::new(1, 1, 5, 1, 0))).unwrap();
        assert_eq!(m.output_shape(0), Shape::new(1, 1, 1));
    }

    #[test]
    fn pointwise_flops() {
        let m = single(Shape::new(1, 1, 1), LayerKind::Conv(ConvParams::new(1, 1, 1, 1, 0))).unwrap();
        assert_eq!(flop_count(&m), 2);
    }

    #[test]
    fn channel_mismatch_names_layer() {
        let err = single(Shape::new(4, 8, 8), LayerKind::Conv(ConvParams::new(3, 8, 3, 1, 1))).unwrap_err();
        assert!(matches!(err, Error::Layer { ref layer, .. } if layer == "l"), "{err}");
    }

    #[test]
    fn eltwise_shape_mismatch() {
        let layers = vec![
            LayerDescriptor::new("a", LayerKind::Conv(ConvParams::new(2, 4, 1, 1, 0)), &["input"]),
            LayerDescriptor::new("b", LayerKind::Conv(ConvParams::new(2, 4, 3, 1, 0)), &["input"]),
            LayerDescriptor::new("sum", LayerKind::Eltwise, &["a", "b"]),
        ];
        let err = ModelDescriptor::new("t", Shape::new(2, 6, 6), layers).unwrap_err();
        assert!(err.to_string().contains("sum"), "{err}");
    }

    #[test]
    fn forward_reference_rejected() {
        let layers = vec![
            LayerDescriptor::new("a", LayerKind::Relu, &["b"]),
            LayerDescriptor::new("b", LayerKind::Relu, &["input"]),
        ];
        assert!(ModelDescriptor::new("t", Shape::new(1, 2, 2), layers).is_err());
    }

    #[test]
    fn eltwise_needs_two_inputs() {
        assert!(single(Shape::new(1, 2, 2), LayerKind::Eltwise).is_err());
    }

    #[test]
    fn pool_window_too_large() {
        let err = single(Shape::new(1, 2, 2), LayerKind::MaxPool(PoolParams::new(3, 1))).unwrap_err();
        assert!(err.to_string().contains("larger than padded"), "{err}");
    }

    #[test]
    fn json_rejects_misplaced_params() {
        let text = r#"{"name":"m","input_shape":[1,4,4],"layers":[{"name":"r","type":"relu","kernel":3}]}"#;
        let err = ModelDescriptor::from_json(text).unwrap_err();
        assert!(err.to_string().contains("`kernel` is not a relu parameter"), "{err}");
        let text = r#"{"name":"m","input_shape":[1,4,4],"layers":[{"name":"c","type":"conv","kernel":3}]}"#;
        assert!(ModelDescriptor::from_json(text).unwrap_err().to_string().contains("out_channels"));
        let text = r#"{"name":"m","input_shape":[1,4,4],"layers":[{"name":"p","type":"avgpool","window":2}]}"#;
        assert!(ModelDescriptor::from_json(text).unwrap_err().to_string().contains("not supported"));
    }

    #[test]
    fn truncated_json_reports_position() {
        let text = &bundled::ALEXNET[..200];
        match ModelDescriptor::from_json(text).unwrap_err() {
            Error::Parse { line, .. } => assert!(line > 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn json_round_trip_is_stable() {
        for text in [bundled::ALEXNET, bundled::TOY_RESNET] {
            let m = ModelDescriptor::from_json(text).unwrap();
            let again = ModelDescriptor::from_json(&m.to_json()).unwrap();
            assert_eq!(m, again);
            assert_eq!(infer_shapes(&again).unwrap(), infer_shapes(&m).unwrap());
        }
    }

    #[test]
    fn lrn_defaults_and_overrides() {
        let text = r#"{"name":"m","input_shape":[8,4,4],"layers":[
            {"name":"n1","type":"lrn"},{"name":"n2","type":"lrn","alpha":0.5,"local_size":3}]}"#;
        let m = ModelDescriptor::from_json(text).unwrap();
        assert_eq!(m.layers()[0].kind, LayerKind::Lrn(LrnParams::default()));
        assert_eq!(m.layers()[1].kind, LayerKind::Lrn(LrnParams { local_size: 3, alpha: 0.5, beta: 0.75, k: 2.0 }));
    }

    #[test]
    fn bundled_flops_match_published_magnitudes() {
        let gflops = |t: &str| flop_count(&ModelDescriptor::from_json(t).unwrap()) as f64 / 1e9;
        for (text, expected) in [(bundled::ALEXNET, 1.4), (bundled::RESNET50, 8.0), (bundled::RESNET152, 22.0)] {
            let g = gflops(text);
            assert!((g - expected).abs() <= 0.15 * expected, "{g} vs {expected}");
        }
    }

    #[test]
    fn flops_additive_and_order_invariant() {
        let m = ModelDescriptor::from_json(bundled::TOY_RESNET).unwrap();
        let shapes = infer_shapes(&m).unwrap();
        let per_layer: u64 = m.layers().iter().zip(&shapes).map(|(l, &s)| layer_flops(l, s)).sum();
        assert_eq!(per_layer, flop_count(&m));

        // block2_proj and block2_a are independent; swapping keeps a valid topological order.
        let mut layers = m.layers().to_vec();
        let a = layers.iter().position(|l| l.name == "block2_proj").unwrap();
        let b = layers.iter().position(|l| l.name == "block2_a").unwrap();
        layers.swap(a, b);
        let reordered = ModelDescriptor::new(m.name(), m.input_shape(), layers).unwrap();
        assert_eq!(flop_count(&reordered), flop_count(&m));
    }
}
