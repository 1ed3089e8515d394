//! Weight store and its binary file format.
//!
//! Layout, all integers 32-bit little-endian unsigned:
//!
//! ```text
//! "SCNN"  version:u8 (=1)
//! repeated until EOF:
//!   name_len  name[name_len]  rank  dims[rank]  payload: f32 LE × product(dims)
//! ```
//!
//! A parameterized layer `L` owns two records: `L.weight` shaped
//! `[out, in/groups, k, k]` (conv) or `[out, in]` (fc), and `L.bias` shaped `[out]`.
//! Payloads are row-major with the output channel outermost.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result, WeightError};
use crate::model::{LayerKind, ModelDescriptor};

pub const MAGIC: &[u8; 4] = b"SCNN";
pub const VERSION: u8 = 1;

/// Synthetic weights are drawn uniformly from this symmetric range.
pub const SYNTHETIC_RANGE: f32 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct WeightStore {
    records: BTreeMap<String, Record>,
}

/// The weight and bias record shapes a layer requires, if it has parameters.
pub fn expected_dims(kind: &LayerKind) -> Option<(Vec<usize>, Vec<usize>)> {
    match kind {
        LayerKind::Conv(p) => Some((vec![p.out_channels, p.group_in(), p.kernel, p.kernel], vec![p.out_channels])),
        LayerKind::Fc(p) => Some((vec![p.out_channels, p.in_channels], vec![p.out_channels])),
        _ => None,
    }
}

fn weight_key(layer: &str) -> String {
    format!("{layer}.weight")
}

fn bias_key(layer: &str) -> String {
    format!("{layer}.bias")
}

impl WeightStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, dims: Vec<usize>, data: Vec<f32>) -> Result<()> {
        let name = name.into();
        let n: usize = dims.iter().product();
        if n != data.len() {
            return Err(Error::Shape(format!("record `{name}`: dims {dims:?} need {n} values, got {}", data.len())));
        }
        self.records.insert(name, Record { dims, data });
        Ok(())
    }

    pub fn set_layer(&mut self, layer: &str, weight: Record, bias: Record) {
        self.records.insert(weight_key(layer), weight);
        self.records.insert(bias_key(layer), bias);
    }

    pub fn get(&self, name: &str) -> Option<&Record> {
        self.records.get(name)
    }

    pub fn records(&self) -> impl Iterator<Item = (&str, &Record)> {
        self.records.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn layer_params(&self, layer: &str) -> Result<(&[f32], &[f32])> {
        let missing = |record: String| Error::Weights(WeightError::Missing { layer: layer.to_string(), record });
        let w = self.records.get(&weight_key(layer)).ok_or_else(|| missing(weight_key(layer)))?;
        let b = self.records.get(&bias_key(layer)).ok_or_else(|| missing(bias_key(layer)))?;
        Ok((&w.data, &b.data))
    }

    /// Seeded uniform(-0.1, 0.1) parameters for every parameterized layer.
    pub fn synthetic(model: &ModelDescriptor, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = Self::new();
        for layer in model.layers() {
            if let Some((wd, bd)) = expected_dims(&layer.kind) {
                let mut draw = |dims: Vec<usize>| {
                    let n = dims.iter().product();
                    let data = (0..n).map(|_| rng.gen_range(-SYNTHETIC_RANGE..SYNTHETIC_RANGE)).collect();
                    Record { dims, data }
                };
                let w = draw(wd);
                let b = draw(bd);
                store.set_layer(&layer.name, w, b);
            }
        }
        store
    }

    /// Checks every parameterized layer has records of exactly the declared shape.
    pub fn validate(&self, model: &ModelDescriptor) -> Result<(), WeightError> {
        for layer in model.layers() {
            let Some((wd, bd)) = expected_dims(&layer.kind) else { continue };
            for (key, expected) in [(weight_key(&layer.name), wd), (bias_key(&layer.name), bd)] {
                let rec = self
                    .records
                    .get(&key)
                    .ok_or_else(|| WeightError::Missing { layer: layer.name.clone(), record: key.clone() })?;
                if rec.dims != expected {
                    return Err(WeightError::ShapeMismatch {
                        layer: layer.name.clone(),
                        record: key,
                        found: rec.dims.clone(),
                        expected,
                    });
                }
            }
        }
        Ok(())
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        let put = |out: &mut Vec<u8>, v: usize| out.extend_from_slice(&(v as u32).to_le_bytes());
        for (name, rec) in &self.records {
            put(&mut out, name.len());
            out.extend_from_slice(name.as_bytes());
            put(&mut out, rec.dims.len());
            for &d in &rec.dims {
                put(&mut out, d);
            }
            for v in &rec.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, WeightError> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4, "magic")?;
        if magic != MAGIC {
            return Err(WeightError::BadMagic { found: magic.to_vec() });
        }
        let version = r.take(1, "version")?[0];
        if version != VERSION {
            return Err(WeightError::UnsupportedVersion(version));
        }
        let mut store = Self::new();
        while r.pos < bytes.len() {
            let name_len = r.u32("name length")?;
            let raw = r.take(name_len, "name")?;
            let name = String::from_utf8(raw.to_vec())
                .map_err(|_| WeightError::BadName(String::from_utf8_lossy(raw).into_owned()))?;
            let rank = r.u32("rank")?;
            let dims = (0..rank).map(|_| r.u32("dims")).collect::<Result<Vec<_>, _>>()?;
            let n: usize = dims.iter().product();
            let payload =
                r.take(n.checked_mul(4).ok_or(WeightError::ShortRead { offset: r.pos, what: "payload" })?, "payload")?;
            let data = payload.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
            if store.records.insert(name.clone(), Record { dims, data }).is_some() {
                return Err(WeightError::Duplicate(name));
            }
        }
        Ok(store)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.encode())?;
        Ok(())
    }

    /// Reads a store and checks it against the model.
    pub fn load(path: impl AsRef<Path>, model: &ModelDescriptor) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        let store = Self::decode(&bytes)?;
        store.validate(model)?;
        for (name, rec) in &store.records {
            if rec.data.iter().any(|v| !v.is_finite()) {
                return Err(Error::Shape(format!("record `{name}` holds non-finite values")));
            }
        }
        Ok(store)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], WeightError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or(WeightError::ShortRead { offset: self.pos, what })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &'static str) -> Result<usize, WeightError> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }
}
