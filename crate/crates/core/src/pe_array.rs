//! Event-driven model of the 1-D systolic PE array.
//!
//! Every PE caches the weights of one OFM and holds `reuse_fac` IP units. An IP
//! unit multiplies a `vec_fac`-lane weight vector with the incoming IFM vector,
//! reduces the products through a balanced pairwise adder tree, and folds the
//! result into a single-precision accumulator. IFM vectors enter PE 0 in
//! schedule order and shift to PE n+1 one cycle later.
//!
//! Cycle accounting per OFM group: sequential weight preload into each PE, one
//! cycle per scheduled vector, then a drain of `(pe_num − 1) + depth + 1`
//! cycles (systolic skew plus adder-tree depth plus the accumulator stage).

use serde::Serialize;

use crate::arch::{validate_arch, ArchConfig, WORD_BYTES};
use crate::error::{Error, Result};
use crate::memrd::{ConvGeometry, LoadEvent, LoadSchedule};
use crate::model::LayerDescriptor;
use crate::tensor::{Shape, Tensor};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct CycleStats {
    pub total_cycles: u64,
    /// Scheduled IFM vector loads, one per cycle.
    pub load_cycles: u64,
    /// Busy cycles of one IP unit; every active unit performs the same count.
    pub compute_cycles: u64,
    pub drain_cycles: u64,
    /// Cycles spent preloading weights into PE caches.
    pub weight_load_cycles: u64,
    pub macs_performed: u64,
    pub ifm_bytes: u64,
    pub weight_bytes: u64,
    pub ofm_bytes: u64,
}

impl std::ops::AddAssign for CycleStats {
    fn add_assign(&mut self, o: Self) {
        self.total_cycles += o.total_cycles;
        self.load_cycles += o.load_cycles;
        self.compute_cycles += o.compute_cycles;
        self.drain_cycles += o.drain_cycles;
        self.weight_load_cycles += o.weight_load_cycles;
        self.macs_performed += o.macs_performed;
        self.ifm_bytes += o.ifm_bytes;
        self.weight_bytes += o.weight_bytes;
        self.ofm_bytes += o.ofm_bytes;
    }
}

/// Depth of a balanced binary reduction over `lanes` inputs.
pub fn adder_tree_depth(lanes: usize) -> u64 {
    lanes.max(1).next_power_of_two().trailing_zeros() as u64
}

/// Balanced pairwise reduction, level by level; an odd tail carries up.
pub fn adder_tree(values: &mut [f32]) -> f32 {
    let mut n = values.len();
    if n == 0 {
        return 0.0;
    }
    while n > 1 {
        let half = n / 2;
        for i in 0..half {
            values[i] = values[2 * i] + values[2 * i + 1];
        }
        if n % 2 == 1 {
            values[half] = values[n - 1];
            n = half + 1;
        } else {
            n = half;
        }
    }
    values[0]
}

fn drain_per_pass(cfg: &ArchConfig) -> u64 {
    (cfg.pe_num as u64 - 1) + adder_tree_depth(cfg.vec_fac) + 1
}

/// Shift-register chain between PEs: slot `n` is what PE `n` holds this cycle.
#[derive(Debug, Clone)]
struct Systolic {
    slots: Vec<Option<usize>>,
}

impl Systolic {
    fn new(pe_num: usize) -> Self {
        Self { slots: vec![None; pe_num] }
    }

    fn step(&mut self, incoming: Option<usize>) {
        self.slots.rotate_right(1);
        self.slots[0] = incoming;
    }

    fn is_empty(&self) -> bool {
        self.slots.iter().all(Option::is_none)
    }
}

#[derive(Debug, Clone)]
struct IpUnit {
    accumulator: f32,
}

#[derive(Debug, Clone)]
struct PeState {
    /// `(ofm_group, tile)` the IP units are accumulating.
    current: Option<(usize, usize)>,
    ip_units: Vec<IpUnit>,
}

impl PeState {
    fn new(reuse_fac: usize) -> Self {
        Self { current: None, ip_units: vec![IpUnit { accumulator: 0.0 }; reuse_fac] }
    }
}

struct ConvEngine<'a> {
    geo: ConvGeometry,
    ifm: &'a Tensor<f32>,
    /// `[ofm][local channel group][ky][kx][lane]`, zero in inactive lanes.
    packed: Vec<f32>,
    bias: &'a [f32],
    relu: bool,
    out: Tensor<f32>,
    pes: Vec<PeState>,
    ring: Vec<(LoadEvent, Vec<f32>)>,
    scratch: Vec<f32>,
    stats: CycleStats,
}

impl<'a> ConvEngine<'a> {
    fn pack_weights(geo: &ConvGeometry, weights: &[f32]) -> Vec<f32> {
        let p = &geo.params;
        let (icg, c, vec) = (p.group_in(), p.kernel, geo.cfg.vec_fac);
        let cpg = geo.channel_groups_per_conv_group;
        let mut packed = vec![0.0f32; p.out_channels * cpg * c * c * vec];
        for o in 0..p.out_channels {
            for ci in 0..icg {
                let (lcg, lane) = (ci / vec, ci % vec);
                for ky in 0..c {
                    for kx in 0..c {
                        let dst = (((o * cpg + lcg) * c + ky) * c + kx) * vec + lane;
                        packed[dst] = weights[((o * icg + ci) * c + ky) * c + kx];
                    }
                }
            }
        }
        packed
    }

    fn load_vector(&self, e: &LoadEvent, buf: &mut Vec<f32>) {
        buf.clear();
        buf.resize(self.geo.cfg.vec_fac, 0.0);
        if e.is_padding {
            return;
        }
        let (ch0, lanes) = self.geo.channel_span(e.channel_group);
        for (lane, slot) in buf.iter_mut().enumerate().take(lanes) {
            *slot = self.ifm.get(ch0 + lane, e.row as usize, e.col as usize);
        }
    }

    fn drain_pe(&mut self, pe: usize) {
        let Some((og, tile)) = self.pes[pe].current.take() else { return };
        if let Some(o) = self.geo.ofm_of(og, pe) {
            let (oy, ox0) = self.geo.tile_origin(tile);
            for r in 0..self.geo.active_ip_units(tile) {
                let mut v = self.pes[pe].ip_units[r].accumulator + self.bias[o];
                if self.relu && v < 0.0 {
                    v = 0.0;
                }
                self.out.set(o, oy, ox0 + r, v);
            }
        }
        for u in &mut self.pes[pe].ip_units {
            u.accumulator = 0.0;
        }
    }

    /// PE `pe` consumes the vector in ring slot `id`.
    fn process(&mut self, pe: usize, id: usize) {
        let slot = id % self.ring.len();
        let e = self.ring[slot].0;
        if self.pes[pe].current != Some((e.ofm_group, e.tile)) {
            self.drain_pe(pe);
            self.pes[pe].current = Some((e.ofm_group, e.tile));
        }
        let Some(o) = self.geo.ofm_of(e.ofm_group, pe) else { return };
        let g = &self.geo;
        let (c, s, vec) = (g.params.kernel as isize, g.params.stride as isize, g.cfg.vec_fac);
        let (oy, ox0) = g.tile_origin(e.tile);
        let ky = e.row - (oy as isize * s - g.params.pad as isize);
        let x_local = e.col - (ox0 as isize * s - g.params.pad as isize);
        let lcg = e.channel_group % g.channel_groups_per_conv_group;
        let lanes = g.channel_span(e.channel_group).1 as u64;
        let cpg = g.channel_groups_per_conv_group;
        for r in 0..g.active_ip_units(e.tile) {
            let kx = x_local - r as isize * s;
            if kx < 0 || kx >= c {
                continue;
            }
            let base = (((o * cpg + lcg) * c as usize + ky as usize) * c as usize + kx as usize) * vec;
            let w = &self.packed[base..base + vec];
            let v = &self.ring[slot].1;
            for ((dst, &a), &b) in self.scratch.iter_mut().zip(w).zip(v) {
                *dst = a * b;
            }
            let partial = adder_tree(&mut self.scratch);
            self.pes[pe].ip_units[r].accumulator += partial;
            self.stats.macs_performed += lanes;
            if pe == 0 && r == 0 {
                self.stats.compute_cycles += 1;
            }
        }
    }

    fn tick(&mut self, array: &Systolic) {
        for pe in 0..array.slots.len() {
            if let Some(id) = array.slots[pe] {
                self.process(pe, id);
            }
        }
    }

    fn weight_preload(&self, og: usize) -> u64 {
        let p = &self.geo.params;
        let words = p.group_in() * p.kernel * p.kernel;
        let active = (0..self.geo.cfg.pe_num).filter(|&n| self.geo.ofm_of(og, n).is_some()).count();
        // One PE's block at a time through a vec_fac-word port.
        (active * words.div_ceil(self.geo.cfg.vec_fac)) as u64
    }

    fn flush(&mut self, array: &mut Systolic) {
        while !array.is_empty() {
            array.step(None);
            self.tick(array);
        }
        for pe in 0..self.pes.len() {
            self.drain_pe(pe);
        }
        let drain = drain_per_pass(&self.geo.cfg);
        self.stats.drain_cycles += drain;
        self.stats.total_cycles += drain;
    }
}

/// Runs a conv layer through the array. Fused ReLU follows the layer flag.
pub fn simulate_conv(
    ifm: &Tensor<f32>,
    weights: &[f32],
    bias: &[f32],
    layer: &LayerDescriptor,
    cfg: &ArchConfig,
) -> Result<(Tensor<f32>, CycleStats)> {
    let geo = ConvGeometry::new(layer, cfg, ifm.shape())?;
    let p = geo.params;
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
    let mut engine = ConvEngine {
        geo,
        ifm,
        packed: ConvEngine::pack_weights(&geo, weights),
        bias,
        relu: layer.relu,
        out: Tensor::filled(geo.ofm, 0.0),
        pes: (0..cfg.pe_num).map(|_| PeState::new(cfg.reuse_fac)).collect(),
        ring: (0..cfg.pe_num).map(|_| (first_placeholder(), Vec::with_capacity(cfg.vec_fac))).collect(),
        scratch: vec![0.0; cfg.vec_fac],
        stats: CycleStats::default(),
    };
    let mut array = Systolic::new(cfg.pe_num);
    let mut group: Option<usize> = None;
    let mut buf = Vec::with_capacity(cfg.vec_fac);
    for (id, e) in geo.schedule().enumerate() {
        if group != Some(e.ofm_group) {
            if group.is_some() {
                engine.flush(&mut array);
            }
            let preload = engine.weight_preload(e.ofm_group);
            engine.stats.weight_load_cycles += preload;
            engine.stats.total_cycles += preload;
            group = Some(e.ofm_group);
        }
        engine.load_vector(&e, &mut buf);
        let slot = id % engine.ring.len();
        engine.ring[slot].0 = e;
        std::mem::swap(&mut engine.ring[slot].1, &mut buf);
        array.step(Some(id));
        engine.tick(&array);
        engine.stats.load_cycles += 1;
        engine.stats.total_cycles += 1;
    }
    engine.flush(&mut array);

    let mut stats = engine.stats;
    stats.ifm_bytes = stats.load_cycles * (cfg.vec_fac * WORD_BYTES) as u64;
    stats.weight_bytes = (p.weight_len() * WORD_BYTES) as u64;
    stats.ofm_bytes = (geo.ofm.len() * WORD_BYTES) as u64;
    Ok((engine.out, stats))
}

fn first_placeholder() -> LoadEvent {
    LoadEvent { cycle: 0, ofm_group: 0, tile: 0, channel_group: 0, row: 0, col: 0, is_padding: true }
}

/// Fully connected layer in batch mode: PE n computes output neuron n of the
/// current group while IP unit r serves image r. Each weight is streamed once
/// per pass regardless of batch size. ReLU is not applied here.
pub fn simulate_fc(
    inputs: &[Vec<f32>],
    weights: &[f32],
    bias: &[f32],
    cfg: &ArchConfig,
) -> Result<(Vec<Vec<f32>>, CycleStats)> {
    validate_arch(cfg)?;
    let batch = inputs.len();
    if batch == 0 {
        return Err(Error::Shape("fc batch is empty".into()));
    }
    if batch > cfg.reuse_fac {
        return Err(Error::BatchTooLarge { batch, reuse_fac: cfg.reuse_fac });
    }
    let in_dim = inputs[0].len();
    if inputs.iter().any(|x| x.len() != in_dim) {
        return Err(Error::Shape("fc batch images differ in length".into()));
    }
    let out_dim = bias.len();
    if weights.len() != out_dim * in_dim {
        return Err(Error::Shape(format!("fc weights hold {} values, expected {out_dim} x {in_dim}", weights.len())));
    }
    let vec = cfg.vec_fac;
    let groups = out_dim.div_ceil(cfg.pe_num);
    let chunks = in_dim.div_ceil(vec);
    let lanes_of = |cg: usize| vec.min(in_dim - cg * vec);

    let mut out = vec![vec![0.0f32; out_dim]; batch];
    let mut stats = CycleStats::default();
    let mut acc = vec![vec![0.0f32; batch]; cfg.pe_num];
    let mut scratch = vec![0.0f32; vec];
    let mut array = Systolic::new(cfg.pe_num);
    let mut compute = |array: &Systolic, og: usize, acc: &mut [Vec<f32>], stats: &mut CycleStats| {
        for (pe, slot) in array.slots.iter().enumerate() {
            let (Some(cg), j) = (*slot, og * cfg.pe_num + pe) else { continue };
            if j >= out_dim {
                continue;
            }
            let lanes = lanes_of(cg);
            let w = &weights[j * in_dim + cg * vec..j * in_dim + cg * vec + lanes];
            for (r, x) in inputs.iter().enumerate() {
                let x = &x[cg * vec..cg * vec + lanes];
                scratch.fill(0.0);
                for ((d, &a), &b) in scratch.iter_mut().zip(w).zip(x) {
                    *d = a * b;
                }
                acc[pe][r] += adder_tree(&mut scratch);
                stats.macs_performed += lanes as u64;
            }
            if pe == 0 {
                stats.compute_cycles += 1;
            }
        }
    };
    for og in 0..groups {
        for cg in 0..chunks {
            array.step(Some(cg));
            compute(&array, og, &mut acc, &mut stats);
            stats.load_cycles += 1;
            stats.total_cycles += 1;
        }
        while !array.is_empty() {
            array.step(None);
            compute(&array, og, &mut acc, &mut stats);
        }
        for (pe, unit) in acc.iter_mut().enumerate() {
            let j = og * cfg.pe_num + pe;
            for (r, a) in unit.iter_mut().enumerate() {
                if j < out_dim {
                    out[r][j] = *a + bias[j];
                }
                *a = 0.0;
            }
        }
        let drain = drain_per_pass(cfg);
        stats.drain_cycles += drain;
        stats.total_cycles += drain;
    }
    stats.weight_bytes = (out_dim * in_dim * WORD_BYTES) as u64;
    stats.ifm_bytes = stats.load_cycles * (batch * vec * WORD_BYTES) as u64;
    stats.ofm_bytes = (out_dim * batch * WORD_BYTES) as u64;
    Ok((out, stats))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct Arrival {
    pub cycle: u64,
    /// Index into the schedule's event list.
    pub event: usize,
}

/// Per-PE log of which scheduled vector arrives when.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShiftTrace {
    pub per_pe: Vec<Vec<Arrival>>,
}

/// Replays a schedule through the shift chain. Event cycles give PE 0's
/// arrival times; gaps become bubbles.
pub fn shift_trace(cfg: &ArchConfig, schedule: &LoadSchedule) -> Result<ShiftTrace> {
    validate_arch(cfg)?;
    let mut order: Vec<usize> = (0..schedule.events.len()).collect();
    order.sort_by_key(|&i| schedule.events[i].cycle);
    if order.windows(2).any(|w| schedule.events[w[0]].cycle == schedule.events[w[1]].cycle) {
        return Err(Error::Shape("two vectors scheduled in the same cycle".into()));
    }
    let mut per_pe = vec![Vec::with_capacity(order.len()); cfg.pe_num];
    let mut array = Systolic::new(cfg.pe_num);
    let mut next = order.iter().peekable();
    let mut cycle = 0u64;
    while next.peek().is_some() || !array.is_empty() {
        let incoming = match next.peek() {
            Some(&&i) if schedule.events[i].cycle == cycle => {
                next.next();
                Some(i)
            }
            _ => None,
        };
        array.step(incoming);
        for (pe, slot) in array.slots.iter().enumerate() {
            if let Some(event) = *slot {
                per_pe[pe].push(Arrival { cycle, event });
            }
        }
        cycle += 1;
    }
    Ok(ShiftTrace { per_pe })
}

/// Shape a conv layer produces on this input, for callers that size buffers.
pub fn conv_output_shape(layer: &LayerDescriptor, ifm: Shape) -> Result<Shape> {
    let p = layer.conv_params().ok_or_else(|| Error::layer(&layer.name, "not a conv layer"))?;
    p.output_shape(ifm).map_err(|m| Error::layer(&layer.name, m))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::memrd::generate_schedule;
    use crate::model::{ConvParams, LayerKind, MODEL_INPUT};
    use crate::oracle::{conv_ref, fc_ref};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cfg(p: usize, v: usize, r: usize) -> ArchConfig {
        ArchConfig { pe_num: p, vec_fac: v, reuse_fac: r }
    }

    fn conv(p: ConvParams) -> LayerDescriptor {
        LayerDescriptor::new("c", LayerKind::Conv(p), &[MODEL_INPUT])
    }

    fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f32> {
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    fn rand_tensor(rng: &mut ChaCha8Rng, s: Shape) -> Tensor<f32> {
        Tensor::from_vec(s, rand_vec(rng, s.len())).unwrap()
    }

    /// Single-precision loop nest over a zero-padded copy, accumulating in
    /// channel, kernel-row, kernel-column order.
    fn naive_f32(ifm: &Tensor<f32>, w: &[f32], b: &[f32], p: &ConvParams) -> Vec<f32> {
        let s = ifm.shape();
        let (ph, pw) = (s.height + 2 * p.pad, s.width + 2 * p.pad);
        let mut padded = vec![0.0f32; s.channels * ph * pw];
        for c in 0..s.channels {
            for y in 0..s.height {
                for x in 0..s.width {
                    padded[(c * ph + y + p.pad) * pw + x + p.pad] = ifm.get(c, y, x);
                }
            }
        }
        let o = p.output_shape(s).unwrap();
        let mut out = Vec::new();
        for oc in 0..p.out_channels {
            for oy in 0..o.height {
                for ox in 0..o.width {
                    let mut acc = 0.0f32;
                    for c in 0..p.in_channels {
                        for ky in 0..p.kernel {
                            for kx in 0..p.kernel {
                                acc += w[((oc * p.in_channels + c) * p.kernel + ky) * p.kernel + kx]
                                    * padded[(c * ph + oy * p.stride + ky) * pw + ox * p.stride + kx];
                            }
                        }
                    }
                    out.push(acc + b[oc]);
                }
            }
        }
        out
    }

    fn assert_close(got: &[f32], want: &[f64]) {
        assert_eq!(got.len(), want.len());
        for (i, (&g, &w)) in got.iter().zip(want).enumerate() {
            let err = (g as f64 - w).abs();
            assert!(err <= 1e-5 + 1e-4 * w.abs(), "element {i}: {g} vs {w}");
        }
    }

    #[test]
    fn adder_tree_is_balanced_pairwise() {
        let mut v = [1.0f32, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(adder_tree(&mut v), 15.0);
        // ((a+b)+(c+d)) differs from left-to-right summation for these values.
        let mut v = [1e8f32, 1.0, -1e8, 1.0];
        assert_eq!(adder_tree(&mut v), 0.0);
        assert_eq!(adder_tree_depth(1), 0);
        assert_eq!(adder_tree_depth(16), 4);
        assert_eq!(adder_tree_depth(17), 5);
    }

    #[test]
    fn unit_config_is_bit_equal_to_naive_single_precision() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let p = ConvParams::new(5, 4, 3, 2, 1);
        let x = rand_tensor(&mut rng, Shape::new(5, 9, 7));
        let w = rand_vec(&mut rng, p.weight_len());
        let b = rand_vec(&mut rng, 4);
        let (out, _) = simulate_conv(&x, &w, &b, &conv(p), &cfg(1, 1, 1)).unwrap();
        let naive = naive_f32(&x, &w, &b, &p);
        let bits = |v: &[f32]| v.iter().map(|f| f.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(out.data()), bits(&naive));
    }

    #[test]
    fn matches_oracle_on_published_example() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let p = ConvParams::new(16, 32, 3, 1, 1);
        let x = rand_tensor(&mut rng, Shape::new(16, 8, 8));
        let w = rand_vec(&mut rng, p.weight_len());
        let b = rand_vec(&mut rng, 32);
        let l = conv(p);
        let (out, stats) = simulate_conv(&x, &w, &b, &l, &cfg(4, 16, 2)).unwrap();
        assert_close(out.data(), conv_ref(&x, &w, &b, &l).unwrap().data());
        assert_eq!(stats.macs_performed, 8 * 8 * 32 * 9 * 16);
    }

    #[test]
    fn fused_relu() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = ConvParams::new(3, 6, 3, 1, 1);
        let x = rand_tensor(&mut rng, Shape::new(3, 5, 5));
        let w = rand_vec(&mut rng, p.weight_len());
        let b = rand_vec(&mut rng, 6);
        let l = conv(p).with_relu(true);
        let (out, _) = simulate_conv(&x, &w, &b, &l, &cfg(4, 2, 3)).unwrap();
        assert!(out.data().iter().all(|&v| v >= 0.0));
        assert_close(out.data(), conv_ref(&x, &w, &b, &l).unwrap().data());
    }

    #[test]
    fn stats_are_consistent_with_schedule() {
        let p = ConvParams::new(6, 5, 3, 1, 0);
        let l = conv(p);
        let c = cfg(2, 4, 4);
        let ifm = Tensor::filled(Shape::new(6, 3, 8), 1.0f32);
        let (_, stats) = simulate_conv(&ifm, &vec![0.5; p.weight_len()], &[0.0; 5], &l, &c).unwrap();
        let sched = generate_schedule(&l, &c, ifm.shape()).unwrap();
        assert_eq!(stats.load_cycles, sched.totals.vectors_loaded);
        assert_eq!(stats.ifm_bytes, sched.totals.bytes_loaded);
        // 3 OFM groups x 2 tiles x 2 channel groups x 9 kernel taps.
        assert_eq!(stats.compute_cycles, 3 * 2 * 2 * 9);
        assert_eq!(stats.drain_cycles, 3 * (1 + 2 + 1));
        assert_eq!(stats.weight_bytes, (5 * 6 * 9 * 4) as u64);
        assert!(stats.total_cycles >= stats.load_cycles.max(stats.compute_cycles));
        assert_eq!(stats.total_cycles, stats.load_cycles + stats.drain_cycles + stats.weight_load_cycles);
    }

    #[test]
    fn weight_shape_checked() {
        let l = conv(ConvParams::new(2, 2, 3, 1, 1));
        let x = Tensor::filled(Shape::new(2, 4, 4), 0.0f32);
        assert!(simulate_conv(&x, &[0.0; 5], &[0.0; 2], &l, &cfg(1, 1, 1)).is_err());
        let bad = Tensor::filled(Shape::new(3, 4, 4), 0.0f32);
        assert!(simulate_conv(&bad, &[0.0; 36], &[0.0; 2], &l, &cfg(1, 1, 1)).is_err());
        assert!(simulate_conv(&x, &[0.0; 36], &[0.0; 2], &l, &cfg(0, 1, 1)).is_err());
    }

    #[test]
    fn fc_batch_limit() {
        let x = vec![vec![1.0f32; 4]; 5];
        let err = simulate_fc(&x, &[0.0; 8], &[0.0; 2], &cfg(2, 2, 4)).unwrap_err();
        assert!(matches!(err, Error::BatchTooLarge { batch: 5, reuse_fac: 4 }));
        assert!(err.to_string().contains("must be <= reuse_fac"));
    }

    #[test]
    fn fc_identity_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = 7;
        let mut eye = vec![0.0f32; n * n];
        for i in 0..n {
            eye[i * n + i] = 1.0;
        }
        for c in [cfg(1, 1, 1), cfg(3, 2, 2), cfg(16, 16, 4)] {
            let x: Vec<Vec<f32>> = (0..c.reuse_fac).map(|_| rand_vec(&mut rng, n)).collect();
            let (out, _) = simulate_fc(&x, &eye, &vec![0.0; n], &c).unwrap();
            assert_eq!(out, x);
        }
    }

    #[test]
    fn fc_batch_shares_weight_traffic() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let (i, o) = (40, 24);
        let w = rand_vec(&mut rng, i * o);
        let b = rand_vec(&mut rng, o);
        let imgs: Vec<Vec<f32>> = (0..4).map(|_| rand_vec(&mut rng, i)).collect();
        let c = cfg(4, 8, 4);
        let (one, s1) = simulate_fc(&imgs[..1], &w, &b, &c).unwrap();
        let (four, s4) = simulate_fc(&imgs, &w, &b, &c).unwrap();
        assert_eq!(s1.weight_bytes, s4.weight_bytes);
        assert_eq!(s4.weight_bytes as f64 / 4.0, s1.weight_bytes as f64 / 4.0);
        assert_eq!(s4.macs_performed, 4 * s1.macs_performed);
        assert_eq!(one[0], four[0]);
        for (img, got) in imgs.iter().zip(&four) {
            let want = fc_ref(img, &w, &b).unwrap();
            for (&g, &w) in got.iter().zip(&want) {
                assert!((g as f64 - w).abs() <= 1e-5 + 1e-4 * w.abs());
            }
        }
    }

    #[test]
    fn single_pe_trace_equals_schedule() {
        let l = conv(ConvParams::new(3, 2, 3, 1, 1));
        let s = generate_schedule(&l, &cfg(1, 2, 2), Shape::new(3, 4, 4)).unwrap();
        let t = shift_trace(&cfg(1, 2, 2), &s).unwrap();
        let expect: Vec<_> = s.events.iter().enumerate().map(|(i, e)| Arrival { cycle: e.cycle, event: i }).collect();
        assert_eq!(t.per_pe[0], expect);
    }

    #[test]
    fn last_pe_first_arrival() {
        let l = conv(ConvParams::new(16, 32, 3, 1, 1));
        let c = cfg(16, 16, 4);
        let s = generate_schedule(&l, &c, Shape::new(16, 4, 4)).unwrap();
        let t = shift_trace(&c, &s).unwrap();
        assert_eq!(t.per_pe[15][0].cycle, 15);
    }

    proptest! {
        #[test]
        fn systolic_delay_law(pe in 1usize..8, cycles in proptest::collection::btree_set(0u64..60, 0..30)) {
            let events: Vec<LoadEvent> = cycles.iter().map(|&cycle| LoadEvent { cycle, ..first_placeholder() }).collect();
            let sched = LoadSchedule { events, totals: crate::memrd::LoadTotals { vectors_loaded: 0, bytes_loaded: 0, padded_vector_count: 0 } };
            let t = shift_trace(&cfg(pe, 1, 1), &sched).unwrap();
            for (n, log) in t.per_pe.iter().enumerate() {
                prop_assert_eq!(log.len(), sched.events.len());
                for (a, b) in log.iter().zip(&t.per_pe[0]) {
                    prop_assert_eq!(a.event, b.event);
                    prop_assert_eq!(a.cycle, b.cycle + n as u64);
                }
            }
        }

        #[test]
        fn fc_batch_equals_independent_runs(seed in any::<u64>(), batch in 1usize..5, pe in 1usize..6, vec in 1usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (i, o) = (rng.gen_range(1..30), rng.gen_range(1..20));
            let w = rand_vec(&mut rng, i * o);
            let b = rand_vec(&mut rng, o);
            let imgs: Vec<Vec<f32>> = (0..batch).map(|_| rand_vec(&mut rng, i)).collect();
            let c = cfg(pe, vec, 4);
            let (all, _) = simulate_fc(&imgs, &w, &b, &c).unwrap();
            for (img, got) in imgs.iter().zip(&all) {
                let (single, _) = simulate_fc(std::slice::from_ref(img), &w, &b, &c).unwrap();
                prop_assert_eq!(&single[0], got);
            }
        }

        #[test]
        fn deterministic_and_mac_conserving(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = ConvParams::new(rng.gen_range(1..10), rng.gen_range(1..10), 3, rng.gen_range(1..3), 1);
            let shape = Shape::new(p.in_channels, rng.gen_range(3..9), rng.gen_range(3..9));
            let x = rand_tensor(&mut rng, shape);
            let w = rand_vec(&mut rng, p.weight_len());
            let b = rand_vec(&mut rng, p.out_channels);
            let l = conv(p);
            let o = p.output_shape(shape).unwrap();
            let expect_macs = (o.len() * 9 * p.in_channels) as u64;
            for c in [cfg(1, 1, 1), cfg(3, 4, 2), cfg(16, 16, 4)] {
                let (a, sa) = simulate_conv(&x, &w, &b, &l, &c).unwrap();
                let (again, _) = simulate_conv(&x, &w, &b, &l, &c).unwrap();
                prop_assert_eq!(sa.macs_performed, expect_macs);
                let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
                prop_assert_eq!(bits(&a), bits(&again));
            }
        }
    }
}
