//! IFM load schedule of the MemRD kernel.
//!
//! Each cycle one `1 × 1 × vec_fac` IFM vector enters the shift-register
//! buffer. Within a tile of `reuse_fac` horizontally adjacent outputs the
//! window slides `stride·(reuse_fac − 1) + c` positions along the row and `c`
//! positions down the columns; then it moves to the next channel group. Loop
//! order, outermost first:
//!
//! ```text
//! ofm_group → tile (row-major over the OFM plane) → channel_group → column slide → row slide
//! ```
//!
//! Positions outside the IFM (zero padding, and the overhang of a ragged final
//! tile) are still issued as synthesized zero vectors and flagged `is_padding`.

use std::io::{self, Write};

use serde::Serialize;

use crate::arch::{ArchConfig, WORD_BYTES};
use crate::error::{Error, Result};
use crate::model::{ConvParams, LayerDescriptor};
use crate::tensor::Shape;

/// One vector load.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct LoadEvent {
    pub cycle: u64,
    /// Global OFM group; conv groups are laid out consecutively.
    pub ofm_group: usize,
    pub tile: usize,
    /// Global channel group; conv groups are laid out consecutively.
    pub channel_group: usize,
    /// IFM row (y), may be negative inside the top padding.
    pub row: isize,
    /// IFM column (x).
    pub col: isize,
    pub is_padding: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LoadTotals {
    pub vectors_loaded: u64,
    pub bytes_loaded: u64,
    pub padded_vector_count: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LoadSchedule {
    pub events: Vec<LoadEvent>,
    pub totals: LoadTotals,
}

/// Tiling of one conv layer onto an accelerator instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub params: ConvParams,
    pub ifm: Shape,
    pub ofm: Shape,
    pub cfg: ArchConfig,
    pub ofm_groups_per_conv_group: usize,
    pub channel_groups_per_conv_group: usize,
    pub tiles_per_row: usize,
    pub row_slides: usize,
    pub col_slides: usize,
}

impl ConvGeometry {
    pub fn new(layer: &LayerDescriptor, cfg: &ArchConfig, ifm: Shape) -> Result<Self> {
        crate::arch::validate_arch(cfg)?;
        let params = *layer.conv_params().ok_or_else(|| {
            Error::layer(&layer.name, format!("{} layer has no load schedule", layer.kind.type_name()))
        })?;
        let ofm = params.output_shape(ifm).map_err(|m| Error::layer(&layer.name, m))?;
        let (row_slides, col_slides) = slide_counts(&params, cfg);
        Ok(Self {
            params,
            ifm,
            ofm,
            cfg: *cfg,
            ofm_groups_per_conv_group: params.group_out().div_ceil(cfg.pe_num),
            channel_groups_per_conv_group: params.group_in().div_ceil(cfg.vec_fac),
            tiles_per_row: ofm.width.div_ceil(cfg.reuse_fac),
            row_slides,
            col_slides,
        })
    }

    pub fn ofm_groups(&self) -> usize {
        self.params.groups * self.ofm_groups_per_conv_group
    }

    pub fn tiles(&self) -> usize {
        self.ofm.height * self.tiles_per_row
    }

    pub fn vectors_per_tile(&self) -> usize {
        self.row_slides * self.col_slides
    }

    /// Conv group owning a global OFM group.
    pub fn conv_group(&self, ofm_group: usize) -> usize {
        ofm_group / self.ofm_groups_per_conv_group
    }

    /// Output row and first output column covered by a tile.
    pub fn tile_origin(&self, tile: usize) -> (usize, usize) {
        (tile / self.tiles_per_row, (tile % self.tiles_per_row) * self.cfg.reuse_fac)
    }

    /// IP units holding a real output in this tile.
    pub fn active_ip_units(&self, tile: usize) -> usize {
        let (_, ox0) = self.tile_origin(tile);
        self.cfg.reuse_fac.min(self.ofm.width - ox0)
    }

    /// OFM index computed by PE `pe` in a global OFM group, if any.
    pub fn ofm_of(&self, ofm_group: usize, pe: usize) -> Option<usize> {
        let g = self.conv_group(ofm_group);
        let local = (ofm_group % self.ofm_groups_per_conv_group) * self.cfg.pe_num + pe;
        (local < self.params.group_out()).then(|| g * self.params.group_out() + local)
    }

    /// First IFM channel of a global channel group and the count of real lanes.
    pub fn channel_span(&self, channel_group: usize) -> (usize, usize) {
        let g = channel_group / self.channel_groups_per_conv_group;
        let local = (channel_group % self.channel_groups_per_conv_group) * self.cfg.vec_fac;
        let lanes = self.cfg.vec_fac.min(self.params.group_in() - local);
        (g * self.params.group_in() + local, lanes)
    }

    /// Padded extents of the IFM.
    fn padded(&self) -> (isize, isize) {
        let p = self.params.pad as isize;
        (self.ifm.height as isize + p, self.ifm.width as isize + p)
    }

    /// Whether a vector position reads real IFM data.
    pub fn in_bounds(&self, row: isize, col: isize) -> bool {
        row >= 0 && col >= 0 && row < self.ifm.height as isize && col < self.ifm.width as isize
    }

    /// Whether a position lies inside the zero-padded IFM.
    pub fn in_padded_bounds(&self, row: isize, col: isize) -> bool {
        let p = self.params.pad as isize;
        let (h, w) = self.padded();
        row >= -p && col >= -p && row < h && col < w
    }

    pub fn schedule(&self) -> ScheduleIter {
        ScheduleIter { geo: *self, cycle: 0, og: 0, tile: 0, cg: 0, ky: 0, xs: 0, done: self.ofm_groups() == 0 }
    }
}

fn slide_counts(p: &ConvParams, cfg: &ArchConfig) -> (usize, usize) {
    (p.stride * (cfg.reuse_fac - 1) + p.kernel, p.kernel)
}

/// `(row_slides, col_slides)` for a conv layer: `(s·(reuse_fac − 1) + c, c)`,
/// which is `(reuse_fac + c − 1, c)` at unit stride.
pub fn tile_slide_counts(layer: &LayerDescriptor, cfg: &ArchConfig) -> Result<(usize, usize)> {
    crate::arch::validate_arch(cfg)?;
    let p = layer
        .conv_params()
        .ok_or_else(|| Error::layer(&layer.name, "slide counts are defined for conv layers only"))?;
    Ok(slide_counts(p, cfg))
}

/// Lazily enumerates the load events of one layer in issue order.
#[derive(Debug, Clone)]
pub struct ScheduleIter {
    geo: ConvGeometry,
    cycle: u64,
    og: usize,
    tile: usize,
    cg: usize,
    ky: usize,
    xs: usize,
    done: bool,
}

impl ScheduleIter {
    pub fn geometry(&self) -> &ConvGeometry {
        &self.geo
    }
}

impl Iterator for ScheduleIter {
    type Item = LoadEvent;

    fn next(&mut self) -> Option<LoadEvent> {
        if self.done {
            return None;
        }
        let g = &self.geo;
        let (oy, ox0) = g.tile_origin(self.tile);
        let s = g.params.stride as isize;
        let p = g.params.pad as isize;
        let row = oy as isize * s - p + self.ky as isize;
        let col = ox0 as isize * s - p + self.xs as isize;
        let cpg = g.channel_groups_per_conv_group;
        let channel_group = g.conv_group(self.og) * cpg + self.cg;
        let ev = LoadEvent {
            cycle: self.cycle,
            ofm_group: self.og,
            tile: self.tile,
            channel_group,
            row,
            col,
            is_padding: !g.in_bounds(row, col),
        };
        self.cycle += 1;
        self.xs += 1;
        if self.xs == g.row_slides {
            self.xs = 0;
            self.ky += 1;
            if self.ky == g.col_slides {
                self.ky = 0;
                self.cg += 1;
                if self.cg == cpg {
                    self.cg = 0;
                    self.tile += 1;
                    if self.tile == g.tiles() {
                        self.tile = 0;
                        self.og += 1;
                        self.done = self.og == g.ofm_groups();
                    }
                }
            }
        }
        Some(ev)
    }
}

pub fn generate_schedule(layer: &LayerDescriptor, cfg: &ArchConfig, ifm_shape: Shape) -> Result<LoadSchedule> {
    let geo = ConvGeometry::new(layer, cfg, ifm_shape)?;
    let events: Vec<LoadEvent> = geo.schedule().collect();
    let padded = events.iter().filter(|e| e.is_padding).count() as u64;
    let vectors = events.len() as u64;
    Ok(LoadSchedule {
        events,
        totals: LoadTotals {
            vectors_loaded: vectors,
            bytes_loaded: vectors * (cfg.vec_fac * WORD_BYTES) as u64,
            padded_vector_count: padded,
        },
    })
}

/// Closed-form count of IFM bytes the schedule moves off-chip.
pub fn ifm_offchip_bytes(layer: &LayerDescriptor, cfg: &ArchConfig, ifm_shape: Shape) -> Result<u64> {
    crate::arch::validate_arch(cfg)?;
    let p =
        layer.conv_params().ok_or_else(|| Error::layer(&layer.name, "IFM traffic is defined for conv layers only"))?;
    let ofm = p.output_shape(ifm_shape).map_err(|m| Error::layer(&layer.name, m))?;
    let (rows, cols) = slide_counts(p, cfg);
    let per_conv_group = p.group_out().div_ceil(cfg.pe_num)
        * ofm.height
        * ofm.width.div_ceil(cfg.reuse_fac)
        * p.group_in().div_ceil(cfg.vec_fac)
        * rows
        * cols;
    Ok((p.groups * per_conv_group * cfg.vec_fac * WORD_BYTES) as u64)
}

pub const CSV_HEADER: &str = "cycle,ofm_group,tile,channel_group,row,col,is_padding";

pub fn write_csv<W: Write>(events: impl IntoIterator<Item = LoadEvent>, mut out: W) -> io::Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for e in events {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            e.cycle, e.ofm_group, e.tile, e.channel_group, e.row, e.col, e.is_padding as u8
        )?;
    }
    out.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{LayerKind, MODEL_INPUT};
    use proptest::prelude::*;
    use std::collections::HashSet;

    fn conv(p: ConvParams) -> LayerDescriptor {
        LayerDescriptor::new("c", LayerKind::Conv(p), &[MODEL_INPUT])
    }

    fn cfg(p: usize, v: usize, r: usize) -> ArchConfig {
        ArchConfig { pe_num: p, vec_fac: v, reuse_fac: r }
    }

    #[test]
    fn slide_count_examples() {
        assert_eq!(tile_slide_counts(&conv(ConvParams::new(1, 1, 3, 1, 0)), &cfg(1, 1, 4)).unwrap(), (6, 3));
        assert_eq!(tile_slide_counts(&conv(ConvParams::new(1, 1, 1, 1, 0)), &cfg(1, 1, 1)).unwrap(), (1, 1));
        assert_eq!(tile_slide_counts(&conv(ConvParams::new(1, 1, 3, 2, 0)), &cfg(1, 1, 4)).unwrap(), (9, 3));
    }

    #[test]
    fn stride_two_span_is_union_of_windows() {
        // Union of four stride-2 3-wide windows: columns 0..=8.
        let union: HashSet<usize> = (0..4).flat_map(|r| (0..3).map(move |k| 2 * r + k)).collect();
        assert_eq!(union.len(), 9);
        assert_eq!(*union.iter().max().unwrap() + 1, 9);
    }

    #[test]
    fn non_conv_rejected() {
        let relu = LayerDescriptor::new("r", LayerKind::Relu, &[MODEL_INPUT]);
        assert!(tile_slide_counts(&relu, &cfg(1, 1, 1)).is_err());
    }

    #[test]
    fn two_tile_row_enumeration() {
        // One 6-wide output row: 16x1x8 IFM, 3x3 kernel, 4 filters.
        let l = conv(ConvParams::new(16, 4, 3, 1, 0));
        let s = generate_schedule(&l, &cfg(4, 16, 4), Shape::new(16, 3, 8)).unwrap();
        assert_eq!(s.totals.vectors_loaded, 36);
        assert_eq!(s.totals.bytes_loaded, 36 * 16 * 4);
        // Second tile starts at column 4 and overhangs the 8-wide input by two.
        assert_eq!(s.totals.padded_vector_count, 2 * 3);
        let first_row: Vec<_> = s.events[..6].iter().map(|e| (e.row, e.col)).collect();
        assert_eq!(first_row, (0..6).map(|x| (0, x)).collect::<Vec<_>>());
        assert_eq!((s.events[6].row, s.events[6].col), (1, 0));
        assert_eq!(s.events[18].tile, 1);
    }

    #[test]
    fn pointwise_single_event() {
        let l = conv(ConvParams::new(16, 8, 1, 1, 0));
        let s = generate_schedule(&l, &cfg(16, 16, 1), Shape::new(16, 1, 1)).unwrap();
        assert_eq!(s.events.len(), 1);
        assert!(!s.events[0].is_padding);
    }

    #[test]
    fn bytes_per_load_cycle_independent_of_reuse() {
        let l = conv(ConvParams::new(16, 8, 3, 1, 1));
        for r in [1, 2, 4] {
            let s = generate_schedule(&l, &cfg(4, 16, r), Shape::new(16, 9, 9)).unwrap();
            assert_eq!(s.totals.bytes_loaded / s.totals.vectors_loaded, 64);
        }
    }

    #[test]
    fn total_vectors_shrink_with_reuse_at_unit_stride() {
        // The overlap between neighbouring windows is loaded once per tile, so
        // the total falls from 6 tiles x 9 to 2 tiles x 18.
        let l = conv(ConvParams::new(16, 4, 3, 1, 0));
        let at = |r| generate_schedule(&l, &cfg(4, 16, r), Shape::new(16, 3, 8)).unwrap().totals.vectors_loaded;
        assert_eq!(at(1), 54);
        assert_eq!(at(4), 36);
    }

    #[test]
    fn csv_format() {
        let l = conv(ConvParams::new(1, 1, 1, 1, 1));
        let s = generate_schedule(&l, &cfg(1, 1, 1), Shape::new(1, 1, 1)).unwrap();
        let mut buf = Vec::new();
        write_csv(s.events, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], CSV_HEADER);
        assert_eq!(lines[1], "0,0,0,0,-1,-1,1");
        assert_eq!(lines.len(), 10);
        assert_eq!(lines[5], "4,0,4,0,0,0,0");
    }

    #[test]
    fn grouped_conv_uses_own_channel_groups() {
        let l = conv(ConvParams::new(8, 4, 1, 1, 0).with_groups(2));
        let s = generate_schedule(&l, &cfg(2, 2, 1), Shape::new(8, 1, 1)).unwrap();
        let pairs: Vec<_> = s.events.iter().map(|e| (e.ofm_group, e.channel_group)).collect();
        assert_eq!(pairs, vec![(0, 0), (0, 1), (1, 2), (1, 3)]);
    }

    fn arb_case() -> impl Strategy<Value = (ConvParams, Shape, ArchConfig)> {
        (1usize..6, 1usize..6, 1usize..5, 1usize..4, 0usize..3, 1usize..9, 1usize..9, 1usize..5, 1usize..5, 1usize..6)
            .prop_filter_map("valid layer", |(ic, oc, c, s, p, h, w, pe, vec, reuse)| {
                let params = ConvParams::new(ic, oc, c, s, p.min(c - 1));
                let shape = Shape::new(ic, h, w);
                params.output_shape(shape).ok().map(|_| (params, shape, cfg(pe, vec, reuse)))
            })
    }

    proptest! {
        #[test]
        fn closed_form_bytes_match_schedule((p, shape, cfg) in arb_case()) {
            let l = conv(p);
            let s = generate_schedule(&l, &cfg, shape).unwrap();
            prop_assert_eq!(ifm_offchip_bytes(&l, &cfg, shape).unwrap(), s.totals.bytes_loaded);
        }

        #[test]
        fn cycles_are_consecutive((p, shape, cfg) in arb_case()) {
            let s = generate_schedule(&conv(p), &cfg, shape).unwrap();
            for (i, e) in s.events.iter().enumerate() {
                prop_assert_eq!(e.cycle, i as u64);
            }
        }

        #[test]
        fn padding_flag_and_row_major_tiles((p, shape, cfg) in arb_case()) {
            let l = conv(p);
            let geo = ConvGeometry::new(&l, &cfg, shape).unwrap();
            let s = generate_schedule(&l, &cfg, shape).unwrap();
            for e in &s.events {
                prop_assert_eq!(e.is_padding, !geo.in_bounds(e.row, e.col));
                // Only a ragged final tile may overhang the padded input.
                if !geo.in_padded_bounds(e.row, e.col) {
                    prop_assert!(geo.active_ip_units(e.tile) < cfg.reuse_fac);
                }
            }
        }

        #[test]
        fn loads_cover_tile_demand((p, shape, cfg) in arb_case()) {
            let l = conv(p);
            let geo = ConvGeometry::new(&l, &cfg, shape).unwrap();
            let mut loaded: std::collections::HashMap<(usize, usize, usize), HashSet<(isize, isize)>> = Default::default();
            for e in geo.schedule() {
                loaded.entry((e.ofm_group, e.tile, e.channel_group)).or_default().insert((e.row, e.col));
            }
            let (s, pad) = (p.stride as isize, p.pad as isize);
            for og in 0..geo.ofm_groups() {
                let g = geo.conv_group(og);
                for tile in 0..geo.tiles() {
                    let (oy, ox0) = geo.tile_origin(tile);
                    for lcg in 0..geo.channel_groups_per_conv_group {
                        let cg = g * geo.channel_groups_per_conv_group + lcg;
                        let have = &loaded[&(og, tile, cg)];
                        for r in 0..geo.active_ip_units(tile) {
                            for ky in 0..p.kernel as isize {
                                for kx in 0..p.kernel as isize {
                                    let need = (oy as isize * s - pad + ky, (ox0 + r) as isize * s - pad + kx);
                                    prop_assert!(have.contains(&need), "missing {:?}", need);
                                }
                            }
                        }
                        if p.stride == 1 {
                            prop_assert_eq!(have.len(), (cfg.reuse_fac + p.kernel - 1) * p.kernel);
                        }
                    }
                }
            }
        }

        #[test]
        fn bytes_increase_with_ifm_size((p, shape, cfg) in arb_case()) {
            let l = conv(p);
            let wider = Shape::new(shape.channels, shape.height + p.stride, shape.width + p.stride * cfg.reuse_fac);
            let a = ifm_offchip_bytes(&l, &cfg, shape).unwrap();
            let b = ifm_offchip_bytes(&l, &cfg, wider).unwrap();
            prop_assert!(b > a);
        }
    }
}
