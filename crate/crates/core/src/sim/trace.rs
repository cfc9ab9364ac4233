use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mapper::{CrossbarLayout, OuEntry, Scheme};
use crate::quant::WbGrid;

/// One OU activation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub cycle: u64,
    pub crossbar: usize,
    /// Half-open wordline range `[start, end)` inside the crossbar.
    pub activated_rows: [usize; 2],
    /// Half-open bitline range `[start, end)` inside the crossbar.
    pub activated_cols: [usize; 2],
    pub wb_id: usize,
    pub weight_bit: u32,
    pub act_bit: u32,
    /// Start a fresh partial sum instead of accumulating onto the previous
    /// block's.
    pub skip: bool,
    /// The column stripe is complete for this activation bit.
    pub fetch_next: bool,
    pub adc_outputs: Vec<i64>,
    pub psum_after: Vec<i64>,
    pub layer: usize,
    pub vector: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CycleTrace {
    pub events: Vec<TraceEvent>,
    /// Per layer, the busiest crossbar's event count: the layer's length in
    /// cycles when its crossbars run in parallel.
    pub layer_cycles: Vec<u64>,
}

impl CycleTrace {
    pub fn total_events(&self) -> u64 {
        self.events.len() as u64
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for ev in &self.events {
            serde_json::to_writer(&mut out, ev)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Check that `layout` is a precision-aware placement of exactly `grids`.
pub fn check_layout(layout: &CrossbarLayout, grids: &[&WbGrid]) -> Result<()> {
    let mismatch = |m: String| Err(Error::LayoutMismatch(m));
    if layout.scheme != Scheme::Aware {
        return mismatch(format!("cannot schedule a {} layout", layout.scheme));
    }
    if layout.blocks.len() != grids.len() {
        return mismatch(format!(
            "layout has {} layers, model has {}",
            layout.blocks.len(),
            grids.len()
        ));
    }
    for (li, (grid, placed)) in grids.iter().zip(&layout.blocks).enumerate() {
        if grid.ou_height() != layout.spec.ou_height || grid.ou_width() != layout.spec.ou_width {
            return mismatch(format!(
                "layer {li} block size differs from the layout's OU"
            ));
        }
        if placed.len() != grid.num_blocks() {
            return mismatch(format!("layer {li} block count differs from the layout"));
        }
        for (g, locs) in placed.iter().enumerate() {
            let bw = grid.bitwidth(g);
            if locs.len() != bw as usize {
                return mismatch(format!(
                    "layer {li} block {g} has {bw} bits but {} OUs",
                    locs.len()
                ));
            }
            let (vi, hj) = grid.block_coords(g);
            for (k, &loc) in locs.iter().enumerate() {
                let want = OuEntry::Plane {
                    wb: [vi, hj],
                    bit: bw - 1 - k as u32,
                };
                if layout.crossbars.get(loc.crossbar).map(|x| x.layer) != Some(li)
                    || *layout.entry(loc) != want
                {
                    return mismatch(format!("layer {li} block {g} plane {k} is misplaced"));
                }
            }
        }
    }
    Ok(())
}

/// Order every OU activation of one inference.
///
/// Per activation vector and activation bit (MSB first), each column
/// stripe walks its vertical blocks, skipping empty ones, and each block
/// its retained weight bits MSB first. Crossbars of a layer run in
/// parallel, so an event's cycle is its position in its crossbar's queue;
/// layers run back to back.
pub fn schedule(
    layout: &CrossbarLayout,
    grids: &[&WbGrid],
    act_bits: &[u32],
    vectors: &[usize],
) -> Result<CycleTrace> {
    check_layout(layout, grids)?;
    if act_bits.len() != grids.len() || vectors.len() != grids.len() {
        return Err(Error::LayoutMismatch(
            "one activation width and vector count per layer is required".into(),
        ));
    }
    let (oh, ow) = (layout.spec.ou_height, layout.spec.ou_width);
    let mut trace = CycleTrace::default();
    let mut base = 0u64;
    let mut busy = vec![0u64; layout.crossbars.len()];
    for (li, grid) in grids.iter().enumerate() {
        let placed = &layout.blocks[li];
        for v in 0..vectors[li] {
            for a in (0..act_bits[li]).rev() {
                for hj in 0..grid.num_hblock() {
                    let stripe_start = trace.events.len();
                    for vi in 0..grid.num_vblock() {
                        let g = grid.block_id(vi, hj);
                        let bw = grid.bitwidth(g);
                        let rows = grid.block_rows(vi).len();
                        for (k, loc) in placed[g].iter().enumerate() {
                            let cycle = base + busy[loc.crossbar];
                            busy[loc.crossbar] += 1;
                            trace.events.push(TraceEvent {
                                cycle,
                                crossbar: loc.crossbar,
                                activated_rows: [loc.band * oh, loc.band * oh + rows],
                                activated_cols: [loc.slot * ow, (loc.slot + 1) * ow],
                                wb_id: g,
                                weight_bit: bw - 1 - k as u32,
                                act_bit: a,
                                skip: k == 0,
                                fetch_next: false,
                                adc_outputs: Vec::new(),
                                psum_after: Vec::new(),
                                layer: li,
                                vector: v,
                            });
                        }
                    }
                    if trace.events.len() > stripe_start {
                        trace.events.last_mut().expect("non-empty").fetch_next = true;
                    }
                }
            }
        }
        let span = busy.iter().copied().max().unwrap_or(0);
        trace.layer_cycles.push(span);
        base += span;
        busy.iter_mut().for_each(|b| *b = 0);
    }
    Ok(trace)
}
