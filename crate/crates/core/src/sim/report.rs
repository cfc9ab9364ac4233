use std::io::Write;

use serde::Serialize;

use super::config::{required_adc_bits, HardwareConfig};
use super::trace::{schedule, CycleTrace};
use crate::error::{Error, Result};
use crate::format::QuantModel;
use crate::mapper::{
    layer_utilization, layout_precision_aware, lut_bytes, utilization, CrossbarLayout, CrossbarSpec,
};
use crate::quant::{compression_ratio, BitLayer, CompressionRatio};

/// Event counts that energy is charged against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct EventCounts {
    pub ou_events: u64,
    pub adc_conversions: u64,
    pub dac_rows: u64,
    pub buffer_read_bits: u64,
    pub buffer_write_bits: u64,
    pub shift_adds: u64,
}

impl EventCounts {
    fn add(&mut self, o: &EventCounts) {
        self.ou_events += o.ou_events;
        self.adc_conversions += o.adc_conversions;
        self.dac_rows += o.dac_rows;
        self.buffer_read_bits += o.buffer_read_bits;
        self.buffer_write_bits += o.buffer_write_bits;
        self.shift_adds += o.shift_adds;
    }
}

/// Dynamic energy by component, in joules.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct Energy {
    pub adc: f64,
    pub dac: f64,
    pub array: f64,
    pub buffer: f64,
    pub sa: f64,
    pub ctrl: f64,
}

impl Energy {
    pub fn from_counts(c: &EventCounts, hw: &HardwareConfig, adc_bits: u32) -> Self {
        Self {
            adc: c.adc_conversions as f64 * hw.adc_energy(adc_bits),
            dac: c.dac_rows as f64 * hw.dac_drive_per_row,
            array: c.ou_events as f64 * hw.array_mac_per_ou,
            buffer: c.buffer_read_bits as f64 * hw.buffer_read_per_bit
                + c.buffer_write_bits as f64 * hw.buffer_write_per_bit,
            sa: c.shift_adds as f64 * hw.shift_add,
            ctrl: c.ou_events as f64 * hw.controller_per_cycle,
        }
    }

    pub fn total(&self) -> f64 {
        self.adc + self.dac + self.array + self.buffer + self.sa + self.ctrl
    }

    pub fn adc_share(&self) -> f64 {
        let t = self.total();
        if t > 0.0 {
            self.adc / t
        } else {
            0.0
        }
    }

    fn add(&mut self, o: &Energy) {
        self.adc += o.adc;
        self.dac += o.dac;
        self.array += o.array;
        self.buffer += o.buffer;
        self.sa += o.sa;
        self.ctrl += o.ctrl;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerReport {
    pub layer: String,
    /// OU activations.
    pub cycles: u64,
    /// Length of the layer's busiest crossbar queue.
    pub critical_cycles: u64,
    pub latency_s: f64,
    pub counts: EventCounts,
    pub energy: Energy,
    pub lut_bytes: u64,
    pub utilization: f64,
    pub active_ous: usize,
    pub crossbars: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimReport {
    pub layers: Vec<LayerReport>,
    pub total: LayerReport,
    pub compression: CompressionRatio,
    pub adc_bits: u32,
}

/// Energy, latency and indexing cost of `trace`.
///
/// Charges per OU event: one conversion and one shift-add per OU column,
/// one DAC drive per activated row, one array access and one controller
/// step. The activated rows' input bits are read from the buffer once per
/// block and activation bit; every output element is written once per
/// inference.
pub fn report(
    trace: &CycleTrace,
    layout: &CrossbarLayout,
    layers: &[&BitLayer],
    names: &[String],
    act_bits: &[u32],
    hw: &HardwareConfig,
    adc_bits: u32,
) -> Result<SimReport> {
    if names.len() != layers.len() || act_bits.len() != layers.len() {
        return Err(Error::Model(
            "one name and activation width per layer".into(),
        ));
    }
    let ow = layout.spec.ou_width as u64;
    let mut counts = vec![EventCounts::default(); layers.len()];
    for ev in &trace.events {
        let c = counts.get_mut(ev.layer).ok_or_else(|| {
            Error::LayoutMismatch(format!("event for missing layer {}", ev.layer))
        })?;
        let rows = (ev.activated_rows[1] - ev.activated_rows[0]) as u64;
        c.ou_events += 1;
        c.adc_conversions += ow;
        c.shift_adds += ow;
        c.dac_rows += rows;
        if ev.skip {
            c.buffer_read_bits += rows;
        }
        if ev.fetch_next && ev.act_bit == 0 {
            let grid = layers[ev.layer].grid();
            let (_, hj) = grid.block_coords(ev.wb_id);
            c.buffer_write_bits += grid.block_cols(hj).len() as u64 * hw.output_bits as u64;
        }
    }

    let mut out = Vec::with_capacity(layers.len());
    let mut total_counts = EventCounts::default();
    let mut total_energy = Energy::default();
    let mut critical = 0u64;
    for (li, c) in counts.iter().enumerate() {
        let energy = Energy::from_counts(c, hw, adc_bits);
        let crit = trace.layer_cycles.get(li).copied().unwrap_or(0);
        let grid = layers[li].grid();
        out.push(LayerReport {
            layer: names[li].clone(),
            cycles: c.ou_events,
            critical_cycles: crit,
            latency_s: crit as f64 / hw.frequency,
            counts: *c,
            energy,
            lut_bytes: lut_bytes(&[grid]),
            utilization: layer_utilization(layout, li),
            active_ous: layout.layer_active_ous(li),
            crossbars: layout.layer_crossbars(li),
        });
        total_counts.add(c);
        total_energy.add(&energy);
        critical += crit;
    }
    let grids: Vec<_> = layers.iter().map(|l| l.grid()).collect();
    let total = LayerReport {
        layer: "total".into(),
        cycles: total_counts.ou_events,
        critical_cycles: critical,
        latency_s: critical as f64 / hw.frequency,
        counts: total_counts,
        energy: total_energy,
        lut_bytes: lut_bytes(&grids),
        utilization: utilization(layout),
        active_ous: layout.active_ous(),
        crossbars: layout.crossbars.len(),
    };
    let act_min = act_bits.iter().copied().min().unwrap_or(32);
    Ok(SimReport {
        layers: out,
        total,
        compression: compression_ratio(layers.iter().copied(), act_min),
        adc_bits,
    })
}

#[derive(Serialize)]
struct CsvRow<'a> {
    layer: &'a str,
    cycles: u64,
    latency_s: f64,
    e_adc: f64,
    e_dac: f64,
    e_array: f64,
    e_buffer: f64,
    e_sa: f64,
    e_ctrl: f64,
    lut_bytes: u64,
}

impl<'a> From<&'a LayerReport> for CsvRow<'a> {
    fn from(r: &'a LayerReport) -> Self {
        Self {
            layer: &r.layer,
            cycles: r.cycles,
            latency_s: r.latency_s,
            e_adc: r.energy.adc,
            e_dac: r.energy.dac,
            e_array: r.energy.array,
            e_buffer: r.energy.buffer,
            e_sa: r.energy.sa,
            e_ctrl: r.energy.ctrl,
            lut_bytes: r.lut_bytes,
        }
    }
}

const CSV_HEADER: [&str; 10] = [
    "layer",
    "cycles",
    "latency_s",
    "e_adc",
    "e_dac",
    "e_array",
    "e_buffer",
    "e_sa",
    "e_ctrl",
    "lut_bytes",
];

impl SimReport {
    /// One row per layer and a closing `total` row; a model without layers
    /// yields the header alone.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .has_headers(false)
            .from_writer(out);
        w.write_record(CSV_HEADER)?;
        for r in &self.layers {
            w.serialize(CsvRow::from(r))?;
        }
        if !self.layers.is_empty() {
            w.serialize(CsvRow::from(&self.total))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// One row of an OU-size sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OuSweepRow {
    pub ou_h: usize,
    pub ou_w: usize,
    pub adc_bits: u32,
    pub model_bits: u64,
    pub cycles: u64,
    pub latency_s: f64,
    pub e_adc: f64,
    pub e_dac: f64,
    pub e_array: f64,
    pub e_buffer: f64,
    pub e_sa: f64,
    pub e_ctrl: f64,
    pub e_total: f64,
    pub lut_bytes: u64,
}

pub const DEFAULT_OU_SIZES: [(usize, usize); 5] =
    [(9, 8), (16, 16), (32, 32), (64, 64), (128, 128)];

/// Cost of `model` under each OU size. Block precisions are recomputed from
/// the stored planes at the new block granularity, and the ADC resolution
/// follows the OU height.
pub fn ou_sweep(
    model: &QuantModel,
    sizes: &[(usize, usize)],
    spec: &CrossbarSpec,
    hw: &HardwareConfig,
) -> Result<Vec<OuSweepRow>> {
    let mut rows = Vec::with_capacity(sizes.len());
    for &(h, w) in sizes {
        let sized = spec.with_ou(h, w);
        sized.validate()?;
        let layers: Vec<BitLayer> = model
            .layers
            .iter()
            .map(|l| {
                let g = l.weights.grid();
                if (g.ou_height(), g.ou_width()) == (h, w) {
                    l.weights.clone()
                } else {
                    l.weights.regrid(h, w)
                }
            })
            .collect();
        let refs: Vec<&BitLayer> = layers.iter().collect();
        let grids: Vec<_> = refs.iter().map(|l| l.grid()).collect();
        let layout = layout_precision_aware(&grids, &sized)?;
        let trace = schedule(&layout, &grids, &model.act_bits(), &model.vectors())?;
        let names: Vec<String> = model.layers.iter().map(|l| l.name.clone()).collect();
        let adc_bits = required_adc_bits(h);
        let rep = report(
            &trace,
            &layout,
            &refs,
            &names,
            &model.act_bits(),
            hw,
            adc_bits,
        )?;
        let t = &rep.total;
        rows.push(OuSweepRow {
            ou_h: h,
            ou_w: w,
            adc_bits,
            model_bits: refs.iter().map(|l| l.retained_bits()).sum(),
            cycles: t.cycles,
            latency_s: t.latency_s,
            e_adc: t.energy.adc,
            e_dac: t.energy.dac,
            e_array: t.energy.array,
            e_buffer: t.energy.buffer,
            e_sa: t.energy.sa,
            e_ctrl: t.energy.ctrl,
            e_total: t.energy.total(),
            lut_bytes: t.lut_bytes,
        });
    }
    Ok(rows)
}

pub fn write_ou_sweep_csv<W: Write>(rows: &[OuSweepRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
