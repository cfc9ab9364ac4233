use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::trace::CycleTrace;
use crate::error::{Error, Result};
use crate::mapper::{CrossbarLayout, OuEntry};
use crate::quant::BitLayer;

/// Per layer, per activation vector, one unsigned integer per input row.
pub type Activations = Vec<Vec<Vec<u64>>>;
/// Per layer, per activation vector, one integer per output column.
pub type Outputs = Vec<Vec<Vec<i64>>>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExecOptions {
    /// Honour the skip flag; turning this off lets each block accumulate
    /// onto the previous block's partial sum.
    pub skip: bool,
    pub adc_bits: u32,
}

impl Default for ExecOptions {
    fn default() -> Self {
        Self {
            skip: true,
            adc_bits: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExecOutput {
    pub outputs: Outputs,
    /// Conversions whose magnitude exceeded the ADC range.
    pub saturations: u64,
}

/// Seeded uniform `act_bits`-bit activations for every layer.
pub fn random_activations(
    layers: &[&BitLayer],
    act_bits: &[u32],
    vectors: &[usize],
    seed: u64,
) -> Activations {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    layers
        .iter()
        .zip(act_bits)
        .zip(vectors)
        .map(|((l, &a), &v)| {
            let top = (1u64 << a) - 1;
            (0..v)
                .map(|_| (0..l.rows()).map(|_| rng.random_range(0..=top)).collect())
                .collect()
        })
        .collect()
}

fn check_activations(layers: &[&BitLayer], acts: &Activations) -> Result<()> {
    if acts.len() != layers.len() {
        return Err(Error::Model(format!(
            "activations given for {} layers, model has {}",
            acts.len(),
            layers.len()
        )));
    }
    for (li, (l, a)) in layers.iter().zip(acts).enumerate() {
        if let Some(v) = a.iter().find(|v| v.len() != l.rows()) {
            return Err(Error::Model(format!(
                "layer {li}: activation vector has {} entries, expected {}",
                v.len(),
                l.rows()
            )));
        }
    }
    Ok(())
}

/// Direct integer matrix-vector products with the fixed-point weights.
pub fn reference_inference(layers: &[&BitLayer], acts: &Activations) -> Result<Outputs> {
    check_activations(layers, acts)?;
    Ok(layers
        .iter()
        .zip(acts)
        .map(|(l, vecs)| {
            let w = l.integer_weights();
            let cols = l.cols();
            vecs.iter()
                .map(|x| {
                    let mut y = vec![0i64; cols];
                    for (r, &xr) in x.iter().enumerate() {
                        if xr == 0 {
                            continue;
                        }
                        for (c, yc) in y.iter_mut().enumerate() {
                            *yc += xr as i64 * w[r * cols + c];
                        }
                    }
                    y
                })
                .collect()
        })
        .collect())
}

/// Replay `trace` on the crossbar contents given by `layout`, filling each
/// event's ADC outputs and partial sums, and return the layer outputs.
///
/// Every event reads the plane stored in its OU: cell `(r, c)` holds
/// `sign·bit`, and each activated row is driven with one bit of its input.
/// Partial sums shift-add across weight bits within a block; finished
/// blocks add into their stripe; each finished stripe shift-adds into the
/// output across activation bits.
pub fn execute(
    trace: &mut CycleTrace,
    layout: &CrossbarLayout,
    layers: &[&BitLayer],
    acts: &Activations,
    opts: ExecOptions,
) -> Result<ExecOutput> {
    check_activations(layers, acts)?;
    if let Some(i) = layers.iter().position(|l| !l.is_binary()) {
        return Err(Error::Model(format!("layer {i} planes are not binary")));
    }
    let (oh, ow) = (layout.spec.ou_height, layout.spec.ou_width);
    let mut outputs: Outputs = layers
        .iter()
        .zip(acts)
        .map(|(l, v)| vec![vec![0i64; l.cols()]; v.len()])
        .collect();
    let limit = (1i64 << opts.adc_bits) - 1;
    let mut saturations = 0;
    let mut psum = vec![0i64; ow];
    let mut stripe = vec![0i64; ow];

    for ev in &mut trace.events {
        let layer = *layers.get(ev.layer).ok_or_else(|| {
            Error::LayoutMismatch(format!("event for missing layer {}", ev.layer))
        })?;
        let x = acts[ev.layer].get(ev.vector).ok_or_else(|| {
            Error::LayoutMismatch(format!("event for missing vector {}", ev.vector))
        })?;
        let grid = layer.grid();
        if ev.wb_id >= grid.num_blocks() {
            return Err(Error::LayoutMismatch(format!("unknown block {}", ev.wb_id)));
        }
        let (vi, hj) = grid.block_coords(ev.wb_id);
        let crossbar = layout
            .crossbars
            .get(ev.crossbar)
            .ok_or_else(|| Error::LayoutMismatch(format!("unknown crossbar {}", ev.crossbar)))?;
        let (band, slot) = (ev.activated_rows[0] / oh, ev.activated_cols[0] / ow);
        let OuEntry::Plane { wb, bit } = *crossbar.ou(band, slot) else {
            return Err(Error::LayoutMismatch(format!(
                "event at cycle {} addresses a spare OU",
                ev.cycle
            )));
        };
        if wb != [vi, hj] || bit != ev.weight_bit {
            return Err(Error::LayoutMismatch(format!(
                "event at cycle {} disagrees with the OU contents",
                ev.cycle
            )));
        }

        let rows = grid.block_rows(vi);
        let cols = grid.block_cols(hj);
        let plane = &layer.planes()[bit as usize];
        let mut adc = vec![0i64; ow];
        for r in rows.clone() {
            if (x[r] >> ev.act_bit) & 1 == 0 {
                continue;
            }
            for (k, c) in cols.clone().enumerate() {
                let i = r * layer.cols() + c;
                if plane[i] != 0.0 {
                    adc[k] += layer.signs()[i] as i64;
                }
            }
        }
        saturations += adc.iter().filter(|v| v.abs() > limit).count() as u64;

        for (p, &a) in psum.iter_mut().zip(&adc) {
            *p = if ev.skip && opts.skip { a } else { 2 * *p + a };
        }
        if ev.weight_bit == 0 {
            for (s, p) in stripe.iter_mut().zip(&psum) {
                *s += p;
            }
        }
        if ev.fetch_next {
            let out = &mut outputs[ev.layer][ev.vector];
            for (k, c) in cols.enumerate() {
                out[c] = 2 * out[c] + stripe[k];
            }
            stripe.iter_mut().for_each(|s| *s = 0);
        }
        ev.adc_outputs = adc;
        ev.psum_after = psum.clone();
    }
    Ok(ExecOutput {
        outputs,
        saturations,
    })
}

/// Real-valued outputs from integer ones: `y · s/(2ⁿ−1) · β/(2^a−1)`.
pub fn dequantize(outputs: &[i64], layer: &BitLayer, beta: f64, act_bits: u32) -> Vec<f64> {
    let w_step = layer.scale() / layer.max_level();
    let a_step = beta / ((1u64 << act_bits) - 1) as f64;
    outputs
        .iter()
        .map(|&y| y as f64 * w_step * a_step)
        .collect()
}
