//! Cycle-level model of the OU-based crossbar datapath: scheduling,
//! functional execution, and the latency/energy cost model.

mod config;
mod exec;
mod report;
mod trace;

pub use config::{required_adc_bits, HardwareConfig};
pub use exec::{
    dequantize, execute, random_activations, reference_inference, Activations, ExecOptions,
    ExecOutput, Outputs,
};
pub use report::{
    ou_sweep, report, write_ou_sweep_csv, Energy, EventCounts, LayerReport, OuSweepRow, SimReport,
    DEFAULT_OU_SIZES,
};
pub use trace::{check_layout, schedule, CycleTrace, TraceEvent};

use crate::error::Result;
use crate::format::QuantModel;
use crate::mapper::{layout_precision_aware, CrossbarLayout, CrossbarSpec};

/// Everything produced by one simulated inference.
#[derive(Debug, Clone)]
pub struct SimRun {
    pub layout: CrossbarLayout,
    pub trace: CycleTrace,
    pub report: SimReport,
    pub output: ExecOutput,
    /// Whether the crossbar outputs equal the direct integer products, when
    /// checked.
    pub verified: Option<bool>,
}

/// Map `model` precision-aware, schedule one inference over seeded random
/// activations, execute it and cost it.
pub fn simulate(
    model: &QuantModel,
    spec: &CrossbarSpec,
    hw: &HardwareConfig,
    seed: u64,
    verify: bool,
) -> Result<SimRun> {
    hw.validate(spec)?;
    let grids = model.grids();
    let layers = model.bit_layers();
    let act_bits = model.act_bits();
    let vectors = model.vectors();
    let layout = layout_precision_aware(&grids, spec)?;
    let mut trace = schedule(&layout, &grids, &act_bits, &vectors)?;
    let acts = random_activations(&layers, &act_bits, &vectors, seed);
    let opts = ExecOptions {
        skip: true,
        adc_bits: hw.adc_bits,
    };
    let output = execute(&mut trace, &layout, &layers, &acts, opts)?;
    let verified = if verify {
        Some(reference_inference(&layers, &acts)? == output.outputs)
    } else {
        None
    };
    let names: Vec<String> = model.layers.iter().map(|l| l.name.clone()).collect();
    let report = report(&trace, &layout, &layers, &names, &act_bits, hw, hw.adc_bits)?;
    Ok(SimRun {
        layout,
        trace,
        report,
        output,
        verified,
    })
}
