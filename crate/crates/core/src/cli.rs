//! Command implementations behind the `bwq` binary.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::format::{QuantModel, RunConfig};
use crate::mapper::{layout, utilization, CrossbarSpec, Scheme};
use crate::sim::{
    ou_sweep, simulate, write_ou_sweep_csv, HardwareConfig, SimReport, DEFAULT_OU_SIZES,
};
use crate::trainer::{
    ablation_sweep, act_precision_descent, alpha_sweep, float_baseline, write_sweep_csv,
    AlphaSchedule, Experiment, SweepRow,
};

/// Process exit status for a failed command.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::LayoutMismatch(_) => 2,
        _ => 1,
    }
}

pub const EXIT_MISMATCH: i32 = 3;

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

/// Parse `"0.1,2e-5"`.
pub fn parse_list<T: std::str::FromStr>(text: &str, what: &str) -> Result<Vec<T>> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| Error::Config(format!("malformed {what} '{s}'")))
        })
        .collect()
}

/// Parse `"9x8,16x16"`.
pub fn parse_sizes(text: &str) -> Result<Vec<(usize, usize)>> {
    text.split(',')
        .map(|s| {
            let bad = || Error::Config(format!("malformed OU size '{s}', expected HxW"));
            let (h, w) = s.trim().split_once('x').ok_or_else(bad)?;
            let h: usize = h.parse().map_err(|_| bad())?;
            let w: usize = w.parse().map_err(|_| bad())?;
            if h == 0 || w == 0 {
                return Err(bad());
            }
            Ok((h, w))
        })
        .collect()
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

/// Crossbar geometry for `model`: the configured one, or the default
/// crossbar with the model's OU when no config is given.
pub fn spec_for(model: &QuantModel, config: Option<&RunConfig>) -> Result<CrossbarSpec> {
    let spec = match (config, model.layers.first()) {
        (Some(c), _) => c.crossbar,
        (None, Some(l)) => {
            let g = l.weights.grid();
            CrossbarSpec::default().with_ou(g.ou_height(), g.ou_width())
        }
        (None, None) => CrossbarSpec::default(),
    };
    spec.validate()?;
    for l in &model.layers {
        let g = l.weights.grid();
        if (g.ou_height(), g.ou_width()) != (spec.ou_height, spec.ou_width) {
            return Err(Error::Config(format!(
                "layer {} uses {}x{} blocks but the crossbar OU is {}x{}",
                l.name,
                g.ou_height(),
                g.ou_width(),
                spec.ou_height,
                spec.ou_width
            )));
        }
    }
    Ok(spec)
}

pub struct TrainArgs {
    pub config: PathBuf,
    pub out: PathBuf,
    pub metrics: Option<PathBuf>,
    pub alpha_list: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub baseline_accuracy: f64,
    pub alpha: f64,
    pub act_bits: u32,
    pub accuracy: f64,
    pub weight_ratio: f64,
    pub act_ratio: f64,
    /// The first α tried already exceeded the accuracy budget.
    pub out_of_budget: bool,
    pub rows: Vec<SweepRow>,
}

impl TrainSummary {
    pub fn print<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "baseline_accuracy,{}", self.baseline_accuracy)?;
        writeln!(out, "alpha,{}", self.alpha)?;
        writeln!(out, "act_bits,{}", self.act_bits)?;
        writeln!(out, "accuracy,{}", self.accuracy)?;
        writeln!(out, "weight_ratio,{}", self.weight_ratio)?;
        writeln!(out, "act_ratio,{}", self.act_ratio)?;
        Ok(())
    }
}

/// Sweep α, then lower activation precision, and write the chosen model.
pub fn cmd_train(args: &TrainArgs) -> Result<TrainSummary> {
    let cfg = RunConfig::load(&args.config)?;
    if let Some(list) = &args.alpha_list {
        if list.is_empty() || list.iter().any(|a| !(a.is_finite() && *a >= 0.0)) {
            return Err(Error::Config(
                "alpha list must hold non-negative values".into(),
            ));
        }
    }
    let exp = Experiment::new(
        cfg.task,
        cfg.train.clone(),
        cfg.crossbar.ou_height,
        cfg.crossbar.ou_width,
    )?;
    let baseline = float_baseline(&exp)?;
    log::info!("float baseline accuracy {:.4}", baseline.accuracy);
    let schedule = match &args.alpha_list {
        Some(list) => AlphaSchedule::List(list.clone()),
        None => AlphaSchedule::from_config(&cfg.train),
    };
    let sweep = alpha_sweep(&exp, baseline.accuracy, &schedule)?;
    let mut rows = sweep.rows;
    let chosen = if sweep.out_of_budget {
        log::warn!(
            "alpha {} already exceeds the accuracy budget; keeping it without lowering activation precision",
            sweep.chosen.alpha
        );
        sweep.chosen
    } else {
        let descent = act_precision_descent(&exp, baseline.accuracy, sweep.chosen)?;
        rows.extend(descent.rows);
        descent.chosen
    };
    let act_bits = chosen.act_bits.unwrap_or(cfg.train.init_act_bits);
    QuantModel::from_model(&chosen.model, act_bits)?.save(&args.out)?;
    if let Some(path) = &args.metrics {
        write_sweep_csv(&rows, create(path)?)?;
    }
    Ok(TrainSummary {
        baseline_accuracy: baseline.accuracy,
        alpha: chosen.alpha,
        act_bits,
        accuracy: chosen.accuracy,
        weight_ratio: chosen.compression.weight,
        act_ratio: chosen.compression.act,
        out_of_budget: sweep.out_of_budget,
        rows,
    })
}

pub struct MapArgs {
    pub model: PathBuf,
    pub config: Option<PathBuf>,
    pub scheme: Scheme,
    pub out: Option<PathBuf>,
}

/// Map a model under one scheme; returns the utilization.
pub fn cmd_map(args: &MapArgs) -> Result<f64> {
    let model = QuantModel::load(&args.model)?;
    let cfg = args.config.as_deref().map(RunConfig::load).transpose()?;
    let spec = spec_for(&model, cfg.as_ref())?;
    let l = layout(args.scheme, &model.grids(), &spec)?;
    if let Some(path) = &args.out {
        std::fs::write(path, l.to_json()?)?;
    }
    Ok(utilization(&l))
}

pub struct SimulateArgs {
    pub model: PathBuf,
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub trace: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub verify: bool,
}

pub struct SimulateOutcome {
    pub report: SimReport,
    pub total_cycles: u64,
    pub verified: Option<bool>,
    pub saturations: u64,
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<SimulateOutcome> {
    let model = QuantModel::load(&args.model)?;
    let cfg = args.config.as_deref().map(RunConfig::load).transpose()?;
    let spec = spec_for(&model, cfg.as_ref())?;
    let hw = cfg.as_ref().map(|c| c.hardware.clone()).unwrap_or_default();
    hw.validate(&spec)
        .map_err(|e| Error::Config(e.to_string()))?;
    let seed = args.seed.or(cfg.as_ref().map(|c| c.seed)).unwrap_or(0);
    let run = simulate(&model, &spec, &hw, seed, args.verify)?;
    if let Some(path) = &args.trace {
        let mut w = create(path)?;
        run.trace.write_jsonl(&mut w)?;
        w.flush()?;
    }
    if let Some(path) = &args.out {
        run.report.write_csv(create(path)?)?;
    }
    if run.output.saturations > 0 {
        log::warn!(
            "{} ADC conversions exceeded the converter range",
            run.output.saturations
        );
    }
    Ok(SimulateOutcome {
        total_cycles: run.trace.total_events(),
        verified: run.verified,
        saturations: run.output.saturations,
        report: run.report,
    })
}

pub struct SweepOuArgs {
    pub model: PathBuf,
    pub config: Option<PathBuf>,
    pub sizes: Option<Vec<(usize, usize)>>,
    pub out: Option<PathBuf>,
}

/// Cost the model across OU sizes; writes CSV to `out` or `stdout`.
pub fn cmd_sweep_ou<W: Write>(args: &SweepOuArgs, stdout: W) -> Result<()> {
    let model = QuantModel::load(&args.model)?;
    let cfg = load_config(args.config.as_deref())?;
    let hw: HardwareConfig = cfg.hardware;
    let sizes = args
        .sizes
        .clone()
        .unwrap_or_else(|| DEFAULT_OU_SIZES.to_vec());
    for &(h, w) in &sizes {
        cfg.crossbar
            .with_ou(h, w)
            .validate()
            .map_err(|e| Error::Config(format!("OU size {h}x{w}: {e}")))?;
    }
    let rows = ou_sweep(&model, &sizes, &cfg.crossbar, &hw)?;
    match &args.out {
        Some(path) => write_ou_sweep_csv(&rows, create(path)?),
        None => write_ou_sweep_csv(&rows, stdout),
    }
}

pub struct AblateArgs {
    pub config: PathBuf,
    pub alphas: Vec<f64>,
    pub intervals: Vec<usize>,
    pub out: Option<PathBuf>,
}

pub fn cmd_ablate<W: Write>(args: &AblateArgs, stdout: W) -> Result<Vec<SweepRow>> {
    let cfg = RunConfig::load(&args.config)?;
    if args.alphas.is_empty() || args.intervals.is_empty() {
        return Err(Error::Config(
            "ablation needs at least one alpha and one interval".into(),
        ));
    }
    if let Some(&bad) = args
        .intervals
        .iter()
        .find(|&&i| i == 0 || i > cfg.train.total_epochs)
    {
        return Err(Error::Config(format!(
            "interval {bad} must lie in [1, {}]",
            cfg.train.total_epochs
        )));
    }
    let exp = Experiment::new(
        cfg.task,
        cfg.train.clone(),
        cfg.crossbar.ou_height,
        cfg.crossbar.ou_width,
    )?;
    let rows = ablation_sweep(&exp, &args.alphas, &args.intervals)?;
    match &args.out {
        Some(path) => write_sweep_csv(&rows, create(path)?)?,
        None => write_sweep_csv(&rows, stdout)?,
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn size_parsing() {
        assert_eq!(parse_sizes("9x8,16x16").unwrap(), vec![(9, 8), (16, 16)]);
        assert!(parse_sizes("9by8").is_err());
        assert!(parse_sizes("0x8").is_err());
        assert!(parse_sizes("9x").is_err());
    }

    #[test]
    fn list_parsing() {
        assert_eq!(
            parse_list::<f64>("0, 1e-5", "alpha").unwrap(),
            vec![0.0, 1e-5]
        );
        assert!(parse_list::<usize>("10,x", "interval").is_err());
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::Config("x".into())), 2);
        assert_eq!(exit_code(&Error::Model("x".into())), 1);
    }
}
