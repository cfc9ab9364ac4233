//! On-disk formats: the quantized model file and the run configuration.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::mapper::CrossbarSpec;
use crate::nn::{Layer, LinearKind, Model, Task, Weights};
use crate::quant::{BitLayer, WbGrid};
use crate::sim::HardwareConfig;
use crate::trainer::TrainConfig;

pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    Fc,
    Conv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dims {
    pub c_out: usize,
    pub c_in: usize,
    pub k: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OuDims {
    pub h: usize,
    pub w: usize,
}

/// One layer as stored on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerFile {
    pub name: String,
    pub kind: LayerKind,
    pub dims: Dims,
    pub scale: f64,
    pub n: u32,
    pub act_bits: u32,
    /// Activation vectors per inference: output positions for conv, 1 for fc.
    pub vectors: usize,
    /// Clipping level of the activations this layer consumes, if clipped.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub bias: Vec<f64>,
    pub ou: OuDims,
    pub bitwidth_table: Vec<Vec<u32>>,
    pub signs: Vec<Vec<i8>>,
    pub bit_planes: Vec<Vec<Vec<u8>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuantModelFile {
    pub version: u32,
    pub layers: Vec<LayerFile>,
}

/// A quantized layer ready for mapping and simulation.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantLayer {
    pub name: String,
    pub kind: LayerKind,
    pub dims: Dims,
    pub act_bits: u32,
    pub vectors: usize,
    pub beta: Option<f64>,
    pub bias: Vec<f64>,
    pub weights: BitLayer,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct QuantModel {
    pub layers: Vec<QuantLayer>,
}

impl QuantModel {
    pub fn grids(&self) -> Vec<&WbGrid> {
        self.layers.iter().map(|l| l.weights.grid()).collect()
    }

    pub fn bit_layers(&self) -> Vec<&BitLayer> {
        self.layers.iter().map(|l| &l.weights).collect()
    }

    pub fn act_bits(&self) -> Vec<u32> {
        self.layers.iter().map(|l| l.act_bits).collect()
    }

    pub fn vectors(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.vectors).collect()
    }

    /// Export the bit-plane layers of a trained network. Planes must
    /// already be binary.
    pub fn from_model(model: &Model, act_bits: u32) -> Result<Self> {
        let mut layers = Vec::new();
        let mut beta = None;
        for layer in &model.layers {
            match layer {
                Layer::Pact(p) => beta = Some(p.param.beta),
                Layer::Relu(_) => beta = None,
                Layer::Linear(lin) => {
                    let Weights::Bits(bits) = &lin.weights else {
                        return Err(Error::Model("float layers cannot be exported".into()));
                    };
                    if !bits.is_binary() {
                        return Err(Error::Model("bit planes are not binary".into()));
                    }
                    let (kind, dims, vectors, prefix) = match lin.kind {
                        LinearKind::Dense => (
                            LayerKind::Fc,
                            Dims {
                                c_out: bits.cols(),
                                c_in: bits.rows(),
                                k: 1,
                            },
                            1,
                            "fc",
                        ),
                        LinearKind::Conv { c_in, k, .. } => (
                            LayerKind::Conv,
                            Dims {
                                c_out: bits.cols(),
                                c_in,
                                k,
                            },
                            lin.positions(),
                            "conv",
                        ),
                    };
                    layers.push(QuantLayer {
                        name: format!("{prefix}{}", layers.len()),
                        kind,
                        dims,
                        act_bits,
                        vectors,
                        beta: beta.take(),
                        bias: lin.bias.clone(),
                        weights: bits.clone(),
                    });
                }
            }
        }
        Ok(Self { layers })
    }

    pub fn to_file(&self) -> QuantModelFile {
        QuantModelFile {
            version: MODEL_VERSION,
            layers: self.layers.iter().map(layer_to_file).collect(),
        }
    }

    pub fn from_file(file: QuantModelFile) -> Result<Self> {
        if file.version != MODEL_VERSION {
            return Err(Error::Model(format!(
                "unsupported model version {} (expected {MODEL_VERSION})",
                file.version
            )));
        }
        let layers = file
            .layers
            .into_iter()
            .enumerate()
            .map(|(i, l)| layer_from_file(l).map_err(|e| Error::Model(format!("layer {i}: {e}"))))
            .collect::<Result<_>>()?;
        Ok(Self { layers })
    }

    pub fn to_json(&self) -> Result<String> {
        to_json_text(&self.to_file())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_file(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }
}

fn layer_to_file(l: &QuantLayer) -> LayerFile {
    let w = &l.weights;
    let cols = w.cols();
    LayerFile {
        name: l.name.clone(),
        kind: l.kind,
        dims: l.dims,
        scale: w.scale(),
        n: w.n(),
        act_bits: l.act_bits,
        vectors: l.vectors,
        beta: l.beta,
        bias: l.bias.clone(),
        ou: OuDims {
            h: w.grid().ou_height(),
            w: w.grid().ou_width(),
        },
        bitwidth_table: w.grid().table(),
        signs: w.signs().chunks(cols).map(|c| c.to_vec()).collect(),
        bit_planes: w
            .planes()
            .iter()
            .map(|p| {
                p.chunks(cols)
                    .map(|row| row.iter().map(|&v| u8::from(v != 0.0)).collect())
                    .collect()
            })
            .collect(),
    }
}

fn layer_from_file(l: LayerFile) -> Result<QuantLayer> {
    let rows = l.signs.len();
    let cols = l.signs.first().map_or(0, Vec::len);
    if rows == 0 || cols == 0 || l.signs.iter().any(|r| r.len() != cols) {
        return Err(Error::Model(
            "signs must be a non-empty rectangular array".into(),
        ));
    }
    let expected_rows = match l.kind {
        LayerKind::Fc => {
            if l.dims.k != 1 {
                return Err(Error::Model("fc layers must have k = 1".into()));
            }
            l.dims.c_in
        }
        LayerKind::Conv => l.dims.c_in * l.dims.k * l.dims.k,
    };
    if rows != expected_rows || cols != l.dims.c_out {
        return Err(Error::Model(format!(
            "weights are {rows}x{cols} but dims imply {expected_rows}x{}",
            l.dims.c_out
        )));
    }
    if l.vectors == 0 {
        return Err(Error::Model("vectors must be positive".into()));
    }
    if !(1..=16).contains(&l.act_bits) {
        return Err(Error::Model("act_bits must be in 1..=16".into()));
    }
    if !(1..=16).contains(&l.n) {
        return Err(Error::Model("n must be in 1..=16".into()));
    }
    if !l.bias.is_empty() && l.bias.len() != cols {
        return Err(Error::Model(format!("bias must have {cols} entries")));
    }
    if l.beta.is_some_and(|b| !(b.is_finite() && b > 0.0)) {
        return Err(Error::Model("beta must be positive".into()));
    }
    if l.bit_planes.len() != l.n as usize {
        return Err(Error::Model(format!("expected {} bit planes", l.n)));
    }
    let mut planes = Vec::with_capacity(l.bit_planes.len());
    for (b, plane) in l.bit_planes.iter().enumerate() {
        if plane.len() != rows || plane.iter().any(|r| r.len() != cols) {
            return Err(Error::Model(format!("bit plane {b} must be {rows}x{cols}")));
        }
        let mut flat = Vec::with_capacity(rows * cols);
        for &v in plane.iter().flatten() {
            if v > 1 {
                return Err(Error::Model(format!(
                    "bit plane {b} holds non-binary value {v}"
                )));
            }
            flat.push(f64::from(v));
        }
        planes.push(flat);
    }
    let grid = WbGrid::with_table(rows, cols, l.ou.h, l.ou.w, l.n, &l.bitwidth_table)?;
    let signs = l.signs.into_iter().flatten().collect();
    let weights = BitLayer::from_parts(signs, l.scale, planes, grid)?;
    Ok(QuantLayer {
        name: l.name,
        kind: l.kind,
        dims: l.dims,
        act_bits: l.act_bits,
        vectors: l.vectors,
        beta: l.beta,
        bias: l.bias,
        weights,
    })
}

/// Pretty JSON with arrays of scalars kept on one line.
pub fn to_json_text<T: Serialize>(value: &T) -> Result<String> {
    let v = serde_json::to_value(value)?;
    let mut out = String::new();
    write_value(&mut out, &v, 0);
    out.push('\n');
    Ok(out)
}

fn is_scalar(v: &Value) -> bool {
    !matches!(v, Value::Array(_) | Value::Object(_))
}

fn write_value(out: &mut String, v: &Value, depth: usize) {
    let pad = |out: &mut String, d: usize| out.extend(std::iter::repeat_n("  ", d));
    match v {
        Value::Object(map) if !map.is_empty() => {
            out.push_str("{\n");
            for (i, (k, val)) in map.iter().enumerate() {
                pad(out, depth + 1);
                let _ = write!(out, "{}: ", Value::String(k.clone()));
                write_value(out, val, depth + 1);
                out.push_str(if i + 1 < map.len() { ",\n" } else { "\n" });
            }
            pad(out, depth);
            out.push('}');
        }
        Value::Array(items) if !items.is_empty() && !items.iter().all(is_scalar) => {
            out.push_str("[\n");
            for (i, val) in items.iter().enumerate() {
                pad(out, depth + 1);
                write_value(out, val, depth + 1);
                out.push_str(if i + 1 < items.len() { ",\n" } else { "\n" });
            }
            pad(out, depth);
            out.push(']');
        }
        other => out.push_str(&other.to_string()),
    }
}

/// Everything a run needs, read from one strict JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub task: Task,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub hardware: HardwareConfig,
    #[serde(default)]
    pub crossbar: CrossbarSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            task: Task::Blobs,
            seed: 0,
            train: TrainConfig::default(),
            hardware: HardwareConfig::default(),
            crossbar: CrossbarSpec::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let mut cfg: RunConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.train.seed = cfg.seed;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.crossbar.validate()?;
        self.hardware.validate(&self.crossbar)
    }
}
