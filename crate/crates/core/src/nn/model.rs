use serde::{Deserialize, Serialize};

use super::layers::{Layer, Linear, Weights};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::quant::BitLayer;

/// What a trainable parameter tensor represents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParamKind {
    Weight,
    BitPlane(u32),
    Bias,
    Beta,
}

/// Gradients of a scalar loss, one tensor per parameter in
/// [`Model::params_mut`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub grads: Vec<Vec<f64>>,
}

impl GradientSet {
    pub fn is_zero(&self) -> bool {
        self.grads.iter().flatten().all(|&g| g == 0.0)
    }
}

/// Mutable view of one parameter tensor.
pub struct Param<'a> {
    pub kind: ParamKind,
    /// Index of the owning layer.
    pub layer: usize,
    pub values: &'a mut [f64],
}

/// An ordered stack of layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub layers: Vec<Layer>,
}

impl Model {
    pub fn new(layers: Vec<Layer>) -> Self {
        Self { layers }
    }

    /// Forward pass; caches what [`backward`](Self::backward) needs.
    pub fn forward(&mut self, input: &Tensor) -> Result<Tensor> {
        let mut x = input.clone();
        for layer in &mut self.layers {
            x = layer.forward(&x)?;
        }
        if !x.is_finite() {
            return Err(Error::Model("non-finite activations".into()));
        }
        Ok(x)
    }

    /// The input seen by every layer during a forward pass, followed by
    /// the final output.
    pub fn activations(&mut self, input: &Tensor) -> Result<Vec<Tensor>> {
        let mut out = vec![input.clone()];
        for layer in &mut self.layers {
            let next = layer.forward(out.last().expect("non-empty"))?;
            out.push(next);
        }
        Ok(out)
    }

    /// Backpropagate `∂L/∂logits` through the cached forward pass.
    pub fn backward(&mut self, loss_grad: &Tensor) -> Result<GradientSet> {
        let mut per_layer = Vec::with_capacity(self.layers.len());
        let mut g = loss_grad.clone();
        for layer in self.layers.iter_mut().rev() {
            let (dx, grads) = layer.backward(&g)?;
            per_layer.push(grads);
            g = dx;
        }
        per_layer.reverse();
        Ok(GradientSet {
            grads: per_layer.into_iter().flatten().collect(),
        })
    }

    pub fn params_mut(&mut self) -> Vec<Param<'_>> {
        let mut out = Vec::new();
        for (li, layer) in self.layers.iter_mut().enumerate() {
            match layer {
                Layer::Linear(Linear { weights, bias, .. }) => {
                    match weights {
                        Weights::Float(t) => out.push(Param {
                            kind: ParamKind::Weight,
                            layer: li,
                            values: t.data_mut(),
                        }),
                        Weights::Bits(bits) => {
                            for (b, plane) in bits.planes_mut().iter_mut().enumerate() {
                                out.push(Param {
                                    kind: ParamKind::BitPlane(b as u32),
                                    layer: li,
                                    values: plane.as_mut_slice(),
                                });
                            }
                        }
                    }
                    out.push(Param {
                        kind: ParamKind::Bias,
                        layer: li,
                        values: bias.as_mut_slice(),
                    });
                }
                Layer::Pact(p) => out.push(Param {
                    kind: ParamKind::Beta,
                    layer: li,
                    values: std::slice::from_mut(&mut p.param.beta),
                }),
                Layer::Relu(_) => {}
            }
        }
        out
    }

    pub fn param_shapes(&mut self) -> Vec<(ParamKind, usize, usize)> {
        self.params_mut()
            .into_iter()
            .map(|p| (p.kind, p.layer, p.values.len()))
            .collect()
    }

    /// Restore parameter constraints after an update: planes in `[0,1]`
    /// with masked regions zero, β above its floor.
    pub fn project(&mut self) {
        for layer in &mut self.layers {
            match layer {
                Layer::Linear(Linear {
                    weights: Weights::Bits(bits),
                    ..
                }) => bits.project(),
                Layer::Pact(p) => p.param.clamp_beta(),
                _ => {}
            }
        }
    }

    pub fn bit_layers(&self) -> Vec<&BitLayer> {
        self.layers
            .iter()
            .filter_map(|l| match l {
                Layer::Linear(Linear {
                    weights: Weights::Bits(b),
                    ..
                }) => Some(b),
                _ => None,
            })
            .collect()
    }

    pub fn bit_layers_mut(&mut self) -> Vec<&mut BitLayer> {
        self.layers
            .iter_mut()
            .filter_map(|l| match l {
                Layer::Linear(Linear {
                    weights: Weights::Bits(b),
                    ..
                }) => Some(b),
                _ => None,
            })
            .collect()
    }

    /// Enable activation quantization at `bits`, or disable it with `None`.
    pub fn set_activation_bits(&mut self, bits: Option<u32>) {
        for layer in &mut self.layers {
            if let Layer::Pact(p) = layer {
                match bits {
                    Some(b) => {
                        p.quantize = true;
                        p.param.act_bits = b;
                    }
                    None => p.quantize = false,
                }
            }
        }
    }

    /// Layer indices of every bit-plane parameter, in `params_mut` order,
    /// paired with the parameter's position in that order.
    pub(crate) fn plane_param_positions(&mut self) -> Vec<(usize, usize, u32)> {
        let mut layer_to_bit_index = std::collections::HashMap::new();
        let mut next = 0;
        for (li, l) in self.layers.iter().enumerate() {
            if let Layer::Linear(Linear {
                weights: Weights::Bits(_),
                ..
            }) = l
            {
                layer_to_bit_index.insert(li, next);
                next += 1;
            }
        }
        self.params_mut()
            .iter()
            .enumerate()
            .filter_map(|(pos, p)| match p.kind {
                ParamKind::BitPlane(b) => Some((pos, layer_to_bit_index[&p.layer], b)),
                _ => None,
            })
            .collect()
    }
}
