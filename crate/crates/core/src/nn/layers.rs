use serde::{Deserialize, Serialize};

use super::tensor::{matmul, matmul_nt, matmul_tn, Tensor};
use crate::error::{Error, Result};
use crate::quant::{fake_quantize, pact, pact_grad, BitLayer, PactParam};

/// Weight matrix `rows × cols` (rows = inputs, cols = outputs), either as
/// plain floats or in bit-plane form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Weights {
    Float(Tensor),
    Bits(BitLayer),
}

impl Weights {
    pub fn rows(&self) -> usize {
        match self {
            Weights::Float(t) => t.rows(),
            Weights::Bits(b) => b.rows(),
        }
    }

    pub fn cols(&self) -> usize {
        match self {
            Weights::Float(t) => t.cols(),
            Weights::Bits(b) => b.cols(),
        }
    }

    /// Effective weights, row-major.
    pub fn matrix(&self) -> Vec<f64> {
        match self {
            Weights::Float(t) => t.data().to_vec(),
            Weights::Bits(b) => b.reconstruct(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LinearKind {
    Dense,
    /// Valid (unpadded, stride 1) convolution over `c_in × in_h × in_w`
    /// inputs, lowered to a matrix product over flattened patches.
    Conv {
        c_in: usize,
        k: usize,
        in_h: usize,
        in_w: usize,
    },
}

#[derive(Debug, Clone)]
struct LinearCache {
    /// Dense: the input `[N, rows]`; conv: patches `[N·P, rows]`.
    input: Vec<f64>,
    batch: usize,
    weights: Vec<f64>,
}

/// Fully-connected or convolutional layer computing `x·W + b`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Linear {
    pub kind: LinearKind,
    pub weights: Weights,
    pub bias: Vec<f64>,
    #[serde(skip)]
    cache: Option<LinearCache>,
}

impl PartialEq for Linear {
    fn eq(&self, other: &Self) -> bool {
        self.kind == other.kind && self.weights == other.weights && self.bias == other.bias
    }
}

impl Linear {
    pub fn dense(weights: Weights, bias: Vec<f64>) -> Self {
        assert_eq!(weights.cols(), bias.len());
        Self {
            kind: LinearKind::Dense,
            weights,
            bias,
            cache: None,
        }
    }

    pub fn conv(
        weights: Weights,
        bias: Vec<f64>,
        c_in: usize,
        k: usize,
        in_h: usize,
        in_w: usize,
    ) -> Self {
        assert_eq!(weights.rows(), c_in * k * k);
        assert_eq!(weights.cols(), bias.len());
        assert!(k <= in_h && k <= in_w);
        Self {
            kind: LinearKind::Conv {
                c_in,
                k,
                in_h,
                in_w,
            },
            weights,
            bias,
            cache: None,
        }
    }

    pub fn in_features(&self) -> usize {
        match self.kind {
            LinearKind::Dense => self.weights.rows(),
            LinearKind::Conv {
                c_in, in_h, in_w, ..
            } => c_in * in_h * in_w,
        }
    }

    /// Output positions per sample (1 for dense layers).
    pub fn positions(&self) -> usize {
        match self.kind {
            LinearKind::Dense => 1,
            LinearKind::Conv { k, in_h, in_w, .. } => (in_h - k + 1) * (in_w - k + 1),
        }
    }

    pub fn out_features(&self) -> usize {
        self.weights.cols() * self.positions()
    }

    /// Lower an input batch to the matrix multiplied against `W`.
    pub fn lower_input(&self, input: &[f64], batch: usize) -> Vec<f64> {
        match self.kind {
            LinearKind::Dense => input.to_vec(),
            LinearKind::Conv {
                c_in,
                k,
                in_h,
                in_w,
            } => {
                let (oh, ow) = (in_h - k + 1, in_w - k + 1);
                let rows = c_in * k * k;
                let feat = c_in * in_h * in_w;
                let mut patches = vec![0.0; batch * oh * ow * rows];
                for n in 0..batch {
                    let x = &input[n * feat..(n + 1) * feat];
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let p = oy * ow + ox;
                            let dst = &mut patches[(n * oh * ow + p) * rows..][..rows];
                            for ci in 0..c_in {
                                for a in 0..k {
                                    for b in 0..k {
                                        dst[ci * k * k + a * k + b] =
                                            x[(ci * in_h + oy + a) * in_w + ox + b];
                                    }
                                }
                            }
                        }
                    }
                }
                patches
            }
        }
    }

    fn forward(&mut self, input: &Tensor) -> Result<Tensor> {
        let batch = check_input(input, self.in_features())?;
        let lowered = self.lower_input(input.data(), batch);
        let w = self.weights.matrix();
        let (rows, cols) = (self.weights.rows(), self.weights.cols());
        let m = batch * self.positions();
        let mut out = matmul(&lowered, &w, m, rows, cols);
        for row in out.chunks_mut(cols) {
            for (o, b) in row.iter_mut().zip(&self.bias) {
                *o += b;
            }
        }
        let out = self.to_channel_major(out, batch);
        self.cache = Some(LinearCache {
            input: lowered,
            batch,
            weights: w,
        });
        Tensor::new(vec![batch, self.out_features()], out)
    }

    /// `[N·P, C_out]` → `[N, C_out·P]`.
    fn to_channel_major(&self, mat: Vec<f64>, batch: usize) -> Vec<f64> {
        let p = self.positions();
        if p == 1 {
            return mat;
        }
        let cols = self.weights.cols();
        let mut out = vec![0.0; mat.len()];
        for n in 0..batch {
            for pos in 0..p {
                for co in 0..cols {
                    out[n * cols * p + co * p + pos] = mat[(n * p + pos) * cols + co];
                }
            }
        }
        out
    }

    /// `[N, C_out·P]` → `[N·P, C_out]`.
    fn channel_major_to_rows(&self, grad: &[f64], batch: usize) -> Vec<f64> {
        let p = self.positions();
        if p == 1 {
            return grad.to_vec();
        }
        let cols = self.weights.cols();
        let mut out = vec![0.0; grad.len()];
        for n in 0..batch {
            for pos in 0..p {
                for co in 0..cols {
                    out[(n * p + pos) * cols + co] = grad[n * cols * p + co * p + pos];
                }
            }
        }
        out
    }

    fn backward(&mut self, grad_out: &Tensor) -> Result<(Tensor, Vec<Vec<f64>>)> {
        let cache = self.cache.take().ok_or(Error::NoForward)?;
        let batch = cache.batch;
        check_shape(grad_out, &[batch, self.out_features()])?;
        let (rows, cols) = (self.weights.rows(), self.weights.cols());
        let m = batch * self.positions();
        let g = self.channel_major_to_rows(grad_out.data(), batch);
        let dw = matmul_tn(&cache.input, &g, m, rows, cols);
        let mut db = vec![0.0; cols];
        for row in g.chunks(cols) {
            for (d, v) in db.iter_mut().zip(row) {
                *d += v;
            }
        }
        let dlowered = matmul_nt(&g, &cache.weights, m, cols, rows);
        let dx = match self.kind {
            LinearKind::Dense => dlowered,
            LinearKind::Conv {
                c_in,
                k,
                in_h,
                in_w,
            } => {
                let (oh, ow) = (in_h - k + 1, in_w - k + 1);
                let feat = c_in * in_h * in_w;
                let mut dx = vec![0.0; batch * feat];
                for n in 0..batch {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let src = &dlowered[(n * oh * ow + oy * ow + ox) * rows..][..rows];
                            for ci in 0..c_in {
                                for a in 0..k {
                                    for b in 0..k {
                                        dx[n * feat + (ci * in_h + oy + a) * in_w + ox + b] +=
                                            src[ci * k * k + a * k + b];
                                    }
                                }
                            }
                        }
                    }
                }
                dx
            }
        };
        let mut grads = match &self.weights {
            Weights::Float(_) => vec![dw],
            Weights::Bits(bits) => bits.weight_grad_to_planes(&dw),
        };
        grads.push(db);
        Ok((Tensor::new(vec![batch, self.in_features()], dx)?, grads))
    }
}

/// PACT clipping, optionally followed by uniform activation quantization
/// with a straight-through gradient.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PactLayer {
    pub param: PactParam,
    pub quantize: bool,
    #[serde(skip)]
    cache: Option<Tensor>,
}

impl PartialEq for PactLayer {
    fn eq(&self, other: &Self) -> bool {
        self.param == other.param && self.quantize == other.quantize
    }
}

impl PactLayer {
    pub fn new(beta: f64, act_bits: u32, quantize: bool) -> Self {
        Self {
            param: PactParam::new(beta, act_bits),
            quantize,
            cache: None,
        }
    }

    fn forward(&mut self, input: &Tensor) -> Tensor {
        let beta = self.param.beta;
        let out = if self.quantize {
            let bits = self.param.act_bits;
            input.map(|x| fake_quantize(pact(x, beta), beta, bits))
        } else {
            input.map(|x| pact(x, beta))
        };
        self.cache = Some(input.clone());
        out
    }

    fn backward(&mut self, grad_out: &Tensor) -> Result<(Tensor, Vec<Vec<f64>>)> {
        let input = self.cache.take().ok_or(Error::NoForward)?;
        check_shape(grad_out, input.shape())?;
        let beta = self.param.beta;
        let mut dbeta = 0.0;
        let dx = input
            .data()
            .iter()
            .zip(grad_out.data())
            .map(|(&x, &g)| {
                let (dx, db) = pact_grad(x, beta);
                dbeta += g * db;
                g * dx
            })
            .collect();
        Ok((Tensor::new(input.shape().to_vec(), dx)?, vec![vec![dbeta]]))
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Relu {
    #[serde(skip)]
    cache: Option<Tensor>,
}

impl PartialEq for Relu {
    fn eq(&self, _: &Self) -> bool {
        true
    }
}

impl Relu {
    fn forward(&mut self, input: &Tensor) -> Tensor {
        self.cache = Some(input.clone());
        input.map(|x| x.max(0.0))
    }

    fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let input = self.cache.take().ok_or(Error::NoForward)?;
        check_shape(grad_out, input.shape())?;
        let dx = input
            .data()
            .iter()
            .zip(grad_out.data())
            .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
            .collect();
        Tensor::new(input.shape().to_vec(), dx)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[allow(clippy::large_enum_variant)]
pub enum Layer {
    Linear(Linear),
    Pact(PactLayer),
    Relu(Relu),
}

impl Layer {
    pub(crate) fn forward(&mut self, input: &Tensor) -> Result<Tensor> {
        match self {
            Layer::Linear(l) => l.forward(input),
            Layer::Pact(p) => Ok(p.forward(input)),
            Layer::Relu(r) => Ok(r.forward(input)),
        }
    }

    /// Returns the input gradient and this layer's parameter gradients in
    /// [`Model::params_mut`](super::Model::params_mut) order.
    pub(crate) fn backward(&mut self, grad_out: &Tensor) -> Result<(Tensor, Vec<Vec<f64>>)> {
        match self {
            Layer::Linear(l) => l.backward(grad_out),
            Layer::Pact(p) => p.backward(grad_out),
            Layer::Relu(r) => Ok((r.backward(grad_out)?, Vec::new())),
        }
    }
}

fn check_input(input: &Tensor, features: usize) -> Result<usize> {
    match input.shape() {
        &[batch, f] if f == features => Ok(batch),
        other => Err(Error::Shape {
            expected: vec![other.first().copied().unwrap_or(0), features],
            actual: other.to_vec(),
        }),
    }
}

fn check_shape(t: &Tensor, shape: &[usize]) -> Result<()> {
    if t.shape() == shape {
        Ok(())
    } else {
        Err(Error::Shape {
            expected: shape.to_vec(),
            actual: t.shape().to_vec(),
        })
    }
}
