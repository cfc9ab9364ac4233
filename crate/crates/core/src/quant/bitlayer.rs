use serde::{Deserialize, Serialize};

use super::grid::WbGrid;
use crate::error::{Error, Result};

/// A layer's weights in trainable bit-plane form.
///
/// The effective weight matrix (`rows × cols`, row-major) is
///
/// ```text
/// W = sign ⊙ s/(2ⁿ−1) · Σ_b plane_b · 2^b · m^(g,b)
/// ```
///
/// where planes hold values in `[0, 1]` and the masks come from the block
/// grid. Between re-quantizations the planes are continuous.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BitLayer {
    rows: usize,
    cols: usize,
    signs: Vec<i8>,
    scale: f64,
    n: u32,
    planes: Vec<Vec<f64>>,
    grid: WbGrid,
}

impl BitLayer {
    /// Decompose float weights into `n` exact binary planes with
    /// `s = max|W|` and all blocks at full precision.
    pub fn from_weights(
        weights: &[f64],
        rows: usize,
        cols: usize,
        n: u32,
        ou_height: usize,
        ou_width: usize,
    ) -> Self {
        assert_eq!(weights.len(), rows * cols);
        assert!((1..=16).contains(&n), "bit count must be in 1..=16");
        let max = weights.iter().fold(0.0f64, |m, w| m.max(w.abs()));
        let scale = if max > 0.0 { max } else { 1.0 };
        let mut layer = Self {
            rows,
            cols,
            signs: vec![1; rows * cols],
            scale,
            n,
            planes: vec![vec![0.0; rows * cols]; n as usize],
            grid: WbGrid::partition(rows, cols, ou_height, ou_width, n),
        };
        layer.store_weights(weights);
        layer
    }

    /// Assemble a layer from already-binary parts.
    pub fn from_parts(
        signs: Vec<i8>,
        scale: f64,
        planes: Vec<Vec<f64>>,
        grid: WbGrid,
    ) -> Result<Self> {
        let (rows, cols, n) = (grid.rows(), grid.cols(), grid.n());
        if signs.len() != rows * cols {
            return Err(Error::Model(format!("expected {} signs", rows * cols)));
        }
        if signs.iter().any(|&s| s != 1 && s != -1) {
            return Err(Error::Model("signs must be ±1".into()));
        }
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::Model(format!("scale must be positive, got {scale}")));
        }
        if planes.len() != n as usize || planes.iter().any(|p| p.len() != rows * cols) {
            return Err(Error::Model(format!(
                "expected {n} planes of {} values",
                rows * cols
            )));
        }
        let layer = Self {
            rows,
            cols,
            signs,
            scale,
            n,
            planes,
            grid,
        };
        for (b, plane) in layer.planes.iter().enumerate() {
            for (i, &v) in plane.iter().enumerate() {
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::Model(format!("plane {b} value {v} outside [0,1]")));
                }
                if v != 0.0 && !layer.grid.mask(layer.block_of_index(i), b as u32) {
                    return Err(Error::Model(format!(
                        "plane {b} has a set bit inside a masked block"
                    )));
                }
            }
        }
        Ok(layer)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn n(&self) -> u32 {
        self.n
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn signs(&self) -> &[i8] {
        &self.signs
    }

    pub fn planes(&self) -> &[Vec<f64>] {
        &self.planes
    }

    pub fn planes_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.planes
    }

    pub fn grid(&self) -> &WbGrid {
        &self.grid
    }

    pub fn num_params(&self) -> usize {
        self.rows * self.cols
    }

    /// `2ⁿ − 1`.
    pub fn max_level(&self) -> f64 {
        ((1u64 << self.n) - 1) as f64
    }

    /// Weight contributed by a full bit in plane `b`: `s·2^b/(2ⁿ−1)`.
    pub fn plane_weight(&self, b: u32) -> f64 {
        self.scale * (1u64 << b) as f64 / self.max_level()
    }

    #[inline]
    fn block_of_index(&self, i: usize) -> usize {
        self.grid.block_of(i / self.cols, i % self.cols)
    }

    /// Effective weights, row-major `rows × cols`.
    pub fn reconstruct(&self) -> Vec<f64> {
        let factor = self.scale / self.max_level();
        (0..self.rows * self.cols)
            .map(|i| {
                let bw = self.grid.bitwidth(self.block_of_index(i));
                let level: f64 = (0..bw)
                    .map(|b| self.planes[b as usize][i] * (1u64 << b) as f64)
                    .sum();
                f64::from(self.signs[i]) * factor * level
            })
            .collect()
    }

    /// Chain rule from `∂L/∂W` to `∂L/∂plane_b`.
    pub fn weight_grad_to_planes(&self, weight_grad: &[f64]) -> Vec<Vec<f64>> {
        let mut grads = vec![vec![0.0; self.rows * self.cols]; self.n as usize];
        for (i, &g) in weight_grad.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            let bw = self.grid.bitwidth(self.block_of_index(i));
            let signed = g * f64::from(self.signs[i]);
            for b in 0..bw {
                grads[b as usize][i] = signed * self.plane_weight(b);
            }
        }
        grads
    }

    /// Squared L2 norm of every masked (block, bit) group, indexed
    /// `[g * n + b]`. Padding never contributes.
    fn group_sq_norms(&self) -> Vec<f64> {
        let n = self.n as usize;
        let mut norms = vec![0.0; self.grid.num_blocks() * n];
        for (b, plane) in self.planes.iter().enumerate() {
            for (i, &v) in plane.iter().enumerate() {
                let g = self.block_of_index(i);
                if self.grid.mask(g, b as u32) {
                    norms[g * n + b] += v * v;
                }
            }
        }
        norms
    }

    /// WB-level group Lasso `Σ_g Σ_b ‖plane_b|_g · m^(g,b)‖₂`.
    pub fn group_lasso(&self) -> f64 {
        self.group_sq_norms().iter().map(|s| s.sqrt()).sum()
    }

    /// Gradient of [`group_lasso`](Self::group_lasso) w.r.t. every plane.
    /// Zero-norm groups get the zero subgradient.
    pub fn group_lasso_grad(&self) -> Vec<Vec<f64>> {
        let n = self.n as usize;
        let norms: Vec<f64> = self.group_sq_norms().iter().map(|s| s.sqrt()).collect();
        self.planes
            .iter()
            .enumerate()
            .map(|(b, plane)| {
                plane
                    .iter()
                    .enumerate()
                    .map(|(i, &v)| {
                        let g = self.block_of_index(i);
                        let norm = norms[g * n + b];
                        if self.grid.mask(g, b as u32) && norm > 0.0 {
                            v / norm
                        } else {
                            0.0
                        }
                    })
                    .collect()
            })
            .collect()
    }

    /// Round every weight to the nearest level `k·s/(2ⁿ−1)` and rewrite the
    /// planes as exact bits. Signs are refreshed from the reconstruction.
    /// Masked bits stay zero: the unmasked planes of a block can never
    /// round above `2^bitwidth − 1`.
    pub fn requantize(&mut self) {
        let weights = self.reconstruct();
        self.store_weights(&weights);
    }

    /// Write `weights` as exact bits. A weight that rounds to level 0 gets
    /// sign +1.
    fn store_weights(&mut self, weights: &[f64]) {
        let max_level = self.max_level();
        let top = (1u64 << self.n) - 1;
        for (i, &w) in weights.iter().enumerate() {
            let level = ((w.abs() * max_level / self.scale).round() as u64).min(top);
            self.signs[i] = if level == 0 { 1 } else { sign_of(w) };
            let bw = self.grid.bitwidth(self.block_of_index(i));
            for b in 0..self.n {
                let bit = b < bw && (level >> b) & 1 == 1;
                self.planes[b as usize][i] = if bit { 1.0 } else { 0.0 };
            }
        }
    }

    /// Per block, drop all-zero planes from the MSB down, stopping at the
    /// first plane holding a non-zero bit. Bitwidths only ever shrink.
    pub fn adjust_precision(&mut self) {
        for g in 0..self.grid.num_blocks() {
            let (vi, hj) = self.grid.block_coords(g);
            let rows = self.grid.block_rows(vi);
            let cols = self.grid.block_cols(hj);
            let mut bw = self.grid.bitwidth(g);
            while bw > 0 {
                let plane = &self.planes[bw as usize - 1];
                let nonzero = rows
                    .clone()
                    .any(|r| cols.clone().any(|c| plane[r * self.cols + c] != 0.0));
                if nonzero {
                    break;
                }
                bw -= 1;
            }
            self.grid.shrink(g, bw);
        }
    }

    /// Force every masked plane region to exactly zero.
    pub fn apply_masks(&mut self) {
        for i in 0..self.rows * self.cols {
            let bw = self.grid.bitwidth(self.block_of_index(i));
            for plane in &mut self.planes[bw as usize..] {
                plane[i] = 0.0;
            }
        }
    }

    /// Zero the entries of `tensors` (one per plane) that sit under a mask.
    pub fn zero_masked(&self, tensors: &mut [Vec<f64>]) {
        for i in 0..self.rows * self.cols {
            let bw = self.grid.bitwidth(self.block_of_index(i));
            for t in &mut tensors[bw as usize..] {
                t[i] = 0.0;
            }
        }
    }

    /// Clip planes to `[0, 1]` and re-apply masks.
    pub fn project(&mut self) {
        for plane in &mut self.planes {
            for v in plane.iter_mut() {
                *v = v.clamp(0.0, 1.0);
            }
        }
        self.apply_masks();
    }

    pub fn is_binary(&self) -> bool {
        self.planes.iter().flatten().all(|&v| v == 0.0 || v == 1.0)
    }

    /// Signed integer levels `sign·Σ_b bit_b·2^b` of a binary layer.
    pub fn integer_weights(&self) -> Vec<i64> {
        (0..self.rows * self.cols)
            .map(|i| {
                let level: i64 = self
                    .planes
                    .iter()
                    .enumerate()
                    .filter(|(_, p)| p[i] != 0.0)
                    .map(|(b, _)| 1i64 << b)
                    .sum();
                i64::from(self.signs[i]) * level
            })
            .collect()
    }

    /// Σ_g elements(g)·bitwidth(g).
    pub fn retained_bits(&self) -> u64 {
        self.grid.retained_bits()
    }

    /// The same planes re-partitioned at a new OU size, starting again from
    /// `n` bits and re-running precision adjustment at the new granularity.
    pub fn regrid(&self, ou_height: usize, ou_width: usize) -> Self {
        let mut layer = Self {
            grid: WbGrid::partition(self.rows, self.cols, ou_height, ou_width, self.n),
            ..self.clone()
        };
        layer.adjust_precision();
        layer
    }
}

fn sign_of(w: f64) -> i8 {
    if w < 0.0 {
        -1
    } else {
        1
    }
}
