//! Small hand-built models with known mapping and scheduling outcomes.

use crate::error::{Error, Result};
use crate::format::{Dims, LayerKind, QuantLayer, QuantModel};
use crate::mapper::CrossbarSpec;
use crate::quant::{BitLayer, WbGrid};

/// A binary bit layer holding integer weight levels (row-major) under the
/// given per-block bitwidths.
pub fn layer_from_levels(
    levels: &[i64],
    rows: usize,
    cols: usize,
    ou: (usize, usize),
    n: u32,
    table: &[Vec<u32>],
    scale: f64,
) -> Result<BitLayer> {
    if levels.len() != rows * cols {
        return Err(Error::Shape {
            expected: vec![rows, cols],
            actual: vec![levels.len()],
        });
    }
    let grid = WbGrid::with_table(rows, cols, ou.0, ou.1, n, table)?;
    let mut planes = vec![vec![0.0; rows * cols]; n as usize];
    let mut signs = vec![1i8; rows * cols];
    for (i, &lv) in levels.iter().enumerate() {
        let bw = grid.bitwidth(grid.block_of(i / cols, i % cols));
        let mag = lv.unsigned_abs();
        if mag >> bw != 0 {
            return Err(Error::Model(format!(
                "level {lv} at index {i} needs more than {bw} bits"
            )));
        }
        if lv < 0 {
            signs[i] = -1;
        }
        for (b, plane) in planes.iter_mut().enumerate() {
            if (mag >> b) & 1 == 1 {
                plane[i] = 1.0;
            }
        }
    }
    BitLayer::from_parts(signs, scale, planes, grid)
}

pub fn fc_layer(name: &str, weights: BitLayer, act_bits: u32) -> QuantLayer {
    QuantLayer {
        name: name.into(),
        kind: LayerKind::Fc,
        dims: Dims {
            c_out: weights.cols(),
            c_in: weights.rows(),
            k: 1,
        },
        act_bits,
        vectors: 1,
        beta: None,
        bias: Vec::new(),
        weights,
    }
}

/// One 4×4 block at 3 bits on a 4×16 crossbar with 4×4 OUs.
pub fn three_bit_model() -> QuantModel {
    #[rustfmt::skip]
    let levels = [
        5, -3, 7, 0,
        -1, 2, -6, 4,
        3, 0, -7, 1,
        -2, 6, 1, -5,
    ];
    let w = layer_from_levels(&levels, 4, 4, (4, 4), 8, &[vec![3]], 1.0).expect("fixture");
    QuantModel {
        layers: vec![fc_layer("fc0", w, 1)],
    }
}

pub fn three_bit_spec() -> CrossbarSpec {
    CrossbarSpec {
        xbar_rows: 4,
        xbar_cols: 16,
        ou_height: 4,
        ou_width: 4,
        bits_per_cell: 1,
    }
}

/// Two vertically stacked 2×2 blocks at 2 and 1 bits with 2-bit
/// activations on a 4×4 crossbar with 2×2 OUs.
pub fn stacked_model() -> QuantModel {
    #[rustfmt::skip]
    let levels = [
        3, -2,
        1, -3,
        1, 0,
        -1, 1,
    ];
    let w = layer_from_levels(&levels, 4, 2, (2, 2), 8, &[vec![2], vec![1]], 1.0).expect("fixture");
    QuantModel {
        layers: vec![fc_layer("fc0", w, 2)],
    }
}

pub fn stacked_spec() -> CrossbarSpec {
    CrossbarSpec {
        xbar_rows: 4,
        xbar_cols: 4,
        ou_height: 2,
        ou_width: 2,
        bits_per_cell: 1,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn levels_round_trip() {
        let m = stacked_model();
        assert_eq!(
            m.layers[0].weights.integer_weights(),
            vec![3, -2, 1, -3, 1, 0, -1, 1]
        );
        assert_eq!(m.layers[0].weights.retained_bits(), 4 * 2 + 4);
    }

    #[test]
    fn rejects_levels_wider_than_block() {
        assert!(layer_from_levels(&[4], 1, 1, (1, 1), 8, &[vec![2]], 1.0).is_err());
    }
}
