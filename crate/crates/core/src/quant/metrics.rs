use serde::{Deserialize, Serialize};

use super::bitlayer::BitLayer;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompressionRatio {
    /// 32-bit baseline bits over retained weight bits.
    pub weight: f64,
    /// `32 / act_bits`.
    pub act: f64,
}

/// Compression against a 32-bit floating-point baseline. Biases are not
/// counted. When every weight bit has been removed the weight ratio is
/// reported as infinity.
pub fn compression_ratio<'a>(
    layers: impl IntoIterator<Item = &'a BitLayer>,
    act_bits: u32,
) -> CompressionRatio {
    let (params, bits) = layers.into_iter().fold((0u64, 0u64), |(p, b), l| {
        (p + l.num_params() as u64, b + l.retained_bits())
    });
    let weight = if bits == 0 {
        if params > 0 {
            log::warn!("all weight bits removed; weight compression ratio is infinite");
        }
        f64::INFINITY
    } else {
        32.0 * params as f64 / bits as f64
    };
    CompressionRatio {
        weight,
        act: 32.0 / f64::from(act_bits),
    }
}

/// Per-layer coefficients `#Param(Wʳ)·#Bit(Wʳ)/#Param(W^(1:R))` of the
/// regularized objective, using each layer's current retained bit count.
pub fn regularizer_coefficients(layers: &[&BitLayer]) -> Vec<f64> {
    let total: usize = layers.iter().map(|l| l.num_params()).sum();
    if total == 0 {
        return vec![0.0; layers.len()];
    }
    layers
        .iter()
        .map(|l| l.num_params() as f64 * l.retained_bits() as f64 / total as f64)
        .collect()
}

/// `α · Σ_r coeff_r · B_GL(Wʳ)`.
pub fn regularizer(layers: &[&BitLayer], alpha: f64) -> f64 {
    if alpha == 0.0 {
        return 0.0;
    }
    regularizer_coefficients(layers)
        .iter()
        .zip(layers)
        .map(|(c, l)| c * l.group_lasso())
        .sum::<f64>()
        * alpha
}

/// Cross-entropy plus the weighted block group-Lasso term.
pub fn total_loss(ce: f64, layers: &[&BitLayer], alpha: f64) -> f64 {
    ce + regularizer(layers, alpha)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quant::WbGrid;

    fn layer_with(rows: usize, cols: usize, bw: &[Vec<u32>], fill: f64) -> BitLayer {
        let grid = WbGrid::with_table(rows, cols, 2, 2, 8, bw).unwrap();
        let planes = vec![vec![0.0; rows * cols]; 8];
        let mut l = BitLayer::from_parts(vec![1; rows * cols], 1.0, planes, grid).unwrap();
        for p in l.planes_mut() {
            p.iter_mut().for_each(|v| *v = fill);
        }
        l.apply_masks();
        l
    }

    #[test]
    fn eight_bits_everywhere_is_four() {
        let l = layer_with(4, 4, &[vec![8, 8], vec![8, 8]], 0.0);
        assert_eq!(compression_ratio([&l], 8).weight, 4.0);
    }

    #[test]
    fn act_ratio_three_bits() {
        let l = layer_with(2, 2, &[vec![8]], 0.0);
        let r = compression_ratio([&l], 3);
        assert!((r.act - 32.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn half_blocks_removed_weighted_average() {
        let l = layer_with(4, 4, &[vec![0, 4], vec![4, 0]], 0.0);
        // 8 weights at 4 bits → 32·16/32 = 16
        assert_eq!(compression_ratio([&l], 8).weight, 16.0);
    }

    #[test]
    fn everything_removed_is_infinite() {
        let l = layer_with(2, 2, &[vec![0]], 0.0);
        assert!(compression_ratio([&l], 8).weight.is_infinite());
    }

    #[test]
    fn alpha_zero_is_plain_ce() {
        let l = layer_with(2, 2, &[vec![8]], 0.5);
        assert_eq!(total_loss(1.25, &[&l], 0.0), 1.25);
    }

    #[test]
    fn single_layer_coefficient_is_bit_count() {
        let l = layer_with(4, 2, &[vec![3], vec![5]], 0.5);
        let bits = (4 * 3 + 4 * 5) as f64;
        let expected = 0.7 + 0.01 * bits * l.group_lasso();
        assert!((total_loss(0.7, &[&l], 0.01) - expected).abs() < 1e-12);
    }

    #[test]
    fn fully_masked_layer_contributes_nothing() {
        let live = layer_with(2, 2, &[vec![8]], 0.5);
        let dead = layer_with(2, 2, &[vec![0]], 0.5);
        let both = total_loss(0.0, &[&live, &dead], 0.1);
        let coeff = 4.0 * 32.0 / 8.0;
        assert!((both - 0.1 * coeff * live.group_lasso()).abs() < 1e-12);
    }
}
