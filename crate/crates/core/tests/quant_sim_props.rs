use std::collections::HashMap;

use bwq::fixtures::{fc_layer, layer_from_levels};
use bwq::format::QuantModel;
use bwq::mapper::{layout_precision_aware, CrossbarSpec};
use bwq::quant::{BitLayer, WbGrid};
use bwq::sim::{simulate, HardwareConfig};
use proptest::prelude::*;

fn weights(max_len: usize) -> impl Strategy<Value = (usize, usize, Vec<f64>)> {
    (1usize..=max_len, 1usize..=max_len).prop_flat_map(|(r, c)| {
        proptest::collection::vec(-3.0f64..3.0, r * c).prop_map(move |w| (r, c, w))
    })
}

/// A binary layer with random levels under a random bitwidth table.
fn levels_layer(ou: (usize, usize), n: u32) -> impl Strategy<Value = BitLayer> {
    (1usize..=20, 1usize..=20).prop_flat_map(move |(rows, cols)| {
        let nb = rows.div_ceil(ou.0) * cols.div_ceil(ou.1);
        (
            proptest::collection::vec(0..=n, nb),
            proptest::collection::vec(any::<i64>(), rows * cols),
            0.1f64..4.0,
        )
            .prop_map(move |(bws, raw, scale)| {
                let nh = cols.div_ceil(ou.1);
                let table: Vec<Vec<u32>> = bws.chunks(nh).map(<[u32]>::to_vec).collect();
                let grid = WbGrid::with_table(rows, cols, ou.0, ou.1, n, &table).unwrap();
                let levels: Vec<i64> = raw
                    .iter()
                    .enumerate()
                    .map(|(i, &x)| {
                        let bw = grid.bitwidth(grid.block_of(i / cols, i % cols));
                        let span = (1i64 << bw) * 2 - 1;
                        x.rem_euclid(span) - ((1i64 << bw) - 1)
                    })
                    .collect();
                layer_from_levels(&levels, rows, cols, ou, n, &table, scale).unwrap()
            })
    })
}

proptest! {
    #[test]
    fn decomposition_error_is_half_a_step((r, c, w) in weights(12), n in 2u32..=8) {
        let layer = BitLayer::from_weights(&w, r, c, n, 3, 2);
        prop_assert!(layer.is_binary());
        let step = layer.scale() / layer.max_level();
        for (a, b) in layer.reconstruct().iter().zip(&w) {
            prop_assert!((a - b).abs() <= step / 2.0 + 1e-12);
        }
    }

    #[test]
    fn requantize_is_idempotent((r, c, w) in weights(10), noise in proptest::collection::vec(0.0f64..1.0, 1000)) {
        let mut layer = BitLayer::from_weights(&w, r, c, 6, 2, 3);
        for (k, v) in layer.planes_mut().iter_mut().flatten().enumerate() {
            *v = noise[k % noise.len()];
        }
        layer.project();
        layer.requantize();
        let once = layer.clone();
        layer.requantize();
        prop_assert_eq!(&layer, &once);
        prop_assert!(layer.is_binary());
    }

    #[test]
    fn adjust_precision_keeps_weights_and_shrinks(layer in levels_layer((3, 2), 8)) {
        let mut adjusted = layer.clone();
        adjusted.adjust_precision();
        prop_assert_eq!(adjusted.integer_weights(), layer.integer_weights());
        let g = adjusted.grid();
        for (blk, (&after, &before)) in g.bitwidths().iter().zip(layer.grid().bitwidths()).enumerate() {
            prop_assert!(after <= before);
            if after > 0 {
                // The top retained plane of every block holds a set bit.
                let (vi, hj) = g.block_coords(blk);
                let plane = &adjusted.planes()[after as usize - 1];
                let set = g.block_rows(vi).any(|r| g.block_cols(hj).any(|c| plane[r * g.cols() + c] != 0.0));
                prop_assert!(set);
            }
        }
        let mut twice = adjusted.clone();
        twice.adjust_precision();
        prop_assert_eq!(twice, adjusted);
    }

    #[test]
    fn regrid_preserves_integer_weights(layer in levels_layer((3, 2), 8), h in 1usize..=8, w in 1usize..=8) {
        let re = layer.regrid(h, w);
        prop_assert_eq!(re.integer_weights(), layer.integer_weights());
        prop_assert_eq!((re.grid().ou_height(), re.grid().ou_width()), (h, w));
    }

    #[test]
    fn crossbar_outputs_equal_integer_products(
        layers in proptest::collection::vec(levels_layer((3, 2), 6), 1..=3),
        acts in proptest::collection::vec(1u32..=6, 3),
        seed in any::<u64>(),
        kb in 1usize..=3,
        ks in 1usize..=3,
    ) {
        let model = QuantModel {
            layers: layers
                .into_iter()
                .zip(&acts)
                .enumerate()
                .map(|(i, (l, &a))| fc_layer(&format!("l{i}"), l, a))
                .collect(),
        };
        let spec = CrossbarSpec { xbar_rows: 3 * kb, xbar_cols: 2 * ks, ou_height: 3, ou_width: 2, bits_per_cell: 1 };
        let hw = HardwareConfig { adc_bits: 2, ..HardwareConfig::default() };
        let run = simulate(&model, &spec, &hw, seed, true).unwrap();
        prop_assert_eq!(run.verified, Some(true));

        let expected: u64 = model
            .layers
            .iter()
            .map(|l| l.act_bits as u64 * l.vectors as u64 * l.weights.grid().total_bitwidth())
            .sum();
        prop_assert_eq!(run.trace.total_events(), expected);

        // Within a layer each crossbar's cycles run 0, 1, 2, ... from the
        // layer's start; the layer lasts as long as its busiest crossbar.
        let mut base = 0;
        for (li, &span) in run.trace.layer_cycles.iter().enumerate() {
            let mut next: HashMap<usize, u64> = HashMap::new();
            for ev in run.trace.events.iter().filter(|e| e.layer == li) {
                let slot = next.entry(ev.crossbar).or_insert(base);
                prop_assert_eq!(ev.cycle, *slot);
                *slot += 1;
            }
            prop_assert_eq!(next.values().map(|v| v - base).max().unwrap_or(0), span);
            base += span;
        }
    }

    #[test]
    fn doubling_activation_bits_doubles_cost(layer in levels_layer((3, 2), 6), a in 1u32..=4) {
        let grids = [layer.grid()];
        let spec = CrossbarSpec { xbar_rows: 6, xbar_cols: 8, ou_height: 3, ou_width: 2, bits_per_cell: 1 };
        prop_assert!(layout_precision_aware(&grids, &spec).is_ok());
        let hw = HardwareConfig::default();
        let run = |bits| {
            let m = QuantModel { layers: vec![fc_layer("l", layer.clone(), bits)] };
            simulate(&m, &spec, &hw, 0, false).unwrap().report.total
        };
        let (one, two) = (run(a), run(2 * a));
        prop_assert_eq!(two.cycles, 2 * one.cycles);
        prop_assert_eq!(two.critical_cycles, 2 * one.critical_cycles);
        prop_assert_eq!(two.counts.adc_conversions, 2 * one.counts.adc_conversions);
        prop_assert!((two.energy.adc - 2.0 * one.energy.adc).abs() <= 1e-12 * two.energy.adc.abs().max(1e-30));
    }
}
