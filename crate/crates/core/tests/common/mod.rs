#![allow(dead_code)]

use bwq::nn::{cross_entropy, Layer, Linear, Model, PactLayer, Tensor, Weights};
use bwq::quant::{total_loss, BitLayer, WbGrid};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A bit layer with continuous planes drawn from `[lo, hi]`, random signs
/// and the given per-block bitwidth table.
pub fn random_bit_layer(
    rng: &mut ChaCha8Rng,
    rows: usize,
    cols: usize,
    ou: (usize, usize),
    n: u32,
    table: Option<&[Vec<u32>]>,
    (lo, hi): (f64, f64),
) -> BitLayer {
    let grid = match table {
        Some(t) => WbGrid::with_table(rows, cols, ou.0, ou.1, n, t).unwrap(),
        None => WbGrid::partition(rows, cols, ou.0, ou.1, n),
    };
    let signs = (0..rows * cols)
        .map(|_| if rng.random_bool(0.5) { 1 } else { -1 })
        .collect();
    let mut planes = vec![vec![0.0; rows * cols]; n as usize];
    for r in 0..rows {
        for c in 0..cols {
            let g = grid.block_of(r, c);
            for plane in planes.iter_mut().take(grid.bitwidth(g) as usize) {
                plane[r * cols + c] = rng.random_range(lo..=hi);
            }
        }
    }
    BitLayer::from_parts(signs, rng.random_range(0.5..2.0), planes, grid).unwrap()
}

/// Random bitwidth table with entries in `0..=n`.
pub fn random_table(
    rng: &mut ChaCha8Rng,
    rows: usize,
    cols: usize,
    ou: (usize, usize),
    n: u32,
) -> Vec<Vec<u32>> {
    let nv = rows.div_ceil(ou.0);
    let nh = cols.div_ceil(ou.1);
    (0..nv)
        .map(|_| (0..nh).map(|_| rng.random_range(0..=n)).collect())
        .collect()
}

/// Composite loss evaluated through the forward pass only.
pub fn composite_loss(model: &mut Model, x: &Tensor, labels: &[usize], alpha: f64) -> f64 {
    let logits = model.forward(x).unwrap();
    let (ce, _) = cross_entropy(&logits, labels).unwrap();
    total_loss(ce, &model.bit_layers(), alpha)
}

/// Smallest distance of any PACT input to either clipping kink.
pub fn pact_margin(model: &mut Model, x: &Tensor) -> f64 {
    let acts = model.activations(x).unwrap();
    let mut margin = f64::INFINITY;
    for (layer, input) in model.layers.iter().zip(&acts) {
        if let Layer::Pact(p) = layer {
            let beta = p.param.beta;
            for &v in input.data() {
                margin = margin.min(v.abs()).min((v - beta).abs());
            }
        }
    }
    margin
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-7)
}

/// A random multi-layer quantized model: fc and conv layers, block
/// bitwidths in `0..=8`, activation widths in `1..=8`.
pub fn random_quant_model(seed: u64) -> bwq::format::QuantModel {
    use bwq::format::{Dims, LayerKind, QuantLayer, QuantModel};
    let mut rng = rng(seed);
    let count = rng.random_range(1..=3);
    let mut layers = Vec::new();
    for i in 0..count {
        let conv = rng.random_bool(0.5);
        let (c_in, k) = if conv {
            (rng.random_range(1..=3), rng.random_range(1..=3))
        } else {
            (rng.random_range(1..=40), 1)
        };
        let rows = c_in * k * k;
        let cols = rng.random_range(1..=20);
        let table = random_table(&mut rng, rows, cols, (9, 8), 8);
        let grid = WbGrid::with_table(rows, cols, 9, 8, 8, &table).unwrap();
        let mut levels = vec![0i64; rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                let bw = grid.bitwidth(grid.block_of(r, c));
                let top = (1i64 << bw) - 1;
                levels[r * cols + c] = rng.random_range(-top..=top);
            }
        }
        let weights = bwq::fixtures::layer_from_levels(
            &levels,
            rows,
            cols,
            (9, 8),
            8,
            &table,
            rng.random_range(0.1..2.0),
        )
        .unwrap();
        layers.push(QuantLayer {
            name: format!("l{i}"),
            kind: if conv { LayerKind::Conv } else { LayerKind::Fc },
            dims: Dims {
                c_out: cols,
                c_in,
                k,
            },
            act_bits: rng.random_range(1..=8),
            vectors: if conv { rng.random_range(1..=4) } else { 1 },
            beta: None,
            bias: Vec::new(),
            weights,
        });
    }
    QuantModel { layers }
}

pub fn float_dense(w: Vec<f64>, rows: usize, cols: usize, bias: Vec<f64>) -> Layer {
    Layer::Linear(Linear::dense(
        Weights::Float(Tensor::new(vec![rows, cols], w).unwrap()),
        bias,
    ))
}

/// Conv (bit planes) → PACT → dense (bit planes, mixed precision) → PACT →
/// dense (float).
pub fn gradcheck_model(seed: u64) -> Model {
    let mut rng = rng(seed);
    let conv = random_bit_layer(&mut rng, 4, 3, (2, 2), 4, None, (0.05, 0.95));
    let table = vec![
        vec![4, 2],
        vec![3, 4],
        vec![1, 4],
        vec![2, 3],
        vec![4, 4],
        vec![0, 4],
        vec![3, 1],
        vec![4, 2],
        vec![2, 2],
        vec![4, 4],
        vec![1, 3],
        vec![4, 4],
        vec![3, 4],
        vec![2, 4],
    ];
    let dense = random_bit_layer(&mut rng, 27, 4, (2, 2), 4, Some(&table), (0.05, 0.95));
    let w3: Vec<f64> = (0..12).map(|_| rng.random_range(-1.0..1.0)).collect();
    Model::new(vec![
        Layer::Linear(Linear::conv(
            Weights::Bits(conv),
            vec![0.05, -0.1, 0.2],
            1,
            2,
            4,
            4,
        )),
        Layer::Pact(PactLayer::new(0.3, 8, false)),
        Layer::Linear(Linear::dense(
            Weights::Bits(dense),
            vec![0.1, -0.05, 0.0, 0.15],
        )),
        Layer::Pact(PactLayer::new(0.2, 8, false)),
        float_dense(w3, 4, 3, vec![0.0, 0.1, -0.1]),
    ])
}

/// Compare analytic gradients of the composite loss against central
/// differences at random points of every parameter class. Returns the
/// number of points checked.
pub fn check_composite_gradients(seed: u64) -> Result<usize, String> {
    use bwq::nn::ParamKind;
    let alpha = 3e-3;
    let h = 1e-5;
    let mut model = gradcheck_model(seed);
    let mut rng = rng(100 + seed);
    // Keep only samples whose PACT inputs sit clear of both kinks.
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    while labels.len() < 6 {
        let x: Vec<f64> = (0..16).map(|_| rng.random_range(-1.0..1.5)).collect();
        let t = Tensor::new(vec![1, 16], x.clone()).unwrap();
        if pact_margin(&mut model, &t) > 1e-3 {
            rows.extend(x);
            labels.push(rng.random_range(0..3));
        }
    }
    let x = Tensor::new(vec![labels.len(), 16], rows).unwrap();
    let (total, _, grads) =
        bwq::trainer::loss_and_gradients(&mut model, &x, &labels, alpha).unwrap();
    let direct = composite_loss(&mut model, &x, &labels, alpha);
    if (total - direct).abs() > 1e-12 {
        return Err(format!("loss {total} differs from forward-only {direct}"));
    }

    let shapes = model.param_shapes();
    let mut checked = std::collections::HashMap::new();
    let mut beta_moved = false;
    for (pos, &(kind, layer, len)) in shapes.iter().enumerate() {
        let class = match kind {
            ParamKind::BitPlane(_) => "plane",
            ParamKind::Bias => "bias",
            ParamKind::Beta => "beta",
            ParamKind::Weight => "weight",
        };
        let mut tries = 0;
        while checked.get(class).copied().unwrap_or(0) < 10 * (seed as usize + 1) && tries < 40 {
            tries += 1;
            let i = rng.random_range(0..len);
            let base = model.params_mut()[pos].values[i];
            // Masked plane entries and zero-norm groups are not
            // differentiable points of the objective.
            if matches!(kind, ParamKind::BitPlane(_)) && base == 0.0 {
                continue;
            }
            let mut eval = |v: f64| {
                model.params_mut()[pos].values[i] = v;
                let l = composite_loss(&mut model, &x, &labels, alpha);
                model.params_mut()[pos].values[i] = base;
                l
            };
            let fd = (eval(base + h) - eval(base - h)) / (2.0 * h);
            let an = grads.grads[pos][i];
            if rel_err(an, fd) > 1e-4 {
                return Err(format!(
                    "{class} layer {layer} index {i}: analytic {an}, numeric {fd}"
                ));
            }
            if kind == ParamKind::Beta && an != 0.0 {
                beta_moved = true;
            }
            *checked.entry(class).or_insert(0) += 1;
        }
    }
    for class in ["plane", "bias", "beta", "weight"] {
        if checked.get(class).copied().unwrap_or(0) < 10 {
            return Err(format!("{class} under-sampled"));
        }
    }
    if !beta_moved {
        return Err("no sample reached the clipping level".into());
    }
    Ok(checked.values().sum())
}
