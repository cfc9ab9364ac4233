use serde::{Deserialize, Serialize};

/// Lower bound kept on the clipping level.
pub const MIN_BETA: f64 = 1e-6;

/// Trainable PACT clipping level with its activation precision.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PactParam {
    pub beta: f64,
    pub act_bits: u32,
}

impl PactParam {
    pub fn new(beta: f64, act_bits: u32) -> Self {
        Self {
            beta: beta.max(MIN_BETA),
            act_bits,
        }
    }

    pub fn clamp_beta(&mut self) {
        self.beta = self.beta.max(MIN_BETA);
    }
}

/// `0.5(|x| − |x − β| + β)`, i.e. clip to `[0, β]`.
#[inline]
pub fn pact(x: f64, beta: f64) -> f64 {
    x.clamp(0.0, beta)
}

/// `(∂y/∂x, ∂y/∂β)` at `x`.
#[inline]
pub fn pact_grad(x: f64, beta: f64) -> (f64, f64) {
    if x >= beta {
        (0.0, 1.0)
    } else if x > 0.0 {
        (1.0, 0.0)
    } else {
        (0.0, 0.0)
    }
}

/// `2^a − 1`.
pub fn act_levels(act_bits: u32) -> u64 {
    (1u64 << act_bits) - 1
}

/// Uniform `act_bits` quantization of a clipped activation.
#[inline]
pub fn quantize_level(y: f64, beta: f64, act_bits: u32) -> u64 {
    let levels = act_levels(act_bits);
    ((y * levels as f64 / beta).round().max(0.0) as u64).min(levels)
}

/// Quantize clipped activations in `[0, β]` to unsigned integers.
/// Returns the integer levels and the dequantization step `β/(2^a−1)`.
pub fn quantize_activation(y: &[f64], beta: f64, act_bits: u32) -> (Vec<u64>, f64) {
    let q = y
        .iter()
        .map(|&v| quantize_level(v, beta, act_bits))
        .collect();
    (q, beta / act_levels(act_bits) as f64)
}

/// Quantize-dequantize, the forward value used in training (the backward
/// pass treats rounding as identity).
#[inline]
pub fn fake_quantize(y: f64, beta: f64, act_bits: u32) -> f64 {
    quantize_level(y, beta, act_bits) as f64 * beta / act_levels(act_bits) as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pact_three_regions() {
        let beta = 2.0;
        assert_eq!(pact(-1.0, beta), 0.0);
        assert_eq!(pact(beta / 2.0, beta), beta / 2.0);
        assert_eq!(pact(2.0 * beta, beta), beta);
    }

    #[test]
    fn pact_matches_abs_formula() {
        let beta = 1.3;
        for i in -20..40 {
            let x = f64::from(i) * 0.1;
            let closed = 0.5 * (x.abs() - (x - beta).abs() + beta);
            assert!((pact(x, beta) - closed).abs() < 1e-12);
        }
    }

    #[test]
    fn pact_gradients() {
        assert_eq!(pact_grad(-0.5, 1.0), (0.0, 0.0));
        assert_eq!(pact_grad(0.5, 1.0), (1.0, 0.0));
        assert_eq!(pact_grad(1.0, 1.0), (0.0, 1.0));
        assert_eq!(pact_grad(3.0, 1.0), (0.0, 1.0));
    }

    #[test]
    fn quantize_endpoints_and_rounding() {
        let (q, step) = quantize_activation(&[0.0, 7.0, 2.4], 7.0, 3);
        assert_eq!(q, vec![0, 7, 2]);
        assert_eq!(step, 1.0);
        let (q, _) = quantize_activation(&[1.5], 1.5, 5);
        assert_eq!(q, vec![31]);
    }

    #[test]
    fn beta_floor() {
        let mut p = PactParam::new(-3.0, 4);
        assert_eq!(p.beta, MIN_BETA);
        p.beta = -1.0;
        p.clamp_beta();
        assert_eq!(p.beta, MIN_BETA);
    }
}
