use crate::error::{Error, Result};
use crate::nn::Tensor;

/// Flatten conv weights `[C_out, C_in, k, k]` into the crossbar matrix
/// `[C_in·k·k, C_out]`. Element `(co, ci, a, b)` lands at row
/// `ci·k² + a·k + b`, column `co`.
pub fn reshape_conv(weights: &Tensor) -> Result<Tensor> {
    let &[c_out, c_in, kh, kw] = weights.shape() else {
        return Err(Error::Shape {
            expected: vec![0, 0, 0, 0],
            actual: weights.shape().to_vec(),
        });
    };
    if kh != kw {
        return Err(Error::Shape {
            expected: vec![c_out, c_in, kh, kh],
            actual: weights.shape().to_vec(),
        });
    }
    let rows = c_in * kh * kw;
    let mut out = vec![0.0; rows * c_out];
    for (idx, &w) in weights.data().iter().enumerate() {
        let co = idx / rows;
        let row = idx % rows;
        out[row * c_out + co] = w;
    }
    Tensor::new(vec![rows, c_out], out)
}

/// Inverse of [`reshape_conv`].
pub fn unreshape_conv(matrix: &Tensor, c_in: usize, k: usize) -> Result<Tensor> {
    let rows = c_in * k * k;
    if matrix.shape().len() != 2 || matrix.rows() != rows {
        return Err(Error::Shape {
            expected: vec![rows, 0],
            actual: matrix.shape().to_vec(),
        });
    }
    let c_out = matrix.cols();
    let mut out = vec![0.0; rows * c_out];
    for row in 0..rows {
        for co in 0..c_out {
            out[co * rows + row] = matrix.get2(row, co);
        }
    }
    Tensor::new(vec![c_out, c_in, k, k], out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn conv_shape_formula() {
        let w = Tensor::zeros(&[4, 2, 3, 3]);
        assert_eq!(reshape_conv(&w).unwrap().shape(), &[18, 4]);
    }

    #[test]
    fn pointwise_single_channel_is_transpose() {
        let w = Tensor::new(vec![3, 1, 1, 1], vec![1.0, 2.0, 3.0]).unwrap();
        let m = reshape_conv(&w).unwrap();
        assert_eq!(m.shape(), &[1, 3]);
        assert_eq!(m.data(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn element_placement() {
        let (c_out, c_in, k) = (2, 3, 2);
        let data: Vec<f64> = (0..c_out * c_in * k * k).map(|v| v as f64).collect();
        let w = Tensor::new(vec![c_out, c_in, k, k], data.clone()).unwrap();
        let m = reshape_conv(&w).unwrap();
        for co in 0..c_out {
            for ci in 0..c_in {
                for a in 0..k {
                    for b in 0..k {
                        let src = data[((co * c_in + ci) * k + a) * k + b];
                        assert_eq!(m.get2(ci * k * k + a * k + b, co), src);
                    }
                }
            }
        }
    }

    #[test]
    fn rejects_non_4d() {
        assert!(reshape_conv(&Tensor::zeros(&[4, 18])).is_err());
    }

    proptest! {
        #[test]
        fn round_trip(c_out in 1usize..5, c_in in 1usize..4, k in 1usize..4,
                      seed in proptest::collection::vec(-1.0f64..1.0, 64)) {
            let n = c_out * c_in * k * k;
            let data: Vec<f64> = (0..n).map(|i| seed[i % seed.len()] + i as f64).collect();
            let w = Tensor::new(vec![c_out, c_in, k, k], data).unwrap();
            let back = unreshape_conv(&reshape_conv(&w).unwrap(), c_in, k).unwrap();
            prop_assert_eq!(back, w);
        }
    }
}
