use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Mean softmax cross-entropy over a `[N, C]` batch, with its gradient
/// w.r.t. the logits.
pub fn cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let &[batch, classes] = logits.shape() else {
        return Err(Error::Shape {
            expected: vec![labels.len(), 0],
            actual: logits.shape().to_vec(),
        });
    };
    if batch != labels.len() {
        return Err(Error::Shape {
            expected: vec![labels.len(), classes],
            actual: logits.shape().to_vec(),
        });
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::Label { label, classes });
    }
    let mut loss = 0.0;
    let mut grad = vec![0.0; batch * classes];
    let inv = 1.0 / batch as f64;
    for (n, &label) in labels.iter().enumerate() {
        let row = &logits.data()[n * classes..(n + 1) * classes];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let lse = max + sum.ln();
        loss += lse - row[label];
        for (c, v) in row.iter().enumerate() {
            let p = (v - lse).exp();
            grad[n * classes + c] = (p - if c == label { 1.0 } else { 0.0 }) * inv;
        }
    }
    Ok((loss * inv, Tensor::new(vec![batch, classes], grad)?))
}

/// `0.5·Σ(y − t)²` and its gradient `y − t`.
pub fn squared_error(output: &Tensor, target: &Tensor) -> Result<(f64, Tensor)> {
    if output.shape() != target.shape() {
        return Err(Error::Shape {
            expected: target.shape().to_vec(),
            actual: output.shape().to_vec(),
        });
    }
    let diff: Vec<f64> = output
        .data()
        .iter()
        .zip(target.data())
        .map(|(y, t)| y - t)
        .collect();
    let loss = 0.5 * diff.iter().map(|d| d * d).sum::<f64>();
    Ok((loss, Tensor::new(output.shape().to_vec(), diff)?))
}

/// Index of the largest logit in each row.
pub fn argmax_rows(logits: &Tensor) -> Vec<usize> {
    let classes = logits.cols();
    logits
        .data()
        .chunks(classes)
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| {
                    if v > bv {
                        (i, v)
                    } else {
                        (bi, bv)
                    }
                })
                .0
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_ln_c() {
        let logits = Tensor::new(vec![2, 5], vec![0.3; 10]).unwrap();
        let (loss, _) = cross_entropy(&logits, &[0, 4]).unwrap();
        assert!((loss - 5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn large_margin_goes_to_zero() {
        let mut last = f64::INFINITY;
        for margin in [1.0, 10.0, 100.0] {
            let logits = Tensor::new(vec![1, 3], vec![margin, 0.0, 0.0]).unwrap();
            let (loss, _) = cross_entropy(&logits, &[0]).unwrap();
            assert!(loss < last);
            last = loss;
        }
        assert!(last < 1e-40);
    }

    #[test]
    fn matches_log_sum_exp_by_hand() {
        let vals = [
            0.2, -1.3, 0.7, 2.1, //
            -0.4, 0.0, 1.1, -2.2, //
            3.0, 0.5, -0.5, 0.9,
        ];
        let labels = [3, 1, 0];
        let logits = Tensor::new(vec![3, 4], vals.to_vec()).unwrap();
        let (loss, _) = cross_entropy(&logits, &labels).unwrap();
        let mut oracle = 0.0;
        for (n, &y) in labels.iter().enumerate() {
            let row = &vals[n * 4..(n + 1) * 4];
            let lse = row.iter().map(|v: &f64| v.exp()).sum::<f64>().ln();
            oracle += lse - row[y];
        }
        oracle /= 3.0;
        assert!((loss - oracle).abs() < 1e-12);
    }

    #[test]
    fn rejects_out_of_range_label() {
        let logits = Tensor::zeros(&[1, 3]);
        assert!(matches!(
            cross_entropy(&logits, &[3]),
            Err(Error::Label {
                label: 3,
                classes: 3
            })
        ));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let vals = vec![0.2, -1.3, 0.7, 2.1, -0.4, 0.0];
        let logits = Tensor::new(vec![2, 3], vals.clone()).unwrap();
        let (_, grad) = cross_entropy(&logits, &[2, 0]).unwrap();
        let h = 1e-6;
        for i in 0..vals.len() {
            let mut up = vals.clone();
            up[i] += h;
            let mut dn = vals.clone();
            dn[i] -= h;
            let lu = cross_entropy(&Tensor::new(vec![2, 3], up).unwrap(), &[2, 0])
                .unwrap()
                .0;
            let ld = cross_entropy(&Tensor::new(vec![2, 3], dn).unwrap(), &[2, 0])
                .unwrap()
                .0;
            assert!(((lu - ld) / (2.0 * h) - grad.data()[i]).abs() < 1e-8);
        }
    }
}
