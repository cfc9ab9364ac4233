//! Built-in synthetic classification tasks.

use std::f64::consts::TAU;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Tensor,
    pub labels: Vec<usize>,
    pub classes: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn features(&self) -> usize {
        self.inputs.cols()
    }

    /// Rows `idx` as a batch.
    pub fn batch(&self, idx: &[usize]) -> (Tensor, Vec<usize>) {
        let f = self.features();
        let mut data = Vec::with_capacity(idx.len() * f);
        for &i in idx {
            data.extend_from_slice(&self.inputs.data()[i * f..(i + 1) * f]);
        }
        let t = Tensor::new(vec![idx.len(), f], data).expect("batch shape");
        (t, idx.iter().map(|&i| self.labels[i]).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    /// 2D Gaussian blobs with centres on a circle.
    Blobs,
    /// 8×8 single-channel stroke patterns with pixel noise.
    Images,
}

impl Task {
    pub fn classes(self) -> usize {
        4
    }

    /// `(train, test)` splits, deterministic in `seed`.
    pub fn generate(self, seed: u64, train: usize, test: usize) -> (Dataset, Dataset) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let all = match self {
            Task::Blobs => blobs(&mut rng, train + test, self.classes()),
            Task::Images => images(&mut rng, train + test),
        };
        split(all, train)
    }
}

fn split(all: Dataset, train: usize) -> (Dataset, Dataset) {
    let f = all.features();
    let (a, b) = all.inputs.data().split_at(train * f);
    let (la, lb) = all.labels.split_at(train);
    let make = |d: &[f64], l: &[usize]| Dataset {
        inputs: Tensor::new(vec![l.len(), f], d.to_vec()).expect("split shape"),
        labels: l.to_vec(),
        classes: all.classes,
    };
    (make(a, la), make(b, lb))
}

const BLOB_RADIUS: f64 = 2.0;
const BLOB_STD: f64 = 0.45;

fn blobs(rng: &mut ChaCha8Rng, n: usize, classes: usize) -> Dataset {
    let noise = Normal::new(0.0, BLOB_STD).expect("valid std");
    let mut data = Vec::with_capacity(n * 2);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % classes;
        let angle = TAU * c as f64 / classes as f64;
        data.push(BLOB_RADIUS * angle.cos() + noise.sample(rng));
        data.push(BLOB_RADIUS * angle.sin() + noise.sample(rng));
        labels.push(c);
    }
    shuffle(rng, data, labels, 2, classes)
}

const IMG: usize = 8;

fn images(rng: &mut ChaCha8Rng, n: usize) -> Dataset {
    let noise = Normal::new(0.0, 0.25).expect("valid std");
    let mut data = Vec::with_capacity(n * IMG * IMG);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % 4;
        let mut img = [0.0f64; IMG * IMG];
        let off = rng.random_range(1..IMG - 1);
        for t in 0..IMG {
            let (y, x) = match c {
                0 => (off, t),         // horizontal stroke
                1 => (t, off),         // vertical stroke
                2 => (t, t),           // main diagonal
                _ => (t, IMG - 1 - t), // anti-diagonal
            };
            img[y * IMG + x] = 1.0;
        }
        data.extend(img.iter().map(|v| v + noise.sample(rng)));
        labels.push(c);
    }
    shuffle(rng, data, labels, IMG * IMG, 4)
}

fn shuffle(
    rng: &mut ChaCha8Rng,
    data: Vec<f64>,
    labels: Vec<usize>,
    features: usize,
    classes: usize,
) -> Dataset {
    let mut order: Vec<usize> = (0..labels.len()).collect();
    order.shuffle(rng);
    let mut d = Vec::with_capacity(data.len());
    let mut l = Vec::with_capacity(labels.len());
    for i in order {
        d.extend_from_slice(&data[i * features..(i + 1) * features]);
        l.push(labels[i]);
    }
    Dataset {
        inputs: Tensor::new(vec![l.len(), features], d).expect("dataset shape"),
        labels: l,
        classes,
    }
}
