use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::rng::derive_seed;

use super::features::FeatureTable;

pub const TEST_FRACTION: f64 = 0.2;
pub const MIN_PER_CLASS: usize = 10;
const TOLERANCE: f64 = 1e-6;
const MAX_ITERS: usize = 20_000;
const L2: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeResult {
    pub accuracy: f64,
    /// `confusion[true][predicted]` over the test split.
    pub confusion: Vec<Vec<usize>>,
    pub train_size: usize,
    pub test_size: usize,
    pub iterations: usize,
}

fn fnv(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3))
}

/// Stratified split keyed by sample id: within each class, samples are ordered
/// by a seeded hash of their id and the first 20% become the test set.
/// Returns `(train rows, test rows)` as indices into `ids`.
pub fn stratified_split(ids: &[String], labels: &[usize], seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        by_class.entry(l).or_default().push(i);
    }
    if by_class.len() < 2 {
        return Err(Error::invalid(format!("probing needs at least 2 classes, found {}", by_class.len())));
    }
    if let Some((c, rows)) = by_class.iter().find(|(_, r)| r.len() < MIN_PER_CLASS) {
        return Err(Error::invalid(format!(
            "class {c} has {} samples; probing needs at least {MIN_PER_CLASS}",
            rows.len()
        )));
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for rows in by_class.values_mut() {
        rows.sort_by_key(|&i| (derive_seed(seed, &[fnv(&ids[i])]), ids[i].clone()));
        let n_test = ((rows.len() as f64) * TEST_FRACTION).round() as usize;
        test.extend_from_slice(&rows[..n_test]);
        train.extend_from_slice(&rows[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

/// Multinomial logistic regression on standardized features.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxClassifier {
    pub classes: usize,
    mean: Vec<f64>,
    scale: Vec<f64>,
    /// `classes × (dim + 1)`, bias last.
    weights: Vec<Vec<f64>>,
}

impl SoftmaxClassifier {
    fn standardize(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.mean).zip(&self.scale).map(|((v, m), s)| (v - m) / s).collect()
    }

    fn scores(&self, z: &[f64]) -> Vec<f64> {
        self.weights
            .iter()
            .map(|w| w[..z.len()].iter().zip(z).map(|(a, b)| a * b).sum::<f64>() + w[z.len()])
            .collect()
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        let s = self.scores(&self.standardize(x));
        // ties resolve to the lowest class index
        (0..s.len()).fold(0, |best, c| if s[c] > s[best] { c } else { best })
    }

    /// Full-batch Nesterov gradient descent with step `1/L` until the largest
    /// gradient entry drops below the tolerance. Returns the iteration count.
    pub fn fit(features: &[Vec<f64>], labels: &[usize], classes: usize) -> Result<(Self, usize)> {
        let n = features.len();
        if n == 0 {
            return Err(Error::invalid("cannot fit a classifier on no samples"));
        }
        let d = features[0].len();
        let mut mean = vec![0.0; d];
        for r in features {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v / n as f64;
            }
        }
        let mut scale = vec![0.0; d];
        for r in features {
            for ((s, v), m) in scale.iter_mut().zip(r).zip(&mean) {
                *s += (v - m) * (v - m) / n as f64;
            }
        }
        for s in scale.iter_mut() {
            *s = if *s > 1e-24 { s.sqrt() } else { 1.0 };
        }
        let mut model = Self {
            classes,
            mean,
            scale,
            weights: vec![vec![0.0; d + 1]; classes],
        };
        let x: Vec<Vec<f64>> = features
            .iter()
            .map(|r| {
                let mut z = model.standardize(r);
                z.push(1.0);
                z
            })
            .collect();
        let lipschitz = 0.5 * largest_gram_eigenvalue(&x) + L2;
        let step = 1.0 / lipschitz;

        let grad = |w: &[Vec<f64>]| -> Vec<Vec<f64>> {
            let mut g = vec![vec![0.0; d + 1]; classes];
            for (xi, &yi) in x.iter().zip(labels) {
                let s: Vec<f64> = w.iter().map(|wc| wc.iter().zip(xi).map(|(a, b)| a * b).sum()).collect();
                let max = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = s.iter().map(|v| (v - max).exp()).collect();
                let z: f64 = e.iter().sum();
                for c in 0..classes {
                    let coeff = e[c] / z - if c == yi { 1.0 } else { 0.0 };
                    for (gj, xj) in g[c].iter_mut().zip(xi) {
                        *gj += coeff * xj / n as f64;
                    }
                }
            }
            for (gc, wc) in g.iter_mut().zip(w) {
                for j in 0..d {
                    gc[j] += L2 * wc[j];
                }
            }
            g
        };

        let mut w = model.weights.clone();
        let mut prev = w.clone();
        let mut iterations = 0;
        for k in 0..MAX_ITERS {
            iterations = k + 1;
            let beta = k as f64 / (k as f64 + 3.0);
            let y: Vec<Vec<f64>> = w
                .iter()
                .zip(&prev)
                .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + beta * (x - y)).collect())
                .collect();
            let g = grad(&y);
            let gmax = g.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
            if gmax < TOLERANCE {
                w = y;
                break;
            }
            prev = w;
            w = y
                .iter()
                .zip(&g)
                .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x - step * y).collect())
                .collect();
        }
        model.weights = w;
        Ok((model, iterations))
    }
}

/// Power iteration for the top eigenvalue of `XᵀX / n`.
fn largest_gram_eigenvalue(x: &[Vec<f64>]) -> f64 {
    let n = x.len() as f64;
    let d = x[0].len();
    let mut v = vec![1.0 / (d as f64).sqrt(); d];
    let mut lambda = 0.0;
    for _ in 0..100 {
        let mut next = vec![0.0; d];
        for row in x {
            let dot: f64 = row.iter().zip(&v).map(|(a, b)| a * b).sum();
            for (o, r) in next.iter_mut().zip(row) {
                *o += dot * r / n;
            }
        }
        let norm = next.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        lambda = norm;
        v = next.into_iter().map(|a| a / norm).collect();
    }
    // a small margin keeps the step safely below 2/L when the estimate is low
    lambda * 1.05
}

pub fn accuracy_and_confusion(truth: &[usize], predicted: &[usize], classes: usize) -> (f64, Vec<Vec<usize>>) {
    let mut confusion = vec![vec![0; classes]; classes];
    let mut correct = 0;
    for (&t, &p) in truth.iter().zip(predicted) {
        confusion[t][p] += 1;
        correct += (t == p) as usize;
    }
    (correct as f64 / truth.len().max(1) as f64, confusion)
}

/// Trains a linear classifier on the train split of `table` and reports
/// held-out top-1 accuracy.
pub fn linear_probe(table: &FeatureTable, split_seed: u64) -> Result<ProbeResult> {
    let (train, test) = stratified_split(&table.sample_ids, &table.labels, split_seed)?;
    let classes = table.labels.iter().max().map_or(0, |m| m + 1);
    let xs: Vec<Vec<f64>> = train.iter().map(|&i| table.features[i].clone()).collect();
    let ys: Vec<usize> = train.iter().map(|&i| table.labels[i]).collect();
    let (model, iterations) = SoftmaxClassifier::fit(&xs, &ys, classes)?;
    let truth: Vec<usize> = test.iter().map(|&i| table.labels[i]).collect();
    let predicted: Vec<usize> = test.iter().map(|&i| model.predict(&table.features[i])).collect();
    let (accuracy, confusion) = accuracy_and_confusion(&truth, &predicted, classes);
    Ok(ProbeResult {
        accuracy,
        confusion,
        train_size: train.len(),
        test_size: test.len(),
        iterations,
    })
}
