use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::chardata::PinyinCode;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeConfig {
    pub epochs: usize,
    pub lr: f64,
    pub l2: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            epochs: 300,
            lr: 0.5,
            l2: 1e-4,
        }
    }
}

/// Multinomial logistic regression on standardized features, trained by
/// full-batch gradient descent. Returns held-out accuracy.
pub fn probe(
    train_x: &[Vec<f64>],
    train_y: &[usize],
    test_x: &[Vec<f64>],
    test_y: &[usize],
    cfg: &ProbeConfig,
) -> Result<f64> {
    if train_x.len() != train_y.len() || test_x.len() != test_y.len() {
        return Err(Error::Input("probe features and labels differ in count".into()));
    }
    if train_x.is_empty() || test_x.is_empty() {
        return Err(Error::Input("probe needs non-empty train and test splits".into()));
    }
    let k = train_y.iter().chain(test_y).max().map_or(0, |m| m + 1);
    let mut seen = vec![false; k];
    for &y in train_y {
        seen[y] = true;
    }
    if seen.iter().filter(|&&s| s).count() < 2 {
        return Err(Error::Config(
            "probe needs at least two classes in the training split".into(),
        ));
    }
    let d = train_x[0].len();
    if train_x.iter().chain(test_x).any(|x| x.len() != d) {
        return Err(Error::Dimension("probe features have unequal widths".into()));
    }

    let n = train_x.len() as f64;
    let mean: Vec<f64> = (0..d).map(|j| train_x.iter().map(|x| x[j]).sum::<f64>() / n).collect();
    let std: Vec<f64> = (0..d)
        .map(|j| {
            let v = train_x.iter().map(|x| (x[j] - mean[j]).powi(2)).sum::<f64>() / n;
            if v > 1e-12 {
                v.sqrt()
            } else {
                1.0
            }
        })
        .collect();
    let scale = |x: &[f64]| -> Vec<f64> { x.iter().enumerate().map(|(j, v)| (v - mean[j]) / std[j]).collect() };
    let xs: Vec<Vec<f64>> = train_x.iter().map(|x| scale(x)).collect();

    let mut w = vec![0.0; d * k];
    let mut b = vec![0.0; k];
    let mut probs = vec![0.0; k];
    for _ in 0..cfg.epochs {
        let mut gw = vec![0.0; d * k];
        let mut gb = vec![0.0; k];
        for (x, &y) in xs.iter().zip(train_y) {
            scores(&w, &b, x, &mut probs);
            softmax(&mut probs);
            probs[y] -= 1.0;
            for (c, &g) in probs.iter().enumerate() {
                gb[c] += g;
                for (j, &xj) in x.iter().enumerate() {
                    gw[j * k + c] += g * xj;
                }
            }
        }
        for (wi, gi) in w.iter_mut().zip(&gw) {
            *wi -= cfg.lr * (gi / n + cfg.l2 * *wi);
        }
        for (bi, gi) in b.iter_mut().zip(&gb) {
            *bi -= cfg.lr * gi / n;
        }
    }

    let mut hits = 0;
    for (x, &y) in test_x.iter().zip(test_y) {
        scores(&w, &b, &scale(x), &mut probs);
        let best = (0..k).fold(0, |best, c| if probs[c] > probs[best] { c } else { best });
        hits += (best == y) as usize;
    }
    Ok(hits as f64 / test_x.len() as f64)
}

fn scores(w: &[f64], b: &[f64], x: &[f64], out: &mut [f64]) {
    let k = b.len();
    out.copy_from_slice(b);
    for (j, &xj) in x.iter().enumerate() {
        for c in 0..k {
            out[c] += w[j * k + c] * xj;
        }
    }
}

fn softmax(v: &mut [f64]) {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for x in v.iter_mut() {
        *x = (*x - m).exp();
        s += *x;
    }
    for x in v.iter_mut() {
        *x /= s;
    }
}

const INITIALS: [&str; 23] = [
    "zh", "ch", "sh", "b", "p", "m", "f", "d", "t", "n", "l", "g", "k", "h", "j", "q", "x", "r", "z", "c", "s", "y",
    "w",
];

/// Class of the pinyin initial: one per consonant initial, plus a final class
/// for syllables that start with a vowel.
pub fn pinyin_initial_class(code: PinyinCode) -> usize {
    let reading = code.reading();
    INITIALS
        .iter()
        .position(|i| reading.starts_with(i))
        .unwrap_or(INITIALS.len())
}

/// Lloyd's k-means with seeded random initial centroids; returns one cluster
/// index per point.
pub fn kmeans(points: &[Vec<f64>], k: usize, iterations: usize, seed: u64) -> Result<Vec<usize>> {
    if k == 0 || k > points.len() {
        return Err(Error::Config(format!(
            "cannot form {k} clusters from {} points",
            points.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.shuffle(&mut rng);
    let mut centroids: Vec<Vec<f64>> = order[..k].iter().map(|&i| points[i].clone()).collect();
    let mut assign = vec![0; points.len()];
    for _ in 0..iterations {
        let mut changed = false;
        for (p, a) in points.iter().zip(assign.iter_mut()) {
            let best = (0..k)
                .map(|c| (c, dist2(p, &centroids[c])))
                .fold((0, f64::INFINITY), |acc, x| if x.1 < acc.1 { x } else { acc })
                .0;
            changed |= best != *a;
            *a = best;
        }
        for (c, centroid) in centroids.iter_mut().enumerate() {
            let members: Vec<&Vec<f64>> = points
                .iter()
                .zip(&assign)
                .filter(|(_, &a)| a == c)
                .map(|(p, _)| p)
                .collect();
            if members.is_empty() {
                continue;
            }
            for (j, v) in centroid.iter_mut().enumerate() {
                *v = members.iter().map(|m| m[j]).sum::<f64>() / members.len() as f64;
            }
        }
        if !changed {
            break;
        }
    }
    Ok(assign)
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}
