//! Independent reference evaluations shared by the oracle and acceptance
//! targets. Each sweep returns its worst observed deviation.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use triad::data::{bbox_crop, mask_bbox, stratified_kfold, CropBox};
use triad::eval::auroc_scores;
use triad::losses::{multi_positive_contrastive_loss, EmbeddingBatch, PathTag};
use triad::Tensor64;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gauss(r: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(r)
}

pub fn unit_rows(r: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| {
            let v: Vec<f64> = (0..d).map(|_| gauss(r)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.iter().map(|x| x / norm).collect()
        })
        .collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn cos(a: &[f64], b: &[f64]) -> f64 {
    dot(a, b) / (dot(a, a).sqrt() * dot(b, b).sqrt())
}

/// Mean cross-entropy over anchors with at least one positive, by loops,
/// with q floored at 1e-12 inside the log.
pub fn contrastive_oracle(z: &[Vec<f64>], labels: &[usize], tau: f64) -> Option<f64> {
    let n = z.len();
    let mut total = 0.0;
    let mut anchors = 0;
    for i in 0..n {
        let others: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        let matches = others.iter().filter(|&&j| labels[j] == labels[i]).count();
        if matches == 0 {
            continue;
        }
        let logits: Vec<f64> = others.iter().map(|&j| dot(&z[i], &z[j]) / tau).collect();
        let denom: f64 = logits.iter().map(|l| l.exp()).sum();
        let mut h = 0.0;
        for (k, &j) in others.iter().enumerate() {
            if labels[j] == labels[i] {
                let q = logits[k].exp() / denom;
                h -= q.max(1e-12).ln() / matches as f64;
            }
        }
        total += h;
        anchors += 1;
    }
    (anchors > 0).then(|| total / anchors as f64)
}

/// Largest |library − oracle| over random batches of at most 16 rows.
pub fn contrastive_sweep(seed: u64, batches: usize) -> f64 {
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..batches {
        let n = r.random_range(2..=16);
        let d = r.random_range(2..=8);
        let tau = r.random_range(0.05..1.0);
        let mut labels: Vec<usize> = (0..n).map(|_| r.random_range(0..2)).collect();
        labels[0] = labels[n - 1];
        let z = unit_rows(&mut r, n, d);
        let expect = contrastive_oracle(&z, &labels, tau).expect("first and last rows match");
        let batch = EmbeddingBatch::new(Tensor64::from_rows(&z).unwrap(), labels, PathTag::Common).unwrap();
        let got = multi_positive_contrastive_loss(&batch, tau).unwrap();
        worst = worst.max((got - expect).abs());
    }
    worst
}

/// `P(s⁺ > s⁻) + ½ P(s⁺ = s⁻)` by enumerating every pair.
pub fn auroc_pairs(scores: &[f64], labels: &[u8]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, &si) in scores.iter().enumerate() {
        if labels[i] != 1 {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] != 0 {
                continue;
            }
            pairs += 1.0;
            if si > sj {
                wins += 1.0;
            } else if si == sj {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

/// Number of instances (size up to 1000, heavy ties in two of three) where
/// the library AUROC is not bit-identical to pair counting.
pub fn auroc_sweep(seed: u64, instances: usize) -> usize {
    let mut r = rng(seed);
    (0..instances)
        .filter(|case| {
            let n = r.random_range(2..=1000);
            let levels = [3, 10, 1000][case % 3];
            let mut labels: Vec<u8> = (0..n).map(|_| r.random_range(0..2)).collect();
            labels[0] = 0;
            labels[1] = 1;
            let scores: Vec<f64> = (0..n).map(|_| r.random_range(0..levels) as f64 / levels as f64).collect();
            auroc_scores(&scores, &labels).unwrap() != auroc_pairs(&scores, &labels)
        })
        .count()
}

/// Box of positive pixels by a direct scan, padded and clipped.
pub fn bbox_oracle(mask: &[Vec<bool>], pad: f64) -> Option<CropBox> {
    let (h, w) = (mask.len(), mask[0].len());
    let rows: Vec<usize> = (0..h).filter(|&r| mask[r].iter().any(|&v| v)).collect();
    let cols: Vec<usize> = (0..w).filter(|&c| (0..h).any(|r| mask[r][c])).collect();
    let (r0, r1) = (*rows.first()?, *rows.last()?);
    let (c0, c1) = (*cols.first()?, *cols.last()?);
    let pr = (pad * (r1 - r0 + 1) as f64).round() as usize;
    let pc = (pad * (c1 - c0 + 1) as f64).round() as usize;
    let top = r0.saturating_sub(pr);
    let bottom = (r1 + pr).min(h - 1);
    let left = c0.saturating_sub(pc);
    let right = (c1 + pc).min(w - 1);
    Some(CropBox {
        top,
        left,
        height: bottom - top + 1,
        width: right - left + 1,
    })
}

fn random_mask(r: &mut ChaCha8Rng) -> Vec<Vec<bool>> {
    let (h, w) = (r.random_range(1..=24), r.random_range(1..=24));
    let mut mask = vec![vec![false; w]; h];
    for _ in 0..r.random_range(1..=3) {
        let (cy, cx) = (r.random_range(0..h) as f64, r.random_range(0..w) as f64);
        let (ry, rx) = (r.random_range(0.3..6.0), r.random_range(0.3..6.0));
        for (y, row) in mask.iter_mut().enumerate() {
            for (x, m) in row.iter_mut().enumerate() {
                if ((y as f64 - cy) / ry).powi(2) + ((x as f64 - cx) / rx).powi(2) <= 1.0 {
                    *m = true;
                }
            }
        }
    }
    mask
}

/// Number of random masks whose box or cropped pixels disagree with the
/// direct scan.
pub fn bbox_sweep(seed: u64, masks: usize) -> usize {
    let mut r = rng(seed);
    (0..masks)
        .filter(|&case| {
            let mask = random_mask(&mut r);
            let (h, w) = (mask.len(), mask[0].len());
            let pad = [0.0, 0.0005, 0.05, 0.25, r.random_range(0.0..1.0)][case % 5];
            let expect = bbox_oracle(&mask, pad).expect("blob centre is always inside");
            let channels = 1 + case % 2;
            let image =
                Tensor64::new(vec![channels, h, w], (0..channels * h * w).map(|_| gauss(&mut r)).collect()).unwrap();
            let m = Tensor64::new(vec![h, w], mask.iter().flatten().map(|&b| f64::from(u8::from(b))).collect())
                .unwrap();
            let got = bbox_crop(&image, &m, pad).unwrap();
            let mut want = Vec::new();
            for c in 0..channels {
                for y in expect.top..expect.top + expect.height {
                    let start = (c * h + y) * w + expect.left;
                    want.extend_from_slice(&image.data()[start..start + expect.width]);
                }
            }
            mask_bbox(&m, pad).unwrap() != expect
                || got.shape() != [channels, expect.height, expect.width]
                || got.data() != want.as_slice()
        })
        .count()
}

/// Largest |fold class count − ideal| over random label vectors, cycling
/// `k` through 2..=5.
pub fn kfold_sweep(seed: u64, vectors: usize) -> f64 {
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    for case in 0..vectors {
        let k = 2 + case % 4;
        let n = r.random_range(2 * k..=200);
        let p = r.random_range(0.2..0.8);
        let mut labels: Vec<u8> = (0..n).map(|_| u8::from(r.random_bool(p))).collect();
        for (i, l) in labels.iter_mut().take(2 * k).enumerate() {
            *l = (i % 2) as u8;
        }
        let a = stratified_kfold(&labels, k, seed ^ case as u64).unwrap();
        for class in [0u8, 1] {
            let total = labels.iter().filter(|&&l| l == class).count() as f64;
            for f in 0..k {
                let count = a.members(f).iter().filter(|&&i| labels[i] == class).count() as f64;
                worst = worst.max((count - total / k as f64).abs());
            }
        }
    }
    worst
}
