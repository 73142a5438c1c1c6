//! Datasets, the label-skewed partition across devices, and a synthetic
//! image corpus used when no external files are configured.
//!
//! Non-IID rule: device `j` out of `K` holds samples from `lpd` labels,
//! namely `{(j*lpd + i) mod classes : i < lpd}`. Each label's pool is split
//! evenly among the devices that claim it, and every device is truncated to
//! the smallest resulting share so local set sizes match.

use crate::rng::{stream, Domain};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};

#[derive(Debug, Clone)]
pub struct Dataset {
    pub x: Vec<Vec<f64>>,
    pub y: Vec<usize>,
    pub classes: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            x: idx.iter().map(|&i| self.x[i].clone()).collect(),
            y: idx.iter().map(|&i| self.y[i]).collect(),
            classes: self.classes,
        }
    }
}

/// Split off a small label-balanced root set; the remainder is disjoint.
///
/// Per class the quota is `max(1, round(fraction * total / classes))`, so
/// every class appears in the root set even at tiny fractions.
pub fn split_root(data: &Dataset, fraction: f64, seed: u64) -> (Dataset, Dataset) {
    assert!(fraction > 0.0 && fraction < 1.0);
    let per_class = ((fraction * data.len() as f64 / data.classes as f64).round() as usize).max(1);
    let mut rng = stream(seed, Domain::Partition, 0, 0);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); data.classes];
    for (i, &y) in data.y.iter().enumerate() {
        by_class[y].push(i);
    }
    let mut root_idx = Vec::new();
    let mut rest_idx = Vec::new();
    for pool in by_class.iter_mut() {
        pool.shuffle(&mut rng);
        let take = per_class.min(pool.len());
        root_idx.extend_from_slice(&pool[..take]);
        rest_idx.extend_from_slice(&pool[take..]);
    }
    root_idx.sort_unstable();
    rest_idx.sort_unstable();
    (data.subset(&root_idx), data.subset(&rest_idx))
}

/// Label-skewed partition into `devices` equally sized local sets.
///
/// Errors if some device's label pool would be empty.
pub fn partition_non_iid(
    data: &Dataset,
    devices: usize,
    labels_per_device: usize,
    seed: u64,
) -> Result<Vec<Dataset>, String> {
    assert!(devices > 0 && labels_per_device > 0);
    let mut rng = stream(seed, Domain::Partition, 1, 0);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); data.classes];
    for (i, &y) in data.y.iter().enumerate() {
        by_class[y].push(i);
    }
    for pool in by_class.iter_mut() {
        pool.shuffle(&mut rng);
    }
    // Devices claiming each label, in device order.
    let mut claimants: Vec<Vec<usize>> = vec![Vec::new(); data.classes];
    for j in 0..devices {
        for i in 0..labels_per_device {
            claimants[(j * labels_per_device + i) % data.classes].push(j);
        }
    }
    let mut local: Vec<Vec<usize>> = vec![Vec::new(); devices];
    for (label, devs) in claimants.iter().enumerate() {
        if devs.is_empty() {
            continue;
        }
        let share = by_class[label].len() / devs.len();
        if share == 0 {
            return Err(format!(
                "label {label} has {} samples for {} claimants",
                by_class[label].len(),
                devs.len()
            ));
        }
        for (slot, &j) in devs.iter().enumerate() {
            local[j].extend_from_slice(&by_class[label][slot * share..(slot + 1) * share]);
        }
    }
    let min_len = local.iter().map(|l| l.len()).min().unwrap();
    if min_len == 0 {
        return Err("a device received no samples".into());
    }
    Ok(local
        .into_iter()
        .map(|mut idx| {
            idx.truncate(min_len);
            idx.sort_unstable();
            data.subset(&idx)
        })
        .collect())
}

/// Parameters of the generated 28x28 grayscale corpus.
#[derive(Debug, Clone, Copy)]
pub struct SynthImageParams {
    pub train: usize,
    pub test: usize,
    pub classes: usize,
    pub noise_std: f64,
    pub max_shift: i32,
}

impl Default for SynthImageParams {
    fn default() -> Self {
        SynthImageParams {
            train: 2000,
            test: 1000,
            classes: 10,
            noise_std: 0.08,
            max_shift: 3,
        }
    }
}

const SIDE: usize = 28;
const COARSE: usize = 7;

/// Generate train and test sets of noisy shifted class templates.
///
/// Each class gets a fixed 7x7 template (seeded, independent of sample
/// counts), upsampled bilinearly to 28x28. Samples add an integer shift and
/// pixel noise, then quantize to 256 levels so the data round-trips through
/// byte storage exactly.
pub fn synth_images(p: SynthImageParams, seed: u64) -> (Dataset, Dataset) {
    let templates: Vec<Vec<f64>> = (0..p.classes)
        .map(|c| {
            let mut rng = stream(seed, Domain::TaskGen, c as u64, 0);
            let coarse: Vec<f64> = (0..COARSE * COARSE).map(|_| rng.gen_range(0.0..1.0)).collect();
            upsample(&coarse)
        })
        .collect();
    let train = synth_split(&templates, p, seed, 1, p.train);
    let test = synth_split(&templates, p, seed, 2, p.test);
    (train, test)
}

fn synth_split(templates: &[Vec<f64>], p: SynthImageParams, seed: u64, tag: u64, n: usize) -> Dataset {
    let mut rng = stream(seed, Domain::TaskGen, u64::MAX, tag);
    let noise = Normal::new(0.0, p.noise_std).unwrap();
    let mut x = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % p.classes;
        let dx = rng.gen_range(-p.max_shift..=p.max_shift);
        let dy = rng.gen_range(-p.max_shift..=p.max_shift);
        let mut img = shift(&templates[c], dx, dy);
        for v in img.iter_mut() {
            *v = (*v + noise.sample(&mut rng)).clamp(0.0, 1.0);
            // Quantize to u8 levels so IDX round-trips are lossless.
            *v = (*v * 255.0).round() / 255.0;
        }
        x.push(img);
        y.push(c);
    }
    Dataset {
        x,
        y,
        classes: p.classes,
    }
}

fn upsample(coarse: &[f64]) -> Vec<f64> {
    let scale = (COARSE - 1) as f64 / (SIDE - 1) as f64;
    let mut out = vec![0.0; SIDE * SIDE];
    for r in 0..SIDE {
        for c in 0..SIDE {
            let fr = r as f64 * scale;
            let fc = c as f64 * scale;
            let (r0, c0) = (fr.floor() as usize, fc.floor() as usize);
            let (r1, c1) = ((r0 + 1).min(COARSE - 1), (c0 + 1).min(COARSE - 1));
            let (tr, tc) = (fr - r0 as f64, fc - c0 as f64);
            out[r * SIDE + c] = coarse[r0 * COARSE + c0] * (1.0 - tr) * (1.0 - tc)
                + coarse[r0 * COARSE + c1] * (1.0 - tr) * tc
                + coarse[r1 * COARSE + c0] * tr * (1.0 - tc)
                + coarse[r1 * COARSE + c1] * tr * tc;
        }
    }
    out
}

fn shift(img: &[f64], dx: i32, dy: i32) -> Vec<f64> {
    let mut out = vec![0.0; SIDE * SIDE];
    for r in 0..SIDE as i32 {
        for c in 0..SIDE as i32 {
            let (sr, sc) = (r - dy, c - dx);
            if (0..SIDE as i32).contains(&sr) && (0..SIDE as i32).contains(&sc) {
                out[(r as usize) * SIDE + c as usize] = img[(sr as usize) * SIDE + sc as usize];
            }
        }
    }
    out
}

/// Low-dimensional synthetic features for the linear classification task:
/// class means on a sphere plus Gaussian scatter.
pub fn synth_features(n: usize, dim: usize, classes: usize, seed: u64) -> Dataset {
    let mut rng = stream(seed, Domain::TaskGen, 0, 3);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let means: Vec<Vec<f64>> = (0..classes)
        .map(|_| {
            let v: Vec<f64> = (0..dim).map(|_| normal.sample(&mut rng)).collect();
            let nrm = crate::util::norm(&v).max(1e-12);
            v.iter().map(|x| 2.0 * x / nrm).collect()
        })
        .collect();
    let mut x = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % classes;
        let v: Vec<f64> = means[c]
            .iter()
            .map(|m| m + 0.6 * normal.sample(&mut rng))
            .collect();
        x.push(v);
        y.push(c);
    }
    Dataset { x, y, classes }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn toy(n: usize, classes: usize) -> Dataset {
        Dataset {
            x: (0..n).map(|i| vec![i as f64]).collect(),
            y: (0..n).map(|i| i % classes).collect(),
            classes,
        }
    }

    #[test]
    fn root_split_is_disjoint_and_balanced() {
        let data = toy(1000, 10);
        let (root, rest) = split_root(&data, 0.01, 7);
        assert_eq!(root.len() + rest.len(), data.len());
        let root_ids: HashSet<i64> = root.x.iter().map(|v| v[0] as i64).collect();
        let rest_ids: HashSet<i64> = rest.x.iter().map(|v| v[0] as i64).collect();
        assert!(root_ids.is_disjoint(&rest_ids));
        for c in 0..10 {
            assert_eq!(root.y.iter().filter(|&&y| y == c).count(), 1);
        }
    }

    #[test]
    fn partition_follows_the_round_robin_label_rule() {
        let data = toy(600, 10);
        let parts = partition_non_iid(&data, 5, 2, 3).unwrap();
        assert_eq!(parts.len(), 5);
        for (j, part) in parts.iter().enumerate() {
            let want: HashSet<usize> = (0..2).map(|i| (j * 2 + i) % 10).collect();
            let got: HashSet<usize> = part.y.iter().cloned().collect();
            assert_eq!(got, want, "device {j}");
        }
        let sizes: HashSet<usize> = parts.iter().map(|p| p.len()).collect();
        assert_eq!(sizes.len(), 1, "equal local set sizes");
    }

    #[test]
    fn partition_label_wraparound_shares_pools() {
        // 6 devices x 2 labels over 4 classes: each label claimed by 3 devices.
        let data = toy(240, 4);
        let parts = partition_non_iid(&data, 6, 2, 9).unwrap();
        let all: usize = parts.iter().map(|p| p.len()).sum();
        assert!(all <= 240);
        for (j, part) in parts.iter().enumerate() {
            let want: HashSet<usize> = (0..2).map(|i| (j * 2 + i) % 4).collect();
            let got: HashSet<usize> = part.y.iter().cloned().collect();
            assert_eq!(got, want, "device {j}");
        }
    }

    #[test]
    fn partition_rejects_starved_labels() {
        let data = toy(8, 8);
        assert!(partition_non_iid(&data, 16, 2, 1).is_err());
    }

    #[test]
    fn synth_images_are_reproducible_and_quantized() {
        let p = SynthImageParams {
            train: 40,
            test: 20,
            ..Default::default()
        };
        let (a, _) = synth_images(p, 42);
        let (b, _) = synth_images(p, 42);
        assert_eq!(a.x, b.x);
        assert_eq!(a.y, b.y);
        for img in &a.x {
            assert_eq!(img.len(), 784);
            for &v in img {
                assert!((0.0..=1.0).contains(&v));
                let scaled = v * 255.0;
                assert!((scaled - scaled.round()).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn synth_images_ignore_sample_count_for_templates() {
        let small = SynthImageParams {
            train: 10,
            test: 10,
            ..Default::default()
        };
        let big = SynthImageParams {
            train: 30,
            test: 10,
            ..Default::default()
        };
        let (a, _) = synth_images(small, 5);
        let (b, _) = synth_images(big, 5);
        // Same seed, same positions: the first ten samples agree.
        assert_eq!(a.x[..10], b.x[..10]);
    }

    #[test]
    fn feature_classes_are_separable_by_nearest_mean() {
        let data = synth_features(200, 8, 4, 11);
        assert_eq!(data.len(), 200);
        assert_eq!(data.classes, 4);
    }
}
