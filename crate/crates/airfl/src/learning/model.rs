//! Classifier models with hand-written backprop.
//!
//! Two architectures share one parameter layout convention (row-major weight
//! matrices followed by biases, layer by layer):
//! - linear softmax: `W (c x d), b (c)`
//! - 3-layer perceptron: `W1 (h x d), b1 (h), W2 (c x h), b2 (c)` with ReLU
//!   on the hidden layer.
//!
//! The loss is mean cross-entropy over the batch. Gradients are exact; the
//! test suite checks them coordinate-by-coordinate against central finite
//! differences.

use crate::rng::{stream, Domain};
use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arch {
    Linear { dim_in: usize, classes: usize },
    Mlp { dim_in: usize, hidden: usize, classes: usize },
}

impl Arch {
    /// The 23,860-parameter image classifier: 784-30-10 with biases.
    pub fn image_mlp() -> Arch {
        Arch::Mlp {
            dim_in: 784,
            hidden: 30,
            classes: 10,
        }
    }

    pub fn param_count(self) -> usize {
        match self {
            Arch::Linear { dim_in, classes } => classes * dim_in + classes,
            Arch::Mlp {
                dim_in,
                hidden,
                classes,
            } => hidden * dim_in + hidden + classes * hidden + classes,
        }
    }

    pub fn classes(self) -> usize {
        match self {
            Arch::Linear { classes, .. } | Arch::Mlp { classes, .. } => classes,
        }
    }

    pub fn dim_in(self) -> usize {
        match self {
            Arch::Linear { dim_in, .. } | Arch::Mlp { dim_in, .. } => dim_in,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Model {
    pub arch: Arch,
    pub w: Vec<f64>,
}

impl Model {
    /// Seeded init: weights uniform in ±1/sqrt(fan_in), biases zero.
    pub fn init(arch: Arch, seed: u64) -> Model {
        let mut rng = stream(seed, Domain::ModelInit, 0, 0);
        let mut w = vec![0.0; arch.param_count()];
        match arch {
            Arch::Linear { dim_in, classes } => {
                let r = 1.0 / (dim_in as f64).sqrt();
                for v in w.iter_mut().take(classes * dim_in) {
                    *v = rng.gen_range(-r..r);
                }
            }
            Arch::Mlp {
                dim_in,
                hidden,
                classes,
            } => {
                let r1 = 1.0 / (dim_in as f64).sqrt();
                let r2 = 1.0 / (hidden as f64).sqrt();
                let (w1_end, b1_end) = (hidden * dim_in, hidden * dim_in + hidden);
                for v in w.iter_mut().take(w1_end) {
                    *v = rng.gen_range(-r1..r1);
                }
                let w2_end = b1_end + classes * hidden;
                for v in w[b1_end..w2_end].iter_mut() {
                    *v = rng.gen_range(-r2..r2);
                }
            }
        }
        Model { arch, w }
    }

    pub fn zeros(arch: Arch) -> Model {
        Model {
            arch,
            w: vec![0.0; arch.param_count()],
        }
    }

    /// Class logits for one sample.
    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        match self.arch {
            Arch::Linear { dim_in, classes } => {
                let (wm, b) = self.w.split_at(classes * dim_in);
                (0..classes)
                    .map(|c| crate::util::dot(&wm[c * dim_in..(c + 1) * dim_in], x) + b[c])
                    .collect()
            }
            Arch::Mlp {
                dim_in,
                hidden,
                classes,
            } => {
                let (w1, rest) = self.w.split_at(hidden * dim_in);
                let (b1, rest) = rest.split_at(hidden);
                let (w2, b2) = rest.split_at(classes * hidden);
                let mut a1 = vec![0.0; hidden];
                for h in 0..hidden {
                    let z = crate::util::dot(&w1[h * dim_in..(h + 1) * dim_in], x) + b1[h];
                    a1[h] = z.max(0.0);
                }
                (0..classes)
                    .map(|c| crate::util::dot(&w2[c * hidden..(c + 1) * hidden], &a1) + b2[c])
                    .collect()
            }
        }
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        let l = self.logits(x);
        let mut best = 0;
        for (i, v) in l.iter().enumerate() {
            if *v > l[best] {
                best = i;
            }
        }
        best
    }

    /// Mean cross-entropy over the given samples.
    pub fn loss(&self, xs: &[&[f64]], ys: &[usize]) -> f64 {
        assert_eq!(xs.len(), ys.len());
        assert!(!xs.is_empty());
        let mut total = 0.0;
        for (x, &y) in xs.iter().zip(ys) {
            let logits = self.logits(x);
            total += cross_entropy(&logits, y).0;
        }
        total / xs.len() as f64
    }

    /// Mean cross-entropy and its exact gradient over the given samples.
    pub fn loss_grad(&self, xs: &[&[f64]], ys: &[usize]) -> (f64, Vec<f64>) {
        assert_eq!(xs.len(), ys.len());
        assert!(!xs.is_empty());
        let mut grad = vec![0.0; self.w.len()];
        let mut total = 0.0;
        let inv = 1.0 / xs.len() as f64;
        match self.arch {
            Arch::Linear { dim_in, classes } => {
                for (x, &y) in xs.iter().zip(ys) {
                    let logits = self.logits(x);
                    let (l, dlogits) = cross_entropy(&logits, y);
                    total += l;
                    let (gw, gb) = grad.split_at_mut(classes * dim_in);
                    for c in 0..classes {
                        crate::util::axpy(
                            inv * dlogits[c],
                            x,
                            &mut gw[c * dim_in..(c + 1) * dim_in],
                        );
                        gb[c] += inv * dlogits[c];
                    }
                }
            }
            Arch::Mlp {
                dim_in,
                hidden,
                classes,
            } => {
                let (w1, rest) = self.w.split_at(hidden * dim_in);
                let (b1, rest) = rest.split_at(hidden);
                let (w2, b2) = rest.split_at(classes * hidden);
                for (x, &y) in xs.iter().zip(ys) {
                    let mut z1 = vec![0.0; hidden];
                    let mut a1 = vec![0.0; hidden];
                    for h in 0..hidden {
                        z1[h] = crate::util::dot(&w1[h * dim_in..(h + 1) * dim_in], x) + b1[h];
                        a1[h] = z1[h].max(0.0);
                    }
                    let logits: Vec<f64> = (0..classes)
                        .map(|c| crate::util::dot(&w2[c * hidden..(c + 1) * hidden], &a1) + b2[c])
                        .collect();
                    let (l, dlogits) = cross_entropy(&logits, y);
                    total += l;
                    let mut da1 = vec![0.0; hidden];
                    for c in 0..classes {
                        crate::util::axpy(dlogits[c], &w2[c * hidden..(c + 1) * hidden], &mut da1);
                    }
                    let w1_len = hidden * dim_in;
                    let b1_off = w1_len;
                    let w2_off = b1_off + hidden;
                    let b2_off = w2_off + classes * hidden;
                    for c in 0..classes {
                        crate::util::axpy(
                            inv * dlogits[c],
                            &a1,
                            &mut grad[w2_off + c * hidden..w2_off + (c + 1) * hidden],
                        );
                        grad[b2_off + c] += inv * dlogits[c];
                    }
                    for h in 0..hidden {
                        if z1[h] > 0.0 {
                            crate::util::axpy(
                                inv * da1[h],
                                x,
                                &mut grad[h * dim_in..(h + 1) * dim_in],
                            );
                            grad[b1_off + h] += inv * da1[h];
                        }
                    }
                }
            }
        }
        (total / xs.len() as f64, grad)
    }

    /// Fraction of samples predicted correctly.
    pub fn accuracy(&self, xs: &[Vec<f64>], ys: &[usize]) -> f64 {
        let hits = xs
            .iter()
            .zip(ys)
            .filter(|(x, &y)| self.predict(x) == y)
            .count();
        hits as f64 / xs.len().max(1) as f64
    }
}

/// Stable softmax cross-entropy: loss and d(loss)/d(logits) for one sample.
fn cross_entropy(logits: &[f64], y: usize) -> (f64, Vec<f64>) {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    let mut dlogits: Vec<f64> = exps.iter().map(|e| e / z).collect();
    let loss = -(dlogits[y].max(1e-300)).ln();
    dlogits[y] -= 1.0;
    (loss, dlogits)
}
