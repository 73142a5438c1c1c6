//! Byzantine report fabrication.
//!
//! Three attack families: sign flipping (send the negated sum of the honest
//! reports), Gaussian noise injection, and label flipping (train honestly on
//! relabeled data). Fabricated reports replace the device's true gradient
//! before transmission; how a malicious device couples to the channel is the
//! aggregator's concern, not this module's.

use crate::config::{AttackConfig, AttackKind};
use crate::learning::Dataset;
use rand::Rng;
use rand_distr::{Distribution, Normal};

/// The negated sum of honest gradients, shared by all sign-flip attackers.
pub fn sign_flip(honest: &[&[f64]]) -> Vec<f64> {
    assert!(!honest.is_empty());
    let mut out = vec![0.0; honest[0].len()];
    for g in honest {
        crate::util::axpy(-1.0, g, &mut out);
    }
    out
}

/// Independent Gaussian entries with the configured mean and deviation.
pub fn gaussian(dim: usize, mean: f64, std: f64, rng: &mut impl Rng) -> Vec<f64> {
    let normal = Normal::new(mean, std).unwrap();
    (0..dim).map(|_| normal.sample(rng)).collect()
}

/// Relabel every sample `y -> classes - 1 - y`.
pub fn flip_labels(data: &Dataset) -> Dataset {
    Dataset {
        x: data.x.clone(),
        y: data.y.iter().map(|&y| data.classes - 1 - y).collect(),
        classes: data.classes,
    }
}

/// Fabricate one malicious report. Label flipping is handled upstream by
/// training on relabeled data, so here it passes the gradient through.
pub fn fabricate(
    cfg: &AttackConfig,
    honest: &[&[f64]],
    own_grad: &[f64],
    rng: &mut impl Rng,
) -> Vec<f64> {
    match cfg.kind {
        AttackKind::None | AttackKind::LabelFlip => own_grad.to_vec(),
        AttackKind::SignFlip => sign_flip(honest),
        AttackKind::GaussianNoise => gaussian(own_grad.len(), cfg.mean, cfg.std, rng),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Domain};

    #[test]
    fn sign_flip_negates_the_honest_sum() {
        let a = vec![1.0, -2.0, 3.0];
        let b = vec![0.5, 0.5, -1.0];
        let got = sign_flip(&[&a, &b]);
        assert_eq!(got, vec![-1.5, 1.5, -2.0]);
    }

    #[test]
    fn gaussian_reports_match_the_configured_moments() {
        let mut rng = stream(1, Domain::Attack, 0, 0);
        let g = gaussian(200_000, 1.0, 2.0, &mut rng);
        let mean = crate::util::mean(&g);
        let std = crate::util::std_dev(&g);
        assert!((mean - 1.0).abs() < 0.02, "mean {mean}");
        assert!((std - 2.0).abs() < 0.02, "std {std}");
    }

    #[test]
    fn label_flip_is_an_involution() {
        let data = Dataset {
            x: vec![vec![0.0], vec![1.0], vec![2.0]],
            y: vec![0, 4, 9],
            classes: 10,
        };
        let flipped = flip_labels(&data);
        assert_eq!(flipped.y, vec![9, 5, 0]);
        let back = flip_labels(&flipped);
        assert_eq!(back.y, data.y);
        assert_eq!(back.x, data.x);
    }
}
