//! Analog over-the-air aggregation on per-cluster resource blocks.
//!
//! Each scheduled cluster occupies its own block. Compliant members precode
//! so the receiver's division by the cluster scaling leaves `alpha_k g_k`
//! per member plus additive noise whose per-coordinate variance is
//! `sigma^2 / (2 zeta_n^2)`. Malicious members may instead pour full power
//! into their block: the receiver then sees
//! `beta_k |h_k| sqrt(P_max) / zeta_n` times the unit attack direction,
//! which grows as the cluster's scaling shrinks.
//!
//! A cluster with no active, positively weighted member stays silent and
//! produces no aggregate at all.

use crate::channel::{Channel, Fading};
use crate::rng::{stream, Domain};
use rand_distr::{Distribution, Normal};

#[derive(Debug, Clone)]
pub struct AggregateInput<'a> {
    pub clusters: &'a [Vec<usize>],
    pub alpha: &'a [f64],
    pub reports: &'a [Vec<f64>],
    pub byzantine: &'a [bool],
    pub bypass_scaling: bool,
    pub g_bound: f64,
}

#[derive(Debug, Clone)]
pub struct ClusterAggregate {
    pub g: Vec<f64>,
    pub zeta: f64,
    /// Members that actually added signal: active with positive weight, or
    /// active attackers when scaling is bypassed.
    pub participants: Vec<usize>,
}

/// Aggregate every scheduled cluster for one round.
pub fn aggregate(
    channel: &Channel,
    fading: &Fading,
    input: &AggregateInput,
    noise_seed: u64,
    round: u64,
) -> Vec<Option<ClusterAggregate>> {
    let dim = input.reports.first().map_or(0, |r| r.len());
    input
        .clusters
        .iter()
        .enumerate()
        .map(|(n, members)| {
            let zeta = channel.scaling(fading, members, input.alpha, input.g_bound)?;
            let mut g = vec![0.0; dim];
            let mut participants = Vec::new();
            for &k in members {
                if !fading.active[k] {
                    continue;
                }
                let malicious = input.byzantine[k];
                if malicious && input.bypass_scaling {
                    let norm = crate::util::norm(&input.reports[k]);
                    if norm > 0.0 {
                        let amp = channel.beta[k] * fading.h[k].modulus() * channel.p_max.sqrt()
                            / (zeta * norm);
                        crate::util::axpy(amp, &input.reports[k], &mut g);
                        participants.push(k);
                    }
                } else if input.alpha[k] > 0.0 {
                    let mut report = input.reports[k].clone();
                    // The power budget only covers reports within the norm
                    // bound; anything longer is clipped at the transmitter.
                    crate::learning::clip_gradient(&mut report, input.g_bound);
                    crate::util::axpy(input.alpha[k], &report, &mut g);
                    participants.push(k);
                }
            }
            let std = channel.effective_noise_var(zeta).sqrt();
            if std > 0.0 {
                let mut rng = stream(noise_seed, Domain::Noise, round, n as u64);
                let normal = Normal::new(0.0, std).unwrap();
                for v in g.iter_mut() {
                    *v += normal.sample(&mut rng);
                }
            }
            Some(ClusterAggregate {
                g,
                zeta,
                participants,
            })
        })
        .collect()
}

/// Per-coordinate variance of the total aggregation noise over the given
/// surviving clusters.
pub fn equivalent_noise_power<'a>(
    channel: &Channel,
    surviving: impl IntoIterator<Item = &'a ClusterAggregate>,
) -> f64 {
    surviving
        .into_iter()
        .map(|agg| channel.effective_noise_var(agg.zeta))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ChannelConfig;

    fn setup(devices: usize, seed: u64) -> (Channel, Fading) {
        let ch = Channel::from_config(&ChannelConfig::default(), devices, seed);
        let fading = ch.sample(seed, 0);
        (ch, fading)
    }

    fn all_active(f: &mut Fading) {
        for a in f.active.iter_mut() {
            *a = true;
        }
    }

    #[test]
    fn noiseless_aggregate_is_the_weighted_sum() {
        let (mut ch, mut fading) = setup(4, 7);
        ch.sigma2 = 0.0;
        all_active(&mut fading);
        let clusters = vec![vec![0, 1], vec![2, 3]];
        let alpha = vec![0.3, 0.2, 0.25, 0.25];
        let reports = vec![
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![1.0, 1.0],
            vec![-1.0, 0.5],
        ];
        let input = AggregateInput {
            clusters: &clusters,
            alpha: &alpha,
            reports: &reports,
            byzantine: &[false; 4],
            bypass_scaling: true,
            g_bound: 2.0,
        };
        let out = aggregate(&ch, &fading, &input, 0, 0);
        let a0 = out[0].as_ref().unwrap();
        assert!((a0.g[0] - 0.3).abs() < 1e-12);
        assert!((a0.g[1] - 0.2).abs() < 1e-12);
        let a1 = out[1].as_ref().unwrap();
        assert!((a1.g[0] - (0.25 - 0.25)).abs() < 1e-12);
        assert!((a1.g[1] - (0.25 + 0.125)).abs() < 1e-12);
        assert_eq!(a0.participants, vec![0, 1]);
    }

    #[test]
    fn inactive_devices_do_not_contribute() {
        let (mut ch, mut fading) = setup(3, 3);
        ch.sigma2 = 0.0;
        all_active(&mut fading);
        fading.active[1] = false;
        let clusters = vec![vec![0, 1, 2]];
        let alpha = vec![0.4, 0.4, 0.2];
        let reports = vec![vec![1.0], vec![100.0], vec![1.0]];
        let input = AggregateInput {
            clusters: &clusters,
            alpha: &alpha,
            reports: &reports,
            byzantine: &[false; 3],
            bypass_scaling: false,
            g_bound: 200.0,
        };
        let out = aggregate(&ch, &fading, &input, 0, 0);
        let a = out[0].as_ref().unwrap();
        assert!((a.g[0] - 0.6).abs() < 1e-12);
        assert_eq!(a.participants, vec![0, 2]);
    }

    #[test]
    fn fully_truncated_cluster_is_silent() {
        let (ch, mut fading) = setup(2, 1);
        fading.active = vec![false, false];
        let clusters = vec![vec![0, 1]];
        let input = AggregateInput {
            clusters: &clusters,
            alpha: &[0.5, 0.5],
            reports: &vec![vec![1.0]; 2],
            byzantine: &[false; 2],
            bypass_scaling: false,
            g_bound: 1.0,
        };
        let out = aggregate(&ch, &fading, &input, 0, 0);
        assert!(out[0].is_none());
    }

    #[test]
    fn full_power_attacker_scales_with_the_inverse_of_zeta() {
        let (mut ch, mut fading) = setup(2, 5);
        ch.sigma2 = 0.0;
        all_active(&mut fading);
        let clusters = vec![vec![0, 1]];
        let alpha = vec![0.5, 0.5];
        let reports = vec![vec![1.0, 0.0], vec![0.0, -3.0]];
        let input = AggregateInput {
            clusters: &clusters,
            alpha: &alpha,
            reports: &reports,
            byzantine: &[false, true],
            bypass_scaling: true,
            g_bound: 1.0,
        };
        let out = aggregate(&ch, &fading, &input, 0, 0);
        let a = out[0].as_ref().unwrap();
        let zeta = ch
            .scaling(&fading, &clusters[0], &alpha, 1.0)
            .unwrap();
        let expect = ch.beta[1] * fading.h[1].modulus() * ch.p_max.sqrt() / zeta;
        assert!((a.g[0] - 0.5).abs() < 1e-12);
        // Unit attack direction is (0, -1).
        assert!((a.g[1] + expect).abs() < 1e-10, "{} vs {}", a.g[1], -expect);
    }

    #[test]
    fn compliant_attacker_is_clipped_like_everyone_else() {
        let (mut ch, mut fading) = setup(2, 5);
        ch.sigma2 = 0.0;
        all_active(&mut fading);
        let clusters = vec![vec![0, 1]];
        let reports = vec![vec![1.0, 0.0], vec![0.0, -30.0]];
        let input = AggregateInput {
            clusters: &clusters,
            alpha: &[0.5, 0.5],
            reports: &reports,
            byzantine: &[false, true],
            bypass_scaling: false,
            g_bound: 1.0,
        };
        let out = aggregate(&ch, &fading, &input, 0, 0);
        let a = out[0].as_ref().unwrap();
        assert!((a.g[1] + 0.5).abs() < 1e-12, "clipped to norm 1, weighted 0.5");
    }

    #[test]
    fn noise_variance_tracks_the_scaling_factor() {
        let (mut ch, mut fading) = setup(1, 9);
        ch.sigma2 = 1e-2;
        all_active(&mut fading);
        let clusters = vec![vec![0]];
        let dim = 20_000;
        let input = AggregateInput {
            clusters: &clusters,
            alpha: &[1.0],
            reports: &vec![vec![0.0; dim]],
            byzantine: &[false],
            bypass_scaling: false,
            g_bound: 1.0,
        };
        let out = aggregate(&ch, &fading, &input, 123, 4);
        let a = out[0].as_ref().unwrap();
        let sample_var = crate::util::norm_sq(&a.g) / dim as f64;
        let expect = ch.effective_noise_var(a.zeta);
        assert!(
            (sample_var / expect - 1.0).abs() < 0.05,
            "sample {sample_var} vs expected {expect}"
        );
    }

    #[test]
    fn equivalent_noise_power_matches_the_max_ratio_form() {
        let (ch, fading) = setup(9, 13);
        let clusters = vec![vec![0, 1, 2], vec![3, 4, 5], vec![6, 7, 8]];
        let alpha: Vec<f64> = (0..9).map(|k| 0.05 + 0.02 * k as f64).collect();
        let g_bound = 1.7;
        let reports = vec![vec![0.0; 2]; 9];
        let input = AggregateInput {
            clusters: &clusters,
            alpha: &alpha,
            reports: &reports,
            byzantine: &[false; 9],
            bypass_scaling: false,
            g_bound,
        };
        let out = aggregate(&ch, &fading, &input, 1, 0);
        let survivors: Vec<&ClusterAggregate> = out.iter().flatten().collect();
        let direct = equivalent_noise_power(&ch, survivors.iter().copied());
        // Same quantity through the per-device ratio identity.
        let mut via_ratios = 0.0;
        for (n, members) in clusters.iter().enumerate() {
            if out[n].is_none() {
                continue;
            }
            let max_ratio = members
                .iter()
                .filter(|&&k| fading.active[k] && alpha[k] > 0.0)
                .map(|&k| {
                    let denom = fading.h[k].modulus() * ch.beta[k];
                    (alpha[k] / denom).powi(2)
                })
                .fold(0.0_f64, f64::max);
            via_ratios += ch.sigma2 * g_bound * g_bound / (2.0 * ch.p_max) * max_ratio;
        }
        assert!(
            (direct - via_ratios).abs() <= 1e-12 * direct.max(1e-300),
            "{direct} vs {via_ratios}"
        );
    }
}
