//! Rayleigh fading, pathloss, device activation, and transmit scaling.
//!
//! Small-scale fading is complex Gaussian with unit mean power, redrawn
//! every round. A device takes part in a round only when its fading modulus
//! clears the activation threshold, which happens with probability
//! `exp(-gamma_th^2)`. Large-scale gains follow a pathloss law over
//! distances drawn once per experiment and frozen.
//!
//! Transmit scaling inverts the channel exactly: device `k` in cluster `n`
//! sends `rho_k g_k` with `rho_k = zeta_n alpha_k / (h_k beta_k)`, and the
//! cluster scaling `zeta_n` is chosen as the largest value that keeps every
//! member's transmit power within budget for gradients bounded by `G`.

use crate::config::ChannelConfig;
use crate::rng::{stream, Domain};
use crate::util::Complex;
use rand::Rng;
use rand_distr::{Distribution, Normal};

#[derive(Debug, Clone)]
pub struct Channel {
    pub gamma_th: f64,
    pub p_max: f64,
    pub sigma2: f64,
    /// Per-device large-scale gains `beta_k = d_k^(-pathloss_exp)`, frozen.
    pub beta: Vec<f64>,
    pub distances: Vec<f64>,
}

/// One round's small-scale state.
#[derive(Debug, Clone)]
pub struct Fading {
    pub h: Vec<Complex>,
    pub active: Vec<bool>,
}

impl Channel {
    pub fn from_config(cfg: &ChannelConfig, devices: usize, seed: u64) -> Channel {
        let mut rng = stream(seed, Domain::Distance, 0, 0);
        let distances: Vec<f64> = (0..devices)
            .map(|_| rng.gen_range(cfg.dist_range[0]..cfg.dist_range[1]))
            .collect();
        let beta = distances.iter().map(|d| d.powf(-cfg.pathloss_exp)).collect();
        Channel {
            gamma_th: cfg.gamma_th,
            p_max: cfg.p_max(),
            sigma2: cfg.sigma2,
            beta,
            distances,
        }
    }

    /// Draw the round's fading; devices are visited in index order.
    pub fn sample(&self, seed: u64, round: u64) -> Fading {
        let mut rng = stream(seed, Domain::Channel, round, 0);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let mut h = Vec::with_capacity(self.beta.len());
        let mut active = Vec::with_capacity(self.beta.len());
        for _ in 0..self.beta.len() {
            let c = Complex {
                re: normal.sample(&mut rng) / 2f64.sqrt(),
                im: normal.sample(&mut rng) / 2f64.sqrt(),
            };
            active.push(c.modulus() >= self.gamma_th);
            h.push(c);
        }
        Fading { h, active }
    }

    /// Cluster scaling factor over the members that are active and carry
    /// positive weight. `None` means the cluster stays silent this round.
    pub fn scaling(
        &self,
        fading: &Fading,
        members: &[usize],
        alpha: &[f64],
        g_bound: f64,
    ) -> Option<f64> {
        assert!(g_bound > 0.0);
        let mut min_ratio = f64::INFINITY;
        for &k in members {
            if fading.active[k] && alpha[k] > 0.0 {
                min_ratio = min_ratio.min(fading.h[k].modulus() * self.beta[k] / alpha[k]);
            }
        }
        if min_ratio.is_finite() {
            Some(self.p_max.sqrt() / g_bound * min_ratio)
        } else {
            None
        }
    }

    /// Exact channel-inverting precoder for an active member.
    pub fn precoder(&self, fading: &Fading, k: usize, zeta: f64, alpha_k: f64) -> Complex {
        assert!(fading.active[k]);
        fading.h[k].recip().scale(zeta * alpha_k / self.beta[k])
    }

    /// Per-coordinate variance of the effective real noise after the
    /// receiver divides by `zeta`.
    pub fn effective_noise_var(&self, zeta: f64) -> f64 {
        self.sigma2 / (2.0 * zeta * zeta)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn test_cfg() -> ChannelConfig {
        ChannelConfig::default()
    }

    fn make(devices: usize, seed: u64) -> Channel {
        Channel::from_config(&test_cfg(), devices, seed)
    }

    #[test]
    fn distances_are_frozen_and_in_range() {
        let a = make(30, 4);
        let b = make(30, 4);
        assert_eq!(a.distances, b.distances);
        for (&d, &beta) in a.distances.iter().zip(&a.beta) {
            assert!((150.0..500.0).contains(&d));
            assert!((beta - d.powf(-1.1)).abs() < 1e-15);
        }
    }

    #[test]
    fn fading_has_unit_mean_power() {
        let ch = make(2000, 8);
        let fading = ch.sample(8, 0);
        let mean_power: f64 =
            fading.h.iter().map(|h| h.modulus().powi(2)).sum::<f64>() / 2000.0;
        assert!((mean_power - 1.0).abs() < 0.05, "mean power {mean_power}");
    }

    #[test]
    fn activation_rate_matches_the_closed_form() {
        let mut cfg = test_cfg();
        cfg.gamma_th = 0.8;
        let ch = Channel::from_config(&cfg, 500, 3);
        let mut hits = 0usize;
        let rounds = 200;
        for m in 0..rounds {
            let fading = ch.sample(3, m);
            hits += fading.active.iter().filter(|&&a| a).count();
        }
        let rate = hits as f64 / (500 * rounds as usize) as f64;
        let expect = (-0.8f64 * 0.8).exp();
        assert!(
            (rate - expect).abs() < 0.01,
            "rate {rate} vs closed form {expect}"
        );
    }

    #[test]
    fn precoder_inverts_the_channel_exactly() {
        let ch = make(6, 11);
        let fading = ch.sample(11, 2);
        let alpha = [0.3, 0.1, 0.2, 0.15, 0.15, 0.1];
        let members = [0, 1, 2, 3, 4, 5];
        if let Some(zeta) = ch.scaling(&fading, &members, &alpha, 2.0) {
            for &k in members.iter().filter(|&&k| fading.active[k]) {
                let rho = ch.precoder(&fading, k, zeta, alpha[k]);
                let through = rho.mul(fading.h[k]).scale(ch.beta[k]);
                assert!((through.re - zeta * alpha[k]).abs() < 1e-12);
                assert!(through.im.abs() < 1e-12);
            }
        }
    }

    #[test]
    fn silent_cluster_when_nobody_qualifies() {
        let ch = make(4, 2);
        let mut fading = ch.sample(2, 0);
        fading.active = vec![false, true, false, true];
        // Active members carry zero weight; inactive ones carry all of it.
        let alpha = [0.5, 0.0, 0.5, 0.0];
        assert!(ch.scaling(&fading, &[0, 1, 2, 3], &alpha, 1.0).is_none());
        assert!(ch.scaling(&fading, &[0, 2], &[0.5, 0.0, 0.5, 0.0], 1.0).is_none());
    }

    proptest! {
        /// Every member's transmit power stays within budget whenever its
        /// gradient respects the norm bound.
        #[test]
        fn transmit_power_never_exceeds_the_budget(
            seed in 0u64..500,
            round in 0u64..20,
            raw_alpha in proptest::collection::vec(0.0f64..1.0, 6),
            g_bound in 0.5f64..5.0,
        ) {
            let ch = make(6, seed);
            let fading = ch.sample(seed, round);
            let total: f64 = raw_alpha.iter().sum();
            prop_assume!(total > 1e-6);
            let alpha: Vec<f64> = raw_alpha.iter().map(|a| a / total).collect();
            let members = [0, 1, 2, 3, 4, 5];
            if let Some(zeta) = ch.scaling(&fading, &members, &alpha, g_bound) {
                for &k in members.iter() {
                    if fading.active[k] && alpha[k] > 0.0 {
                        let rho = ch.precoder(&fading, k, zeta, alpha[k]);
                        let amp = rho.modulus();
                        // Worst-case signal is a gradient at the norm bound.
                        prop_assert!(amp * amp * g_bound * g_bound <= ch.p_max * (1.0 + 1e-9));
                    }
                }
            }
        }
    }
}
