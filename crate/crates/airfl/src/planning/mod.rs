//! Round planning: descent contributions, noise pricing, clustering, and
//! aggregation-weight optimization.
//!
//! Each selected device k gets a contribution score gamma_k from its report
//! and a noise price coefficient varpi_k from its equivalent channel. The
//! planner splits devices into clusters of a fixed size and picks weights
//! alpha to maximize, over scheduled clusters,
//!
//! ```text
//! sum_n ( sum_{k in C_n} phi_k alpha_k  -  max_{k in C_n} varpi_k alpha_k^2 )
//! ```
//!
//! where phi_k folds the fairness queue into gamma_k. For a fixed alpha the
//! harvest term does not depend on the partition, and the summed cluster
//! maxima are minimized by sorting sqrt(varpi_k) alpha_k descending and
//! cutting consecutive blocks, which is what [`sequential_cluster`] does.
//! The joint problem over alpha and the partition is handled in
//! [`weighting`] by a penalized convex-concave procedure on top of the
//! interior-point solver in [`qp`].

pub mod qp;
pub mod weighting;

use crate::config::WeightingConfig;
use std::fmt;
use weighting::{pccp_optimize, PccpReport};

/// The descent discount 1 / (1 - L eta) requires eta < 1 / L.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepSizeError {
    pub eta: f64,
    pub smoothness: f64,
}

impl fmt::Display for StepSizeError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "step size {} is not below 1/L for smoothness L = {}",
            self.eta, self.smoothness
        )
    }
}

impl std::error::Error for StepSizeError {}

/// Expected-descent contribution of one gradient report.
///
/// gamma = |g|^2 - delta^2 / (1 - L eta). The deviation bound delta prices
/// how far the local gradient can sit from the global one, discounted more
/// heavily as eta approaches the stability limit 1 / L.
pub fn contribution(
    g_norm_sq: f64,
    delta: f64,
    smoothness: f64,
    eta: f64,
) -> Result<f64, StepSizeError> {
    let margin = 1.0 - smoothness * eta;
    if margin <= 0.0 {
        return Err(StepSizeError { eta, smoothness });
    }
    Ok(g_norm_sq - delta * delta / margin)
}

/// Shared constants of the per-device noise price.
///
/// The price of device k is coeff / (|h_k|^2 beta_k^2) with
/// coeff = V L eta sigma^2 G^2 / (2 (1 - L eta) P). A poorer equivalent
/// channel prices higher because the cluster scaling must shrink to meet
/// that device's power budget, amplifying the post-inversion noise.
#[derive(Debug, Clone, Copy)]
pub struct NoisePrice {
    coeff: f64,
}

impl NoisePrice {
    pub fn new(
        v: f64,
        smoothness: f64,
        eta: f64,
        sigma2: f64,
        g_bound: f64,
        p_max: f64,
    ) -> Result<Self, StepSizeError> {
        let margin = 1.0 - smoothness * eta;
        if margin <= 0.0 {
            return Err(StepSizeError { eta, smoothness });
        }
        assert!(p_max > 0.0, "power budget must be positive");
        Ok(Self {
            coeff: v * smoothness * eta * sigma2 * g_bound * g_bound / (2.0 * margin * p_max),
        })
    }

    /// Price coefficient varpi for one device's fading draw.
    pub fn price(&self, h_mod: f64, beta: f64) -> f64 {
        self.coeff / (h_mod * h_mod * beta * beta)
    }
}

/// Orders devices by descending score and cuts consecutive blocks.
///
/// The score of device k is sqrt(varpi_k) alpha_k, the noise price it would
/// impose as a cluster maximum. Grouping the largest scores together
/// minimizes the summed per-cluster maxima over all partitions into blocks
/// of `cluster_size`; any remainder shortens the final block. Ties break by
/// device index, and members are listed ascending within each cluster.
pub fn sequential_cluster(scores: &[f64], cluster_size: usize) -> Vec<Vec<usize>> {
    assert!(cluster_size >= 1, "cluster size must be at least 1");
    debug_assert!(scores.iter().all(|s| s.is_finite()));
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    order
        .chunks(cluster_size)
        .map(|block| {
            let mut members = block.to_vec();
            members.sort_unstable();
            members
        })
        .collect()
}

/// Exhaustively minimizes the summed per-cluster maxima of `costs`.
///
/// Enumerates every partition into equal clusters exactly once by always
/// opening the next cluster with the smallest unassigned index. Intended as
/// a test oracle; the partition count grows superexponentially.
pub fn brute_force_cluster(costs: &[f64], cluster_size: usize) -> (Vec<Vec<usize>>, f64) {
    assert!(cluster_size >= 1, "cluster size must be at least 1");
    assert!(
        !costs.is_empty() && costs.len() % cluster_size == 0,
        "equal-size partitions need cluster_size dividing the device count"
    );
    let pool: Vec<usize> = (0..costs.len()).collect();
    let mut current = Vec::new();
    let mut best: Option<(Vec<Vec<usize>>, f64)> = None;
    descend_partitions(costs, cluster_size, pool, &mut current, &mut best);
    best.expect("at least one partition exists")
}

fn descend_partitions(
    costs: &[f64],
    cluster_size: usize,
    pool: Vec<usize>,
    current: &mut Vec<Vec<usize>>,
    best: &mut Option<(Vec<Vec<usize>>, f64)>,
) {
    if pool.is_empty() {
        let total: f64 = current
            .iter()
            .map(|c| c.iter().fold(0.0_f64, |a, &k| a.max(costs[k])))
            .sum();
        if best.as_ref().is_none_or(|(_, b)| total < *b) {
            *best = Some((current.clone(), total));
        }
        return;
    }
    let anchor = pool[0];
    for companions in combinations(&pool[1..], cluster_size - 1) {
        let mut cluster = Vec::with_capacity(cluster_size);
        cluster.push(anchor);
        cluster.extend(&companions);
        let remaining: Vec<usize> = pool[1..]
            .iter()
            .copied()
            .filter(|i| !companions.contains(i))
            .collect();
        current.push(cluster);
        descend_partitions(costs, cluster_size, remaining, current, best);
        current.pop();
    }
}

fn combinations(items: &[usize], pick: usize) -> Vec<Vec<usize>> {
    if pick == 0 {
        return vec![Vec::new()];
    }
    if items.len() < pick {
        return Vec::new();
    }
    let mut out = Vec::new();
    for (i, &first) in items.iter().enumerate() {
        if items.len() - i < pick {
            break;
        }
        for mut tail in combinations(&items[i + 1..], pick - 1) {
            let mut combo = Vec::with_capacity(pick);
            combo.push(first);
            combo.append(&mut tail);
            out.push(combo);
        }
    }
    out
}

/// Evaluates the planning objective on an explicit partition.
///
/// Each cluster contributes its harvest sum phi_k alpha_k minus its noise
/// price, the largest varpi_k alpha_k^2 among members. Pass only the
/// clusters that actually get a resource block; empty clusters add nothing.
pub fn true_objective(phi: &[f64], varpi: &[f64], alpha: &[f64], clusters: &[Vec<usize>]) -> f64 {
    clusters
        .iter()
        .map(|c| {
            if c.is_empty() {
                return 0.0;
            }
            let harvest: f64 = c.iter().map(|&k| phi[k] * alpha[k]).sum();
            let price = c
                .iter()
                .fold(0.0_f64, |a, &k| a.max(varpi[k] * alpha[k] * alpha[k]));
            harvest - price
        })
        .sum()
}

/// One round's complete transmission plan.
#[derive(Debug, Clone, PartialEq)]
pub struct Plan {
    /// Per-device aggregation weights; zero for every unscheduled device.
    pub alpha: Vec<f64>,
    /// All devices cut into consecutive equal blocks of the plan order.
    pub clusters: Vec<Vec<usize>>,
    /// Per cluster: carries weight and holds no flagged device, so its
    /// block is actually transmitted and aggregated.
    pub scheduled: Vec<bool>,
    /// Eligible devices dropped because the surviving blocks cannot hold
    /// them; they keep zero weight this round.
    pub sacrificed: Vec<usize>,
    /// Optimizer diagnostics for the eligible set.
    pub report: PccpReport,
    /// No eligible device was available; weights are a uniform placeholder
    /// and nothing is scheduled.
    pub fallback: bool,
}

/// Builds the round plan: weights, partition, and per-cluster schedule.
///
/// Eligibility means activated and not flagged. Flagged devices cost their
/// whole block, so `ceil(flagged / kbar)` blocks are written off and the
/// eligible set is truncated to the remaining capacity, dropping the
/// highest noise prices first. The optimizer runs on the survivors; the
/// final partition then sorts every device into three bands: weighted
/// devices by descending alpha over effective gain (the order that
/// minimizes the summed cluster noise), then unweighted unflagged devices,
/// then flagged devices, cut into `n_clusters` blocks of `kbar`. The band
/// structure keeps every weighted device clear of flagged company: weighted
/// positions end before `nbar * kbar` and flagged positions start at or
/// after it.
pub fn plan_round(
    phi: &[f64],
    varpi: &[f64],
    hbeta: &[f64],
    active: &[bool],
    flagged: &[bool],
    n_clusters: usize,
    kbar: usize,
    cfg: &WeightingConfig,
    dump_tag: u64,
) -> Plan {
    let devices = phi.len();
    assert!(devices >= 1 && n_clusters >= 1 && kbar >= 1);
    assert_eq!(varpi.len(), devices);
    assert_eq!(hbeta.len(), devices);
    assert_eq!(active.len(), devices);
    assert_eq!(flagged.len(), devices);
    assert_eq!(devices, n_clusters * kbar, "blocks must tile the fleet");

    let eligible: Vec<usize> = (0..devices)
        .filter(|&k| active[k] && !flagged[k])
        .collect();
    let n_flagged = flagged.iter().filter(|&&f| f).count();
    let nbar = n_clusters.saturating_sub(n_flagged.div_ceil(kbar));
    let capacity = nbar * kbar;

    if eligible.is_empty() || capacity == 0 {
        let open = devices - n_flagged;
        let alpha: Vec<f64> = (0..devices)
            .map(|k| if flagged[k] { 0.0 } else { 1.0 / open.max(1) as f64 })
            .collect();
        let clusters: Vec<Vec<usize>> = (0..n_clusters)
            .map(|n| (n * kbar..(n + 1) * kbar).collect())
            .collect();
        return Plan {
            alpha,
            scheduled: vec![false; n_clusters],
            clusters,
            sacrificed: Vec::new(),
            report: PccpReport {
                iterations: 0,
                penalty_l1: 0.0,
                degraded: false,
                objective: 0.0,
            },
            fallback: true,
        };
    }

    // Truncate the eligible set to what the surviving blocks can carry,
    // dropping the most expensive channels first.
    let mut sacrificed: Vec<usize> = Vec::new();
    let mut chosen = eligible.clone();
    if chosen.len() > capacity {
        let mut order = chosen.clone();
        order.sort_unstable_by(|&a, &b| {
            varpi[b]
                .partial_cmp(&varpi[a])
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });
        sacrificed = order[..chosen.len() - capacity].to_vec();
        sacrificed.sort_unstable();
        chosen.retain(|k| !sacrificed.contains(k));
    }

    let phi_l: Vec<f64> = chosen.iter().map(|&k| phi[k]).collect();
    let varpi_l: Vec<f64> = chosen.iter().map(|&k| varpi[k]).collect();
    let (alpha_l, _, report) = pccp_optimize(&phi_l, &varpi_l, nbar, kbar, cfg, dump_tag);

    let mut alpha = vec![0.0; devices];
    for (j, &k) in chosen.iter().enumerate() {
        alpha[k] = alpha_l[j];
    }

    // Band 0 carries weight and is ordered worst-first so consecutive
    // blocks reproduce the optimizer's noise-minimal grouping; bands 1 and
    // 2 only fill out the tail blocks.
    let band = |k: usize| -> u8 {
        if alpha[k] > 0.0 {
            0
        } else if !flagged[k] {
            1
        } else {
            2
        }
    };
    let mut order: Vec<usize> = (0..devices).collect();
    order.sort_unstable_by(|&a, &b| {
        band(a).cmp(&band(b)).then_with(|| {
            let cost = |k: usize| alpha[k] / hbeta[k].max(f64::MIN_POSITIVE);
            cost(b)
                .partial_cmp(&cost(a))
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        })
    });
    let clusters: Vec<Vec<usize>> = (0..n_clusters)
        .map(|n| {
            let mut block = order[n * kbar..(n + 1) * kbar].to_vec();
            block.sort_unstable();
            block
        })
        .collect();
    let scheduled: Vec<bool> = clusters
        .iter()
        .map(|c| c.iter().any(|&k| alpha[k] > 0.0) && c.iter().all(|&k| !flagged[k]))
        .collect();

    Plan {
        alpha,
        clusters,
        scheduled,
        sacrificed,
        report,
        fallback: false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Domain};
    use rand::Rng;

    #[test]
    fn contribution_hand_value() {
        // gamma = 2 - 0.25 / (1 - 0.2) = 1.6875
        let g = contribution(2.0, 0.5, 2.0, 0.1).unwrap();
        assert!((g - 1.6875).abs() < 1e-15);
    }

    #[test]
    fn contribution_rejects_large_step() {
        assert!(contribution(1.0, 0.1, 2.0, 0.6).is_err());
        assert!(contribution(1.0, 0.1, 2.0, 0.5).is_err());
        assert!(contribution(1.0, 0.1, 0.0, 10.0).is_ok());
    }

    #[test]
    fn noise_price_hand_value() {
        // coeff = 2 * 3 * 0.1 * 0.5 * 4 / (2 * 0.7 * 4) = 1.2 / 5.6
        let np = NoisePrice::new(2.0, 3.0, 0.1, 0.5, 2.0, 4.0).unwrap();
        let w = np.price(0.5, 2.0);
        assert!((w - 1.2 / 5.6).abs() < 1e-15);
        assert!(NoisePrice::new(2.0, 3.0, 0.4, 0.5, 2.0, 4.0).is_err());
    }

    #[test]
    fn sequential_blocks_descend() {
        let scores = [0.3, 0.9, 0.1, 0.9, 0.5, 0.2];
        let clusters = sequential_cluster(&scores, 2);
        // Descending with index tie-break: 1, 3, 4, 0, 5, 2.
        assert_eq!(clusters, vec![vec![1, 3], vec![0, 4], vec![2, 5]]);
    }

    #[test]
    fn sequential_short_last_block() {
        let scores = [5.0, 1.0, 4.0, 2.0, 3.0, 6.0, 0.5];
        let clusters = sequential_cluster(&scores, 3);
        assert_eq!(clusters.len(), 3);
        assert_eq!(clusters[0], vec![0, 2, 5]);
        assert_eq!(clusters[1], vec![1, 3, 4]);
        assert_eq!(clusters[2], vec![6]);
    }

    #[test]
    fn brute_force_tiny_optimum() {
        // Pairing the two largest together wins: 10 + 1 beats 10 + 9 twice.
        let costs = [10.0, 9.0, 1.0, 0.5];
        let (partition, total) = brute_force_cluster(&costs, 2);
        assert!((total - 11.0).abs() < 1e-12);
        assert!(partition.contains(&vec![0, 1]));
    }

    #[test]
    fn sequential_matches_brute_force() {
        let mut rng = stream(77, Domain::Oracle, 0, 0);
        for case in 0..60 {
            let (k, size) = match case % 4 {
                0 => (4, 2),
                1 => (6, 2),
                2 => (6, 3),
                _ => (8, 2),
            };
            let varpi: Vec<f64> = (0..k).map(|_| rng.gen_range(0.1..5.0)).collect();
            let mut alpha: Vec<f64> = (0..k).map(|_| rng.gen_range(0.0..1.0)).collect();
            let s: f64 = alpha.iter().sum();
            for a in &mut alpha {
                *a /= s;
            }
            let costs: Vec<f64> = (0..k).map(|i| varpi[i] * alpha[i] * alpha[i]).collect();
            let scores: Vec<f64> = (0..k).map(|i| varpi[i].sqrt() * alpha[i]).collect();
            let (_, oracle) = brute_force_cluster(&costs, size);
            let clusters = sequential_cluster(&scores, size);
            let mine: f64 = clusters
                .iter()
                .map(|c| c.iter().fold(0.0_f64, |a, &i| a.max(costs[i])))
                .sum();
            assert!(
                (mine - oracle).abs() <= 1e-12 * (1.0 + oracle.abs()),
                "case {case}: sequential {mine} vs oracle {oracle}"
            );
        }
    }

    #[test]
    fn objective_hand_value() {
        let phi = [1.0, 2.0, -1.0, 0.5];
        let varpi = [4.0, 1.0, 1.0, 9.0];
        let alpha = [0.5, 0.25, 0.125, 0.125];
        let clusters = vec![vec![0, 1], vec![2, 3]];
        // Cluster 1: 0.5 + 0.5 - max(1.0, 0.0625) = 0.
        // Cluster 2: -0.125 + 0.0625 - max(0.015625, 0.140625).
        let expect = 0.0 + (-0.125 + 0.0625 - 0.140625);
        let got = true_objective(&phi, &varpi, &alpha, &clusters);
        assert!((got - expect).abs() < 1e-15);
    }

    fn plan_inputs(devices: usize, seed: u64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let mut rng = stream(seed, Domain::Oracle, 3, 0);
        let phi: Vec<f64> = (0..devices).map(|_| rng.gen_range(0.2..3.0)).collect();
        let varpi: Vec<f64> = (0..devices).map(|_| rng.gen_range(0.1..4.0)).collect();
        let hbeta: Vec<f64> = (0..devices).map(|_| rng.gen_range(0.01..0.2)).collect();
        (phi, varpi, hbeta)
    }

    fn check_plan_shape(plan: &Plan, devices: usize, n_clusters: usize, kbar: usize) {
        assert_eq!(plan.alpha.len(), devices);
        assert_eq!(plan.clusters.len(), n_clusters);
        assert_eq!(plan.scheduled.len(), n_clusters);
        let mut seen = vec![false; devices];
        for c in &plan.clusters {
            assert_eq!(c.len(), kbar);
            for &k in c {
                assert!(!seen[k], "device {k} appears twice");
                seen[k] = true;
            }
        }
        assert!(seen.iter().all(|&s| s), "clusters must tile the fleet");
        let total: f64 = plan.alpha.iter().sum();
        assert!((total - 1.0).abs() < 1e-9, "weights sum to {total}");
    }

    #[test]
    fn plan_schedules_everyone_when_nothing_is_flagged() {
        let (phi, varpi, hbeta) = plan_inputs(8, 41);
        let plan = plan_round(
            &phi,
            &varpi,
            &hbeta,
            &[true; 8],
            &[false; 8],
            4,
            2,
            &WeightingConfig::default(),
            0,
        );
        check_plan_shape(&plan, 8, 4, 2);
        assert!(!plan.fallback);
        assert!(plan.sacrificed.is_empty());
        for (n, c) in plan.clusters.iter().enumerate() {
            let carries = c.iter().any(|&k| plan.alpha[k] > 0.0);
            assert_eq!(plan.scheduled[n], carries);
        }
        // Scheduled blocks must be consecutive in the cost order: every
        // member of a later block is no costlier than the cheapest member
        // of an earlier one.
        let cost = |k: usize| plan.alpha[k] / hbeta[k];
        for n in 1..plan.clusters.len() {
            let prev_min = plan.clusters[n - 1]
                .iter()
                .fold(f64::INFINITY, |a, &k| a.min(cost(k)));
            for &k in &plan.clusters[n] {
                assert!(cost(k) <= prev_min + 1e-12);
            }
        }
    }

    #[test]
    fn plan_confines_flagged_devices_to_one_dead_block() {
        let (phi, varpi, hbeta) = plan_inputs(6, 42);
        let mut flagged = [false; 6];
        flagged[2] = true;
        flagged[5] = true;
        let plan = plan_round(
            &phi,
            &varpi,
            &hbeta,
            &[true; 6],
            &flagged,
            3,
            2,
            &WeightingConfig::default(),
            0,
        );
        check_plan_shape(&plan, 6, 3, 2);
        assert!(!plan.fallback);
        assert_eq!(plan.clusters[2], vec![2, 5]);
        assert!(!plan.scheduled[2]);
        assert_eq!(plan.alpha[2], 0.0);
        assert_eq!(plan.alpha[5], 0.0);
        assert!(plan.scheduled[0] && plan.scheduled[1]);
    }

    #[test]
    fn plan_sacrifices_the_costliest_overflow() {
        let (phi, mut varpi, hbeta) = plan_inputs(8, 43);
        varpi[3] = 9.0;
        let mut flagged = [false; 8];
        flagged[6] = true;
        // One flagged device writes off one of the four blocks, leaving
        // room for six of the seven eligible devices.
        let plan = plan_round(
            &phi,
            &varpi,
            &hbeta,
            &[true; 8],
            &flagged,
            4,
            2,
            &WeightingConfig::default(),
            0,
        );
        check_plan_shape(&plan, 8, 4, 2);
        assert_eq!(plan.sacrificed, vec![3]);
        assert_eq!(plan.alpha[3], 0.0);
        assert_eq!(plan.alpha[6], 0.0);
        let last = &plan.clusters[3];
        assert!(last.contains(&6));
        assert!(!plan.scheduled[3]);
        for &k in last {
            assert_eq!(plan.alpha[k], 0.0, "tail block must carry no weight");
        }
    }

    #[test]
    fn plan_falls_back_when_nobody_is_eligible() {
        let (phi, varpi, hbeta) = plan_inputs(4, 44);
        let plan = plan_round(
            &phi,
            &varpi,
            &hbeta,
            &[false; 4],
            &[false; 4],
            2,
            2,
            &WeightingConfig::default(),
            0,
        );
        check_plan_shape(&plan, 4, 2, 2);
        assert!(plan.fallback);
        assert!(plan.scheduled.iter().all(|&s| !s));
        assert!(plan.alpha.iter().all(|&a| (a - 0.25).abs() < 1e-15));
    }

    #[test]
    fn plan_keeps_weighted_devices_clear_of_flagged_blocks() {
        // Zero noise prices collapse the cost order to ties; the band
        // structure alone must keep weighted devices out of the flagged
        // tail even with an idle low-index device pushing positions back.
        let (phi, _, hbeta) = plan_inputs(6, 45);
        let varpi = vec![0.0; 6];
        let mut active = [true; 6];
        active[0] = false;
        let mut flagged = [false; 6];
        flagged[5] = true;
        let plan = plan_round(
            &phi,
            &varpi,
            &hbeta,
            &active,
            &flagged,
            3,
            2,
            &WeightingConfig::default(),
            0,
        );
        check_plan_shape(&plan, 6, 3, 2);
        for (n, c) in plan.clusters.iter().enumerate() {
            if c.iter().any(|&k| flagged[k]) {
                assert!(!plan.scheduled[n]);
                for &k in c {
                    assert_eq!(plan.alpha[k], 0.0);
                }
            }
        }
        assert_eq!(plan.clusters[2], vec![0, 5]);
    }

    #[test]
    fn plan_is_deterministic() {
        let (phi, varpi, hbeta) = plan_inputs(8, 46);
        let mut flagged = [false; 8];
        flagged[1] = true;
        let run = || {
            plan_round(
                &phi,
                &varpi,
                &hbeta,
                &[true; 8],
                &flagged,
                4,
                2,
                &WeightingConfig::default(),
                0,
            )
        };
        assert_eq!(run(), run());
    }
}
