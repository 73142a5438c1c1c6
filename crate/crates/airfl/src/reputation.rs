//! Reputation scores, fairness queues, and the absence-penalty rule.
//!
//! Every round each device lands in one of three states: it participated in
//! a cluster whose aggregate survived screening, it was excluded because its
//! cluster got screened out, or it was idle (truncated by the channel,
//! unscheduled, or in a silent cluster). Participation raises reputation by
//! the device's weighted contribution `alpha_k gamma_bar_k`, exclusion
//! lowers it by the same amount times the absence penalty, and idleness
//! leaves it untouched.
//!
//! The two event kinds accumulate separately, so the penalty can be chosen
//! after the fact and applied retroactively to the whole history.

use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RoundEvent {
    Participated,
    Excluded,
    Idle,
}

#[derive(Debug, Clone)]
pub struct ReputationLedger {
    plus: Vec<f64>,
    minus: Vec<f64>,
    /// Fairness virtual queues, one per device.
    pub queues: Vec<f64>,
    transmissions: Vec<u64>,
    exclusions: Vec<u64>,
}

impl ReputationLedger {
    pub fn new(devices: usize) -> ReputationLedger {
        ReputationLedger {
            plus: vec![0.0; devices],
            minus: vec![0.0; devices],
            queues: vec![0.0; devices],
            transmissions: vec![0; devices],
            exclusions: vec![0; devices],
        }
    }

    pub fn devices(&self) -> usize {
        self.plus.len()
    }

    /// Fold one round of outcomes into the ledger: reputation accumulators,
    /// exclusion statistics, and the fairness queues.
    pub fn record_round(
        &mut self,
        events: &[RoundEvent],
        alpha: &[f64],
        gamma_bar: &[f64],
        b: f64,
    ) {
        assert_eq!(events.len(), self.devices());
        for k in 0..self.devices() {
            let inc = alpha[k] * gamma_bar[k];
            match events[k] {
                RoundEvent::Participated => {
                    self.plus[k] += inc;
                    self.transmissions[k] += 1;
                }
                RoundEvent::Excluded => {
                    self.minus[k] += inc;
                    self.transmissions[k] += 1;
                    self.exclusions[k] += 1;
                }
                RoundEvent::Idle => {}
            }
            self.queues[k] = (self.queues[k] + b - gamma_bar[k] * alpha[k]).max(0.0);
        }
    }

    /// Reputation under a given absence penalty.
    pub fn reputation(&self, penalty: f64) -> Vec<f64> {
        self.plus
            .iter()
            .zip(&self.minus)
            .map(|(p, m)| p - penalty * m)
            .collect()
    }

    /// The `m` lowest-reputation devices, ties broken by index, ascending.
    pub fn identify(&self, m: usize, penalty: f64) -> Vec<usize> {
        let r = self.reputation(penalty);
        let mut order: Vec<usize> = (0..self.devices()).collect();
        order.sort_by(|&a, &b| r[a].partial_cmp(&r[b]).unwrap().then(a.cmp(&b)));
        let mut out: Vec<usize> = order.into_iter().take(m).collect();
        out.sort_unstable();
        out
    }

    /// Fraction of recorded transmissions that ended in exclusion.
    pub fn exclusion_rate(&self) -> f64 {
        let tx: u64 = self.transmissions.iter().sum();
        if tx == 0 {
            return 0.0;
        }
        self.exclusions.iter().sum::<u64>() as f64 / tx as f64
    }
}

/// Normalize contributions over the scheduled set: negatives clamp to zero,
/// the rest divide by the scheduled total. A scheduled set with nothing
/// positive degenerates to uniform.
pub fn normalize_contributions(gamma: &[f64], scheduled: &[bool]) -> Vec<f64> {
    assert_eq!(gamma.len(), scheduled.len());
    let count = scheduled.iter().filter(|&&s| s).count();
    let total: f64 = gamma
        .iter()
        .zip(scheduled)
        .filter(|(_, &s)| s)
        .map(|(g, _)| g.max(0.0))
        .sum();
    gamma
        .iter()
        .zip(scheduled)
        .map(|(g, &s)| {
            if !s {
                0.0
            } else if total > 0.0 {
                g.max(0.0) / total
            } else {
                1.0 / count as f64
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyError {
    pub p_hat: f64,
    pub q_hat: f64,
}

impl fmt::Display for PenaltyError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "no valid absence penalty: need p_hat > q_hat, got p_hat = {}, q_hat = {}",
            self.p_hat, self.q_hat
        )
    }
}

impl std::error::Error for PenaltyError {}

/// Pick an absence penalty from the admissible interval
/// `((1 - p_hat)/p_hat, (1 - q_hat)/q_hat]`.
///
/// The geometric midpoint balances the two ends across their usual orders
/// of magnitude. With `q_hat = 0` the interval is unbounded above and the
/// penalty falls back to twice the lower end plus one.
pub fn select_absence_penalty(p_hat: f64, q_hat: f64) -> Result<f64, PenaltyError> {
    if !(p_hat > q_hat && p_hat > 0.0 && p_hat <= 1.0 && q_hat >= 0.0) {
        return Err(PenaltyError { p_hat, q_hat });
    }
    let lo = (1.0 - p_hat) / p_hat;
    if q_hat == 0.0 {
        return Ok(2.0 * lo + 1.0);
    }
    let hi = (1.0 - q_hat) / q_hat;
    if lo == 0.0 {
        // p_hat = 1 opens the interval at zero; any interior point works.
        return Ok(hi / 2.0);
    }
    Ok((lo * hi).sqrt())
}

/// Probability that a uniformly random equal-size clustering puts at least
/// one of `byzantine` marked devices into the cluster of a fixed unmarked
/// device.
pub fn poisoned_cluster_prob_honest(devices: usize, byzantine: usize, cluster_size: usize) -> f64 {
    assert!(cluster_size >= 1 && devices >= cluster_size && byzantine < devices);
    // The fixed device's co-members are a uniform (cluster_size - 1)-subset
    // of the other devices; complement is the all-clean case.
    let mut clean = 1.0;
    for i in 0..cluster_size - 1 {
        clean *= (devices - 1 - byzantine - i) as f64 / (devices - 1 - i) as f64;
    }
    1.0 - clean
}

/// Mean poisoned-cluster probability over all devices, marked ones included
/// (their own cluster is always poisoned).
pub fn poisoned_cluster_prob(devices: usize, byzantine: usize, cluster_size: usize) -> f64 {
    let honest = poisoned_cluster_prob_honest(devices, byzantine, cluster_size);
    (byzantine as f64 + (devices - byzantine) as f64 * honest) / devices as f64
}

/// Method-of-moments catch-rate estimate: the observed exclusion rate over
/// the expected rate at which a device sits in a poisoned cluster.
pub fn estimate_p(
    exclusion_rate: f64,
    devices: usize,
    byzantine: usize,
    cluster_size: usize,
) -> f64 {
    let pi = poisoned_cluster_prob(devices, byzantine, cluster_size);
    (exclusion_rate / pi).clamp(1e-3, 1.0)
}
