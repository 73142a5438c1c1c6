//! Check suites that pit the production solvers against exhaustive,
//! statistical, and analytic references.
//!
//! Every suite regenerates its instances from a seed, runs the same code the
//! simulator runs, and reports structured results. Callers decide what
//! deviation is acceptable; the suites only measure.

use crate::aircomp::{aggregate, AggregateInput};
use crate::channel::Channel;
use crate::config::{ChannelConfig, ExperimentConfig, WeightingConfig};
use crate::experiment::run_experiment;
use crate::planning::weighting::{assignment_qp, pccp_optimize};
use crate::planning::{brute_force_cluster, sequential_cluster};
use crate::rng::{stream, Domain};
use crate::util::{mean, std_err};
use rand::Rng;

/// One clustering instance: the sequential rule against the exhaustive
/// minimum of summed per-cluster cost maxima.
#[derive(Debug, Clone)]
pub struct ClusteringCase {
    pub devices: usize,
    pub cluster_size: usize,
    pub sequential_cost: f64,
    pub brute_cost: f64,
}

impl ClusteringCase {
    /// Excess of the sequential partition over the exhaustive optimum,
    /// relative to the optimum.
    pub fn relative_excess(&self) -> f64 {
        if self.brute_cost == 0.0 {
            return self.sequential_cost.abs();
        }
        (self.sequential_cost - self.brute_cost) / self.brute_cost
    }
}

/// Runs seeded random clustering instances over fleet shapes where the
/// cluster size divides the fleet. Weights and channels follow the
/// simulator's own laws: simplex weights with occasional zeros, Rayleigh
/// fading over pathloss gains.
pub fn clustering_suite(instances: usize, seed: u64) -> Vec<ClusteringCase> {
    let shapes: [(usize, usize); 6] = [(4, 2), (4, 4), (6, 2), (6, 3), (8, 2), (8, 4)];
    let mut cases = Vec::with_capacity(instances);
    for i in 0..instances {
        let (devices, cluster_size) = shapes[i % shapes.len()];
        let mut rng = stream(seed, Domain::Oracle, i as u64, 0);
        let mut alpha: Vec<f64> = (0..devices).map(|_| rng.gen_range(0.0..1.0)).collect();
        if i % 5 == 0 {
            alpha[i % devices] = 0.0;
        }
        let total: f64 = alpha.iter().sum();
        for a in &mut alpha {
            *a /= total;
        }
        let costs: Vec<f64> = (0..devices)
            .map(|k| {
                let h = rayleigh(&mut rng);
                let dist = rng.gen_range(150.0..500.0);
                let beta = f64::powf(dist, -1.1);
                let ratio = alpha[k] / (h * beta);
                ratio * ratio
            })
            .collect();
        let scores: Vec<f64> = costs.iter().map(|c| c.sqrt()).collect();
        let partition = sequential_cluster(&scores, cluster_size);
        let sequential_cost = summed_maxima(&costs, &partition);
        let (_, brute_cost) = brute_force_cluster(&costs, cluster_size);
        cases.push(ClusteringCase {
            devices,
            cluster_size,
            sequential_cost,
            brute_cost,
        });
    }
    cases
}

fn rayleigh(rng: &mut impl Rng) -> f64 {
    use rand_distr::{Distribution, Normal};
    let n = Normal::new(0.0, 1.0).unwrap();
    let re: f64 = n.sample(rng) / 2f64.sqrt();
    let im: f64 = n.sample(rng) / 2f64.sqrt();
    (re * re + im * im).sqrt()
}

fn summed_maxima(costs: &[f64], partition: &[Vec<usize>]) -> f64 {
    partition
        .iter()
        .map(|c| c.iter().fold(0.0_f64, |a, &k| a.max(costs[k])))
        .sum()
}

/// One noise-calibration measurement: empirical per-coordinate variance of
/// the post-inversion aggregation noise against its analytic value.
#[derive(Debug, Clone)]
pub struct NoiseCase {
    pub sigma2: f64,
    pub zeta: f64,
    pub expected_var: f64,
    pub measured_var: f64,
}

impl NoiseCase {
    pub fn relative_error(&self) -> f64 {
        (self.measured_var - self.expected_var).abs() / self.expected_var
    }
}

/// Measures the injected aggregation noise for three channel configurations
/// by transmitting all-zero gradients through a frozen fading draw, so the
/// received aggregate is the noise alone. `draws` counts pooled scalar
/// samples per configuration.
pub fn noise_suite(draws: usize, seed: u64) -> Vec<NoiseCase> {
    let dim = 100;
    let rounds = draws.div_ceil(dim);
    let setups: [(f64, usize); 3] = [(1e-6, 4), (1e-4, 2), (1e-2, 3)];
    setups
        .iter()
        .enumerate()
        .map(|(i, &(sigma2, members))| {
            let cfg = ChannelConfig {
                sigma2,
                ..ChannelConfig::default()
            };
            let channel = Channel::from_config(&cfg, members, seed ^ i as u64);
            let mut fading = channel.sample(seed ^ i as u64, 0);
            for a in fading.active.iter_mut() {
                *a = true;
            }
            let clusters = vec![(0..members).collect::<Vec<_>>()];
            let alpha = vec![1.0 / members as f64; members];
            let reports = vec![vec![0.0; dim]; members];
            let honest = vec![false; members];
            let input = AggregateInput {
                clusters: &clusters,
                alpha: &alpha,
                reports: &reports,
                byzantine: &honest,
                bypass_scaling: false,
                g_bound: 1.0,
            };
            let zeta = channel
                .scaling(&fading, &clusters[0], &alpha, 1.0)
                .expect("all members active");
            let mut sum_sq = 0.0;
            let mut count = 0usize;
            for round in 0..rounds {
                let aggs = aggregate(&channel, &fading, &input, seed, round as u64);
                let g = &aggs[0].as_ref().expect("cluster transmits").g;
                sum_sq += g.iter().map(|v| v * v).sum::<f64>();
                count += g.len();
            }
            NoiseCase {
                sigma2,
                zeta,
                expected_var: channel.effective_noise_var(zeta),
                measured_var: sum_sq / count as f64,
            }
        })
        .collect()
}

/// One joint weighting-and-partition instance against the exhaustive
/// partition oracle.
#[derive(Debug, Clone)]
pub struct WeightingCase {
    /// Final slack-penalty mass reported by the solver.
    pub penalty_l1: f64,
    /// Objective of the solver's rounded plan.
    pub solver_objective: f64,
    /// Best objective over every partition, each with an exact weight solve.
    pub oracle_objective: f64,
    /// The rounded partition covers every device exactly once within the
    /// cluster-count and cluster-size caps.
    pub structure_ok: bool,
}

impl WeightingCase {
    pub fn objective_gap(&self) -> f64 {
        self.oracle_objective - self.solver_objective
    }
}

/// Runs seeded random weighting instances with six devices, two clusters of
/// three. The oracle enumerates all ten equal partitions and solves the
/// exact weight problem on each.
pub fn weighting_suite(instances: usize, seed: u64) -> Vec<WeightingCase> {
    let (d, nbar, kbar) = (6usize, 2usize, 3usize);
    let cfg = WeightingConfig::default();
    let mut cases = Vec::with_capacity(instances);
    for i in 0..instances {
        let mut rng = stream(seed, Domain::Oracle, i as u64, 1);
        let phi_scale = 10f64.powi(i as i32 % 3 - 1);
        let varpi_scale = 0.5 * 10f64.powi(i as i32 % 2);
        let phi: Vec<f64> = (0..d)
            .map(|_| phi_scale * rng.gen_range(-1.0..2.0))
            .collect();
        let varpi: Vec<f64> = (0..d)
            .map(|_| varpi_scale * rng.gen_range(0.2..5.0))
            .collect();
        let (_, clusters, report) = pccp_optimize(&phi, &varpi, nbar, kbar, &cfg, i as u64);
        let solver_objective = report.objective;
        let mut structure_ok = clusters.len() <= nbar && clusters.iter().all(|c| c.len() <= kbar);
        let mut seen = vec![false; d];
        for &k in clusters.iter().flatten() {
            if seen[k] {
                structure_ok = false;
            }
            seen[k] = true;
        }
        structure_ok &= seen.iter().all(|&s| s);
        let oracle_objective = equal_partitions(d, kbar)
            .into_iter()
            .map(|p| assignment_qp(&phi, &varpi, &p).1)
            .fold(f64::NEG_INFINITY, f64::max);
        cases.push(WeightingCase {
            penalty_l1: report.penalty_l1,
            solver_objective,
            oracle_objective,
            structure_ok,
        });
    }
    cases
}

/// Every partition of `0..n` into equal blocks of `kbar`, each partition
/// listed once (blocks are anchored on their smallest member).
fn equal_partitions(n: usize, kbar: usize) -> Vec<Vec<Vec<usize>>> {
    assert!(n % kbar == 0);
    let mut out = Vec::new();
    let pool: Vec<usize> = (0..n).collect();
    let mut current = Vec::new();
    descend(&pool, kbar, &mut current, &mut out);
    out
}

fn descend(
    pool: &[usize],
    kbar: usize,
    current: &mut Vec<Vec<usize>>,
    out: &mut Vec<Vec<Vec<usize>>>,
) {
    if pool.is_empty() {
        out.push(current.clone());
        return;
    }
    let anchor = pool[0];
    for combo in choose(&pool[1..], kbar - 1) {
        let mut block = vec![anchor];
        block.extend(&combo);
        let rest: Vec<usize> = pool[1..]
            .iter()
            .copied()
            .filter(|k| !combo.contains(k))
            .collect();
        current.push(block);
        descend(&rest, kbar, current, out);
        current.pop();
    }
}

fn choose(items: &[usize], pick: usize) -> Vec<Vec<usize>> {
    if pick == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for (i, &first) in items.iter().enumerate() {
        if items.len() - i < pick {
            break;
        }
        for mut tail in choose(&items[i + 1..], pick - 1) {
            let mut combo = vec![first];
            combo.append(&mut tail);
            out.push(combo);
        }
    }
    out
}

/// Monte-Carlo margins of the one-step and horizon bounds on a quadratic
/// fleet, fed by full simulator runs.
#[derive(Debug, Clone)]
pub struct BoundsReport {
    pub rounds: usize,
    pub noise_seeds: usize,
    /// Clipping bound calibrated so every transmission saturates it.
    pub g_bound: f64,
    pub eta: f64,
    /// min over devices and rounds of clipped-report norm^2 / g_bound^2;
    /// 1 up to float error while the clip stays saturated.
    pub saturation: f64,
    /// Per round m: mean and standard error over noise seeds of
    /// bound_m - (F(w_{m+1}) - F(w_m)).
    pub drop_margin: Vec<(f64, f64)>,
    /// Per horizon T (1-indexed): mean and standard error over noise seeds
    /// of chained_bound_T - (F(w_T) - F*).
    pub gap_margin: Vec<(f64, f64)>,
}

impl BoundsReport {
    /// Smallest margin in units of its standard error; nonnegative margins
    /// count as passing regardless of spread.
    pub fn worst_normalized_margin(&self) -> f64 {
        self.drop_margin
            .iter()
            .chain(&self.gap_margin)
            .map(|&(m, se)| if m >= 0.0 { f64::INFINITY } else { m / se.max(1e-300) })
            .fold(f64::INFINITY, f64::min)
    }
}

/// Runs the quadratic fleet under the full pipeline once per noise seed and
/// measures both bounds. The clipping bound is first calibrated from an
/// unclipped noise-free probe run so that every later transmission
/// saturates it, which the horizon bound's constants require.
pub fn bounds_suite(noise_seeds: usize, rounds: usize, seed: u64) -> BoundsReport {
    assert!(noise_seeds >= 2 && rounds >= 1);
    let probe_cfg = quad_bounds_config(seed, rounds, 1e6, 0.0, None);
    let task = crate::experiment::task::Task::new(&probe_cfg, &vec![false; 8])
        .expect("quadratic task builds");
    let eta = probe_cfg.training.eta;
    let smoothness = task.smoothness;
    let pl = task.strong_convexity.expect("quadratic is strongly convex");
    assert!(eta * smoothness < 1.0, "config keeps eta below 1/L");

    // Calibrate G: half the smallest gradient norm the unclipped noise-free
    // trajectory ever produces, so the clipped runs stay saturated.
    let probe = run_experiment(&probe_cfg).expect("probe run");
    let min_norm_sq = probe
        .metrics
        .iter()
        .flat_map(|r| r.grad_sq.iter().copied())
        .fold(f64::INFINITY, f64::min);
    let g_bound = 0.5 * min_norm_sq.sqrt();
    assert!(g_bound > 0.0, "probe trajectory keeps nonzero gradients");

    let dim = task.dim() as f64;
    let mut drops: Vec<Vec<f64>> = vec![Vec::with_capacity(noise_seeds); rounds];
    let mut bounds: Vec<Vec<f64>> = vec![Vec::with_capacity(noise_seeds); rounds];
    let mut gaps: Vec<Vec<f64>> = vec![Vec::with_capacity(noise_seeds); rounds];
    let mut chains: Vec<Vec<f64>> = vec![Vec::with_capacity(noise_seeds); rounds];
    let mut saturation = f64::INFINITY;

    for s in 0..noise_seeds {
        let cfg = quad_bounds_config(seed, rounds, g_bound, 1e-6, Some(seed ^ 0x5eed ^ s as u64));
        let out = run_experiment(&cfg).expect("measured run");
        let initial_gap = out.initial_suboptimality.expect("quadratic reports the gap");
        let f_star = out.metrics[0].loss.expect("per-round loss")
            - out.metrics[0].suboptimality.expect("per-round gap");
        let mut prev_loss = initial_gap + f_star;
        let mut chain = initial_gap;
        for (m, row) in out.metrics.iter().enumerate() {
            let loss = row.loss.expect("eval_every = 1");
            drops[m].push(loss - prev_loss);
            bounds[m].push(row.drop_bound.expect("quadratic bound"));
            prev_loss = loss;

            let sigma2_whole = dim * row.noise_power;
            let b = crate::analysis::contraction(
                pl,
                eta,
                row.alpha_survived.iter().sum::<f64>(),
            );
            let c = crate::analysis::drift(
                &row.alpha_survived,
                &task.delta,
                g_bound,
                sigma2_whole,
                eta,
                smoothness,
            );
            chain = b * chain + c;
            chains[m].push(chain);
            gaps[m].push(row.suboptimality.expect("per-round gap"));

            for (k, &gsq) in row.grad_sq.iter().enumerate() {
                if row.alpha_survived[k] > 0.0 {
                    saturation = saturation.min(gsq / (g_bound * g_bound));
                }
            }
        }
    }

    let margins = |hi: &[Vec<f64>], lo: &[Vec<f64>]| -> Vec<(f64, f64)> {
        hi.iter()
            .zip(lo)
            .map(|(h, l)| {
                let diff: Vec<f64> = h.iter().zip(l).map(|(a, b)| a - b).collect();
                (mean(&diff), std_err(&diff))
            })
            .collect()
    };
    BoundsReport {
        rounds,
        noise_seeds,
        g_bound,
        eta,
        saturation,
        drop_margin: margins(&bounds, &drops),
        gap_margin: margins(&chains, &gaps),
    }
}

fn quad_bounds_config(
    seed: u64,
    rounds: usize,
    g_bound: f64,
    sigma2: f64,
    noise_seed: Option<u64>,
) -> ExperimentConfig {
    let text = format!(
        r#"
seed = {seed}
scheme = "fedsac"
rounds = {rounds}
eval_every = 1

[fleet]
devices = 8
clusters = 4

[task]
kind = "quadratic"
dim = 20
hetero = 0.5

[channel]
sigma2 = {sigma2}

[defense]
m0 = 10

[training]
eta = 0.05
g_bound = {g_bound}
"#
    );
    let mut cfg = ExperimentConfig::from_toml(&text).expect("bounds config parses");
    cfg.noise_seed = noise_seed;
    let task = QuadTaskProbe::smoothness(seed);
    if cfg.training.eta * task >= 1.0 {
        cfg.training.eta = 0.95 / task;
    }
    cfg.validate().expect("bounds config is valid");
    cfg
}

/// The random quadratic's smoothness depends on the seed; the config
/// builder caps eta below 1/L with it.
struct QuadTaskProbe;

impl QuadTaskProbe {
    fn smoothness(seed: u64) -> f64 {
        crate::learning::QuadraticTask::gen_random(8, 20, 0.5, seed).l
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clustering_suite_matches_brute_force() {
        for case in clustering_suite(30, 41) {
            assert!(
                case.relative_excess() <= 1e-9,
                "sequential {} vs brute {} on K={} kbar={}",
                case.sequential_cost,
                case.brute_cost,
                case.devices,
                case.cluster_size
            );
        }
    }

    #[test]
    fn noise_suite_matches_the_analytic_variance() {
        for case in noise_suite(40_000, 17) {
            assert!(
                case.relative_error() < 0.05,
                "sigma2 {}: measured {} vs expected {}",
                case.sigma2,
                case.measured_var,
                case.expected_var
            );
        }
    }

    #[test]
    fn weighting_suite_matches_the_partition_oracle() {
        for case in weighting_suite(8, 23) {
            assert!(case.structure_ok);
            assert!(case.penalty_l1 <= 1e-4, "penalty {}", case.penalty_l1);
            assert!(
                case.objective_gap().abs() <= 1e-3,
                "oracle {} vs solver {}",
                case.oracle_objective,
                case.solver_objective
            );
        }
    }

    #[test]
    fn bounds_suite_stays_above_realized_descent() {
        let report = bounds_suite(5, 12, 3);
        assert!(report.saturation >= 1.0 - 1e-9, "clips desaturated: {}", report.saturation);
        assert!(
            report.worst_normalized_margin() >= -3.0,
            "bound violated beyond 3 standard errors"
        );
    }

    #[test]
    fn ten_partitions_of_six_into_threes() {
        assert_eq!(equal_partitions(6, 3).len(), 10);
    }
}
