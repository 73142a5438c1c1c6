//! Round loop, schemes, metrics, and sweeps.
//!
//! One experiment is a seeded, deterministic trajectory: every random draw
//! comes from a stream keyed by (seed, domain, round, device), so identical
//! configs reproduce identical metrics bytes, and the additive noise can be
//! re-seeded independently of everything else via `noise_seed`.
//!
//! Every scheme runs the same loop with specific stages swapped for naive
//! counterparts; the per-round [`RoundTrace`] records which paths executed
//! so reductions can be asserted structurally. A round proceeds: apply the
//! previous round's queue and reputation outcomes (done at the previous
//! round's tail, which is equivalent); draw fading; compute local gradients;
//! from round `m0` identify and plan (or fall back to the scheme's naive
//! weights and partition); aggregate per cluster over the air; filter by
//! cosine similarity; step the model; record metrics.

pub mod output;
pub mod task;

use crate::aircomp::{aggregate, equivalent_noise_power, AggregateInput, ClusterAggregate};
use crate::analysis::one_step_bound;
use crate::channel::Channel;
use crate::config::{AttackKind, ConfigError, ExperimentConfig, Scheme};
use crate::filtering::{cosine_filter, global_update};
use crate::learning::clip_gradient;
use crate::planning::{contribution, plan_round, NoisePrice};
use crate::reputation::{
    estimate_p, normalize_contributions, select_absence_penalty, ReputationLedger, RoundEvent,
};
use crate::rng::{stream, Domain};
use output::{write_checkpoint, write_summary, Checkpoint, MetricsWriter};
use rand::seq::SliceRandom;
use serde::Serialize;
use std::path::PathBuf;
use std::time::Instant;
use task::Task;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("task setup failed: {0}")]
    Task(String),
    #[error("output error: {0}")]
    Io(#[from] std::io::Error),
}

/// One recorded round. The leading fields mirror the CSV columns; the rest
/// are in-memory diagnostics for bound checks and fairness audits.
#[derive(Debug, Clone)]
pub struct RoundMetrics {
    pub round: u64,
    pub accuracy: Option<f64>,
    pub loss: Option<f64>,
    /// Devices that added signal to a surviving cluster.
    pub participants: usize,
    pub surviving_clusters: usize,
    /// Per-coordinate variance of the summed aggregation noise over the
    /// surviving clusters.
    pub noise_power: f64,
    pub ident_precision: Option<f64>,
    pub ident_recall: Option<f64>,
    pub queue_max: f64,
    /// One-step expected-descent bound (quadratic task only); start-of-round
    /// quantities, whole-vector noise moment.
    pub drop_bound: Option<f64>,
    /// Not a CSV column: wall time is excluded from the determinism contract.
    pub wall_time_secs: f64,
    /// F(w) - F* after this round's update (quadratic only).
    pub suboptimality: Option<f64>,
    /// ||grad F||^2 before this round's update (quadratic only).
    pub full_grad_sq: Option<f64>,
    /// Planned weights for every device this round.
    pub alpha: Vec<f64>,
    /// Weights masked to devices that participated in surviving clusters.
    pub alpha_survived: Vec<f64>,
    /// Normalized contributions used for queues and reputations.
    pub gamma_bar: Vec<f64>,
    /// Squared clipped local gradient norms (what compliant devices send).
    pub grad_sq: Vec<f64>,
    pub max_tx_power: f64,
    /// Largest transmit power among non-Byzantine participants this round.
    pub max_honest_tx_power: f64,
    pub stepped: bool,
    pub flagged: Vec<usize>,
}

/// Which code paths a round took; reductions are asserted against this.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RoundTrace {
    pub planned: bool,
    pub random_clustering: bool,
    pub single_cluster: bool,
    pub filtered: bool,
    pub uniform_weights: bool,
    pub attack_suppressed: bool,
    pub noise_free: bool,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct Confusion {
    pub true_positive: usize,
    pub false_positive: usize,
    pub false_negative: usize,
    pub true_negative: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub scheme: Scheme,
    pub seed: u64,
    pub noise_seed: u64,
    pub rounds_run: u64,
    pub final_loss: Option<f64>,
    pub final_accuracy: Option<f64>,
    /// Ground-truth attacker indices (seed-derived, shared across schemes).
    pub byzantine: Vec<usize>,
    pub identified: Vec<usize>,
    pub confusion: Confusion,
    pub p_hat: Option<f64>,
    pub absence_penalty: Option<f64>,
    /// True when the configured q_hat made the penalty interval empty and
    /// the q_hat = 0 rule was used instead.
    pub penalty_fallback: bool,
    pub fairness_b: f64,
    pub degraded_rounds: u64,
    pub fallback_rounds: u64,
    pub skipped_rounds: u64,
    pub mean_participants: f64,
    pub max_tx_power: f64,
    pub max_honest_tx_power: f64,
    pub wall_time_secs: f64,
    pub config: ExperimentConfig,
}

pub struct RunOutput {
    pub metrics: Vec<RoundMetrics>,
    pub traces: Vec<RoundTrace>,
    pub summary: Summary,
    pub final_w: Vec<f64>,
    pub initial_suboptimality: Option<f64>,
}

#[derive(Debug, Clone, Copy)]
struct SchemeFlags {
    filter: bool,
    planning: bool,
    identification: bool,
    random_every_round: bool,
    ideal: bool,
}

fn scheme_flags(s: Scheme) -> SchemeFlags {
    match s {
        Scheme::Fedsac => SchemeFlags {
            filter: true,
            planning: true,
            identification: true,
            random_every_round: false,
            ideal: false,
        },
        Scheme::Ideal => SchemeFlags {
            filter: false,
            planning: false,
            identification: false,
            random_every_round: false,
            ideal: true,
        },
        Scheme::NonRobust => SchemeFlags {
            filter: false,
            planning: true,
            identification: true,
            random_every_round: false,
            ideal: false,
        },
        Scheme::RandomClustering => SchemeFlags {
            filter: true,
            planning: false,
            identification: true,
            random_every_round: true,
            ideal: false,
        },
        Scheme::NoAdaptiveWeighting => SchemeFlags {
            filter: true,
            planning: false,
            identification: true,
            random_every_round: false,
            ideal: false,
        },
    }
}

fn cut_blocks(order: &[usize], n: usize, kbar: usize) -> Vec<Vec<usize>> {
    (0..n)
        .map(|i| {
            let mut block = order[i * kbar..(i + 1) * kbar].to_vec();
            block.sort_unstable();
            block
        })
        .collect()
}

/// Seeded uniform partition into `n` blocks of `kbar`, keyed by round.
fn random_clusters(seed: u64, round: u64, devices: usize, n: usize, kbar: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..devices).collect();
    order.shuffle(&mut stream(seed, Domain::InitClusters, round, 0));
    cut_blocks(&order, n, kbar)
}

/// Consecutive blocks of the descending alpha-over-gain order, flagged
/// devices banded last so they pool into tail blocks.
fn sequential_uniform_clusters(
    alpha: &[f64],
    hbeta: &[f64],
    flagged: &[bool],
    n: usize,
    kbar: usize,
) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..alpha.len()).collect();
    order.sort_unstable_by(|&a, &b| {
        u8::from(flagged[a]).cmp(&u8::from(flagged[b])).then_with(|| {
            let cost = |k: usize| alpha[k] / hbeta[k].max(f64::MIN_POSITIVE);
            cost(b)
                .partial_cmp(&cost(a))
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        })
    });
    cut_blocks(&order, n, kbar)
}

struct Engine {
    cfg: ExperimentConfig,
    flags: SchemeFlags,
    task: Task,
    channel: Channel,
    price: Option<NoisePrice>,
    ledger: ReputationLedger,
    w: Vec<f64>,
    initial_subopt: Option<f64>,
    /// Ground-truth attacker placement; behavior is suppressed under ideal.
    byz: Vec<bool>,
    byz_idx: Vec<usize>,
    flagged: Vec<bool>,
    identified: Vec<usize>,
    penalty: Option<f64>,
    p_hat: Option<f64>,
    penalty_fallback: bool,
    degraded_rounds: u64,
    fallback_rounds: u64,
    skipped_rounds: u64,
    max_tx_power: f64,
    max_honest_tx_power: f64,
    fairness_b: f64,
}

impl Engine {
    fn new(cfg: ExperimentConfig) -> Result<Engine, RunError> {
        cfg.validate()?;
        let devices = cfg.fleet.devices;
        let flags = scheme_flags(cfg.scheme);

        let m = cfg.fleet.byzantine;
        let byz_idx: Vec<usize> = if m > 0 {
            let mut rng = stream(cfg.seed, Domain::Attack, u64::MAX, 0);
            let mut picked = rand::seq::index::sample(&mut rng, devices, m).into_vec();
            picked.sort_unstable();
            picked
        } else {
            Vec::new()
        };
        let mut byz = vec![false; devices];
        for &k in &byz_idx {
            byz[k] = true;
        }
        // Ideal suppresses the attack: every device behaves honestly.
        let byz_effective = if flags.ideal { vec![false; devices] } else { byz.clone() };

        let task = Task::new(&cfg, &byz_effective).map_err(RunError::Task)?;
        if !flags.ideal && cfg.training.eta * task.smoothness >= 1.0 {
            return Err(RunError::Task(format!(
                "eta = {} is not below 1/L for smoothness L = {}; contribution scores need eta < 1/L",
                cfg.training.eta, task.smoothness
            )));
        }
        let price = if flags.planning {
            // The price derives from the descent bound, whose noise term is
            // the second moment of the whole aggregated vector: model
            // dimension times the per-coordinate channel variance.
            Some(
                NoisePrice::new(
                    cfg.weighting.v,
                    task.smoothness,
                    cfg.training.eta,
                    task.dim() as f64 * cfg.channel.sigma2,
                    cfg.training.g_bound,
                    cfg.channel.p_max(),
                )
                .map_err(|e| RunError::Task(e.to_string()))?,
            )
        } else {
            None
        };

        let mut ch_cfg = cfg.channel.clone();
        if flags.ideal {
            ch_cfg.sigma2 = 0.0;
            ch_cfg.gamma_th = 0.0;
        }
        let channel = Channel::from_config(&ch_cfg, devices, cfg.seed);

        let w = task.init_model(cfg.seed);
        let initial_subopt = task.suboptimality(&w);
        let penalty = match cfg.defense.absence_penalty {
            crate::config::AutoOr::Value(v) => Some(v),
            crate::config::AutoOr::Auto(_) => None,
        };
        let fairness_b = cfg.fairness_b();
        Ok(Engine {
            byz: byz_effective,
            byz_idx,
            flags,
            task,
            channel,
            price,
            ledger: ReputationLedger::new(devices),
            w,
            initial_subopt,
            flagged: vec![false; devices],
            identified: Vec::new(),
            penalty,
            p_hat: None,
            penalty_fallback: false,
            degraded_rounds: 0,
            fallback_rounds: 0,
            skipped_rounds: 0,
            max_tx_power: 0.0,
            max_honest_tx_power: 0.0,
            fairness_b,
            cfg,
        })
    }

    fn identification_active(&self) -> bool {
        self.flags.identification && self.cfg.fleet.byzantine > 0
    }

    fn run_round(&mut self, m: u64, rounds: u64) -> (RoundMetrics, RoundTrace) {
        let t0 = Instant::now();
        let cfg = &self.cfg;
        let devices = cfg.fleet.devices;
        let n = cfg.fleet.clusters;
        let kbar = cfg.cluster_size();
        let g_bound = cfg.training.g_bound;
        let eta = cfg.training.eta;
        let m0 = cfg.defense.m0;

        let fading = self.channel.sample(cfg.seed, m);

        // Local gradients, clipped to the transmit norm bound.
        let mut clipped: Vec<Vec<f64>> = (0..devices)
            .map(|k| self.task.local_grad(k, &self.w, m, cfg.seed))
            .collect();
        for g in clipped.iter_mut() {
            clip_gradient(g, g_bound);
        }
        let grad_sq: Vec<f64> = clipped.iter().map(|g| crate::util::norm_sq(g)).collect();

        // Fabricated attacker reports; honest devices transmit their
        // clipped gradients.
        let fabricated: Vec<(usize, Vec<f64>)> = {
            let honest: Vec<&[f64]> = (0..devices)
                .filter(|&k| !self.byz[k])
                .map(|k| clipped[k].as_slice())
                .collect();
            (0..devices)
                .filter(|&k| self.byz[k])
                .map(|k| {
                    let mut rng = stream(cfg.seed, Domain::Attack, m, k as u64);
                    (k, crate::adversary::fabricate(&cfg.attack, &honest, &clipped[k], &mut rng))
                })
                .collect()
        };
        let mut tx = clipped;
        for (k, g) in fabricated {
            tx[k] = g;
        }

        // Identification runs from m0 on the ledger accumulated so far.
        if self.identification_active() && m >= m0 {
            if self.penalty.is_none() {
                let p = estimate_p(
                    self.ledger.exclusion_rate(),
                    devices,
                    cfg.fleet.byzantine,
                    kbar,
                );
                self.p_hat = Some(p);
                let theta = select_absence_penalty(p, cfg.defense.q_hat).unwrap_or_else(|_| {
                    self.penalty_fallback = true;
                    select_absence_penalty(p, 0.0).expect("p_hat is clamped positive")
                });
                self.penalty = Some(theta);
            }
            self.identified = self
                .ledger
                .identify(cfg.fleet.byzantine, self.penalty.expect("set above"));
            self.flagged = vec![false; devices];
            for &k in &self.identified {
                self.flagged[k] = true;
            }
        }

        // Contributions from the reported norms. Reports exist from m0;
        // before that gamma is zero and the normalization degenerates to
        // uniform over the reporting-eligible set.
        let reporting = !self.flags.ideal && m >= m0;
        let gamma: Vec<f64> = if reporting {
            (0..devices)
                .map(|k| {
                    let rep_sq = if self.byz[k]
                        && matches!(cfg.attack.kind, AttackKind::SignFlip | AttackKind::GaussianNoise)
                    {
                        g_bound * g_bound
                    } else {
                        grad_sq[k]
                    };
                    contribution(rep_sq, self.task.delta[k], self.task.smoothness, eta)
                        .expect("eta < 1/L checked at construction")
                })
                .collect()
        } else {
            vec![0.0; devices]
        };
        let report_mask: Vec<bool> = (0..devices)
            .map(|k| fading.active[k] && !self.flagged[k])
            .collect();
        let gamma_bar = normalize_contributions(&gamma, &report_mask);

        // Weights, partition, schedule.
        let mut planned = false;
        let mut randomized = false;
        let (alpha, clusters, scheduled): (Vec<f64>, Vec<Vec<usize>>, Vec<bool>) = if self.flags.ideal
        {
            (
                vec![1.0 / devices as f64; devices],
                vec![(0..devices).collect()],
                vec![true],
            )
        } else if self.flags.planning && m >= m0 {
            planned = true;
            let phi: Vec<f64> = (0..devices)
                .map(|k| cfg.weighting.v * gamma[k] + self.ledger.queues[k] * gamma_bar[k])
                .collect();
            let price = self.price.as_ref().expect("planning schemes carry a price");
            let varpi: Vec<f64> = (0..devices)
                .map(|k| price.price(fading.h[k].modulus().max(1e-150), self.channel.beta[k]))
                .collect();
            let hbeta: Vec<f64> = (0..devices)
                .map(|k| fading.h[k].modulus() * self.channel.beta[k])
                .collect();
            let plan = plan_round(
                &phi,
                &varpi,
                &hbeta,
                &fading.active,
                &self.flagged,
                n,
                kbar,
                &cfg.weighting,
                m,
            );
            if plan.report.degraded {
                self.degraded_rounds += 1;
            }
            if plan.fallback {
                self.fallback_rounds += 1;
            }
            (plan.alpha, plan.clusters, plan.scheduled)
        } else {
            // Init phase for every non-ideal scheme, every round for the
            // naive baselines: uniform weights over unflagged devices.
            let open = devices - self.identified.len();
            let alpha: Vec<f64> = (0..devices)
                .map(|k| if self.flagged[k] { 0.0 } else { 1.0 / open.max(1) as f64 })
                .collect();
            let clusters = if self.flags.random_every_round || m < m0 {
                randomized = true;
                random_clusters(cfg.seed, m, devices, n, kbar)
            } else {
                let hbeta: Vec<f64> = (0..devices)
                    .map(|k| fading.h[k].modulus() * self.channel.beta[k])
                    .collect();
                sequential_uniform_clusters(&alpha, &hbeta, &self.flagged, n, kbar)
            };
            let scheduled: Vec<bool> = clusters
                .iter()
                .map(|c| c.iter().all(|&k| !self.flagged[k]))
                .collect();
            (alpha, clusters, scheduled)
        };

        // Over-the-air aggregation on the scheduled blocks only; an
        // unscheduled block gets no resources, so it is passed empty.
        let tx_clusters: Vec<Vec<usize>> = clusters
            .iter()
            .zip(&scheduled)
            .map(|(c, &s)| if s { c.clone() } else { Vec::new() })
            .collect();
        let input = AggregateInput {
            clusters: &tx_clusters,
            alpha: &alpha,
            reports: &tx,
            byzantine: &self.byz,
            bypass_scaling: cfg.attack.bypass_scaling,
            g_bound,
        };
        let aggregates = aggregate(&self.channel, &fading, &input, cfg.noise_seed(), m);

        let mut round_power = 0.0_f64;
        let mut honest_power = 0.0_f64;
        for agg in aggregates.iter().flatten() {
            for &k in &agg.participants {
                let p = if self.byz[k] && cfg.attack.bypass_scaling {
                    self.channel.p_max
                } else {
                    let rho =
                        agg.zeta * alpha[k] / (fading.h[k].modulus() * self.channel.beta[k]);
                    let sent_sq = crate::util::norm_sq(&tx[k]).min(g_bound * g_bound);
                    rho * rho * sent_sq
                };
                round_power = round_power.max(p);
                if !self.byz[k] {
                    honest_power = honest_power.max(p);
                }
            }
        }
        self.max_tx_power = self.max_tx_power.max(round_power);
        self.max_honest_tx_power = self.max_honest_tx_power.max(honest_power);

        // Cosine screening against the clean reference gradient.
        let full_grad_sq = self.task.full_grad_sq(&self.w);
        let survivors: Vec<usize> = if self.flags.filter {
            let root = self.task.root_grad(&self.w);
            cosine_filter(&aggregates, &root, cfg.defense.rho).survivors
        } else {
            aggregates
                .iter()
                .enumerate()
                .filter_map(|(i, a)| a.as_ref().map(|_| i))
                .collect()
        };
        let stepped = global_update(&mut self.w, eta, &aggregates, &survivors);
        if !stepped {
            self.skipped_rounds += 1;
        }

        // Fold outcomes into queues and reputations for the next round.
        let mut surviving = vec![false; clusters.len()];
        for &i in &survivors {
            surviving[i] = true;
        }
        let mut events = vec![RoundEvent::Idle; devices];
        for (i, agg) in aggregates.iter().enumerate() {
            let Some(agg) = agg else { continue };
            for &k in &agg.participants {
                events[k] = if surviving[i] {
                    RoundEvent::Participated
                } else {
                    RoundEvent::Excluded
                };
            }
        }
        self.ledger
            .record_round(&events, &alpha, &gamma_bar, self.fairness_b);

        let survivor_aggs: Vec<&ClusterAggregate> =
            survivors.iter().map(|&i| aggregates[i].as_ref().unwrap()).collect();
        let noise_power = equivalent_noise_power(&self.channel, survivor_aggs.iter().copied());
        let participants: usize = survivor_aggs.iter().map(|a| a.participants.len()).sum();
        let alpha_survived: Vec<f64> = (0..devices)
            .map(|k| {
                if events[k] == RoundEvent::Participated {
                    alpha[k]
                } else {
                    0.0
                }
            })
            .collect();

        let drop_bound = match full_grad_sq {
            Some(fsq) if eta * self.task.smoothness < 1.0 => Some(one_step_bound(
                &alpha_survived,
                &grad_sq,
                &self.task.delta,
                fsq,
                self.task.dim() as f64 * noise_power,
                eta,
                self.task.smoothness,
            )),
            _ => None,
        };

        let evaluate = m % cfg.eval_every == 0 || m + 1 == rounds;
        let loss = evaluate.then(|| self.task.loss(&self.w));
        let accuracy = if evaluate { self.task.accuracy(&self.w) } else { None };

        let (precision, recall) = if self.identified.is_empty() {
            (None, None)
        } else {
            let tp = self.identified.iter().filter(|&&k| self.byz_idx.contains(&k)).count();
            (
                Some(tp as f64 / self.identified.len() as f64),
                (!self.byz_idx.is_empty()).then(|| tp as f64 / self.byz_idx.len() as f64),
            )
        };

        let metrics = RoundMetrics {
            round: m,
            accuracy,
            loss,
            participants,
            surviving_clusters: survivors.len(),
            noise_power,
            ident_precision: precision,
            ident_recall: recall,
            queue_max: self.ledger.queues.iter().cloned().fold(0.0, f64::max),
            drop_bound,
            wall_time_secs: t0.elapsed().as_secs_f64(),
            suboptimality: self.task.suboptimality(&self.w),
            full_grad_sq,
            alpha,
            alpha_survived,
            gamma_bar,
            grad_sq,
            max_tx_power: round_power,
            max_honest_tx_power: honest_power,
            stepped,
            flagged: self.identified.clone(),
        };
        let trace = RoundTrace {
            planned,
            random_clustering: randomized,
            single_cluster: self.flags.ideal,
            filtered: self.flags.filter,
            uniform_weights: !planned,
            attack_suppressed: self.flags.ideal,
            noise_free: self.channel.sigma2 == 0.0,
        };
        (metrics, trace)
    }

    fn checkpoint(&self, round: u64) -> Checkpoint {
        Checkpoint {
            round,
            queues: self.ledger.queues.clone(),
            reputation: self.ledger.reputation(self.penalty.unwrap_or(1.0)),
            identified: self.identified.clone(),
            p_hat: self.p_hat,
            absence_penalty: self.penalty,
        }
    }

    fn finish(&self, metrics: &[RoundMetrics], wall: f64) -> Summary {
        let (final_loss, final_accuracy) = match metrics.last() {
            Some(last) => (last.loss, last.accuracy),
            // A zero-round run still reports the initial model.
            None => (Some(self.task.loss(&self.w)), self.task.accuracy(&self.w)),
        };
        let tp = self.identified.iter().filter(|&&k| self.byz_idx.contains(&k)).count();
        let fp = self.identified.len() - tp;
        let fnn = self.byz_idx.len() - tp;
        let devices = self.cfg.fleet.devices;
        let mean_participants = if metrics.is_empty() {
            0.0
        } else {
            metrics.iter().map(|m| m.participants as f64).sum::<f64>() / metrics.len() as f64
        };
        Summary {
            scheme: self.cfg.scheme,
            seed: self.cfg.seed,
            noise_seed: self.cfg.noise_seed(),
            rounds_run: metrics.len() as u64,
            final_loss,
            final_accuracy,
            byzantine: self.byz_idx.clone(),
            identified: self.identified.clone(),
            confusion: Confusion {
                true_positive: tp,
                false_positive: fp,
                false_negative: fnn,
                true_negative: devices - tp - fp - fnn,
            },
            p_hat: self.p_hat,
            absence_penalty: self.penalty,
            penalty_fallback: self.penalty_fallback,
            fairness_b: self.fairness_b,
            degraded_rounds: self.degraded_rounds,
            fallback_rounds: self.fallback_rounds,
            skipped_rounds: self.skipped_rounds,
            mean_participants,
            max_tx_power: self.max_tx_power,
            max_honest_tx_power: self.max_honest_tx_power,
            wall_time_secs: wall,
            config: self.cfg.clone(),
        }
    }
}

/// Runs one experiment to completion. When `output.dir` is set, metrics.csv
/// is appended and flushed per round, summary.json lands at the end, and
/// checkpoint.json is overwritten each round if enabled.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutput, RunError> {
    let t_start = Instant::now();
    let mut engine = Engine::new(cfg.clone())?;
    let rounds = cfg.effective_rounds();
    let out_dir = cfg.output.dir.as_ref().map(PathBuf::from);
    let mut csv = match &out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            Some(MetricsWriter::create(&dir.join("metrics.csv"))?)
        }
        None => None,
    };
    let mut metrics = Vec::with_capacity(rounds as usize);
    let mut traces = Vec::with_capacity(rounds as usize);
    for m in 0..rounds {
        let (row, trace) = engine.run_round(m, rounds);
        if let Some(writer) = csv.as_mut() {
            writer.append(&row)?;
        }
        if cfg.output.checkpoint {
            if let Some(dir) = &out_dir {
                write_checkpoint(&dir.join("checkpoint.json"), &engine.checkpoint(m))?;
            }
        }
        metrics.push(row);
        traces.push(trace);
    }
    let summary = engine.finish(&metrics, t_start.elapsed().as_secs_f64());
    if let Some(dir) = &out_dir {
        write_summary(&dir.join("summary.json"), &summary)?;
    }
    Ok(RunOutput {
        metrics,
        traces,
        summary,
        final_w: engine.w,
        initial_suboptimality: engine.initial_subopt,
    })
}

/// Applies one `key=value` override through the config's serialized tree.
/// Keys are dotted paths (`fleet.clusters`, `attack.kind`); values parse as
/// bool, integer, float, or string, in that order.
pub fn apply_override(
    cfg: &ExperimentConfig,
    key: &str,
    value: &str,
) -> Result<ExperimentConfig, RunError> {
    let mut tree = serde_json::to_value(cfg).expect("config serializes");
    let mut parts: Vec<&str> = key.split('.').collect();
    let leaf = parts.pop().expect("key is non-empty");
    let mut cur = &mut tree;
    for part in parts {
        cur = cur
            .as_object_mut()
            .and_then(|o| o.get_mut(part))
            .ok_or_else(|| RunError::Task(format!("unknown config table in key: {key}")))?;
    }
    let obj = cur
        .as_object_mut()
        .ok_or_else(|| RunError::Task(format!("key does not address a table: {key}")))?;
    if !obj.contains_key(leaf) && !is_optional_field(key) {
        return Err(RunError::Task(format!("unknown config key: {key}")));
    }
    obj.insert(leaf.to_string(), parse_scalar(value));
    let cfg: ExperimentConfig = serde_json::from_value(tree)
        .map_err(|e| RunError::Task(format!("override {key}={value} does not fit the schema: {e}")))?;
    cfg.validate()?;
    Ok(cfg)
}

/// Optional fields are omitted from the serialized tree when unset, so their
/// absence is not evidence of a bad key.
fn is_optional_field(key: &str) -> bool {
    matches!(
        key,
        "noise_seed"
            | "resource_budget"
            | "output.dir"
            | "task.dim"
            | "task.train"
            | "task.test"
            | "task.batch"
            | "task.labels_per_device"
            | "task.root_fraction"
            | "task.idx_dir"
            | "task.hetero"
            | "weighting.dump_qp_dir"
    )
}

fn parse_scalar(s: &str) -> serde_json::Value {
    if let Ok(b) = s.parse::<bool>() {
        return b.into();
    }
    if let Ok(u) = s.parse::<u64>() {
        return u.into();
    }
    if let Ok(i) = s.parse::<i64>() {
        return i.into();
    }
    if let Ok(f) = s.parse::<f64>() {
        return f.into();
    }
    serde_json::Value::String(s.to_string())
}

pub struct SweepEntry {
    pub value: String,
    pub output: RunOutput,
}

#[derive(Serialize)]
struct SweepRow<'a> {
    key: &'a str,
    value: &'a str,
    rounds_run: u64,
    final_loss: Option<f64>,
    final_accuracy: Option<f64>,
}

/// Runs the base config once per value of `key`. With an output directory
/// configured, each run writes under `dir/<key>=<value>/` and a
/// sweep_summary.json table lands in the base directory.
pub fn sweep(
    base: &ExperimentConfig,
    key: &str,
    values: &[String],
) -> Result<Vec<SweepEntry>, RunError> {
    let mut entries = Vec::with_capacity(values.len());
    for value in values {
        let mut cfg = apply_override(base, key, value)?;
        if let Some(dir) = &base.output.dir {
            let sub = format!("{}={}", key.replace('.', "_"), value);
            cfg.output.dir = Some(
                PathBuf::from(dir)
                    .join(sub)
                    .to_string_lossy()
                    .into_owned(),
            );
        }
        let output = run_experiment(&cfg)?;
        entries.push(SweepEntry {
            value: value.clone(),
            output,
        });
    }
    if let Some(dir) = &base.output.dir {
        let rows: Vec<SweepRow> = entries
            .iter()
            .map(|e| SweepRow {
                key,
                value: &e.value,
                rounds_run: e.output.summary.rounds_run,
                final_loss: e.output.summary.final_loss,
                final_accuracy: e.output.summary.final_accuracy,
            })
            .collect();
        let path = PathBuf::from(dir).join("sweep_summary.json");
        std::fs::create_dir_all(dir)?;
        let text = serde_json::to_string_pretty(&rows).expect("rows serialize");
        std::fs::write(path, text + "\n")?;
    }
    Ok(entries)
}
