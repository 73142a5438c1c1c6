//! One gradient/eval interface over the three task kinds.
//!
//! The quadratic task exposes exact curvature constants and closed-form
//! global quantities; the supervised tasks (linear softmax, image MLP) work
//! from datasets and use a surrogate smoothness constant for planning, since
//! no honest Lipschitz bound exists for them. Deviation bounds come from the
//! task itself when exact, otherwise from checkpoint sampling.

use crate::analysis::estimate_delta;
use crate::config::{AttackKind, ExperimentConfig, TaskKind};
use crate::learning::data::{synth_features, synth_images, SynthImageParams};
use crate::learning::{
    idx, partition_non_iid, split_root, Arch, Dataset, Model, QuadraticTask,
};
use crate::rng::{stream, Domain};
use crate::util::norm_sq;
use std::path::Path;

const LINEAR_CLASSES: usize = 4;
const LINEAR_DIM: usize = 8;

pub struct Task {
    inner: Inner,
    /// Per-device deviation bounds, resolved from config or estimated.
    pub delta: Vec<f64>,
    /// Exact for the quadratic task; 0.5 / eta otherwise, fixing the descent
    /// discount 1 / (1 - L eta) at 2 when no curvature constant exists.
    pub smoothness: f64,
    pub strong_convexity: Option<f64>,
}

enum Inner {
    Quadratic(QuadraticTask),
    Supervised(Supervised),
}

struct Supervised {
    arch: Arch,
    locals: Vec<Dataset>,
    /// Relabeled local sets for label-flip attackers; `None` elsewhere.
    flipped: Vec<Option<Dataset>>,
    root: Dataset,
    test: Dataset,
    pooled: Dataset,
    batch: Option<usize>,
}

impl Supervised {
    fn model_at(&self, w: &[f64]) -> Model {
        Model {
            arch: self.arch,
            w: w.to_vec(),
        }
    }

    fn grad_on(&self, data: &Dataset, w: &[f64], idx: Option<&[usize]>) -> Vec<f64> {
        let model = self.model_at(w);
        let (xs, ys): (Vec<&[f64]>, Vec<usize>) = match idx {
            Some(picked) => (
                picked.iter().map(|&i| data.x[i].as_slice()).collect(),
                picked.iter().map(|&i| data.y[i]).collect(),
            ),
            None => (
                data.x.iter().map(|x| x.as_slice()).collect(),
                data.y.clone(),
            ),
        };
        model.loss_grad(&xs, &ys).1
    }

    fn device_data(&self, k: usize) -> &Dataset {
        self.flipped[k].as_ref().unwrap_or(&self.locals[k])
    }
}

impl Task {
    /// Builds the task for a run. `byz` marks devices whose local data is
    /// relabeled if the attack kind is label_flip; datasets, splits, and
    /// constants are otherwise attack-independent.
    pub fn new(cfg: &ExperimentConfig, byz: &[bool]) -> Result<Task, String> {
        let devices = cfg.fleet.devices;
        assert_eq!(byz.len(), devices);
        match cfg.task.kind {
            TaskKind::Quadratic => {
                let dim = cfg.task.dim.unwrap_or(20);
                let hetero = cfg.task.hetero.unwrap_or(0.5);
                let task = QuadraticTask::gen_random(devices, dim, hetero, cfg.seed);
                let delta = if cfg.training.delta.is_auto() {
                    task.delta.clone()
                } else {
                    vec![cfg.training.delta.value_or(0.0); devices]
                };
                Ok(Task {
                    smoothness: task.l,
                    strong_convexity: Some(task.mu),
                    delta,
                    inner: Inner::Quadratic(task),
                })
            }
            TaskKind::Linear | TaskKind::Image => {
                let sup = build_supervised(cfg, byz)?;
                let smoothness = 0.5 / cfg.training.eta;
                let delta = if cfg.training.delta.is_auto() {
                    estimate_supervised_delta(&sup, cfg)
                } else {
                    vec![cfg.training.delta.value_or(0.0); devices]
                };
                Ok(Task {
                    smoothness,
                    strong_convexity: None,
                    delta,
                    inner: Inner::Supervised(sup),
                })
            }
        }
    }

    pub fn dim(&self) -> usize {
        match &self.inner {
            Inner::Quadratic(q) => q.dim,
            Inner::Supervised(s) => s.arch.param_count(),
        }
    }

    pub fn init_model(&self, seed: u64) -> Vec<f64> {
        match &self.inner {
            Inner::Quadratic(q) => vec![0.0; q.dim],
            Inner::Supervised(s) => Model::init(s.arch, seed).w,
        }
    }

    /// Device k's local gradient at `w` for the given round. The quadratic
    /// task is full-batch by definition; supervised devices subsample their
    /// local set when a batch size is configured, with the draw keyed by
    /// (round, device) so replicates over noise seeds keep identical batches.
    pub fn local_grad(&self, k: usize, w: &[f64], round: u64, seed: u64) -> Vec<f64> {
        match &self.inner {
            Inner::Quadratic(q) => q.local_grad(k, w),
            Inner::Supervised(s) => {
                let data = s.device_data(k);
                match s.batch {
                    Some(b) if b < data.len() => {
                        let mut rng = stream(seed, Domain::Batch, round, k as u64);
                        let mut picked =
                            rand::seq::index::sample(&mut rng, data.len(), b).into_vec();
                        picked.sort_unstable();
                        s.grad_on(data, w, Some(&picked))
                    }
                    _ => s.grad_on(data, w, None),
                }
            }
        }
    }

    /// The server's clean reference gradient: exact global gradient for the
    /// quadratic task, root-split gradient for supervised tasks.
    pub fn root_grad(&self, w: &[f64]) -> Vec<f64> {
        match &self.inner {
            Inner::Quadratic(q) => q.global_grad(w),
            Inner::Supervised(s) => s.grad_on(&s.root, w, None),
        }
    }

    /// Global training loss.
    pub fn loss(&self, w: &[f64]) -> f64 {
        match &self.inner {
            Inner::Quadratic(q) => q.global_loss(w),
            Inner::Supervised(s) => {
                let model = s.model_at(w);
                let xs: Vec<&[f64]> = s.pooled.x.iter().map(|x| x.as_slice()).collect();
                model.loss(&xs, &s.pooled.y)
            }
        }
    }

    /// Held-out accuracy; the quadratic task has none.
    pub fn accuracy(&self, w: &[f64]) -> Option<f64> {
        match &self.inner {
            Inner::Quadratic(_) => None,
            Inner::Supervised(s) => Some(s.model_at(w).accuracy(&s.test.x, &s.test.y)),
        }
    }

    /// F(w) - F*, available only where F* is known in closed form.
    pub fn suboptimality(&self, w: &[f64]) -> Option<f64> {
        match &self.inner {
            Inner::Quadratic(q) => Some(q.suboptimality(w)),
            Inner::Supervised(_) => None,
        }
    }

    /// Squared norm of the exact global gradient, when available.
    pub fn full_grad_sq(&self, w: &[f64]) -> Option<f64> {
        match &self.inner {
            Inner::Quadratic(q) => Some(norm_sq(&q.global_grad(w))),
            Inner::Supervised(_) => None,
        }
    }

    pub fn is_quadratic(&self) -> bool {
        matches!(self.inner, Inner::Quadratic(_))
    }

    pub fn quadratic(&self) -> Option<&QuadraticTask> {
        match &self.inner {
            Inner::Quadratic(q) => Some(q),
            Inner::Supervised(_) => None,
        }
    }
}

fn build_supervised(cfg: &ExperimentConfig, byz: &[bool]) -> Result<Supervised, String> {
    let devices = cfg.fleet.devices;
    let (arch, train, test) = match cfg.task.kind {
        TaskKind::Linear => {
            let dim = cfg.task.dim.unwrap_or(LINEAR_DIM);
            let n_train = cfg.task.train.unwrap_or(800);
            let n_test = cfg.task.test.unwrap_or(400);
            let train = synth_features(n_train, dim, LINEAR_CLASSES, cfg.seed);
            let test = synth_features(n_test, dim, LINEAR_CLASSES, cfg.seed.wrapping_add(1));
            (
                Arch::Linear {
                    dim_in: dim,
                    classes: LINEAR_CLASSES,
                },
                train,
                test,
            )
        }
        TaskKind::Image => {
            let (train, test) = match &cfg.task.idx_dir {
                Some(dir) => load_idx_dir(Path::new(dir))?,
                None => {
                    let p = SynthImageParams {
                        train: cfg.task.train.unwrap_or(2000),
                        test: cfg.task.test.unwrap_or(1000),
                        ..Default::default()
                    };
                    synth_images(p, cfg.seed)
                }
            };
            if train.x.first().map_or(0, |x| x.len()) != 784 {
                return Err("image task expects 28x28 inputs".into());
            }
            (Arch::image_mlp(), train, test)
        }
        TaskKind::Quadratic => unreachable!("supervised builder"),
    };
    let fraction = cfg.task.root_fraction.unwrap_or(0.01);
    let (root, rest) = split_root(&train, fraction, cfg.seed);
    let lpd = cfg.task.labels_per_device.unwrap_or(2);
    let locals = partition_non_iid(&rest, devices, lpd, cfg.seed)?;
    let pooled = {
        let mut x = Vec::new();
        let mut y = Vec::new();
        for part in &locals {
            x.extend(part.x.iter().cloned());
            y.extend(part.y.iter().cloned());
        }
        Dataset {
            x,
            y,
            classes: train.classes,
        }
    };
    let flip = cfg.attack.kind == AttackKind::LabelFlip;
    let flipped = (0..devices)
        .map(|k| (flip && byz[k]).then(|| crate::adversary::flip_labels(&locals[k])))
        .collect();
    Ok(Supervised {
        arch,
        locals,
        flipped,
        root,
        test,
        pooled,
        batch: cfg.task.batch,
    })
}

fn load_idx_dir(dir: &Path) -> Result<(Dataset, Dataset), String> {
    let pair = |stem: &str| {
        idx::load_pair(
            &dir.join(format!("{stem}-images.idx")),
            &dir.join(format!("{stem}-labels.idx")),
        )
        .map_err(|e| format!("loading {stem} split from {}: {e}", dir.display()))
    };
    Ok((pair("train")?, pair("test")?))
}

/// Deviation bound for tasks without closed-form constants: the sampled
/// supremum of ||local - global|| over three early checkpoints, inflated by
/// the estimator's safety margin. Honest local data is used even for
/// attackers, since delta models heterogeneity, not sabotage.
///
/// The per-device estimates are pooled into one uniform bound (their max).
/// A valid bound for every device is valid for the worst one, and the
/// per-device sampling noise would otherwise masquerade as contribution
/// differences in the weighting objective.
fn estimate_supervised_delta(sup: &Supervised, cfg: &ExperimentConfig) -> Vec<f64> {
    let w0 = Model::init(sup.arch, cfg.seed).w;
    let g0 = sup.grad_on(&sup.pooled, &w0, None);
    let eta = cfg.training.eta;
    let step = |w: &[f64], t: f64| -> Vec<f64> {
        w.iter().zip(&g0).map(|(wi, gi)| wi - t * eta * gi).collect()
    };
    let checkpoints = vec![w0.clone(), step(&w0, 1.0), step(&w0, 2.0)];
    let per_device = estimate_delta(
        cfg.fleet.devices,
        &checkpoints,
        |k, w| sup.grad_on(&sup.locals[k], w, None),
        |w| sup.grad_on(&sup.pooled, w, None),
    );
    let bound = per_device.iter().cloned().fold(0.0, f64::max);
    vec![bound; cfg.fleet.devices]
}
