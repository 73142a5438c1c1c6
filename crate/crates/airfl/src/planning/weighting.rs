//! Joint aggregation-weight and clustering optimization via a penalized
//! convex-concave procedure.
//!
//! The round planner wants weights alpha on the simplex and an assignment of
//! devices to equal-size clusters maximizing
//!
//! ```text
//! sum_{i,k} phi_k alpha_k e_ik - sum_i u_i^2
//! ```
//!
//! where e_ik picks the cluster, u_i is cluster i's noise level, and the
//! ordering constraints u_i <= l_{i-1} <= sqrt(varpi_k) alpha_k for members
//! of cluster i-1 force consecutive clusters along the sorted equivalent
//! channels. Binary e and the bilinear products alpha e make this nonconvex;
//! each outer iteration replaces every product a*b by its convex upper bound
//!
//! ```text
//! U(a,b) = (a+b)^2/4 - (a0-b0)(a-b)/2 + (a0-b0)^2/4
//! ```
//!
//! or concave lower bound
//!
//! ```text
//! L(a,b) = (a0+b0)(a+b)/2 - (a0+b0)^2/4 - (a-b)^2/4
//! ```
//!
//! tangent at the previous iterate (a0, b0), relaxes e(e-1) <= 0 with
//! slacks p, and solves the resulting convex QP while a growing penalty
//! drives p to zero. The final weights are rounded onto an explicit
//! partition by sorted consecutive blocks and polished by alternating exact
//! per-partition weight solves with re-sorting.

use super::qp::{Equality, Inequality, Options, Problem, QuadTerm, Status};
use super::{sequential_cluster, true_objective};
use crate::config::WeightingConfig;

/// Concave lower bound on `a * b`, tangent at `(a0, b0)`.
pub fn lower_bilinear(a0: f64, b0: f64, a: f64, b: f64) -> f64 {
    0.5 * (a0 + b0) * (a + b) - 0.25 * (a0 + b0) * (a0 + b0) - 0.25 * (a - b) * (a - b)
}

/// Convex upper bound on `a * b`, tangent at `(a0, b0)`.
pub fn upper_bilinear(a0: f64, b0: f64, a: f64, b: f64) -> f64 {
    0.25 * (a + b) * (a + b) - 0.5 * (a0 - b0) * (a - b) + 0.25 * (a0 - b0) * (a0 - b0)
}

/// Outcome accounting of one optimizer invocation.
#[derive(Debug, Clone, PartialEq)]
pub struct PccpReport {
    /// Outer convexification iterations performed (0 for the one-cluster
    /// shortcut, which is already convex).
    pub iterations: usize,
    /// Binary-relaxation slack mass at the accepted iterate.
    pub penalty_l1: f64,
    /// True when the iteration cap was hit before the slack tolerance.
    pub degraded: bool,
    /// Planning objective of the returned weights on the returned partition.
    pub objective: f64,
}

/// Variable layout of the surrogate QP: weights, cluster noise levels and
/// lower edges, assignment relaxations, then binary slacks.
#[derive(Debug, Clone, Copy)]
struct Layout {
    d: usize,
    nbar: usize,
}

impl Layout {
    fn total(self) -> usize {
        self.d + 2 * self.nbar + 2 * self.nbar * self.d
    }
    fn alpha(self, k: usize) -> usize {
        k
    }
    fn u(self, i: usize) -> usize {
        self.d + i
    }
    fn l(self, i: usize) -> usize {
        self.d + self.nbar + i
    }
    fn e(self, i: usize, k: usize) -> usize {
        self.d + 2 * self.nbar + i * self.d + k
    }
    fn p(self, i: usize, k: usize) -> usize {
        self.d + 2 * self.nbar + self.nbar * self.d + i * self.d + k
    }
}

/// Values the surrogate rows are linearized around.
///
/// `e` is the true relaxed iterate and anchors the bilinear tangents. `eb`
/// anchors the binary-enforcement rows instead: the tangent inequality
/// e^2 >= 2 e0 e - e0^2 holds for every anchor, so `eb` may be nudged
/// toward each device's leading cluster. Without the nudge an iterate
/// stalled at e = 1/2 zeroes the row's coefficient on e and the penalty
/// loses its grip.
struct Linearization {
    alpha: Vec<f64>,
    e: Vec<f64>,
    eb: Vec<f64>,
    l: Vec<f64>,
}

/// How far binary-row anchors step toward the rank-leading cluster.
const BINARY_NUDGE: f64 = 0.05;

/// Builds the convexified surrogate QP around `lin`.
///
/// `phis` and `sw` are the normalized scores phi / s and sqrt(varpi / s);
/// `tau` is the current penalty weight on the binary slacks.
fn build_surrogate(phis: &[f64], sw: &[f64], lin: &Linearization, kbar: usize, tau: f64) -> Problem {
    let lay = Layout {
        d: phis.len(),
        nbar: lin.l.len(),
    };
    let (d, nbar) = (lay.d, lay.nbar);
    let mut prob = Problem::new(lay.total());

    for i in 0..nbar {
        prob.add_obj_quad(QuadTerm {
            kappa: 1.0,
            coeffs: vec![(lay.u(i), 1.0)],
            shift: 0.0,
        });
    }
    for i in 0..nbar {
        for k in 0..d {
            let (a, e) = (lay.alpha(k), lay.e(i, k));
            let (a0, e0) = (lin.alpha[k], lin.e[i * d + k]);
            let f = phis[k];
            if f >= 0.0 {
                // Harvest maximized: replace alpha e by its lower bound, so
                // the minimized objective gains f/4 (alpha - e)^2 and the
                // tangent's linear part.
                if f > 0.0 {
                    prob.add_obj_quad(QuadTerm {
                        kappa: 0.25 * f,
                        coeffs: vec![(a, 1.0), (e, -1.0)],
                        shift: 0.0,
                    });
                }
                prob.add_linear(a, -0.5 * f * (a0 + e0));
                prob.add_linear(e, -0.5 * f * (a0 + e0));
            } else {
                // Negative scores want small alpha e: upper-bound it.
                let dn = a0 - e0;
                prob.add_obj_quad(QuadTerm {
                    kappa: -0.25 * f,
                    coeffs: vec![(a, 1.0), (e, 1.0)],
                    shift: 0.0,
                });
                prob.add_linear(a, 0.5 * f * dn);
                prob.add_linear(e, -0.5 * f * dn);
            }
            prob.add_linear(lay.p(i, k), tau);
        }
    }

    for i in 0..nbar {
        for k in 0..d {
            let (a, e, u, l, p) = (
                lay.alpha(k),
                lay.e(i, k),
                lay.u(i),
                lay.l(i),
                lay.p(i, k),
            );
            let (a0, e0, l0) = (lin.alpha[k], lin.e[i * d + k], lin.l[i]);
            let w = sw[k];
            // Cluster level dominates members: sqrt(varpi) U(alpha, e) <= u.
            let dn = a0 - e0;
            prob.add_ineq(Inequality {
                quad: Some(QuadTerm {
                    kappa: 0.25 * w,
                    coeffs: vec![(a, 1.0), (e, 1.0)],
                    shift: 0.0,
                }),
                linear: vec![(a, -0.5 * w * dn), (e, 0.5 * w * dn), (u, -1.0)],
                rhs: -0.25 * w * dn * dn,
            });
            // Members dominate the lower edge: U(l, e) <= sqrt(varpi) alpha.
            let dl = l0 - e0;
            prob.add_ineq(Inequality {
                quad: Some(QuadTerm {
                    kappa: 0.25,
                    coeffs: vec![(l, 1.0), (e, 1.0)],
                    shift: 0.0,
                }),
                linear: vec![(l, -0.5 * dl), (e, 0.5 * dl), (a, -w)],
                rhs: -0.25 * dl * dl,
            });
            // Binary relaxation: (2 eb - 1) e - eb^2 >= -p, p >= 0.
            let eb = lin.eb[i * d + k];
            prob.add_ineq(Inequality {
                quad: None,
                linear: vec![(e, -(2.0 * eb - 1.0)), (p, -1.0)],
                rhs: -eb * eb,
            });
            prob.add_ineq(Inequality {
                quad: None,
                linear: vec![(p, -1.0)],
                rhs: 0.0,
            });
            // Box on the relaxed assignment.
            prob.add_ineq(Inequality {
                quad: None,
                linear: vec![(e, -1.0)],
                rhs: 0.0,
            });
            prob.add_ineq(Inequality {
                quad: None,
                linear: vec![(e, 1.0)],
                rhs: 1.0,
            });
        }
    }
    // Clusters stay ordered along the sorted channel axis.
    for i in 1..nbar {
        prob.add_ineq(Inequality {
            quad: None,
            linear: vec![(lay.u(i), 1.0), (lay.l(i - 1), -1.0)],
            rhs: 0.0,
        });
    }
    for k in 0..d {
        prob.add_ineq(Inequality {
            quad: None,
            linear: vec![(lay.alpha(k), -1.0)],
            rhs: 0.0,
        });
    }

    prob.add_eq(Equality {
        coeffs: (0..d).map(|k| (lay.alpha(k), 1.0)).collect(),
        rhs: 1.0,
    });
    // Every device lands in exactly one cluster.
    for k in 0..d {
        prob.add_eq(Equality {
            coeffs: (0..nbar).map(|i| (lay.e(i, k), 1.0)).collect(),
            rhs: 1.0,
        });
    }
    // Full blocks first; the last cluster's size is implied by the rest, and
    // emitting its row would make the system rank-deficient.
    for i in 0..nbar.saturating_sub(1) {
        prob.add_eq(Equality {
            coeffs: (0..d).map(|k| (lay.e(i, k), 1.0)).collect(),
            rhs: kbar as f64,
        });
    }
    prob
}

/// Optimal weights for a fixed partition.
///
/// With the clusters pinned, the objective is concave in alpha after
/// modeling each cluster's noise price as a level u_n bounding its members'
/// sqrt(varpi_k) alpha_k from above, so one convex QP is exact. Devices
/// outside every cluster get weight zero. Returns the weights and the
/// planning objective they achieve.
pub fn assignment_qp(phi: &[f64], varpi: &[f64], clusters: &[Vec<usize>]) -> (Vec<f64>, f64) {
    let members: Vec<usize> = clusters.iter().flatten().copied().collect();
    assert!(!members.is_empty(), "cannot weight an empty schedule");
    let mut local = vec![usize::MAX; phi.len()];
    for (j, &k) in members.iter().enumerate() {
        assert!(local[k] == usize::MAX, "device {k} appears twice");
        local[k] = j;
    }
    let scale = members
        .iter()
        .fold(1e-12_f64, |s, &k| s.max(phi[k].abs()).max(varpi[k]));
    let nc = clusters.len();
    let nv = members.len() + nc;
    let mut prob = Problem::new(nv);
    for (j, &k) in members.iter().enumerate() {
        prob.add_linear(j, -phi[k] / scale);
        prob.add_ineq(Inequality {
            quad: None,
            linear: vec![(j, -1.0)],
            rhs: 0.0,
        });
    }
    for (i, cluster) in clusters.iter().enumerate() {
        let ui = members.len() + i;
        prob.add_obj_quad(QuadTerm {
            kappa: 1.0,
            coeffs: vec![(ui, 1.0)],
            shift: 0.0,
        });
        for &k in cluster {
            prob.add_ineq(Inequality {
                quad: None,
                linear: vec![(local[k], (varpi[k] / scale).sqrt()), (ui, -1.0)],
                rhs: 0.0,
            });
        }
    }
    prob.add_eq(Equality {
        coeffs: (0..members.len()).map(|j| (j, 1.0)).collect(),
        rhs: 1.0,
    });
    let sol = prob.solve(&Options::default(), None);
    let mut alpha = vec![0.0; phi.len()];
    let mut total = 0.0;
    for (j, &k) in members.iter().enumerate() {
        alpha[k] = sol.x[j].max(0.0);
        total += alpha[k];
    }
    // The solver leaves interior-point dust; project back to the simplex.
    if total > 0.0 {
        for a in &mut alpha {
            *a /= total;
        }
    } else {
        for &k in &members {
            alpha[k] = 1.0 / members.len() as f64;
        }
    }
    let obj = true_objective(phi, varpi, &alpha, clusters);
    (alpha, obj)
}

/// Alternate exact weights for the fixed assignment with re-sorting into
/// descending score blocks until neither changes. Both moves are monotone
/// in the objective: the weight solve is exact for its partition, and for
/// fixed weights sorted consecutive blocks minimize the sum of cluster
/// maxima.
fn settle(
    phi: &[f64],
    varpi: &[f64],
    sw: &[f64],
    kbar: usize,
    mut clusters: Vec<Vec<usize>>,
) -> (Vec<f64>, Vec<Vec<usize>>, f64) {
    let d = phi.len();
    let (mut alpha, _) = assignment_qp(phi, varpi, &clusters);
    for _ in 0..4 {
        let scores: Vec<f64> = (0..d).map(|k| sw[k] * alpha[k]).collect();
        let next = sequential_cluster(&scores, kbar);
        if next == clusters {
            break;
        }
        clusters = next;
        let (a2, _) = assignment_qp(phi, varpi, &clusters);
        alpha = a2;
    }
    let value = true_objective(phi, varpi, &alpha, &clusters);
    (alpha, clusters, value)
}

/// Joint weights and partition for `d` devices across clusters of size
/// `kbar`, at most `nbar` of them.
///
/// Runs the penalized convex-concave loop from a sorted-blocks start, then
/// rounds the relaxed assignment onto consecutive sorted blocks and
/// alternates exact fixed-partition weight solves with re-sorting until the
/// partition stabilizes. `dump_tag` names this invocation in optional QP
/// dumps.
pub fn pccp_optimize(
    phi: &[f64],
    varpi: &[f64],
    nbar: usize,
    kbar: usize,
    cfg: &WeightingConfig,
    dump_tag: u64,
) -> (Vec<f64>, Vec<Vec<usize>>, PccpReport) {
    let d = phi.len();
    assert!(d >= 1, "need at least one device");
    assert_eq!(varpi.len(), d);
    assert!(nbar >= 1 && kbar >= 1);
    assert!(d <= nbar * kbar, "schedule overflow: sacrifice before planning");
    debug_assert!(phi.iter().all(|v| v.is_finite()));
    debug_assert!(varpi.iter().all(|v| v.is_finite() && *v >= 0.0));

    let nbar_eff = d.div_ceil(kbar);
    if nbar_eff == 1 {
        let clusters = vec![(0..d).collect::<Vec<_>>()];
        let (alpha, objective) = assignment_qp(phi, varpi, &clusters);
        let report = PccpReport {
            iterations: 0,
            penalty_l1: 0.0,
            degraded: false,
            objective,
        };
        return (alpha, clusters, report);
    }

    let scale = (0..d).fold(1e-12_f64, |s, k| s.max(phi[k].abs()).max(varpi[k]));
    let phis: Vec<f64> = phi.iter().map(|&v| v / scale).collect();
    let sw: Vec<f64> = varpi.iter().map(|&v| (v / scale).sqrt()).collect();
    let lay = Layout { d, nbar: nbar_eff };

    // Start from uniform weights on sorted consecutive blocks, which is
    // feasible for every surrogate row by tangency.
    let alpha0 = vec![1.0 / d as f64; d];
    let scores0: Vec<f64> = (0..d).map(|k| sw[k] * alpha0[k]).collect();
    let blocks0 = sequential_cluster(&scores0, kbar);
    let mut lin = Linearization {
        alpha: alpha0,
        e: vec![0.0; nbar_eff * d],
        eb: vec![0.0; nbar_eff * d],
        l: vec![0.0; nbar_eff],
    };
    let mut x = vec![0.0; lay.total()];
    for (i, block) in blocks0.iter().enumerate() {
        let mut lo = f64::INFINITY;
        let mut hi = 0.0_f64;
        for &k in block {
            lin.e[i * d + k] = 1.0;
            lin.eb[i * d + k] = 1.0;
            lo = lo.min(sw[k] * lin.alpha[k]);
            hi = hi.max(sw[k] * lin.alpha[k]);
        }
        lin.l[i] = lo;
        x[lay.u(i)] = hi;
        x[lay.l(i)] = lo;
    }
    x[..d].copy_from_slice(&lin.alpha);
    for i in 0..nbar_eff {
        for k in 0..d {
            x[lay.e(i, k)] = lin.e[i * d + k];
        }
    }

    let opts = Options {
        tol: cfg.qp_tol,
        ..Options::default()
    };
    let mut tau = cfg.tau0;
    let mut merit_prev = f64::INFINITY;
    let mut penalty_l1 = f64::INFINITY;
    let mut iterations = 0;
    let mut failures = 0;
    let mut degraded = true;
    while iterations < cfg.max_iters {
        let prob = build_surrogate(&phis, &sw, &lin, kbar, tau);
        if let Some(dir) = &cfg.dump_qp_dir {
            let _ = std::fs::create_dir_all(dir);
            let path = format!("{dir}/p7_{dump_tag}_it{iterations}.txt");
            let _ = std::fs::write(path, prob.dump_text());
        }
        let sol = prob.solve(&opts, Some(&x));
        iterations += 1;
        // A diverged or stalled inner solve must not poison the
        // linearization; retry the same point under the next penalty.
        let usable = sol.status == Status::Solved
            && sol.x.iter().all(|v| v.is_finite() && v.abs() < 1e9);
        if !usable {
            failures += 1;
            if failures >= 3 {
                break;
            }
            tau = (tau * cfg.mu_pen).min(cfg.tau_max);
            continue;
        }
        failures = 0;
        x = sol.x;

        penalty_l1 = (0..nbar_eff)
            .flat_map(|i| (0..d).map(move |k| (i, k)))
            .map(|(i, k)| x[lay.p(i, k)].max(0.0))
            .sum();
        let mut merit = 0.0;
        for i in 0..nbar_eff {
            merit += x[lay.u(i)] * x[lay.u(i)];
            for k in 0..d {
                merit -= phis[k] * x[lay.alpha(k)] * x[lay.e(i, k)];
            }
        }
        if std::env::var_os("AIRFL_PCCP_TRACE").is_some() {
            let ev: Vec<f64> = (0..nbar_eff * d)
                .map(|j| x[lay.e(j / d, j % d)])
                .collect();
            eprintln!(
                "pccp it {iterations:3} tau {tau:9.2e} slack {penalty_l1:9.2e} merit {merit:12.5e} status {:?} e {ev:.3?}",
                sol.status
            );
        }
        if penalty_l1 <= cfg.chi && (merit_prev - merit).abs() <= 1e-5 * (1.0 + merit.abs()) {
            degraded = false;
            break;
        }
        merit_prev = merit;
        // Escalate only while slack remains; once the relaxation is tight,
        // a larger penalty just stiffens the QP for no benefit.
        if penalty_l1 > cfg.chi {
            tau = (tau * cfg.mu_pen).min(cfg.tau_max);
        }

        for k in 0..d {
            lin.alpha[k] = x[lay.alpha(k)].max(0.0);
        }
        for i in 0..nbar_eff {
            lin.l[i] = x[lay.l(i)];
            for k in 0..d {
                lin.e[i * d + k] = x[lay.e(i, k)].clamp(0.0, 1.0);
            }
        }
        for k in 0..d {
            let lead = (0..nbar_eff)
                .max_by(|&a, &b| {
                    lin.e[a * d + k]
                        .partial_cmp(&lin.e[b * d + k])
                        .unwrap_or(std::cmp::Ordering::Equal)
                        .then(b.cmp(&a))
                })
                .unwrap_or(0);
            for i in 0..nbar_eff {
                let e = lin.e[i * d + k];
                let eb = if i == lead {
                    (e + BINARY_NUDGE).min(1.0)
                } else {
                    (e - BINARY_NUDGE).max(0.0)
                };
                lin.eb[i * d + k] = eb;
                // Lift the warm start over the new binary rows so it
                // re-enters near-feasibly.
                let pix = lay.p(i, k);
                x[pix] = x[pix].max(0.0).max(eb * eb - (2.0 * eb - 1.0) * e);
            }
        }
    }

    // Round onto sorted consecutive blocks, settle, then climb by swapping
    // members across cluster boundaries. The continuation cannot leave the
    // assignment it was seeded with, and cluster sizes are pinned, so pair
    // swaps are the complete set of legal discrete moves. Each accepted
    // swap strictly raises the objective, so the climb is finite.
    let mut alpha: Vec<f64> = (0..d).map(|k| x[lay.alpha(k)].max(0.0)).collect();
    let total: f64 = alpha.iter().sum();
    if total > 0.0 {
        for a in &mut alpha {
            *a /= total;
        }
    } else {
        alpha = vec![1.0 / d as f64; d];
    }
    let scores: Vec<f64> = (0..d).map(|k| sw[k] * alpha[k]).collect();
    let seed_clusters = sequential_cluster(&scores, kbar);
    let (mut alpha, mut clusters, mut objective) = settle(phi, varpi, &sw, kbar, seed_clusters);
    // On small instances every cluster pair is worth probing; on large ones
    // misplacements sit on adjacent boundaries of the sorted order.
    let wide = d <= 12;
    for _ in 0..25 {
        let mut best: Option<(f64, Vec<Vec<usize>>)> = None;
        for i in 0..clusters.len() {
            for j in (i + 1)..clusters.len() {
                if !wide && j != i + 1 {
                    continue;
                }
                for ai in 0..clusters[i].len() {
                    for bj in 0..clusters[j].len() {
                        let mut cand = clusters.clone();
                        cand[i][ai] = clusters[j][bj];
                        cand[j][bj] = clusters[i][ai];
                        cand[i].sort_unstable();
                        cand[j].sort_unstable();
                        let (_, value) = assignment_qp(phi, varpi, &cand);
                        if value > objective + 1e-9 * (1.0 + objective.abs())
                            && best.as_ref().is_none_or(|(b, _)| value > *b)
                        {
                            best = Some((value, cand));
                        }
                    }
                }
            }
        }
        let Some((_, cand)) = best else { break };
        let settled = settle(phi, varpi, &sw, kbar, cand);
        alpha = settled.0;
        clusters = settled.1;
        objective = settled.2;
    }
    (
        alpha,
        clusters,
        PccpReport {
            iterations,
            penalty_l1,
            degraded,
            objective,
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Domain};
    use rand::Rng;

    #[test]
    fn bilinear_bounds_sandwich_the_product() {
        let mut rng = stream(11, Domain::Oracle, 10, 0);
        for _ in 0..500 {
            let a0 = rng.gen_range(-0.5..1.5);
            let b0 = rng.gen_range(-0.5..1.5);
            let a = rng.gen_range(-0.5..1.5);
            let b = rng.gen_range(-0.5..1.5);
            let lo = lower_bilinear(a0, b0, a, b);
            let hi = upper_bilinear(a0, b0, a, b);
            assert!(lo <= a * b + 1e-12 && a * b <= hi + 1e-12);
            // Gaps are perfect squares of the step from the tangent point.
            let du = 0.25 * ((a - b) - (a0 - b0)).powi(2);
            let dl = 0.25 * ((a + b) - (a0 + b0)).powi(2);
            assert!((hi - a * b - du).abs() < 1e-12);
            assert!((a * b - lo - dl).abs() < 1e-12);
            assert!((lower_bilinear(a0, b0, a0, b0) - a0 * b0).abs() < 1e-12);
            assert!((upper_bilinear(a0, b0, a0, b0) - a0 * b0).abs() < 1e-12);
        }
    }

    fn stacked_start(phis: &[f64], sw: &[f64], kbar: usize, nbar: usize) -> (Linearization, Vec<f64>) {
        let d = phis.len();
        let lay = Layout { d, nbar };
        let alpha0 = vec![1.0 / d as f64; d];
        let scores: Vec<f64> = (0..d).map(|k| sw[k] * alpha0[k]).collect();
        let blocks = sequential_cluster(&scores, kbar);
        let mut lin = Linearization {
            alpha: alpha0,
            e: vec![0.0; nbar * d],
            eb: vec![0.0; nbar * d],
            l: vec![0.0; nbar],
        };
        let mut x = vec![0.0; lay.total()];
        for (i, block) in blocks.iter().enumerate() {
            let mut lo = f64::INFINITY;
            let mut hi = 0.0_f64;
            for &k in block {
                lin.e[i * d + k] = 1.0;
                lin.eb[i * d + k] = 1.0;
                lo = lo.min(sw[k] * lin.alpha[k]);
                hi = hi.max(sw[k] * lin.alpha[k]);
            }
            lin.l[i] = lo;
            x[lay.u(i)] = hi;
            x[lay.l(i)] = lo;
        }
        x[..d].copy_from_slice(&lin.alpha);
        for i in 0..nbar {
            for k in 0..d {
                x[lay.e(i, k)] = lin.e[i * d + k];
            }
        }
        (lin, x)
    }

    #[test]
    fn sorted_blocks_start_is_surrogate_feasible() {
        let mut rng = stream(12, Domain::Oracle, 11, 0);
        for case in 0..20 {
            let (d, kbar): (usize, usize) = match case % 3 {
                0 => (6, 2),
                1 => (6, 3),
                _ => (7, 3),
            };
            let nbar = d.div_ceil(kbar);
            let phis: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let sw: Vec<f64> = (0..d).map(|_| rng.gen_range(0.1..1.0)).collect();
            let (lin, x) = stacked_start(&phis, &sw, kbar, nbar);
            let prob = build_surrogate(&phis, &sw, &lin, kbar, 1.0);
            assert!(
                prob.infeasibility(&x) < 1e-9,
                "case {case}: start violates surrogate by {}",
                prob.infeasibility(&x)
            );
        }
    }

    #[test]
    fn assignment_qp_matches_grid_search() {
        let phi = [1.0, 0.8, 0.3, 0.6];
        let varpi = [0.5, 2.0, 1.0, 0.25];
        let clusters = vec![vec![0, 1], vec![2, 3]];
        let (alpha, obj) = assignment_qp(&phi, &varpi, &clusters);
        let total: f64 = alpha.iter().sum();
        assert!((total - 1.0).abs() < 1e-9);
        assert!(alpha.iter().all(|&a| a >= 0.0));

        let steps = 100;
        let mut best = f64::NEG_INFINITY;
        for i in 0..=steps {
            for j in 0..=steps - i {
                for k in 0..=steps - i - j {
                    let a = [
                        i as f64 / steps as f64,
                        j as f64 / steps as f64,
                        k as f64 / steps as f64,
                        (steps - i - j - k) as f64 / steps as f64,
                    ];
                    best = best.max(true_objective(&phi, &varpi, &a, &clusters));
                }
            }
        }
        // The QP cannot lose to any grid point; the grid can only trail the
        // true optimum by its resolution.
        assert!(obj >= best - 1e-6, "qp {obj} below grid {best}");
        assert!(obj <= best + 0.05, "qp {obj} implausibly above grid {best}");
    }

    #[test]
    fn single_cluster_matches_grid_search() {
        let phi = [1.0, 0.8, 0.3];
        let varpi = [0.5, 2.0, 1.0];
        let cfg = WeightingConfig::default();
        let (alpha, clusters, report) = pccp_optimize(&phi, &varpi, 1, 3, &cfg, 0);
        assert_eq!(clusters, vec![vec![0, 1, 2]]);
        assert_eq!(report.iterations, 0);
        assert!(!report.degraded);
        let total: f64 = alpha.iter().sum();
        assert!((total - 1.0).abs() < 1e-9);

        let steps = 200;
        let mut best = f64::NEG_INFINITY;
        for i in 0..=steps {
            for j in 0..=steps - i {
                let a = [
                    i as f64 / steps as f64,
                    j as f64 / steps as f64,
                    (steps - i - j) as f64 / steps as f64,
                ];
                best = best.max(true_objective(&phi, &varpi, &a, &clusters));
            }
        }
        assert!(report.objective >= best - 1e-6);
        assert!(report.objective <= best + 0.02);
    }

    #[test]
    fn mini_instance_matches_partition_oracle() {
        let phi = [2.0, 1.5, 1.0, 0.5];
        let varpi = [4.0, 1.0, 2.0, 0.25];
        let cfg = WeightingConfig::default();
        let (alpha, clusters, report) = pccp_optimize(&phi, &varpi, 2, 2, &cfg, 0);
        assert_eq!(clusters.len(), 2);
        assert!((alpha.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(report.penalty_l1 <= cfg.chi, "slack {}", report.penalty_l1);
        assert!(!report.degraded);

        // Oracle: best exact weighting over every pair partition.
        let oracle = [
            vec![vec![0, 1], vec![2, 3]],
            vec![vec![0, 2], vec![1, 3]],
            vec![vec![0, 3], vec![1, 2]],
        ]
        .iter()
        .map(|part| assignment_qp(&phi, &varpi, part).1)
        .fold(f64::NEG_INFINITY, f64::max);
        assert!(
            report.objective >= oracle - 1e-3,
            "pccp {} vs oracle {oracle}",
            report.objective
        );
        assert!(report.objective <= oracle + 1e-6);
    }

    #[test]
    fn optimizer_is_deterministic() {
        let phi = [2.0, -0.5, 1.0, 0.5, 1.2, 0.9];
        let varpi = [4.0, 1.0, 2.0, 0.25, 0.7, 3.0];
        let cfg = WeightingConfig::default();
        let a = pccp_optimize(&phi, &varpi, 3, 2, &cfg, 0);
        let b = pccp_optimize(&phi, &varpi, 3, 2, &cfg, 0);
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
        assert_eq!(a.2.iterations, b.2.iterations);
    }
}
