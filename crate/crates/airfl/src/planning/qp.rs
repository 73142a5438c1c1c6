//! Dense primal-dual interior-point solver for convex quadratic programs
//! with rank-one quadratic constraints.
//!
//! Problems have the form
//!
//! ```text
//! minimize    0.5-free: sum_t kappa_t (v_t.x - w_t)^2 + c.x
//! subject to  kappa_j (v_j.x - w_j)^2 + a_j.x <= rhs_j
//!             E x = f
//! ```
//!
//! with all `kappa >= 0`, so every curvature term is a positive-semidefinite
//! rank-one form. That covers everything the weighting optimizer emits, and
//! the rank-one structure keeps Hessian assembly cheap: each row touches at
//! most a handful of coordinates.
//!
//! The algorithm is the standard predictor-corrector scheme: eliminate the
//! slack and inequality multipliers, factor the condensed matrix
//! `H = P + sum z_j D2g_j + sum (z_j/s_j) Dg_j Dg_j^T` once per iteration,
//! and solve the equality block through a small Schur complement. Starting
//! points may violate every constraint; residuals are driven down jointly.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

/// `kappa * (sum coeffs.x - shift)^2` with `kappa >= 0`.
#[derive(Debug, Clone)]
pub struct QuadTerm {
    pub kappa: f64,
    pub coeffs: Vec<(usize, f64)>,
    pub shift: f64,
}

impl QuadTerm {
    fn inner(&self, x: &[f64]) -> f64 {
        self.coeffs.iter().map(|&(j, c)| c * x[j]).sum::<f64>() - self.shift
    }

    fn value(&self, x: &[f64]) -> f64 {
        let t = self.inner(x);
        self.kappa * t * t
    }
}

/// `quad(x) + linear.x <= rhs`.
#[derive(Debug, Clone, Default)]
pub struct Inequality {
    pub quad: Option<QuadTerm>,
    pub linear: Vec<(usize, f64)>,
    pub rhs: f64,
}

/// `coeffs.x = rhs`.
#[derive(Debug, Clone)]
pub struct Equality {
    pub coeffs: Vec<(usize, f64)>,
    pub rhs: f64,
}

#[derive(Debug, Clone)]
pub struct Problem {
    n: usize,
    linear: Vec<f64>,
    quads: Vec<QuadTerm>,
    ineqs: Vec<Inequality>,
    eqs: Vec<Equality>,
}

impl Problem {
    pub fn new(n: usize) -> Problem {
        Problem {
            n,
            linear: vec![0.0; n],
            quads: Vec::new(),
            ineqs: Vec::new(),
            eqs: Vec::new(),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn add_linear(&mut self, var: usize, coeff: f64) {
        self.linear[var] += coeff;
    }

    pub fn add_obj_quad(&mut self, term: QuadTerm) {
        assert!(term.kappa >= 0.0, "objective curvature must be convex");
        if term.kappa > 0.0 {
            self.quads.push(term);
        }
    }

    pub fn add_ineq(&mut self, ineq: Inequality) {
        if let Some(q) = &ineq.quad {
            assert!(q.kappa >= 0.0, "constraint curvature must be convex");
        }
        self.ineqs.push(ineq);
    }

    pub fn add_eq(&mut self, eq: Equality) {
        self.eqs.push(eq);
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        let q: f64 = self.quads.iter().map(|t| t.value(x)).sum();
        q + crate::util::dot(&self.linear, x)
    }

    pub fn ineq_value(&self, j: usize, x: &[f64]) -> f64 {
        let row = &self.ineqs[j];
        let q = row.quad.as_ref().map_or(0.0, |t| t.value(x));
        q + row.linear.iter().map(|&(i, c)| c * x[i]).sum::<f64>() - row.rhs
    }

    /// Largest violation over all constraints; zero means feasible.
    pub fn infeasibility(&self, x: &[f64]) -> f64 {
        let ineq = (0..self.ineqs.len())
            .map(|j| self.ineq_value(j, x).max(0.0))
            .fold(0.0_f64, f64::max);
        let eq = self
            .eqs
            .iter()
            .map(|e| {
                (e.coeffs.iter().map(|&(i, c)| c * x[i]).sum::<f64>() - e.rhs).abs()
            })
            .fold(0.0_f64, f64::max);
        ineq.max(eq)
    }

    pub fn solve(&self, opts: &Options, warm: Option<&[f64]>) -> Solution {
        Solver::new(self, opts, warm).run()
    }

    /// Self-describing plain-text form for external cross-checks.
    ///
    /// Terms print as `kappa shift [i:c ...]`; a missing quad part prints
    /// with kappa and shift zero.
    pub fn dump_text(&self) -> String {
        use std::fmt::Write;
        let coeffs = |list: &[(usize, f64)]| {
            let mut s = String::new();
            for &(i, c) in list {
                let _ = write!(s, " {i}:{c:.17e}");
            }
            s
        };
        let mut out = String::new();
        let _ = writeln!(out, "# minimize sum kappa (v.x - shift)^2 + c.x");
        let _ = writeln!(out, "# st kappa (v.x - shift)^2 + a.x <= rhs ; e.x = rhs");
        let _ = writeln!(out, "vars {}", self.n);
        for (i, &c) in self.linear.iter().enumerate() {
            if c != 0.0 {
                let _ = writeln!(out, "obj_lin {i}:{c:.17e}");
            }
        }
        for t in &self.quads {
            let _ = writeln!(
                out,
                "obj_quad {:.17e} {:.17e}{}",
                t.kappa,
                t.shift,
                coeffs(&t.coeffs)
            );
        }
        for q in &self.ineqs {
            let (kappa, shift, qc) = match &q.quad {
                Some(t) => (t.kappa, t.shift, coeffs(&t.coeffs)),
                None => (0.0, 0.0, String::new()),
            };
            let _ = writeln!(
                out,
                "ineq {kappa:.17e} {shift:.17e} [{qc} ] lin [{} ] rhs {:.17e}",
                coeffs(&q.linear),
                q.rhs
            );
        }
        for e in &self.eqs {
            let _ = writeln!(out, "eq [{} ] rhs {:.17e}", coeffs(&e.coeffs), e.rhs);
        }
        out
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Options {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for Options {
    fn default() -> Self {
        Options {
            tol: 1e-8,
            max_iter: 60,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Solved,
    MaxIter,
    Infeasible,
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub x: Vec<f64>,
    pub eq_duals: Vec<f64>,
    pub ineq_duals: Vec<f64>,
    pub status: Status,
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub gap: f64,
}

/// Sparse row with its per-iteration evaluation slots.
struct Row {
    idx: Vec<usize>,
    qc: Vec<f64>,
    lc: Vec<f64>,
    kappa: f64,
    shift: f64,
    rhs: f64,
    grad: Vec<f64>,
    g: f64,
}

impl Row {
    fn build(ineq: &Inequality) -> Row {
        let mut idx: Vec<usize> = ineq.linear.iter().map(|&(i, _)| i).collect();
        if let Some(q) = &ineq.quad {
            idx.extend(q.coeffs.iter().map(|&(i, _)| i));
        }
        idx.sort_unstable();
        idx.dedup();
        let pos = |i: usize| idx.binary_search(&i).unwrap();
        let mut qc = vec![0.0; idx.len()];
        let mut lc = vec![0.0; idx.len()];
        for &(i, c) in &ineq.linear {
            lc[pos(i)] += c;
        }
        let (kappa, shift) = match &ineq.quad {
            Some(q) => {
                for &(i, c) in &q.coeffs {
                    qc[pos(i)] += c;
                }
                (q.kappa, q.shift)
            }
            None => (0.0, 0.0),
        };
        let len = idx.len();
        Row {
            idx,
            qc,
            lc,
            kappa,
            shift,
            rhs: ineq.rhs,
            grad: vec![0.0; len],
            g: 0.0,
        }
    }

    fn eval(&mut self, x: &[f64]) {
        let mut t = -self.shift;
        let mut lin = 0.0;
        for (slot, &i) in self.idx.iter().enumerate() {
            t += self.qc[slot] * x[i];
            lin += self.lc[slot] * x[i];
        }
        self.g = self.kappa * t * t + lin - self.rhs;
        let two_kt = 2.0 * self.kappa * t;
        for slot in 0..self.idx.len() {
            self.grad[slot] = two_kt * self.qc[slot] + self.lc[slot];
        }
    }
}

struct Solver<'a> {
    prob: &'a Problem,
    opts: &'a Options,
    rows: Vec<Row>,
    base: DMatrix<f64>,
    amat: DMatrix<f64>,
    beq: DVector<f64>,
    x: Vec<f64>,
    y: DVector<f64>,
    s: Vec<f64>,
    z: Vec<f64>,
}

impl<'a> Solver<'a> {
    fn new(prob: &'a Problem, opts: &'a Options, warm: Option<&[f64]>) -> Solver<'a> {
        let n = prob.n;
        let p = prob.eqs.len();
        // Constant part of the condensed matrix: the objective curvature.
        let mut base = DMatrix::zeros(n, n);
        for t in &prob.quads {
            for &(i, ci) in &t.coeffs {
                for &(j, cj) in &t.coeffs {
                    base[(i, j)] += 2.0 * t.kappa * ci * cj;
                }
            }
        }
        let mut amat = DMatrix::zeros(p, n);
        let mut beq = DVector::zeros(p);
        for (r, eq) in prob.eqs.iter().enumerate() {
            for &(i, c) in &eq.coeffs {
                amat[(r, i)] += c;
            }
            beq[r] = eq.rhs;
        }
        let mut rows: Vec<Row> = prob.ineqs.iter().map(Row::build).collect();

        let x = match warm {
            Some(w) => {
                assert_eq!(w.len(), n);
                w.to_vec()
            }
            None if p > 0 => {
                // Minimum-norm point on the equality manifold.
                let aat = &amat * amat.transpose();
                match Cholesky::new(aat + DMatrix::identity(p, p) * 1e-12) {
                    Some(ch) => {
                        let w: DVector<f64> = ch.solve(&beq);
                        let xm: DVector<f64> = amat.transpose() * w;
                        xm.iter().copied().collect()
                    }
                    None => vec![0.0; n],
                }
            }
            None => vec![0.0; n],
        };
        let mut s = Vec::with_capacity(rows.len());
        let z = vec![0.1; rows.len()];
        for row in rows.iter_mut() {
            row.eval(&x);
            s.push((-row.g).max(1e-3));
        }
        Solver {
            prob,
            opts,
            rows,
            base,
            amat,
            beq,
            x,
            y: DVector::zeros(p),
            s,
            z,
        }
    }

    fn dual_residual(&self) -> Vec<f64> {
        let n = self.prob.n;
        let mut r = self.prob.linear.clone();
        for t in &self.prob.quads {
            let tv = t.inner(&self.x);
            for &(i, c) in &t.coeffs {
                r[i] += 2.0 * t.kappa * tv * c;
            }
        }
        for (j, row) in self.rows.iter().enumerate() {
            for (slot, &i) in row.idx.iter().enumerate() {
                r[i] += self.z[j] * row.grad[slot];
            }
        }
        for c in 0..n {
            for rr in 0..self.amat.nrows() {
                r[c] += self.amat[(rr, c)] * self.y[rr];
            }
        }
        r
    }

    fn run(mut self) -> Solution {
        let n = self.prob.n;
        let p = self.amat.nrows();
        let m = self.rows.len();
        let mut status = Status::MaxIter;
        let mut iter = 0;
        let (mut pres, mut dres, mut gap) = (f64::INFINITY, f64::INFINITY, f64::INFINITY);

        while iter < self.opts.max_iter {
            for row in self.rows.iter_mut() {
                row.eval(&self.x);
            }
            let rd = self.dual_residual();
            let rp = &self.amat * DVector::from_column_slice(&self.x) - &self.beq;
            let rp_inf = if rp.is_empty() { 0.0 } else { rp.amax() };
            pres = rp_inf.max(
                self.rows
                    .iter()
                    .map(|r| r.g.max(0.0))
                    .fold(0.0_f64, f64::max),
            );
            dres = rd.iter().fold(0.0_f64, |a, &v| a.max(v.abs()));
            gap = if m > 0 {
                self.s
                    .iter()
                    .zip(&self.z)
                    .map(|(s, z)| s * z)
                    .sum::<f64>()
                    / m as f64
            } else {
                0.0
            };
            let xscale = 1.0 + self.x.iter().fold(0.0_f64, |a, &v| a.max(v.abs()));
            let tol = self.opts.tol;
            if pres <= tol * xscale && dres <= tol * self.dual_scale() && gap <= tol * xscale {
                status = Status::Solved;
                break;
            }

            // Condensed matrix for this iterate.
            let mut h = self.base.clone();
            for (j, row) in self.rows.iter().enumerate() {
                let zj = self.z[j];
                let ratio = zj / self.s[j].max(1e-14);
                for (sa, &ia) in row.idx.iter().enumerate() {
                    for (sb, &ib) in row.idx.iter().enumerate() {
                        h[(ia, ib)] += 2.0 * zj * row.kappa * row.qc[sa] * row.qc[sb]
                            + ratio * row.grad[sa] * row.grad[sb];
                    }
                }
            }

            let chol = match self.factor(&mut h) {
                Some(c) => c,
                None => break,
            };
            // Schur complement of the equality block.
            let hia = if p > 0 {
                let mut at = self.amat.transpose();
                chol.solve_mut(&mut at);
                Some(at)
            } else {
                None
            };
            let schur = hia.as_ref().map(|hia| {
                let s = &self.amat * hia;
                let mut s = s;
                for i in 0..p {
                    s[(i, i)] += 1e-12;
                }
                Cholesky::new(s)
            });
            let schur = match schur {
                Some(None) => break,
                Some(Some(c)) => Some(c),
                None => None,
            };

            // Predictor: pure Newton toward complementarity zero.
            let rc_aff: Vec<f64> = (0..m).map(|j| -self.z[j] * self.s[j]).collect();
            let (_dx_a, _dy_a, ds_a, dz_a) =
                self.direction(&chol, &schur, &hia, &rd, &rp, &rc_aff);
            let (ap_a, ad_a) = self.step_lengths(&ds_a, &dz_a);
            let gap_aff = if m > 0 {
                (0..m)
                    .map(|j| (self.s[j] + ap_a * ds_a[j]) * (self.z[j] + ad_a * dz_a[j]))
                    .sum::<f64>()
                    / m as f64
            } else {
                0.0
            };
            let sigma = if gap > 0.0 {
                ((gap_aff / gap).powi(3)).clamp(1e-6, 1.0 - 1e-6)
            } else {
                0.0
            };

            // Corrector with centering.
            let mu_t = sigma * gap;
            let rc: Vec<f64> = (0..m)
                .map(|j| mu_t - self.z[j] * self.s[j] - ds_a[j] * dz_a[j])
                .collect();
            let (dx, dy, ds, dz) = self.direction(&chol, &schur, &hia, &rd, &rp, &rc);
            let (ap, ad) = self.step_lengths(&ds, &dz);
            if std::env::var_os("AIRFL_QP_TRACE").is_some() {
                eprintln!(
                    "it {iter:2} pres {pres:9.2e} dres {dres:9.2e} gap {gap:9.2e} sigma {sigma:8.2e} ap {ap:.5} ad {ad:.5}"
                );
            }
            for i in 0..n {
                self.x[i] += ap * dx[i];
            }
            for j in 0..m {
                self.s[j] += ap * ds[j];
                self.z[j] += ad * dz[j];
            }
            for r in 0..p {
                self.y[r] += ad * dy[r];
            }
            iter += 1;
        }

        if status != Status::Solved {
            // A stalled run with stubborn primal violation reads as
            // infeasible; a small violation is just slow convergence.
            let xscale = 1.0 + self.x.iter().fold(0.0_f64, |a, &v| a.max(v.abs()));
            if pres > self.opts.tol.sqrt() * xscale {
                status = Status::Infeasible;
            }
        }
        Solution {
            x: self.x,
            eq_duals: self.y.iter().cloned().collect(),
            ineq_duals: self.z,
            status,
            iterations: iter,
            primal_residual: pres,
            dual_residual: dres,
            gap,
        }
    }

    fn dual_scale(&self) -> f64 {
        let zmax = self.z.iter().fold(0.0_f64, |a, &v| a.max(v));
        let cmax = self.prob.linear.iter().fold(0.0_f64, |a, &v| a.max(v.abs()));
        1.0 + cmax + zmax
    }

    fn factor(&self, h: &mut DMatrix<f64>) -> Option<Cholesky<f64, Dyn>> {
        // Regularize only when the clean factorization fails: late iterates
        // carry huge z/s diagonals, and a shift scaled to them would wreck
        // the direction.
        if let Some(c) = Cholesky::new(h.clone()) {
            return Some(c);
        }
        let maxdiag = (0..h.nrows()).fold(0.0_f64, |a, i| a.max(h[(i, i)].abs()));
        let mut reg = 1e-12 * (1.0 + maxdiag);
        for _ in 0..8 {
            for i in 0..h.nrows() {
                h[(i, i)] += reg;
            }
            if let Some(c) = Cholesky::new(h.clone()) {
                return Some(c);
            }
            reg *= 100.0;
        }
        None
    }

    /// One Newton direction for the given complementarity target.
    #[allow(clippy::type_complexity)]
    fn direction(
        &self,
        chol: &Cholesky<f64, Dyn>,
        schur: &Option<Cholesky<f64, Dyn>>,
        hia: &Option<DMatrix<f64>>,
        rd: &[f64],
        rp: &DVector<f64>,
        rc: &[f64],
    ) -> (Vec<f64>, DVector<f64>, Vec<f64>, Vec<f64>) {
        let m = self.rows.len();
        let mut rhat = DVector::from_column_slice(rd);
        for (j, row) in self.rows.iter().enumerate() {
            // Eliminating ds then dz leaves S^-1 (rc + z (g + s)) on the rhs.
            let w = (rc[j] + self.z[j] * (row.g + self.s[j])) / self.s[j].max(1e-14);
            for (slot, &i) in row.idx.iter().enumerate() {
                rhat[i] += row.grad[slot] * w;
            }
        }
        let neg_rhat = -rhat;
        let hinv_r = chol.solve(&neg_rhat);
        let (dx, dy) = match (schur, hia) {
            (Some(sc), Some(hia)) => {
                let rhs = &self.amat * &hinv_r + rp;
                let dy = sc.solve(&rhs);
                let dx = &hinv_r - hia * &dy;
                (dx, dy)
            }
            _ => (hinv_r, DVector::zeros(0)),
        };
        let dxs: Vec<f64> = dx.iter().cloned().collect();
        let mut ds = vec![0.0; m];
        let mut dz = vec![0.0; m];
        for (j, row) in self.rows.iter().enumerate() {
            let gdx: f64 = row
                .idx
                .iter()
                .enumerate()
                .map(|(slot, &i)| row.grad[slot] * dxs[i])
                .sum();
            ds[j] = -(row.g + self.s[j]) - gdx;
            dz[j] = (rc[j] - self.z[j] * ds[j]) / self.s[j].max(1e-14);
        }
        (dxs, dy, ds, dz)
    }

    /// Fraction-to-boundary steps keeping s and z strictly positive.
    fn step_lengths(&self, ds: &[f64], dz: &[f64]) -> (f64, f64) {
        let mut ap = 1.0_f64;
        let mut ad = 1.0_f64;
        for j in 0..ds.len() {
            if ds[j] < 0.0 {
                ap = ap.min(-self.s[j] / ds[j]);
            }
            if dz[j] < 0.0 {
                ad = ad.min(-self.z[j] / dz[j]);
            }
        }
        ((0.995 * ap).min(1.0), (0.995 * ad).min(1.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Domain};
    use rand::Rng;

    fn solved(sol: &Solution) -> bool {
        sol.status == Status::Solved
    }

    #[test]
    fn scalar_bound_becomes_active() {
        // minimize u^2 subject to u >= 3.
        let mut p = Problem::new(1);
        p.add_obj_quad(QuadTerm {
            kappa: 1.0,
            coeffs: vec![(0, 1.0)],
            shift: 0.0,
        });
        p.add_ineq(Inequality {
            quad: None,
            linear: vec![(0, -1.0)],
            rhs: -3.0,
        });
        let sol = p.solve(&Options::default(), None);
        assert!(solved(&sol));
        assert!((sol.x[0] - 3.0).abs() < 1e-6, "{}", sol.x[0]);
        // Stationarity: 2u = dual of the active bound.
        assert!((sol.ineq_duals[0] - 6.0).abs() < 1e-4);
    }

    #[test]
    fn linear_program_finds_the_simplex_corner() {
        let c = [3.0, 1.0, 2.0];
        let mut p = Problem::new(3);
        for (i, &ci) in c.iter().enumerate() {
            p.add_linear(i, ci);
            p.add_ineq(Inequality {
                quad: None,
                linear: vec![(i, -1.0)],
                rhs: 0.0,
            });
        }
        p.add_eq(Equality {
            coeffs: vec![(0, 1.0), (1, 1.0), (2, 1.0)],
            rhs: 1.0,
        });
        let sol = p.solve(&Options::default(), None);
        assert!(solved(&sol));
        assert!((sol.x[1] - 1.0).abs() < 1e-6);
        assert!(sol.x[0].abs() < 1e-6 && sol.x[2].abs() < 1e-6);
    }

    #[test]
    fn equality_qp_matches_the_kkt_solve() {
        // Random strictly convex QP with equalities only; oracle is the
        // dense KKT system solved by LU.
        let n = 20;
        let p_eq = 3;
        let mut rng = stream(7, Domain::Oracle, 3, 0);
        let m = nalgebra::DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let pm = m.transpose() * &m + nalgebra::DMatrix::identity(n, n);
        let c: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let a = nalgebra::DMatrix::from_fn(p_eq, n, |_, _| rng.gen_range(-1.0..1.0));
        let b: Vec<f64> = (0..p_eq).map(|_| rng.gen_range(-1.0..1.0)).collect();

        let mut prob = Problem::new(n);
        // Express x^T P x /2 through its eigendecomposition as rank-one terms.
        let eig = pm.clone().symmetric_eigen();
        for k in 0..n {
            let lam = eig.eigenvalues[k];
            let coeffs: Vec<(usize, f64)> =
                (0..n).map(|i| (i, eig.eigenvectors[(i, k)])).collect();
            prob.add_obj_quad(QuadTerm {
                kappa: 0.5 * lam,
                coeffs,
                shift: 0.0,
            });
        }
        for (i, &ci) in c.iter().enumerate() {
            prob.add_linear(i, ci);
        }
        for r in 0..p_eq {
            prob.add_eq(Equality {
                coeffs: (0..n).map(|i| (i, a[(r, i)])).collect(),
                rhs: b[r],
            });
        }
        let sol = prob.solve(&Options::default(), None);
        assert!(solved(&sol));

        // KKT oracle: [P A^T; A 0] [x; y] = [-c; b].
        let mut kkt = nalgebra::DMatrix::zeros(n + p_eq, n + p_eq);
        kkt.view_mut((0, 0), (n, n)).copy_from(&pm);
        kkt.view_mut((0, n), (n, p_eq)).copy_from(&a.transpose());
        kkt.view_mut((n, 0), (p_eq, n)).copy_from(&a);
        let mut rhs = nalgebra::DVector::zeros(n + p_eq);
        for i in 0..n {
            rhs[i] = -c[i];
        }
        for r in 0..p_eq {
            rhs[n + r] = b[r];
        }
        let xy = kkt.lu().solve(&rhs).unwrap();
        for i in 0..n {
            assert!(
                (sol.x[i] - xy[i]).abs() < 1e-6,
                "coordinate {i}: {} vs {}",
                sol.x[i],
                xy[i]
            );
        }
    }

    #[test]
    fn rank_one_quadratic_constraint_is_respected() {
        // minimize x0 + x1 with (x0 + x1 - 1)^2 <= 1/4 and a [-5, 5] box:
        // the optimum has x0 + x1 = 1/2.
        let mut p = Problem::new(2);
        p.add_linear(0, 1.0);
        p.add_linear(1, 1.0);
        p.add_ineq(Inequality {
            quad: Some(QuadTerm {
                kappa: 1.0,
                coeffs: vec![(0, 1.0), (1, 1.0)],
                shift: 1.0,
            }),
            linear: vec![],
            rhs: 0.25,
        });
        for i in 0..2 {
            p.add_ineq(Inequality {
                quad: None,
                linear: vec![(i, 1.0)],
                rhs: 5.0,
            });
            p.add_ineq(Inequality {
                quad: None,
                linear: vec![(i, -1.0)],
                rhs: 5.0,
            });
        }
        let sol = p.solve(&Options::default(), None);
        assert!(solved(&sol));
        assert!((sol.x[0] + sol.x[1] - 0.5).abs() < 1e-6);
    }

    #[test]
    fn contradictory_constraints_report_infeasible() {
        // x0 + x1 = 3 inside the unit box.
        let mut p = Problem::new(2);
        p.add_eq(Equality {
            coeffs: vec![(0, 1.0), (1, 1.0)],
            rhs: 3.0,
        });
        for i in 0..2 {
            p.add_ineq(Inequality {
                quad: None,
                linear: vec![(i, 1.0)],
                rhs: 1.0,
            });
            p.add_ineq(Inequality {
                quad: None,
                linear: vec![(i, -1.0)],
                rhs: 0.0,
            });
        }
        let sol = p.solve(&Options::default(), None);
        assert_eq!(sol.status, Status::Infeasible);
    }

    #[test]
    fn random_boxed_qps_satisfy_kkt() {
        for seed in 0..10 {
            let n = 8;
            let mut rng = stream(seed, Domain::Oracle, 4, 0);
            let m = nalgebra::DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
            let pm = m.transpose() * &m + nalgebra::DMatrix::identity(n, n) * 0.5;
            let c: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();

            let mut prob = Problem::new(n);
            let eig = pm.clone().symmetric_eigen();
            for k in 0..n {
                prob.add_obj_quad(QuadTerm {
                    kappa: 0.5 * eig.eigenvalues[k],
                    coeffs: (0..n).map(|i| (i, eig.eigenvectors[(i, k)])).collect(),
                    shift: 0.0,
                });
            }
            for (i, &ci) in c.iter().enumerate() {
                prob.add_linear(i, ci);
                prob.add_ineq(Inequality {
                    quad: None,
                    linear: vec![(i, 1.0)],
                    rhs: 1.0,
                });
                prob.add_ineq(Inequality {
                    quad: None,
                    linear: vec![(i, -1.0)],
                    rhs: 0.0,
                });
            }
            let sol = prob.solve(&Options::default(), None);
            assert!(solved(&sol), "seed {seed}: {:?}", sol.status);
            // Independent KKT verification from the returned primal-dual pair.
            assert!(prob.infeasibility(&sol.x) < 1e-6);
            let mut station = DVector::from_vec(c.clone());
            station += &pm * DVector::from_column_slice(&sol.x);
            for (j, &zj) in sol.ineq_duals.iter().enumerate() {
                assert!(zj > -1e-9, "dual sign");
                let i = j / 2;
                let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
                station[i] += zj * sign;
                // Complementary slackness.
                let slack = -prob.ineq_value(j, &sol.x);
                assert!(zj * slack < 1e-5, "seed {seed} row {j}: z {zj} slack {slack}");
            }
            assert!(
                station.amax() < 1e-5,
                "seed {seed}: stationarity {}",
                station.amax()
            );
        }
    }

    #[test]
    fn warm_start_reaches_the_same_answer() {
        let mut p = Problem::new(2);
        p.add_obj_quad(QuadTerm {
            kappa: 1.0,
            coeffs: vec![(0, 1.0)],
            shift: 2.0,
        });
        p.add_obj_quad(QuadTerm {
            kappa: 1.0,
            coeffs: vec![(1, 1.0)],
            shift: -1.0,
        });
        p.add_ineq(Inequality {
            quad: None,
            linear: vec![(0, -1.0)],
            rhs: 0.0,
        });
        let cold = p.solve(&Options::default(), None);
        let warm = p.solve(&Options::default(), Some(&[1.9, -0.9]));
        assert!(solved(&cold) && solved(&warm));
        assert!((cold.x[0] - warm.x[0]).abs() < 1e-6);
        assert!((cold.x[1] - warm.x[1]).abs() < 1e-6);
    }
}
