//! Synthetic least-squares tasks with closed-form optima.
//!
//! Device `k` holds `f_k(w) = 0.5 ||A_k w - b_k||^2`; the global objective is
//! the device average. Everything the analysis needs (minimizer, optimal
//! value, smoothness, strong convexity, gradient deviation bounds) is exact,
//! which makes these tasks the reference substrate for checking bounds.

use crate::rng::{stream, Domain};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Normal};

#[derive(Debug, Clone)]
pub struct QuadraticTask {
    pub dim: usize,
    pub a: Vec<DMatrix<f64>>,
    pub b: Vec<DVector<f64>>,
    pub w_star: Vec<f64>,
    pub f_star: f64,
    /// Smoothness constant: max over devices of lambda_max(A_k^T A_k).
    pub l: f64,
    /// Strong convexity of the global objective: lambda_min of the mean Gram.
    pub mu: f64,
    /// Per-device gradient deviation bounds (exact for `shared_hessian`).
    pub delta: Vec<f64>,
    mean_gram: DMatrix<f64>,
}

impl QuadraticTask {
    pub fn devices(&self) -> usize {
        self.a.len()
    }

    pub fn local_loss(&self, k: usize, w: &[f64]) -> f64 {
        let r = &self.a[k] * DVector::from_column_slice(w) - &self.b[k];
        0.5 * r.norm_squared()
    }

    pub fn local_grad(&self, k: usize, w: &[f64]) -> Vec<f64> {
        let wv = DVector::from_column_slice(w);
        let r = &self.a[k] * wv - &self.b[k];
        (self.a[k].transpose() * r).data.into()
    }

    pub fn global_loss(&self, w: &[f64]) -> f64 {
        (0..self.devices()).map(|k| self.local_loss(k, w)).sum::<f64>() / self.devices() as f64
    }

    pub fn global_grad(&self, w: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.dim];
        for k in 0..self.devices() {
            crate::util::axpy(1.0 / self.devices() as f64, &self.local_grad(k, w), &mut g);
        }
        g
    }

    /// `F(w) - F*`, computed from the quadratic closed form.
    pub fn suboptimality(&self, w: &[f64]) -> f64 {
        let d = DVector::from_iterator(self.dim, w.iter().zip(&self.w_star).map(|(a, b)| a - b));
        0.5 * (&self.mean_gram * &d).dot(&d)
    }

    /// Bound on `||g_k(w) - grad F(w)||` over `||w - w*|| <= radius`.
    ///
    /// The deviation is affine in `w`, so the bound is the operator norm of
    /// its linear part times the radius plus its value at the minimizer.
    pub fn deviation_bound(&self, k: usize, radius: f64) -> f64 {
        let gram_k = self.a[k].transpose() * &self.a[k];
        let diff = gram_k - &self.mean_gram;
        let op = diff
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .fold(0.0_f64, |m, &l| m.max(l.abs()));
        let at_star = crate::util::sub(
            &self.local_grad(k, &self.w_star),
            &self.global_grad(&self.w_star),
        );
        op * radius + crate::util::norm(&at_star)
    }

    /// Devices share one Hessian `H` with eigenvalues log-spaced in
    /// `[mu, l]`; gradient deviations are constant in `w`, sum to zero
    /// across devices, and all have norm exactly `delta`. The initial
    /// gradient norm (at `w = 0`) equals `grad0_norm`.
    pub fn shared_hessian(
        devices: usize,
        dim: usize,
        mu: f64,
        l: f64,
        delta: f64,
        grad0_norm: f64,
        seed: u64,
    ) -> QuadraticTask {
        assert!(devices >= 2 && dim >= devices, "need dim >= devices for the offset frame");
        assert!(0.0 < mu && mu <= l);
        let mut rng = stream(seed, Domain::TaskGen, 0, 0);
        let q = random_orthogonal(dim, &mut rng);
        let lambdas: Vec<f64> = (0..dim)
            .map(|i| {
                if dim == 1 {
                    l
                } else {
                    mu * (l / mu).powf(i as f64 / (dim - 1) as f64)
                }
            })
            .collect();
        let sqrt_h = &q * DMatrix::from_diagonal(&DVector::from_vec(lambdas.iter().map(|v| v.sqrt()).collect())) * q.transpose();
        let inv_sqrt_h = &q * DMatrix::from_diagonal(&DVector::from_vec(lambdas.iter().map(|v| 1.0 / v.sqrt()).collect())) * q.transpose();
        let h = &sqrt_h * &sqrt_h;

        // w* in a random direction, sized so ||H w*|| = grad0_norm.
        let u = random_unit(dim, &mut rng);
        let hu_inv = h.clone().lu().solve(&u).expect("H is positive definite");
        let w_star_v = &hu_inv * (grad0_norm / (&h * &hu_inv).norm());

        // Centered simplex frame: equal norms, zero sum. Rotate so the
        // offsets are not axis-aligned, then scale every vertex to delta.
        let rot = random_orthogonal(dim, &mut rng);
        let offsets: Vec<DVector<f64>> = (0..devices)
            .map(|k| {
                let mut v = DVector::zeros(dim);
                for i in 0..devices {
                    v[i] = if i == k { 1.0 } else { 0.0 } - 1.0 / devices as f64;
                }
                let v = &rot * v;
                &v * (delta / v.norm())
            })
            .collect();

        let b: Vec<DVector<f64>> = offsets
            .iter()
            .map(|d| &sqrt_h * &w_star_v - &inv_sqrt_h * d)
            .collect();
        let a: Vec<DMatrix<f64>> = (0..devices).map(|_| sqrt_h.clone()).collect();
        let w_star: Vec<f64> = w_star_v.iter().cloned().collect();
        let mut task = QuadraticTask {
            dim,
            a,
            b,
            w_star,
            f_star: 0.0,
            l,
            mu,
            delta: vec![delta; devices],
            mean_gram: h,
        };
        task.f_star = task.global_loss(&task.w_star);
        task
    }

    /// Heterogeneous devices with independent Gaussian systems; constants
    /// are computed numerically. Deviation bounds cover a ball of radius
    /// `1.5 ||w*||` around the minimizer, which holds a descent trajectory
    /// started at zero with room for aggregation noise.
    pub fn gen_random(devices: usize, dim: usize, hetero: f64, seed: u64) -> QuadraticTask {
        assert!(devices >= 1 && dim >= 1);
        let mut rng = stream(seed, Domain::TaskGen, 0, 1);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let scale = 1.0 / (dim as f64).sqrt();
        let w_true = DVector::from_vec((0..dim).map(|_| normal.sample(&mut rng)).collect());
        let mut a = Vec::with_capacity(devices);
        let mut b = Vec::with_capacity(devices);
        for _ in 0..devices {
            let m = DMatrix::from_fn(dim, dim, |_, _| scale * normal.sample(&mut rng));
            let noise = DVector::from_vec((0..dim).map(|_| hetero * normal.sample(&mut rng)).collect());
            b.push(&m * &w_true + noise);
            a.push(m);
        }
        let mean_gram = a
            .iter()
            .fold(DMatrix::zeros(dim, dim), |acc, m| acc + m.transpose() * m)
            / devices as f64;
        let mean_rhs = a
            .iter()
            .zip(&b)
            .fold(DVector::zeros(dim), |acc, (m, v)| acc + m.transpose() * v)
            / devices as f64;
        let w_star_v = mean_gram
            .clone()
            .lu()
            .solve(&mean_rhs)
            .expect("mean Gram is invertible");
        let l = a
            .iter()
            .map(|m| {
                (m.transpose() * m)
                    .symmetric_eigen()
                    .eigenvalues
                    .iter()
                    .fold(0.0_f64, |acc, &v| acc.max(v))
            })
            .fold(0.0_f64, f64::max);
        let mu = mean_gram
            .clone()
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .fold(f64::INFINITY, |acc, &v| acc.min(v));
        let w_star: Vec<f64> = w_star_v.iter().cloned().collect();
        let mut task = QuadraticTask {
            dim,
            a,
            b,
            w_star: w_star.clone(),
            f_star: 0.0,
            l,
            mu,
            delta: Vec::new(),
            mean_gram,
        };
        task.f_star = task.global_loss(&w_star);
        let radius = 1.5 * crate::util::norm(&w_star);
        task.delta = (0..devices).map(|k| task.deviation_bound(k, radius)).collect();
        task
    }
}

fn random_unit(dim: usize, rng: &mut impl Rng) -> DVector<f64> {
    let normal = Normal::new(0.0, 1.0).unwrap();
    loop {
        let v = DVector::from_vec((0..dim).map(|_| normal.sample(rng)).collect::<Vec<f64>>());
        let n = v.norm();
        if n > 1e-9 {
            return v / n;
        }
    }
}

fn random_orthogonal(dim: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    let normal = Normal::new(0.0, 1.0).unwrap();
    let m = DMatrix::from_fn(dim, dim, |_, _| normal.sample(rng));
    let qr = m.qr();
    let mut q = qr.q();
    let r = qr.r();
    // Fix column signs so the factorization is unique.
    for j in 0..dim {
        if r[(j, j)] < 0.0 {
            for i in 0..dim {
                q[(i, j)] = -q[(i, j)];
            }
        }
    }
    q
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::{norm, sub};

    #[test]
    fn shared_hessian_has_the_advertised_geometry() {
        let task = QuadraticTask::shared_hessian(4, 8, 0.5, 4.0, 0.3, 1.2, 21);
        // Gradient vanishes at the minimizer.
        assert!(norm(&task.global_grad(&task.w_star)) < 1e-10);
        // Initial gradient norm as requested.
        let g0 = task.global_grad(&vec![0.0; 8]);
        assert!((norm(&g0) - 1.2).abs() < 1e-10);
        // Deviations are constant in w, equal-norm, zero-sum.
        let w1 = vec![0.7; 8];
        let w2: Vec<f64> = (0..8).map(|i| -0.3 + i as f64).collect();
        let mut sum_dev = vec![0.0; 8];
        for k in 0..4 {
            let d1 = sub(&task.local_grad(k, &w1), &task.global_grad(&w1));
            let d2 = sub(&task.local_grad(k, &w2), &task.global_grad(&w2));
            assert!(norm(&sub(&d1, &d2)) < 1e-9, "device {k} deviation varies");
            assert!((norm(&d1) - 0.3).abs() < 1e-9, "device {k} norm {}", norm(&d1));
            crate::util::axpy(1.0, &d1, &mut sum_dev);
        }
        assert!(norm(&sum_dev) < 1e-9);
    }

    #[test]
    fn shared_hessian_spectrum_spans_mu_to_l() {
        let task = QuadraticTask::shared_hessian(3, 6, 0.25, 2.0, 0.1, 1.0, 5);
        let eig = task.mean_gram.clone().symmetric_eigen().eigenvalues;
        let lo = eig.iter().fold(f64::INFINITY, |a, &b| a.min(b));
        let hi = eig.iter().fold(0.0_f64, |a, &b| a.max(b));
        assert!((lo - 0.25).abs() < 1e-9);
        assert!((hi - 2.0).abs() < 1e-9);
        assert!((task.mu - 0.25).abs() < 1e-12);
        assert!((task.l - 2.0).abs() < 1e-12);
    }

    #[test]
    fn suboptimality_matches_direct_evaluation() {
        let task = QuadraticTask::gen_random(5, 7, 0.4, 9);
        let w: Vec<f64> = (0..7).map(|i| 0.2 * i as f64 - 0.5).collect();
        let direct = task.global_loss(&w) - task.f_star;
        assert!((task.suboptimality(&w) - direct).abs() < 1e-9 * direct.abs().max(1.0));
        assert!(direct >= -1e-12);
    }

    #[test]
    fn local_grad_matches_finite_differences() {
        let task = QuadraticTask::gen_random(3, 5, 0.2, 33);
        let w: Vec<f64> = (0..5).map(|i| 0.3 * (i as f64) - 0.6).collect();
        let g = task.local_grad(1, &w);
        let h = 1e-6;
        for i in 0..5 {
            let mut wp = w.clone();
            let mut wm = w.clone();
            wp[i] += h;
            wm[i] -= h;
            let fd = (task.local_loss(1, &wp) - task.local_loss(1, &wm)) / (2.0 * h);
            assert!((g[i] - fd).abs() < 1e-6, "coord {i}: {} vs {}", g[i], fd);
        }
    }

    #[test]
    fn deviation_bound_covers_sampled_points() {
        let task = QuadraticTask::gen_random(4, 6, 0.5, 17);
        let radius = 2.0;
        let mut rng = stream(99, Domain::Oracle, 0, 0);
        for k in 0..4 {
            let bound = task.deviation_bound(k, radius);
            for _ in 0..50 {
                let dir = random_unit(6, &mut rng);
                let r: f64 = rng.gen_range(0.0..radius);
                let w: Vec<f64> = task
                    .w_star
                    .iter()
                    .zip(dir.iter())
                    .map(|(ws, d)| ws + r * d)
                    .collect();
                let dev = norm(&sub(&task.local_grad(k, &w), &task.global_grad(&w)));
                assert!(dev <= bound + 1e-9, "device {k}: {dev} > {bound}");
            }
        }
    }

    #[test]
    fn gradient_descent_contracts_at_the_closed_form_rate() {
        let task = QuadraticTask::shared_hessian(2, 4, 1.0, 2.0, 0.0, 1.0, 3);
        let eta = 0.4;
        let mut w = vec![0.0; 4];
        let mut prev = task.suboptimality(&w);
        for _ in 0..30 {
            let g = task.global_grad(&w);
            crate::util::axpy(-eta, &g, &mut w);
            let cur = task.suboptimality(&w);
            assert!(cur <= prev * (1.0 - eta * task.mu).powi(2) + 1e-12);
            prev = cur;
        }
        assert!(prev < 1e-6);
    }
}
