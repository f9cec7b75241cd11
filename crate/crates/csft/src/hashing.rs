//! Pseudorandom permutation `(Sigma, b, a)`, the bin map and the offset map.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{invalid, Result};
use crate::filters::FilterParams;
use crate::numerics::{frac, C64};
use crate::signal::Oracle;

/// One draw of the scaled rotation `Sigma = beta * Q` and the anchor `b = Sigma^{-1} b'`.
#[derive(Debug, Clone, PartialEq)]
pub struct HashInstance {
    pub d: usize,
    pub beta: f64,
    /// Row-major `d x d` orthogonal factor `Q`.
    pub rotation: Vec<f64>,
    /// Row-major `Sigma = beta * Q`.
    pub sigma: Vec<f64>,
    pub b: Vec<f64>,
    pub b_prime: Vec<f64>,
}

/// Haar-distributed orthogonal matrix via QR of a Gaussian matrix with `diag(R) > 0`.
pub fn haar_orthogonal<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Vec<f64> {
    let g = DMatrix::<f64>::from_fn(d, d, |_, _| rng.sample(StandardNormal));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for c in 0..d {
        if r[(c, c)] < 0.0 {
            for row in 0..d {
                q[(row, c)] = -q[(row, c)];
            }
        }
    }
    let mut out = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            out[i * d + j] = q[(i, j)];
        }
    }
    out
}

/// Interval of the scale factor `beta`.
pub fn beta_range(p: &FilterParams) -> (f64, f64) {
    let base = 2.0 * (p.d as f64).sqrt() / (p.b as f64 * p.eta);
    (base, 2.0 * base)
}

pub fn sample_hash_instance<R: Rng + ?Sized>(rng: &mut R, p: &FilterParams) -> HashInstance {
    let (lo, hi) = beta_range(p);
    let beta = rng.random_range(lo..hi);
    let rotation = haar_orthogonal(p.d, rng);
    let b_prime: Vec<f64> = (0..p.d).map(|_| rng.random_range(0.0..1.0)).collect();
    HashInstance::from_rotation(beta, rotation, &b_prime)
}

impl HashInstance {
    /// Build from `beta`, an orthogonal `Q` and `b'`, setting `b = Sigma^{-1} b'`.
    pub fn from_rotation(beta: f64, rotation: Vec<f64>, b_prime: &[f64]) -> Self {
        let d = b_prime.len();
        assert_eq!(rotation.len(), d * d);
        let sigma: Vec<f64> = rotation.iter().map(|q| beta * q).collect();
        let mut h = Self { d, beta, rotation, sigma, b: vec![0.0; d], b_prime: b_prime.to_vec() };
        h.b = h.sigma_inv_apply(b_prime);
        h
    }

    /// Build from an arbitrary invertible `Sigma` (row-major) and anchor `b`.
    pub fn from_matrix(sigma: Vec<f64>, b: Vec<f64>) -> Result<Self> {
        let d = b.len();
        if sigma.len() != d * d {
            return Err(invalid("Sigma must be d x d"));
        }
        let m = DMatrix::from_row_slice(d, d, &sigma);
        let det = m.determinant();
        if !(det.is_finite() && det.abs() > 1e-300) {
            return Err(invalid("Sigma is singular"));
        }
        let beta = det.abs().powf(1.0 / d as f64);
        let rotation: Vec<f64> = sigma.iter().map(|x| x / beta).collect();
        let b_prime = mat_vec(&sigma, d, &b);
        Ok(Self { d, beta, rotation, sigma, b, b_prime })
    }

    /// `Sigma x`.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        mat_vec(&self.sigma, self.d, x)
    }

    /// `Sigma^T x`.
    pub fn apply_t(&self, x: &[f64]) -> Vec<f64> {
        mat_t_vec(&self.sigma, self.d, x)
    }

    /// `Sigma^{-1} x = Q^T x / beta`.
    pub fn sigma_inv_apply(&self, x: &[f64]) -> Vec<f64> {
        mat_t_vec(&self.rotation, self.d, x).into_iter().map(|v| v / self.beta).collect()
    }

    /// `Sigma^{-T} x = Q x / beta`.
    pub fn sigma_inv_t_apply(&self, x: &[f64]) -> Vec<f64> {
        mat_vec(&self.rotation, self.d, x).into_iter().map(|v| v / self.beta).collect()
    }

    /// Row `s` of `Sigma`, which is `Sigma^T e_s`.
    pub fn row(&self, s: usize) -> &[f64] {
        &self.sigma[s * self.d..(s + 1) * self.d]
    }

    /// `psi = Sigma (f - b)`.
    pub fn psi(&self, f: &[f64]) -> Vec<f64> {
        let diff: Vec<f64> = f.iter().zip(&self.b).map(|(x, y)| x - y).collect();
        self.apply(&diff)
    }

    pub fn hash_bin(&self, b: usize, f: &[f64]) -> Vec<usize> {
        self.bin_and_offset(b, f).0
    }

    pub fn offset(&self, b: usize, f: &[f64]) -> Vec<f64> {
        self.bin_and_offset(b, f).1
    }

    pub fn bin_and_offset(&self, b: usize, f: &[f64]) -> (Vec<usize>, Vec<f64>) {
        let bf = b as f64;
        let half = 1.0 / (2.0 * bf);
        let psi = self.psi(f);
        let mut bins = Vec::with_capacity(self.d);
        let mut offs = Vec::with_capacity(self.d);
        for x in psi {
            let y = frac(half + x);
            let h = ((bf * y).floor() as usize).min(b - 1);
            bins.push(h);
            offs.push(y - h as f64 / bf - half);
        }
        (bins, offs)
    }

    /// `x(Sigma^T (t + a)) * exp(-2 pi i b^T Sigma^T t)`.
    pub fn permute_sample(&self, oracle: &dyn Oracle, a: &[f64], t: &[f64]) -> Result<C64> {
        let ta: Vec<f64> = t.iter().zip(a).map(|(x, y)| x + y).collect();
        let x = oracle.sample(&self.apply_t(&ta))?;
        let sb = self.apply(&self.b);
        let phase: f64 = sb.iter().zip(t).map(|(u, v)| u * v).sum();
        Ok(x * C64::from_polar(1.0, -2.0 * PI * phase))
    }
}

pub(crate) fn mat_vec(m: &[f64], d: usize, x: &[f64]) -> Vec<f64> {
    (0..d).map(|i| (0..d).map(|j| m[i * d + j] * x[j]).sum()).collect()
}

pub(crate) fn mat_t_vec(m: &[f64], d: usize, x: &[f64]) -> Vec<f64> {
    (0..d).map(|j| (0..d).map(|i| m[i * d + j] * x[i]).sum()).collect()
}

/// Event predicates that need the planted frequencies. Recovery code never calls these.
pub mod ground_truth {
    use super::HashInstance;

    /// Some other frequency shares the bin of `freqs[i]`.
    pub fn is_collision(h: &HashInstance, b: usize, freqs: &[Vec<f64>], i: usize) -> bool {
        let target = h.hash_bin(b, &freqs[i]);
        freqs
            .iter()
            .enumerate()
            .any(|(j, f)| j != i && h.hash_bin(b, f) == target)
    }

    /// `||offset(f)||_inf >= (1 - alpha) / (2B)`.
    pub fn is_large_offset(h: &HashInstance, b: usize, alpha: f64, f: &[f64]) -> bool {
        let thr = (1.0 - alpha) / (2.0 * b as f64);
        h.offset(b, f).iter().any(|o| o.abs() >= thr)
    }

    /// Large-offset test on an already computed offset vector.
    pub fn offset_is_large(offset: &[f64], b: usize, alpha: f64) -> bool {
        let thr = (1.0 - alpha) / (2.0 * b as f64);
        offset.iter().any(|o| o.abs() >= thr)
    }
}

/// Monte-Carlo audits of the hashing events against their exact values or bounds.
pub mod audit {
    use rand::Rng;
    use rand_distr::StandardNormal;
    use serde::{Deserialize, Serialize};

    use super::ground_truth::{is_collision, is_large_offset};
    use super::sample_hash_instance;
    use crate::filters::FilterParams;

    #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
    pub struct ProbabilityAudit {
        pub event: String,
        pub trials: usize,
        pub empirical: f64,
        pub exact_or_bound: f64,
        pub stderr: f64,
    }

    impl ProbabilityAudit {
        fn new(event: &str, hits: usize, trials: usize, exact_or_bound: f64) -> Self {
            let n = trials as f64;
            let stderr = (exact_or_bound * (1.0 - exact_or_bound) / n).sqrt();
            Self { event: event.into(), trials, empirical: hits as f64 / n, exact_or_bound, stderr }
        }

        /// Distance from the reference value in units of the binomial standard deviation.
        pub fn z_score(&self) -> f64 {
            if self.stderr == 0.0 {
                if self.empirical == self.exact_or_bound { 0.0 } else { f64::INFINITY }
            } else {
                (self.empirical - self.exact_or_bound) / self.stderr
            }
        }
    }

    fn random_unit<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Vec<f64> {
        let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.into_iter().map(|x| x / n).collect()
    }

    /// Rate of a large offset for the fixed frequency `f`, against `1 - (1 - alpha)^d`.
    pub fn large_offset<R: Rng + ?Sized>(p: &FilterParams, f: &[f64], trials: usize, rng: &mut R) -> ProbabilityAudit {
        let hits = (0..trials)
            .filter(|_| is_large_offset(&sample_hash_instance(rng, p), p.b, p.alpha, f))
            .count();
        let exact = 1.0 - (1.0 - p.alpha).powi(p.d as i32);
        ProbabilityAudit::new("large_offset", hits, trials, exact)
    }

    /// Outer radius of the band of pair distances that can never collide.
    pub fn deterministic_band(p: &FilterParams) -> (f64, f64) {
        (p.eta, (p.b as f64 - 2.0) * p.eta / (4.0 * (p.d as f64).sqrt()))
    }

    /// Collision rate for random pairs whose distance lies in the deterministic band; the
    /// reference value is zero. `None` when the band is empty for this `B` and `d`.
    pub fn deterministic_collisions<R: Rng + ?Sized>(
        p: &FilterParams,
        trials: usize,
        rng: &mut R,
    ) -> Option<ProbabilityAudit> {
        let (lo, hi) = deterministic_band(p);
        if hi < lo {
            return None;
        }
        let hits = (0..trials)
            .filter(|_| {
                let f: Vec<f64> = (0..p.d).map(|_| rng.random_range(-1.0..1.0)).collect();
                let r = if hi > lo { rng.random_range(lo..=hi) } else { lo };
                let g: Vec<f64> = f.iter().zip(random_unit(p.d, rng)).map(|(x, u)| x + r * u).collect();
                is_collision(&sample_hash_instance(rng, p), p.b, &[f, g], 0)
            })
            .count();
        Some(ProbabilityAudit::new("deterministic_collision", hits, trials, 0.0))
    }

    /// Rate at which a frequency without a large offset and a neighbour closer than
    /// `alpha eta / (8 sqrt d)` land in different bins; the reference value is zero.
    pub fn split_neighbours<R: Rng + ?Sized>(p: &FilterParams, trials: usize, rng: &mut R) -> ProbabilityAudit {
        let radius = p.alpha * p.eta / (8.0 * (p.d as f64).sqrt());
        let mut hits = 0;
        let mut done = 0;
        while done < trials {
            let h = sample_hash_instance(rng, p);
            let f: Vec<f64> = (0..p.d).map(|_| rng.random_range(-1.0..1.0)).collect();
            if is_large_offset(&h, p.b, p.alpha, &f) {
                continue;
            }
            let r = radius * rng.random_range(0.0..1.0);
            let g: Vec<f64> = f.iter().zip(random_unit(p.d, rng)).map(|(x, u)| x + r * u).collect();
            hits += usize::from(h.hash_bin(p.b, &f) != h.hash_bin(p.b, &g));
            done += 1;
        }
        ProbabilityAudit::new("split_neighbours", hits, trials, 0.0)
    }
}
