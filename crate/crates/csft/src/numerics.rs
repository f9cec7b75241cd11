//! Scalar special functions, phase arithmetic, box self-convolution, quadrature
//! and the multi-dimensional DFT.

use std::f64::consts::PI;

use num_complex::Complex64;
use rustfft::FftPlanner;

pub type C64 = Complex64;

const TAU: f64 = 2.0 * PI;

/// `sin(pi s1 t) / (pi s1 t)`, equal to 1 at `t = 0`.
pub fn sinc1(s1: f64, t: f64) -> f64 {
    let x = PI * s1 * t;
    if x.abs() < 1e-8 {
        1.0 - x * x / 6.0
    } else {
        x.sin() / x
    }
}

/// Box of width `s1` and height `1/s1`, closed at both ends.
pub fn rect1(s1: f64, f: f64) -> f64 {
    if f.abs() <= s1 / 2.0 {
        1.0 / s1
    } else {
        0.0
    }
}

pub fn sinc_multi(s1: f64, tau: &[f64]) -> f64 {
    tau.iter().map(|&t| sinc1(s1, t)).product()
}

/// Fractional part with floor semantics, always in `[0, 1)`.
pub fn frac(x: f64) -> f64 {
    let r = x - x.floor();
    if r >= 1.0 {
        0.0
    } else {
        r
    }
}

/// Reduce a phase into `(-pi, pi]`.
pub fn wrap_phase(theta: f64) -> f64 {
    let mut r = theta.rem_euclid(TAU);
    if r > PI {
        r -= TAU;
    }
    r
}

/// Distance from `theta` to the nearest multiple of `2 pi`, in `[0, pi]`.
pub fn circ_dist(theta: f64) -> f64 {
    wrap_phase(theta).abs()
}

/// Density at `t` of the sum of `ell` independent uniforms on `[-s1/2, s1/2]`,
/// i.e. the `ell`-fold self-convolution of `rect1(s1, .)`.
pub fn box_selfconv(ell: u32, s1: f64, t: f64) -> f64 {
    assert!(ell >= 1 && s1 > 0.0);
    if ell == 1 {
        return rect1(s1, t);
    }
    let n = ell as f64;
    let x = n / 2.0 - t.abs() / s1;
    if x <= 0.0 {
        return 0.0;
    }
    let density = if ell <= 12 {
        irwin_hall_closed(ell, x)
    } else {
        irwin_hall_recursive(ell, x)
    };
    density.max(0.0) / s1
}

/// Alternating-sum form; accurate for small `ell` only.
pub(crate) fn irwin_hall_closed(ell: u32, x: f64) -> f64 {
    let n = ell as i64;
    let mut acc = 0.0;
    let mut binom = 1.0;
    let mut k = 0i64;
    while k <= n && (k as f64) < x {
        let term = binom * (x - k as f64).powi((n - 1) as i32);
        if k % 2 == 0 {
            acc += term;
        } else {
            acc -= term;
        }
        binom = binom * (n - k) as f64 / (k + 1) as f64;
        k += 1;
    }
    let fact: f64 = (1..n).map(|i| i as f64).product();
    acc / fact
}

/// Cox-de Boor recursion on shifted arguments; every term is non-negative.
pub(crate) fn irwin_hall_recursive(ell: u32, x: f64) -> f64 {
    let n = ell as usize;
    let mut vals: Vec<f64> = (0..n)
        .map(|j| {
            let y = x - j as f64;
            if (0.0..1.0).contains(&y) {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    for m in 2..=n {
        let mf = m as f64;
        for j in 0..=(n - m) {
            let y = x - j as f64;
            vals[j] = (y * vals[j] + (mf - y) * vals[j + 1]) / (mf - 1.0);
        }
    }
    vals[0]
}

/// Nodes and weights of the `n`-point Gauss-Legendre rule on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * z * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 1 { z } else { p1 };
            let pm = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (z * pn - pm) / (z * z - 1.0);
            let dz = pn / dp;
            z -= dz;
            if dz.abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = -z;
        nodes[n - 1 - i] = z;
        let w = 2.0 / ((1.0 - z * z) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// Composite Gauss-Legendre quadrature of `f` over `[a, b]`.
pub struct Quadrature {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl Quadrature {
    pub fn new(order: usize) -> Self {
        let (nodes, weights) = gauss_legendre(order);
        Self { nodes, weights }
    }

    pub fn integrate<F: Fn(f64) -> f64>(&self, f: F, a: f64, b: f64, panels: usize) -> f64 {
        let panels = panels.max(1);
        let h = (b - a) / panels as f64;
        let mut acc = 0.0;
        for p in 0..panels {
            let lo = a + p as f64 * h;
            let mid = lo + h / 2.0;
            let mut s = 0.0;
            for (x, w) in self.nodes.iter().zip(&self.weights) {
                s += w * f(mid + x * h / 2.0);
            }
            acc += s * h / 2.0;
        }
        acc
    }
}

/// Row-major flat index of a multi-index over `[b]^d` (last coordinate fastest).
pub fn flat_index(idx: &[usize], b: usize) -> usize {
    idx.iter().fold(0, |acc, &i| acc * b + i)
}

pub fn unflatten(mut flat: usize, b: usize, d: usize) -> Vec<usize> {
    let mut idx = vec![0; d];
    for s in (0..d).rev() {
        idx[s] = flat % b;
        flat /= b;
    }
    idx
}

fn transform_axes(u: &mut [C64], b: usize, d: usize, inverse: bool) {
    assert_eq!(u.len(), b.pow(d as u32), "array must hold b^d entries");
    if b == 1 {
        return;
    }
    let mut planner = FftPlanner::<f64>::new();
    let fft = if inverse {
        planner.plan_fft_inverse(b)
    } else {
        planner.plan_fft_forward(b)
    };
    let mut line = vec![C64::new(0.0, 0.0); b];
    let mut scratch = vec![C64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    for axis in 0..d {
        let stride = b.pow((d - 1 - axis) as u32);
        let block = stride * b;
        for outer in (0..u.len()).step_by(block) {
            for inner in 0..stride {
                let base = outer + inner;
                for (i, slot) in line.iter_mut().enumerate() {
                    *slot = u[base + i * stride];
                }
                fft.process_with_scratch(&mut line, &mut scratch);
                for (i, v) in line.iter().enumerate() {
                    u[base + i * stride] = *v;
                }
            }
        }
    }
}

/// Forward DFT over `[b]^d`: `u_hat[j] = sum_i u[i] exp(-2 pi i j.i / b)`, unnormalized.
pub fn dft_multi(u: &mut [C64], b: usize, d: usize) {
    transform_axes(u, b, d, false);
}

/// Inverse of [`dft_multi`], including the `1/b^d` factor.
pub fn idft_multi(u: &mut [C64], b: usize, d: usize) {
    transform_axes(u, b, d, true);
    let scale = 1.0 / u.len() as f64;
    for v in u.iter_mut() {
        *v *= scale;
    }
}
