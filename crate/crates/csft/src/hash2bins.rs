//! Filtered, permuted lattice sampling folded into `B^d` bins.

use std::f64::consts::PI;

use crate::error::Result;
use crate::filters::Filter;
use crate::hashing::HashInstance;
use crate::numerics::{dft_multi, flat_index, C64};
use crate::signal::{AffineGrid, Oracle};

#[derive(Debug, Clone, PartialEq)]
pub struct BinSketch {
    pub b: usize,
    pub d: usize,
    /// Time shift used for this sketch.
    pub a: Vec<f64>,
    /// Row-major DFT output over `[B]^d`.
    pub u_hat: Vec<C64>,
}

impl BinSketch {
    pub fn get(&self, j: &[usize]) -> C64 {
        self.u_hat[flat_index(j, self.b)]
    }
}

/// Per-coordinate half-width of the time footprint `{Sigma^T n}` of the lattice taps.
pub fn time_footprint(h: &HashInstance, filter: &Filter) -> Vec<f64> {
    let r = filter.tap_radius() as f64;
    (0..h.d)
        .map(|c| (0..h.d).map(|s| h.sigma[s * h.d + c].abs()).sum::<f64>() * r)
        .collect()
}

struct Axis {
    factor: Vec<C64>,
    bin: Vec<usize>,
}

/// Sample `x(Sigma^T (n + a))` on the tap lattice, weight by `prod_s G(n_s)`, demodulate by
/// `exp(-2 pi i b^T Sigma^T n)`, fold `n mod B` and take the forward DFT.
pub fn hash_to_bins(oracle: &dyn Oracle, h: &HashInstance, a: &[f64], filter: &Filter) -> Result<BinSketch> {
    let p = filter.params();
    let (b, d) = (p.b, p.d);
    let taps = filter.taps();
    let ticks: Vec<i64> = taps.iter().map(|(n, _)| *n).collect();
    let grid = AffineGrid {
        base: h.apply_t(a),
        axes: (0..d).map(|s| h.row(s).to_vec()).collect(),
        ticks: vec![ticks; d],
    };
    let mut samples = Vec::new();
    oracle.sample_grid(&grid, &mut samples)?;

    let sb = h.apply(&h.b);
    let axes: Vec<Axis> = (0..d)
        .map(|s| Axis {
            factor: taps
                .iter()
                .map(|&(n, w)| {
                    let x = sb[s] * n as f64;
                    C64::from_polar(w, -2.0 * PI * (x - x.round()))
                })
                .collect(),
            bin: taps.iter().map(|&(n, _)| n.rem_euclid(b as i64) as usize).collect(),
        })
        .collect();

    let mut u = vec![C64::new(0.0, 0.0); b.pow(d as u32)];
    fold(&axes, 0, C64::new(1.0, 0.0), 0, &samples, &mut u, b);
    dft_multi(&mut u, b, d);
    Ok(BinSketch { b, d, a: a.to_vec(), u_hat: u })
}

fn fold(axes: &[Axis], level: usize, prefix: C64, prefix_bin: usize, samples: &[C64], u: &mut [C64], b: usize) {
    let axis = &axes[level];
    if level + 1 == axes.len() {
        for ((x, f), &m) in samples.iter().zip(&axis.factor).zip(&axis.bin) {
            u[prefix_bin * b + m] += prefix * f * x;
        }
        return;
    }
    let chunk = samples.len() / axis.factor.len();
    for (i, (f, &m)) in axis.factor.iter().zip(&axis.bin).enumerate() {
        fold(
            axes,
            level + 1,
            prefix * f,
            prefix_bin * b + m,
            &samples[i * chunk..(i + 1) * chunk],
            u,
            b,
        );
    }
}
