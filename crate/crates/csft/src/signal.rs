//! Ground-truth sparse signals, noise models and the sampling oracle.

use std::f64::consts::PI;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::numerics::{sinc1, C64};

#[derive(Debug, Clone, PartialEq)]
pub struct Tone {
    pub v: C64,
    pub f: Vec<f64>,
}

impl Tone {
    pub fn new(v: C64, f: Vec<f64>) -> Self {
        Self { v, f }
    }

    pub fn eval(&self, t: &[f64]) -> C64 {
        let phase: f64 = self.f.iter().zip(t).map(|(a, b)| a * b).sum();
        self.v * C64::from_polar(1.0, 2.0 * PI * phase)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparseSignal {
    pub d: usize,
    pub band: f64,
    pub eta: f64,
    pub duration: f64,
    pub tones: Vec<Tone>,
}

impl SparseSignal {
    pub fn new(d: usize, band: f64, eta: f64, duration: f64, tones: Vec<Tone>) -> Result<Self> {
        let s = Self { d, band, eta, duration, tones };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(invalid("d must be at least 1"));
        }
        for (name, x) in [("F", self.band), ("eta", self.eta), ("T", self.duration)] {
            if !(x.is_finite() && x > 0.0) {
                return Err(invalid(format!("{name} must be positive and finite")));
            }
        }
        for (i, tone) in self.tones.iter().enumerate() {
            if tone.f.len() != self.d {
                return Err(invalid(format!("tone {i} has dimension {} != {}", tone.f.len(), self.d)));
            }
            if !(tone.v.re.is_finite() && tone.v.im.is_finite()) {
                return Err(invalid(format!("tone {i} has a non-finite magnitude")));
            }
            if tone.f.iter().any(|x| !x.is_finite() || x.abs() > self.band) {
                return Err(invalid(format!("tone {i} frequency lies outside [-F, F]^d")));
            }
        }
        if !validate_separation(&self.tones, self.eta) {
            return Err(invalid("tone frequencies are closer than eta"));
        }
        Ok(())
    }

    pub fn energy(&self) -> f64 {
        self.tones.iter().map(|t| t.v.norm_sqr()).sum()
    }

    pub fn k(&self) -> usize {
        self.tones.len()
    }
}

/// True iff every pair of frequencies is at least `eta` apart in the l2 norm.
pub fn validate_separation(tones: &[Tone], eta: f64) -> bool {
    for i in 0..tones.len() {
        for j in (i + 1)..tones.len() {
            if l2_dist(&tones[i].f, &tones[j].f) < eta {
                return false;
            }
        }
    }
    true
}

pub fn l2_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub enum NoiseKind {
    None,
    /// Complex white noise with `E|g(t)|^2 = sigma^2`.
    WhiteGaussian { sigma: f64 },
    /// Deterministic noise made of tones.
    ToneBurst { tones: Vec<Tone> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseModel {
    pub kind: NoiseKind,
    pub seed: u64,
}

impl NoiseModel {
    pub fn none() -> Self {
        Self { kind: NoiseKind::None, seed: 0 }
    }

    pub fn white(sigma: f64, seed: u64) -> Self {
        Self { kind: NoiseKind::WhiteGaussian { sigma }, seed }
    }

    pub fn eval(&self, t: &[f64]) -> C64 {
        match &self.kind {
            NoiseKind::None => C64::new(0.0, 0.0),
            NoiseKind::WhiteGaussian { sigma } => white_noise(self.seed, t) * *sigma,
            NoiseKind::ToneBurst { tones } => tones.iter().map(|g| g.eval(t)).sum(),
        }
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn unit_open(bits: u64) -> f64 {
    ((bits >> 11) as f64 + 0.5) / (1u64 << 53) as f64
}

/// Unit-variance complex Gaussian keyed by `(seed, bits of t)`.
pub fn white_noise(seed: u64, t: &[f64]) -> C64 {
    let mut key = splitmix(seed);
    for x in t {
        key = splitmix(key ^ x.to_bits());
    }
    let u1 = unit_open(splitmix(key));
    let u2 = unit_open(splitmix(key ^ 0xA5A5_A5A5_A5A5_A5A5));
    let r = (-u1.ln()).sqrt();
    C64::from_polar(r, 2.0 * PI * u2)
}

/// Points `base + sum_s n_s * axes[s]` for `n` ranging over the product of `ticks`,
/// enumerated row-major (last dimension fastest).
#[derive(Debug, Clone)]
pub struct AffineGrid {
    pub base: Vec<f64>,
    pub axes: Vec<Vec<f64>>,
    pub ticks: Vec<Vec<i64>>,
}

impl AffineGrid {
    pub fn len(&self) -> usize {
        self.ticks.iter().map(|t| t.len()).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn point(&self, n: &[i64]) -> Vec<f64> {
        let mut t = self.base.clone();
        for (s, &ns) in n.iter().enumerate() {
            for (r, tr) in t.iter_mut().enumerate() {
                *tr += ns as f64 * self.axes[s][r];
            }
        }
        t
    }

    /// Per-coordinate bounding box of all grid points.
    pub fn bounds(&self) -> Vec<(f64, f64)> {
        let d = self.base.len();
        (0..d)
            .map(|r| {
                let mut lo = self.base[r];
                let mut hi = self.base[r];
                for (s, ticks) in self.ticks.iter().enumerate() {
                    let (Some(&a), Some(&b)) = (ticks.iter().min(), ticks.iter().max()) else {
                        continue;
                    };
                    let x = a as f64 * self.axes[s][r];
                    let y = b as f64 * self.axes[s][r];
                    lo += x.min(y);
                    hi += x.max(y);
                }
                (lo, hi)
            })
            .collect()
    }

    fn for_each_index(&self, mut f: impl FnMut(&[i64])) {
        let d = self.ticks.len();
        if self.is_empty() {
            return;
        }
        let mut pos = vec![0usize; d];
        let mut n: Vec<i64> = self.ticks.iter().map(|t| t[0]).collect();
        loop {
            f(&n);
            let mut s = d;
            loop {
                if s == 0 {
                    return;
                }
                s -= 1;
                pos[s] += 1;
                if pos[s] < self.ticks[s].len() {
                    n[s] = self.ticks[s][pos[s]];
                    break;
                }
                pos[s] = 0;
                n[s] = self.ticks[s][0];
            }
        }
    }
}

/// Black-box access to `x(t)` on `[0, T]^d`.
pub trait Oracle: Sync {
    fn dim(&self) -> usize;
    fn duration(&self) -> f64;
    fn sample(&self, t: &[f64]) -> Result<C64>;
    /// Number of samples served so far.
    fn samples_taken(&self) -> u64;

    /// Sample every point of `grid` into `out`, in grid order.
    fn sample_grid(&self, grid: &AffineGrid, out: &mut Vec<C64>) -> Result<()> {
        check_bounds(&grid.bounds(), self.duration())?;
        out.clear();
        let mut err = None;
        grid.for_each_index(|n| {
            if err.is_none() {
                match self.sample(&grid.point(n)) {
                    Ok(v) => out.push(v),
                    Err(e) => err = Some(e),
                }
            }
        });
        err.map_or(Ok(()), Err)
    }
}

fn check_bounds(bounds: &[(f64, f64)], duration: f64) -> Result<()> {
    for (r, &(lo, hi)) in bounds.iter().enumerate() {
        if lo < 0.0 {
            return Err(Error::Duration { coord: r, value: lo, duration });
        }
        if hi > duration {
            return Err(Error::Duration { coord: r, value: hi, duration });
        }
    }
    Ok(())
}

/// `x(t) = x*(t) + g(t)` for a planted signal and a noise model.
#[derive(Debug)]
pub struct SignalOracle {
    pub signal: SparseSignal,
    pub noise: NoiseModel,
    counter: AtomicU64,
}

impl SignalOracle {
    pub fn new(signal: SparseSignal, noise: NoiseModel) -> Self {
        Self { signal, noise, counter: AtomicU64::new(0) }
    }

    fn clean(&self, t: &[f64]) -> C64 {
        self.signal.tones.iter().map(|tone| tone.eval(t)).sum()
    }

    fn accumulate_tone(&self, tone: &Tone, grid: &AffineGrid, out: &mut [C64]) {
        let d = grid.ticks.len();
        let base_phase: f64 = tone.f.iter().zip(&grid.base).map(|(a, b)| a * b).sum();
        let start = tone.v * C64::from_polar(1.0, 2.0 * PI * base_phase);
        let tables: Vec<Vec<C64>> = (0..d)
            .map(|s| {
                let step: f64 = tone.f.iter().zip(&grid.axes[s]).map(|(a, b)| a * b).sum();
                grid.ticks[s]
                    .iter()
                    .map(|&n| C64::from_polar(1.0, 2.0 * PI * frac_signed(step * n as f64)))
                    .collect()
            })
            .collect();
        fill_tensor(&tables, 0, start, out);
    }
}

fn frac_signed(x: f64) -> f64 {
    x - x.round()
}

fn fill_tensor(tables: &[Vec<C64>], level: usize, prefix: C64, out: &mut [C64]) {
    let table = &tables[level];
    if level + 1 == tables.len() {
        for (o, z) in out.iter_mut().zip(table) {
            *o += prefix * z;
        }
        return;
    }
    let chunk = out.len() / table.len();
    for (i, z) in table.iter().enumerate() {
        fill_tensor(tables, level + 1, prefix * z, &mut out[i * chunk..(i + 1) * chunk]);
    }
}

impl Oracle for SignalOracle {
    fn dim(&self) -> usize {
        self.signal.d
    }

    fn duration(&self) -> f64 {
        self.signal.duration
    }

    fn sample(&self, t: &[f64]) -> Result<C64> {
        if t.len() != self.signal.d {
            return Err(invalid(format!("sample time has dimension {}", t.len())));
        }
        let bounds: Vec<(f64, f64)> = t.iter().map(|&x| (x, x)).collect();
        check_bounds(&bounds, self.signal.duration)?;
        self.counter.fetch_add(1, Ordering::Relaxed);
        Ok(self.clean(t) + self.noise.eval(t))
    }

    fn samples_taken(&self) -> u64 {
        self.counter.load(Ordering::Relaxed)
    }

    fn sample_grid(&self, grid: &AffineGrid, out: &mut Vec<C64>) -> Result<()> {
        check_bounds(&grid.bounds(), self.signal.duration)?;
        let len = grid.len();
        out.clear();
        out.resize(len, C64::new(0.0, 0.0));
        if len == 0 {
            return Ok(());
        }
        for tone in &self.signal.tones {
            self.accumulate_tone(tone, grid, out);
        }
        match &self.noise.kind {
            NoiseKind::None => {}
            NoiseKind::ToneBurst { tones } => {
                for tone in tones {
                    self.accumulate_tone(tone, grid, out);
                }
            }
            NoiseKind::WhiteGaussian { sigma } => {
                let mut i = 0;
                grid.for_each_index(|n| {
                    out[i] += white_noise(self.noise.seed, &grid.point(n)) * *sigma;
                    i += 1;
                });
            }
        }
        self.counter.fetch_add(len as u64, Ordering::Relaxed);
        Ok(())
    }
}

/// `(1/T^d) * integral over [0, T]^d of exp(2 pi i df.t) dt`.
pub fn box_mean_phase(df: &[f64], duration: f64) -> C64 {
    df.iter()
        .map(|&x| C64::from_polar(sinc1(1.0, x * duration), PI * x * duration))
        .product()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseLevel {
    /// `N^2 = noise_energy + tone_energy`.
    pub value_sq: f64,
    /// Mean of `|g|^2` over the duration.
    pub noise_energy: f64,
    /// `delta * sum |v_i|^2`.
    pub tone_energy: f64,
}

impl NoiseLevel {
    pub fn value(&self) -> f64 {
        self.value_sq.sqrt()
    }
}

pub fn noise_level(signal: &SparseSignal, noise: &NoiseModel, delta: f64) -> NoiseLevel {
    let noise_energy = match &noise.kind {
        NoiseKind::None => 0.0,
        NoiseKind::WhiteGaussian { sigma } => sigma * sigma,
        NoiseKind::ToneBurst { tones } => {
            let mut acc = C64::new(0.0, 0.0);
            for a in tones {
                for b in tones {
                    let df: Vec<f64> = a.f.iter().zip(&b.f).map(|(x, y)| x - y).collect();
                    acc += a.v * b.v.conj() * box_mean_phase(&df, signal.duration);
                }
            }
            acc.re.max(0.0)
        }
    };
    let tone_energy = delta * signal.energy();
    NoiseLevel { value_sq: noise_energy + tone_energy, noise_energy, tone_energy }
}

/// Draw `k` eta-separated tones in `[-F, F]^d` with `|v|` uniform on `[1, 2]` and uniform phase.
pub fn random_tones<R: Rng + ?Sized>(
    k: usize,
    d: usize,
    band: f64,
    eta: f64,
    rng: &mut R,
) -> Result<Vec<Tone>> {
    if k > 1 {
        let ball = unit_ball_volume(d) * (eta / 2.0).powi(d as i32);
        let room = (2.0 * band + eta).powi(d as i32);
        if k as f64 * ball > room {
            return Err(Error::InfeasiblePacking(format!(
                "{k} points at separation {eta} do not fit in [-{band}, {band}]^{d}"
            )));
        }
    }
    let mut tones: Vec<Tone> = Vec::with_capacity(k);
    let mut attempts = 0usize;
    while tones.len() < k {
        attempts += 1;
        if attempts > 100_000 * k.max(1) {
            return Err(Error::InfeasiblePacking(format!(
                "rejection sampling failed to place {k} tones at separation {eta}"
            )));
        }
        let f: Vec<f64> = (0..d).map(|_| rng.random_range(-band..=band)).collect();
        if tones.iter().any(|t| l2_dist(&t.f, &f) < eta) {
            continue;
        }
        let mag = rng.random_range(1.0..=2.0);
        let phase = rng.random_range(0.0..2.0 * PI);
        tones.push(Tone::new(C64::from_polar(mag, phase), f));
    }
    Ok(tones)
}

fn unit_ball_volume(d: usize) -> f64 {
    match d {
        0 => 1.0,
        1 => 2.0,
        _ => 2.0 * PI / d as f64 * unit_ball_volume(d - 2),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToneRecord {
    pub re: f64,
    pub im: f64,
    pub f: Vec<f64>,
}

impl From<&Tone> for ToneRecord {
    fn from(t: &Tone) -> Self {
        Self { re: t.v.re, im: t.v.im, f: t.f.clone() }
    }
}

impl From<&ToneRecord> for Tone {
    fn from(r: &ToneRecord) -> Self {
        Tone::new(C64::new(r.re, r.im), r.f.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseRecord {
    pub kind: String,
    pub sigma: f64,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tones: Vec<ToneRecord>,
}

/// On-disk form of a planted signal and its noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalFile {
    pub d: usize,
    #[serde(rename = "F")]
    pub band: f64,
    pub eta: f64,
    #[serde(rename = "T")]
    pub duration: f64,
    pub tones: Vec<ToneRecord>,
    pub noise: NoiseRecord,
}

impl SignalFile {
    pub fn from_parts(signal: &SparseSignal, noise: &NoiseModel) -> Self {
        let (kind, sigma, tones) = match &noise.kind {
            NoiseKind::None => ("none", 0.0, Vec::new()),
            NoiseKind::WhiteGaussian { sigma } => ("gaussian", *sigma, Vec::new()),
            NoiseKind::ToneBurst { tones } => ("burst", 0.0, tones.iter().map(ToneRecord::from).collect()),
        };
        Self {
            d: signal.d,
            band: signal.band,
            eta: signal.eta,
            duration: signal.duration,
            tones: signal.tones.iter().map(ToneRecord::from).collect(),
            noise: NoiseRecord { kind: kind.to_string(), sigma, seed: noise.seed, tones },
        }
    }

    pub fn into_parts(&self) -> Result<(SparseSignal, NoiseModel)> {
        let tones = self.tones.iter().map(Tone::from).collect();
        let signal = SparseSignal::new(self.d, self.band, self.eta, self.duration, tones)?;
        let kind = match self.noise.kind.as_str() {
            "none" => NoiseKind::None,
            "gaussian" => {
                if !(self.noise.sigma.is_finite() && self.noise.sigma >= 0.0) {
                    return Err(invalid("noise sigma must be finite and non-negative"));
                }
                NoiseKind::WhiteGaussian { sigma: self.noise.sigma }
            }
            "burst" => NoiseKind::ToneBurst { tones: self.noise.tones.iter().map(Tone::from).collect() },
            other => return Err(invalid(format!("unknown noise kind {other:?}"))),
        };
        Ok((signal, NoiseModel { kind, seed: self.noise.seed }))
    }
}
