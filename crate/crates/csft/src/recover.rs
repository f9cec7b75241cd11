//! Magnitude estimation and the staged recovery pipeline.

use std::cmp::Ordering;
use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::filters::{Filter, FilterParams};
use crate::hash2bins::hash_to_bins;
use crate::hashing::{sample_hash_instance, HashInstance};
use crate::locate::{
    initial_diameter, locate_signal, sample_time_point, search_rounds, LocateConfig,
};
use crate::numerics::{flat_index, C64};
use crate::rangetree::RangeTree;
use crate::signal::{l2_dist, Oracle};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateTone {
    pub v: C64,
    pub f: Vec<f64>,
    /// Recovery pass (0 or 1).
    pub pass: usize,
    /// Repetition index inside the pass.
    pub stage: usize,
    pub bin: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryConfig {
    pub locate: LocateConfig,
    pub filter: FilterParams,
    pub r_merge: usize,
    pub c_merge: f64,
    /// Fraction of `r_merge` a cluster must reach.
    pub merge_fraction: f64,
    /// Cross-pass distance is `cross_pass_c / T`.
    pub cross_pass_c: f64,
    /// Apply `exp(-(pi i / B) |j|_1)` when estimating magnitudes.
    pub half_bin_phase: bool,
    pub seed: u64,
}

/// `ceil(c_m d ln(d + 1) ln(k + 1))`, at least 1.
pub fn default_r_merge(c_merge: f64, d: usize, k: usize) -> usize {
    let df = d as f64;
    ((c_merge * df * (df + 1.0).ln() * (k as f64 + 1.0).ln()).ceil() as usize).max(1)
}

impl RecoveryConfig {
    pub const DEFAULT_C_MERGE: f64 = 3.0;

    pub fn new(filter: FilterParams, c_ratio: f64, seed: u64) -> Result<Self> {
        let locate = LocateConfig::new(c_ratio, filter.d, filter.band, filter.eta)?;
        let c_merge = Self::DEFAULT_C_MERGE;
        let cfg = Self {
            r_merge: default_r_merge(c_merge, filter.d, filter.k),
            locate,
            filter,
            c_merge,
            merge_fraction: 0.8,
            cross_pass_c: 1.0,
            half_bin_phase: false,
            seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_r_merge(mut self, r_merge: usize) -> Self {
        self.r_merge = r_merge;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.locate.validate()?;
        self.filter.validate()?;
        if self.r_merge == 0 {
            return Err(invalid("r_merge must be at least 1"));
        }
        if !(self.merge_fraction > 0.0 && self.merge_fraction <= 1.0) {
            return Err(invalid("merge fraction must lie in (0, 1]"));
        }
        if !(self.cross_pass_c > 0.0) {
            return Err(invalid("cross-pass constant must be positive"));
        }
        Ok(())
    }

    pub fn merge_threshold(&self) -> usize {
        ((self.merge_fraction * self.r_merge as f64) - 1e-9).ceil().max(1.0) as usize
    }

    /// Half-width of the counting cube, whose edge is `eta / d^3`.
    pub fn cluster_half_width(&self) -> f64 {
        self.filter.eta / (2.0 * (self.filter.d as f64).powi(3))
    }

    /// Half-width of the clearing cube, whose edge is `eta / (10 sqrt d)`.
    pub fn clear_half_width(&self) -> f64 {
        self.filter.eta / (20.0 * (self.filter.d as f64).sqrt())
    }
}

/// Deterministic RNG for `(pass, repetition)` under a master seed.
pub fn substream(seed: u64, pass: u64, rep: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((pass << 32) ^ rep);
    rng
}

/// Bin value of each frequency demodulated by `exp(-2 pi i a^T Sigma xi)`.
pub fn estimate_signal(
    oracle: &dyn Oracle,
    h: &HashInstance,
    filter: &Filter,
    a: &[f64],
    freqs: &[Vec<f64>],
    half_bin_phase: bool,
) -> Result<Vec<C64>> {
    let p = filter.params();
    let u = hash_to_bins(oracle, h, a, filter)?;
    Ok(freqs
        .iter()
        .map(|xi| {
            let j = h.hash_bin(p.b, xi);
            let sxi = h.apply(xi);
            let phase: f64 = a.iter().zip(&sxi).map(|(x, y)| x * y).sum();
            let mut v = u.get(&j) * C64::from_polar(1.0, -2.0 * PI * phase);
            if half_bin_phase {
                let l1: usize = j.iter().sum();
                v *= C64::from_polar(1.0, -PI * l1 as f64 / p.b as f64);
            }
            v
        })
        .collect())
}

/// Keep the largest-magnitude candidate among those closer than `radius` to each other.
fn suppress_duplicates(mut list: Vec<CandidateTone>, radius: f64) -> Vec<CandidateTone> {
    list.sort_by(|x, y| y.v.norm().partial_cmp(&x.v.norm()).unwrap_or(Ordering::Equal));
    let mut kept: Vec<CandidateTone> = Vec::with_capacity(list.len());
    for c in list {
        if kept.iter().all(|k| l2_dist(&k.f, &c.f) >= radius) {
            kept.push(c);
        }
    }
    kept.sort_by_key(|c| c.bin);
    kept
}

/// One hash instance: locate, then estimate magnitudes at one fresh time shift.
pub fn one_stage<R: Rng + ?Sized>(
    oracle: &dyn Oracle,
    filter: &Filter,
    cfg: &RecoveryConfig,
    rng: &mut R,
    pass: usize,
    stage: usize,
) -> Result<Vec<CandidateTone>> {
    let p = filter.params();
    let h = sample_hash_instance(rng, p);
    let located = locate_signal(oracle, &h, filter, &cfg.locate, rng)?;
    if located.is_empty() {
        return Ok(Vec::new());
    }
    let l = initial_diameter(p.d, p.band) / 2f64.powi(search_rounds(p.d, p.band, oracle.duration()) as i32);
    let a = sample_time_point(rng, &h, filter, &cfg.locate, l, oracle.duration(), false)?.a;
    let freqs: Vec<Vec<f64>> = located.iter().map(|x| x.f.clone()).collect();
    let values = estimate_signal(oracle, &h, filter, &a, &freqs, cfg.half_bin_phase)?;
    let list = located
        .into_iter()
        .zip(values)
        .map(|(loc, v)| CandidateTone { v, f: loc.f, pass, stage, bin: loc.bin })
        .collect();
    Ok(suppress_duplicates(list, p.eta / 2.0))
}

/// Union of `r_merge` independent one-stage runs.
pub fn multi_stage(oracle: &dyn Oracle, filter: &Filter, cfg: &RecoveryConfig, pass: usize) -> Result<Vec<CandidateTone>> {
    let mut all = Vec::new();
    for rep in 0..cfg.r_merge {
        let mut rng = substream(cfg.seed, pass as u64, rep as u64);
        all.extend(one_stage(oracle, filter, cfg, &mut rng, pass, rep)?);
    }
    Ok(all)
}

fn lower_median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    xs[(xs.len() - 1) / 2]
}

fn cube(center: &[f64], half: f64) -> (Vec<f64>, Vec<f64>) {
    (center.iter().map(|x| x - half).collect(), center.iter().map(|x| x + half).collect())
}

/// Cluster the candidates: every dense counting cube emits its centre with the coordinate-wise
/// median magnitude, then clears its neighbourhood.
pub fn merged_stage(candidates: &[CandidateTone], cfg: &RecoveryConfig) -> Result<Vec<CandidateTone>> {
    if candidates.is_empty() {
        return Ok(Vec::new());
    }
    let d = candidates[0].f.len();
    let mut tree = RangeTree::build(d, candidates.iter().map(|c| c.f.clone()).collect())?;
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&x, &y| {
        candidates[x]
            .f
            .iter()
            .zip(&candidates[y].f)
            .map(|(a, b)| a.total_cmp(b))
            .find(|o| *o != Ordering::Equal)
            .unwrap_or(Ordering::Equal)
            .then(x.cmp(&y))
    });
    let threshold = cfg.merge_threshold();
    let mut out = Vec::new();
    for i in order {
        if !tree.is_live(i) {
            continue;
        }
        let c = &candidates[i];
        let (lo, hi) = cube(&c.f, cfg.cluster_half_width());
        if tree.count(&lo, &hi) < threshold {
            continue;
        }
        let members = tree.report(&lo, &hi);
        let re = lower_median(members.iter().map(|&m| candidates[m].v.re).collect());
        let im = lower_median(members.iter().map(|&m| candidates[m].v.im).collect());
        out.push(CandidateTone { v: C64::new(re, im), ..c.clone() });
        let (lo, hi) = cube(&c.f, cfg.clear_half_width());
        let clear = tree.report(&lo, &hi);
        tree.delete(&clear)?;
    }
    Ok(out)
}

/// Output of [`recovery_stage`].
#[derive(Debug, Clone, PartialEq)]
pub struct Recovery {
    pub tones: Vec<CandidateTone>,
    pub first_pass: Vec<CandidateTone>,
    pub second_pass: Vec<CandidateTone>,
    /// Number of zero-magnitude placeholders appended.
    pub padded: usize,
}

/// Two merged passes, cross-pass agreement, then the `k` largest tones at separation `eta / 2`.
pub fn recovery_stage(oracle: &dyn Oracle, filter: &Filter, cfg: &RecoveryConfig, k: usize) -> Result<Recovery> {
    cfg.validate()?;
    let p = filter.params();
    let duration = oracle.duration();
    let first = merged_stage(&multi_stage(oracle, filter, cfg, 0)?, cfg)?;
    let second = merged_stage(&multi_stage(oracle, filter, cfg, 1)?, cfg)?;
    let reach = cfg.cross_pass_c / duration;
    let mut agreed: Vec<CandidateTone> =
        second.iter().filter(|s| first.iter().any(|f| l2_dist(&f.f, &s.f) <= reach)).cloned().collect();
    agreed.sort_by(|x, y| y.v.norm().partial_cmp(&x.v.norm()).unwrap_or(Ordering::Equal));

    let limit = p.band + 1.0 / duration;
    let sep = p.eta / 2.0;
    let mut tones: Vec<CandidateTone> = Vec::with_capacity(k);
    for mut t in agreed {
        if tones.len() == k {
            break;
        }
        t.f.iter_mut().for_each(|x| *x = x.clamp(-limit, limit));
        if tones.iter().all(|u| l2_dist(&u.f, &t.f) >= sep) {
            tones.push(t);
        }
    }
    let mut padded = 0;
    let fillers = first.iter().map(|c| c.f.clone()).chain(filler_grid(p.d, p.band, sep));
    for f in fillers {
        if tones.len() == k {
            break;
        }
        let f: Vec<f64> = f.iter().map(|x| x.clamp(-limit, limit)).collect();
        if tones.iter().all(|u| l2_dist(&u.f, &f) >= sep) {
            tones.push(CandidateTone { v: C64::new(0.0, 0.0), f, pass: 0, stage: usize::MAX, bin: usize::MAX });
            padded += 1;
        }
    }
    while tones.len() < k {
        tones.push(CandidateTone { v: C64::new(0.0, 0.0), f: vec![0.0; p.d], pass: 0, stage: usize::MAX, bin: usize::MAX });
        padded += 1;
    }
    Ok(Recovery { tones, first_pass: first, second_pass: second, padded })
}

/// Lattice points of spacing `sep` inside `[-F, F]^d`, row-major.
fn filler_grid(d: usize, band: f64, sep: f64) -> impl Iterator<Item = Vec<f64>> {
    let per = ((2.0 * band / sep).floor() as usize + 1).min(1 << 10);
    let total = per.saturating_pow(d as u32).min(1 << 20);
    (0..total).map(move |flat| {
        let idx = crate::numerics::unflatten(flat, per, d);
        idx.into_iter().map(|i| -band + sep * i as f64).collect()
    })
}

/// Provenance of an output tone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub pass: usize,
    pub bin: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToneOut {
    pub re: f64,
    pub im: f64,
    pub f: Vec<f64>,
    pub provenance: Provenance,
}

/// Contents of `tones.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TonesFile {
    pub k: usize,
    pub d: usize,
    pub tones: Vec<ToneOut>,
    pub config_echo: RecoveryConfig,
    pub seed: u64,
}

impl TonesFile {
    pub fn new(k: usize, cfg: &RecoveryConfig, tones: &[CandidateTone]) -> Self {
        Self {
            k,
            d: cfg.filter.d,
            tones: tones
                .iter()
                .map(|t| ToneOut {
                    re: t.v.re,
                    im: t.v.im,
                    f: t.f.clone(),
                    provenance: Provenance { pass: t.pass, bin: (t.bin != usize::MAX).then_some(t.bin) },
                })
                .collect(),
            config_echo: cfg.clone(),
            seed: cfg.seed,
        }
    }

    pub fn tones(&self) -> Vec<crate::signal::Tone> {
        self.tones.iter().map(|t| crate::signal::Tone::new(C64::new(t.re, t.im), t.f.clone())).collect()
    }
}

/// Flat bin index of `f` under `h`.
pub fn bin_of(h: &HashInstance, b: usize, f: &[f64]) -> usize {
    flat_index(&h.hash_bin(b, f), b)
}
