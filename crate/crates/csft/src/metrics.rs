//! Closed-form tone and signal errors over the centred box, Monte-Carlo oracles, tone matching
//! and SNR estimation.

use std::f64::consts::PI;

use pathfinding::prelude::{kuhn_munkres_min, Matrix};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::filters::Filter;
use crate::hashing::{ground_truth, sample_hash_instance};
use crate::locate::{initial_diameter, sample_time_point, search_rounds, LocateConfig};
use crate::numerics::{sinc1, C64};
use crate::recover::estimate_signal;
use crate::signal::{l2_dist, NoiseLevel, SignalOracle, Tone};

/// `prod_s sinc(T df_s)`, the mean of `exp(2 pi i df.t)` over `[-T/2, T/2]^d`.
pub fn sinc_box(df: &[f64], duration: f64) -> f64 {
    df.iter().map(|&x| sinc1(1.0, duration * x)).product()
}

fn diff(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// Mean of `|v e^{2 pi i f.t} - v2 e^{2 pi i f2.t}|^2` over the centred box.
pub fn tone_err_closed(v: C64, f: &[f64], v2: C64, f2: &[f64], duration: f64) -> f64 {
    let cross = (v * v2.conj()).re * sinc_box(&diff(f, f2), duration);
    (v.norm_sqr() + v2.norm_sqr() - 2.0 * cross).max(0.0)
}

/// A tone paired with its estimate, `a(t) = v e^{2 pi i f.t} - v' e^{2 pi i f'.t}`.
#[derive(Debug, Clone, PartialEq)]
pub struct TonePair {
    pub v: C64,
    pub f: Vec<f64>,
    pub v2: C64,
    pub f2: Vec<f64>,
}

impl TonePair {
    pub fn new(truth: &Tone, estimate: &Tone) -> Self {
        Self { v: truth.v, f: truth.f.clone(), v2: estimate.v, f2: estimate.f.clone() }
    }

    pub fn eval(&self, t: &[f64]) -> C64 {
        Tone::new(self.v, self.f.clone()).eval(t) - Tone::new(self.v2, self.f2.clone()).eval(t)
    }

    pub fn norm_sq(&self, duration: f64) -> f64 {
        tone_err_closed(self.v, &self.f, self.v2, &self.f2, duration)
    }
}

/// Complex inner product `<a_i, a_j>` over the centred box.
pub fn cross_tone_closed(i: &TonePair, j: &TonePair, duration: f64) -> C64 {
    let s = |x: &[f64], y: &[f64]| sinc_box(&diff(x, y), duration);
    i.v * j.v.conj() * s(&i.f, &j.f) - i.v * j.v2.conj() * s(&i.f, &j.f2) - i.v2 * j.v.conj() * s(&i.f2, &j.f)
        + i.v2 * j.v2.conj() * s(&i.f2, &j.f2)
}

/// `<a_i, a_j> + <a_j, a_i>`.
pub fn cross_err(i: &TonePair, j: &TonePair, duration: f64) -> f64 {
    2.0 * cross_tone_closed(i, j, duration).re
}

fn pairs(truth: &[Tone], recovered: &[Tone], d: usize) -> Vec<TonePair> {
    let zero = |f: &[f64]| Tone::new(C64::new(0.0, 0.0), f.to_vec());
    let n = truth.len().max(recovered.len());
    (0..n)
        .map(|i| {
            let t = truth.get(i).cloned();
            let r = recovered.get(i).cloned();
            let t = t.unwrap_or_else(|| zero(r.as_ref().map_or(&vec![0.0; d][..], |r| &r.f)));
            let r = r.unwrap_or_else(|| zero(&t.f));
            TonePair::new(&t, &r)
        })
        .collect()
}

/// Mean of `|sum_i x_i - sum_i x'_i|^2` over the centred box, with `truth[i]` paired to
/// `recovered[i]`; split into diagonal and off-diagonal terms.
pub fn signal_err(truth: &[Tone], recovered: &[Tone], duration: f64) -> f64 {
    let d = truth.first().or(recovered.first()).map_or(1, |t| t.f.len());
    let ps = pairs(truth, recovered, d);
    let mut total = 0.0;
    for i in 0..ps.len() {
        total += ps[i].norm_sq(duration);
        for j in 0..i {
            total += cross_err(&ps[i], &ps[j], duration);
        }
    }
    total.max(0.0)
}

/// Same quantity through the Gram matrix of all tones.
pub fn signal_err_gram(truth: &[Tone], recovered: &[Tone], duration: f64) -> f64 {
    let all: Vec<Tone> = truth
        .iter()
        .cloned()
        .chain(recovered.iter().map(|t| Tone::new(-t.v, t.f.clone())))
        .collect();
    let mut total = 0.0;
    for a in &all {
        for b in &all {
            total += (a.v * b.v.conj()).re * sinc_box(&diff(&a.f, &b.f), duration);
        }
    }
    total.max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
}

/// Plain Monte-Carlo mean of `g(t)` for `t` uniform on `[-T/2, T/2]^d`.
pub fn mc_mean<R: Rng + ?Sized>(g: impl Fn(&[f64]) -> f64, d: usize, duration: f64, n: usize, rng: &mut R) -> McEstimate {
    let mut t = vec![0.0; d];
    let (mut s1, mut s2) = (0.0, 0.0);
    for _ in 0..n {
        t.iter_mut().for_each(|x| *x = rng.random_range(-0.5..0.5) * duration);
        let y = g(&t);
        s1 += y;
        s2 += y * y;
    }
    let nf = n as f64;
    let mean = s1 / nf;
    let var = (s2 / nf - mean * mean).max(0.0) * nf / (nf - 1.0).max(1.0);
    McEstimate { mean, stderr: (var / nf).sqrt(), n }
}

/// Monte-Carlo mean whose sample count is chosen from a pilot run so the standard error is about
/// `target_rel` times the mean absolute value, capped at `cap`.
pub fn mc_auto<R: Rng + ?Sized>(
    g: impl Fn(&[f64]) -> f64,
    d: usize,
    duration: f64,
    target_rel: f64,
    cap: usize,
    rng: &mut R,
) -> McEstimate {
    let pilot_n = 10_000.min(cap);
    let pilot = mc_mean(&g, d, duration, pilot_n, rng);
    let scale = mc_mean(|t| g(t).abs(), d, duration, pilot_n, rng).mean;
    let sd = pilot.stderr * (pilot_n as f64).sqrt();
    let n = if scale > 0.0 { (sd / (target_rel * scale)).powi(2).ceil() as usize } else { pilot_n };
    mc_mean(g, d, duration, n.clamp(pilot_n, cap), rng)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedTone {
    pub truth: usize,
    pub recovered: usize,
    pub freq_err: f64,
    pub mag_err: f64,
    pub tone_err: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchReport {
    pub pairs: Vec<MatchedTone>,
    pub unmatched_truth: Vec<usize>,
    pub unmatched_recovered: Vec<usize>,
    pub tone_err_total: f64,
    pub freq_err_max: f64,
}

const EXACT_LIMIT: usize = 64;
const FORBIDDEN: i64 = 1 << 50;

/// Assign recovered tones to the truth. Pairs farther apart than `eta / 2` are never matched.
pub fn match_tones(truth: &[Tone], recovered: &[Tone], eta: f64, duration: f64) -> MatchReport {
    let allowed = |i: usize, j: usize| l2_dist(&truth[i].f, &recovered[j].f) <= eta / 2.0;
    let assignment = if truth.len().max(recovered.len()) <= EXACT_LIMIT {
        hungarian(truth, recovered, duration, &allowed)
    } else {
        greedy(truth, recovered, &allowed)
    };
    let mut pairs: Vec<MatchedTone> = assignment
        .into_iter()
        .map(|(i, j)| MatchedTone {
            truth: i,
            recovered: j,
            freq_err: l2_dist(&truth[i].f, &recovered[j].f),
            mag_err: (truth[i].v - recovered[j].v).norm(),
            tone_err: tone_err_closed(truth[i].v, &truth[i].f, recovered[j].v, &recovered[j].f, duration),
        })
        .collect();
    pairs.sort_by_key(|p| p.truth);
    let unmatched_truth = (0..truth.len()).filter(|i| pairs.iter().all(|p| p.truth != *i)).collect();
    let unmatched_recovered = (0..recovered.len()).filter(|j| pairs.iter().all(|p| p.recovered != *j)).collect();
    MatchReport {
        tone_err_total: pairs.iter().map(|p| p.tone_err).sum(),
        freq_err_max: pairs.iter().map(|p| p.freq_err).fold(0.0, f64::max),
        pairs,
        unmatched_truth,
        unmatched_recovered,
    }
}

fn hungarian(
    truth: &[Tone],
    recovered: &[Tone],
    duration: f64,
    allowed: &impl Fn(usize, usize) -> bool,
) -> Vec<(usize, usize)> {
    if truth.is_empty() || recovered.is_empty() {
        return Vec::new();
    }
    let scale = truth.iter().chain(recovered).map(|t| t.v.norm_sqr()).sum::<f64>().max(1e-300);
    let cost = |i: usize, j: usize| {
        if allowed(i, j) {
            let e = tone_err_closed(truth[i].v, &truth[i].f, recovered[j].v, &recovered[j].f, duration);
            (e / scale * 1e12).round() as i64
        } else {
            FORBIDDEN
        }
    };
    let transpose = truth.len() > recovered.len();
    let (rows, cols) = if transpose { (recovered.len(), truth.len()) } else { (truth.len(), recovered.len()) };
    let data: Vec<i64> = (0..rows)
        .flat_map(|r| (0..cols).map(move |c| (r, c)))
        .map(|(r, c)| if transpose { cost(c, r) } else { cost(r, c) })
        .collect();
    let m = Matrix::from_vec(rows, cols, data).expect("matrix shape");
    let (_, cols_of) = kuhn_munkres_min(&m);
    cols_of
        .into_iter()
        .enumerate()
        .map(|(r, c)| if transpose { (c, r) } else { (r, c) })
        .filter(|&(i, j)| allowed(i, j))
        .collect()
}

fn greedy(truth: &[Tone], recovered: &[Tone], allowed: &impl Fn(usize, usize) -> bool) -> Vec<(usize, usize)> {
    let mut cand: Vec<(f64, usize, usize)> = Vec::new();
    for i in 0..truth.len() {
        for j in 0..recovered.len() {
            if allowed(i, j) {
                cand.push((l2_dist(&truth[i].f, &recovered[j].f), i, j));
            }
        }
    }
    cand.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut used_t = vec![false; truth.len()];
    let mut used_r = vec![false; recovered.len()];
    let mut out = Vec::new();
    for (_, i, j) in cand {
        if !used_t[i] && !used_r[j] {
            used_t[i] = true;
            used_r[j] = true;
            out.push((i, j));
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SnrEstimate {
    pub mu: f64,
    pub rho: f64,
    /// Standard error of `mu^2`.
    pub stderr: f64,
    /// Trials kept after conditioning.
    pub used: usize,
}

/// Monte-Carlo estimate of the bin-measurement RMS error `mu` for `target` and `rho = |v| / mu`.
/// Draws where `target` collides with a planted tone or has a large offset are discarded.
pub fn snr_estimate<R: Rng + ?Sized>(
    oracle: &SignalOracle,
    filter: &Filter,
    cfg: &LocateConfig,
    target: &Tone,
    trials: usize,
    rng: &mut R,
) -> Result<SnrEstimate> {
    let p = filter.params();
    let duration = oracle.signal.duration;
    let mut freqs = vec![target.f.clone()];
    freqs.extend(oracle.signal.tones.iter().filter(|t| t.f != target.f).map(|t| t.f.clone()));
    let l = initial_diameter(p.d, p.band) / 2f64.powi(search_rounds(p.d, p.band, duration) as i32);
    let mut errs = Vec::with_capacity(trials);
    for _ in 0..trials {
        let h = sample_hash_instance(rng, p);
        if ground_truth::is_collision(&h, p.b, &freqs, 0) || ground_truth::is_large_offset(&h, p.b, p.alpha, &target.f) {
            continue;
        }
        let a = sample_time_point(rng, &h, filter, cfg, l, duration, false)?.a;
        let v = estimate_signal(oracle, &h, filter, &a, std::slice::from_ref(&target.f), false)?[0];
        errs.push((v - target.v).norm_sqr());
    }
    let n = errs.len().max(1) as f64;
    let mean = errs.iter().sum::<f64>() / n;
    let var = errs.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    let mu = mean.sqrt();
    let rho = if target.v.norm() == 0.0 {
        0.0
    } else if mu == 0.0 {
        f64::INFINITY
    } else {
        target.v.norm() / mu
    };
    Ok(SnrEstimate { mu, rho, stderr: (var / n).sqrt(), used: errs.len() })
}

/// A cross-tone audit instance.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossInstance {
    pub i: TonePair,
    pub j: TonePair,
}

impl CrossInstance {
    /// Smallest distance between `{f_i, f_i'}` and `{f_j, f_j'}`.
    pub fn delta_f(&self) -> f64 {
        [&self.i.f, &self.i.f2]
            .iter()
            .flat_map(|a| [&self.j.f, &self.j.f2].map(|b| l2_dist(a, b)))
            .fold(f64::INFINITY, f64::min)
    }

    /// `|err_ij| / (sqrt(d) / (df T) |a_i| |a_j|)`; zero when either tone error vanishes and the
    /// cross term does too.
    pub fn ratio(&self, duration: f64) -> f64 {
        let d = self.i.f.len() as f64;
        let err = cross_err(&self.i, &self.j, duration).abs();
        let bound = d.sqrt() / (self.delta_f() * duration)
            * self.i.norm_sq(duration).sqrt()
            * self.j.norm_sq(duration).sqrt();
        if bound == 0.0 {
            if err <= 1e-12 { 0.0 } else { f64::INFINITY }
        } else {
            err / bound
        }
    }
}

/// Random instance with `df * T = df_t` and `|f - f'| <= df` for both tones.
pub fn random_cross_instance<R: Rng + ?Sized>(rng: &mut R, d: usize, duration: f64, df_t: f64) -> CrossInstance {
    let df = df_t / duration;
    let unit = |rng: &mut R| -> Vec<f64> {
        let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
        v.into_iter().map(|x| x / n).collect()
    };
    let mag = |rng: &mut R| C64::from_polar(rng.random_range(0.5..2.0), rng.random_range(0.0..2.0 * PI));
    let fi: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let dir = unit(rng);
    // Place f_j so that every cross distance is at least df after the perturbations below.
    let fj: Vec<f64> = fi.iter().zip(&dir).map(|(a, u)| a + 3.0 * df * u).collect();
    let perturb = |rng: &mut R, f: &[f64]| -> Vec<f64> {
        let u = unit(rng);
        let r = rng.random_range(0.0..1.0) * df;
        f.iter().zip(&u).map(|(a, b)| a + r * b).collect()
    };
    let vi = mag(rng);
    let vj = mag(rng);
    let i = TonePair { v: vi, f: fi.clone(), v2: vi * C64::from_polar(rng.random_range(0.8..1.2), rng.random_range(-0.3..0.3)), f2: perturb(rng, &fi) };
    let j = TonePair { v: vj, f: fj.clone(), v2: vj * C64::from_polar(rng.random_range(0.8..1.2), rng.random_range(-0.3..0.3)), f2: perturb(rng, &fj) };
    CrossInstance { i, j }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrossAudit {
    pub instances: usize,
    pub max_ratio: f64,
    pub violations: usize,
}

/// Check `|err_ij| <= c sqrt(d) / (df T) |a_i| |a_j|` on every instance.
pub fn cross_tone_bound_audit(instances: &[CrossInstance], duration: f64, c: f64) -> CrossAudit {
    let ratios: Vec<f64> = instances.iter().map(|x| x.ratio(duration)).collect();
    CrossAudit {
        instances: instances.len(),
        max_ratio: ratios.iter().copied().fold(0.0, f64::max),
        violations: ratios.iter().filter(|&&r| r > c).count(),
    }
}

/// `|v - v*|^2 + |v*|^2 (1 - sinc_T(f - f*))`.
pub fn tone_err_approx(v: C64, f: &[f64], v_star: C64, f_star: &[f64], duration: f64) -> f64 {
    (v - v_star).norm_sqr() + v_star.norm_sqr() * (1.0 - sinc_box(&diff(f, f_star), duration))
}

/// `|v - v*|^2 + |v*|^2 min(1, T^2 |f - f*|^2)`.
pub fn tone_err_approx_min(v: C64, f: &[f64], v_star: C64, f_star: &[f64], duration: f64) -> f64 {
    let x = duration * l2_dist(f, f_star);
    (v - v_star).norm_sqr() + v_star.norm_sqr() * (x * x).min(1.0)
}

/// Range of `err / approx` over the given pairs.
pub fn sandwich_range(pairs: &[TonePair], duration: f64, approx: impl Fn(&TonePair) -> f64) -> (f64, f64) {
    pairs.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), p| {
        let a = approx(p);
        if a == 0.0 {
            return (lo, hi);
        }
        let r = p.norm_sq(duration) / a;
        (lo.min(r), hi.max(r))
    })
}

/// Smallest ratio `|f_1 - f_j| / ((j - 1)^{1/d} eta / sqrt d)` over every choice of `f_1`, with
/// the others sorted by distance.
pub fn geometric_audit(freqs: &[Vec<f64>], eta: f64) -> f64 {
    let mut worst = f64::INFINITY;
    for (a, fa) in freqs.iter().enumerate() {
        let d = fa.len() as f64;
        let mut dist: Vec<f64> = freqs.iter().enumerate().filter(|(b, _)| *b != a).map(|(_, fb)| l2_dist(fa, fb)).collect();
        dist.sort_by(f64::total_cmp);
        for (idx, r) in dist.iter().enumerate() {
            let j = idx + 2;
            let scale = ((j - 1) as f64).powf(1.0 / d) * eta / d.sqrt();
            worst = worst.min(r / scale);
        }
    }
    worst
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerTone {
    pub truth: usize,
    pub recovered: usize,
    pub freq_err_l2: f64,
    pub mag_err: f64,
    pub tone_err_closed: f64,
}

/// Contents of `metrics.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsFile {
    pub matched: usize,
    pub per_tone: Vec<PerTone>,
    pub tone_err_total: f64,
    pub signal_err: f64,
    pub noise_level: NoiseLevel,
    pub snr: Vec<SnrEstimate>,
    pub unmatched_truth: Vec<usize>,
    pub unmatched_recovered: Vec<usize>,
}

impl MetricsFile {
    pub fn new(truth: &[Tone], recovered: &[Tone], eta: f64, duration: f64, noise_level: NoiseLevel, snr: Vec<SnrEstimate>) -> Self {
        let report = match_tones(truth, recovered, eta, duration);
        let paired: Vec<Tone> = truth
            .iter()
            .enumerate()
            .map(|(i, t)| match report.pairs.iter().find(|p| p.truth == i) {
                Some(p) => recovered[p.recovered].clone(),
                None => Tone::new(C64::new(0.0, 0.0), t.f.clone()),
            })
            .chain(report.unmatched_recovered.iter().map(|&j| recovered[j].clone()))
            .collect();
        let mut truth_ext = truth.to_vec();
        truth_ext.extend(report.unmatched_recovered.iter().map(|&j| Tone::new(C64::new(0.0, 0.0), recovered[j].f.clone())));
        Self {
            matched: report.pairs.len(),
            per_tone: report
                .pairs
                .iter()
                .map(|p| PerTone {
                    truth: p.truth,
                    recovered: p.recovered,
                    freq_err_l2: p.freq_err,
                    mag_err: p.mag_err,
                    tone_err_closed: p.tone_err,
                })
                .collect(),
            tone_err_total: report.tone_err_total,
            signal_err: signal_err(&truth_ext, &paired, duration),
            noise_level,
            snr,
            unmatched_truth: report.unmatched_truth,
            unmatched_recovered: report.unmatched_recovered,
        }
    }
}
