//! Frequency location: time-point sampling, coarse voting rounds and the least-squares fine step.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::filters::Filter;
use crate::hash2bins::{hash_to_bins, time_footprint, BinSketch};
use crate::hashing::HashInstance;
use crate::numerics::{circ_dist, unflatten, wrap_phase};
use crate::signal::Oracle;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocateConfig {
    /// Guessed approximation ratio.
    #[serde(rename = "C")]
    pub c_ratio: f64,
    pub varpi: f64,
    #[serde(rename = "M")]
    pub m: usize,
    pub r_vote: usize,
    pub r_reg: usize,
    pub c_star: f64,
    /// Clamp `|Sigma^T da|` to `1/L` in the fine step.
    pub clamp_fine: bool,
}

impl LocateConfig {
    pub fn new(c_ratio: f64, d: usize, band: f64, eta: f64) -> Result<Self> {
        if !(c_ratio >= 120.0 && c_ratio.is_finite()) {
            return Err(invalid(format!("C = {c_ratio} must be at least 120")));
        }
        if d == 0 || !(band > 0.0 && eta > 0.0) {
            return Err(invalid("d, F and eta must be positive"));
        }
        let df = d as f64;
        let varpi = c_ratio.powf(-2.0 / 3.0);
        let m = 4 * (4.0 * df.sqrt() * c_ratio.powf(2.0 / 3.0)).ceil() as usize;
        let lnln = (band / eta + std::f64::consts::E).ln().ln();
        let r_vote = (3.0 * (df * (c_ratio * df).ln() + lnln)).ceil() as usize + 5;
        Ok(Self { c_ratio, varpi, m, r_vote, r_reg: 10 * d, c_star: df * df, clamp_fine: true })
    }

    pub fn validate(&self) -> Result<()> {
        if self.m < 4 || !self.m.is_multiple_of(4) {
            return Err(invalid(format!("M = {} must be a positive multiple of 4", self.m)));
        }
        if self.r_vote == 0 || self.r_reg == 0 {
            return Err(invalid("vote and regression round counts must be positive"));
        }
        if !(self.varpi > 0.0 && self.varpi < 1.0) {
            return Err(invalid("varpi must lie in (0, 1)"));
        }
        Ok(())
    }

    /// Vote threshold `ceil(R_vote / 2)`.
    pub fn threshold(&self) -> usize {
        self.r_vote.div_ceil(2)
    }

    /// Covering count bound `(4 M sqrt(d))^d`.
    pub fn covering_bound(&self, d: usize) -> f64 {
        (4.0 * self.m as f64 * (d as f64).sqrt()).powi(d as i32)
    }
}

/// Initial hypothesis diameter `2 sqrt(d) F`.
pub fn initial_diameter(d: usize, band: f64) -> f64 {
    2.0 * (d as f64).sqrt() * band
}

/// Number of halvings taking the initial diameter into `(20d/T, 40d/T]`.
pub fn search_rounds(d: usize, band: f64, duration: f64) -> usize {
    let target = 40.0 * d as f64 / duration;
    let mut l = initial_diameter(d, band);
    let mut r = 0;
    while l > target {
        l /= 2.0;
        r += 1;
    }
    r
}

/// Per-bin frequency hypotheses sharing one diameter.
#[derive(Debug, Clone, PartialEq)]
pub struct HypothesisTable {
    pub centers: Vec<Option<Vec<f64>>>,
    pub diameter: f64,
}

impl HypothesisTable {
    pub fn new(bins: usize, d: usize, diameter: f64) -> Self {
        Self { centers: vec![Some(vec![0.0; d]); bins], diameter }
    }

    pub fn active(&self) -> usize {
        self.centers.iter().filter(|c| c.is_some()).count()
    }
}

/// A time shift `a` and a difference `da`, together with `z = Sigma^T da`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimePair {
    pub a: Vec<f64>,
    pub da: Vec<f64>,
    pub z: Vec<f64>,
    /// `z` before the fine-step clamp.
    pub z_raw: Vec<f64>,
}

impl TimePair {
    pub fn shifted(&self) -> Vec<f64> {
        self.a.iter().zip(&self.da).map(|(x, y)| x + y).collect()
    }
}

/// Per-coordinate margin kept free at both ends of `[0, T]`.
pub fn time_margin(h: &HashInstance, filter: &Filter, duration: f64) -> Vec<f64> {
    let d = h.d as f64;
    time_footprint(h, filter).into_iter().map(|m| m.max(0.01 * duration / d)).collect()
}

pub fn sample_time_point<R: Rng + ?Sized>(
    rng: &mut R,
    h: &HashInstance,
    filter: &Filter,
    cfg: &LocateConfig,
    l: f64,
    duration: f64,
    fine: bool,
) -> Result<TimePair> {
    let d = h.d;
    let mut dir: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let norm = dir.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        dir[0] = 1.0;
    } else {
        dir.iter_mut().for_each(|x| *x /= norm);
    }
    let lo = cfg.varpi * cfg.m as f64 / (4.0 * l);
    let s = rng.random_range(lo..=2.0 * lo);
    let z_raw: Vec<f64> = dir.iter().map(|x| x * s).collect();
    let scale = if fine && cfg.clamp_fine { s.min(1.0 / l) } else { s };
    let z: Vec<f64> = dir.iter().map(|x| x * scale).collect();

    let margin = time_margin(h, filter, duration);
    let mut base = Vec::with_capacity(d);
    for r in 0..d {
        let lo = margin[r] + (-z[r]).max(0.0);
        let hi = duration - margin[r] - z[r].max(0.0);
        if lo > hi {
            return Err(Error::DurationTooShort(format!(
                "no room for a time pair at diameter {l}: coordinate {r} needs {} but T = {duration}",
                duration + lo - hi
            )));
        }
        base.push(rng.random_range(lo..=hi));
    }
    Ok(TimePair { a: h.sigma_inv_t_apply(&base), da: h.sigma_inv_t_apply(&z), z, z_raw })
}

/// Check that the largest time pair used by the search fits into `[0, T]^d`.
pub fn check_duration(h: &HashInstance, filter: &Filter, cfg: &LocateConfig, band: f64, duration: f64) -> Result<()> {
    let d = h.d;
    let r = search_rounds(d, band, duration);
    let l_min = initial_diameter(d, band) / 2f64.powi(r as i32);
    let reach = cfg.varpi * cfg.m as f64 / (2.0 * l_min);
    for (c, m) in time_margin(h, filter, duration).iter().enumerate() {
        if 2.0 * m + reach > duration {
            return Err(Error::DurationTooShort(format!(
                "coordinate {c} needs {} but T = {duration}",
                2.0 * m + reach
            )));
        }
    }
    Ok(())
}

/// [`check_duration`] for the worst hash instance: every row of `Sigma` has `l1` norm at most
/// `beta_max sqrt(d)`.
pub fn check_duration_any(filter: &Filter, cfg: &LocateConfig, duration: f64) -> Result<()> {
    let p = filter.params();
    let d = p.d as f64;
    let (_, beta_max) = crate::hashing::beta_range(p);
    let footprint = filter.tap_radius() as f64 * beta_max * d.sqrt();
    let margin = footprint.max(0.01 * duration / d);
    let r = search_rounds(p.d, p.band, duration);
    let l_min = initial_diameter(p.d, p.band) / 2f64.powi(r as i32);
    let need = 2.0 * margin + cfg.varpi * cfg.m as f64 / (2.0 * l_min);
    if need > duration {
        return Err(Error::DurationTooShort(format!("the sampling pattern needs {need} but T = {duration}")));
    }
    Ok(())
}

/// Smallest duration on a geometric grid of ratio `2^(1/16)` above `duration` that passes
/// [`check_duration_any`].
pub fn sufficient_duration(filter: &Filter, cfg: &LocateConfig, duration: f64) -> f64 {
    let mut t = duration;
    while check_duration_any(filter, cfg, t).is_err() {
        t *= 2f64.powf(1.0 / 16.0);
    }
    t
}

/// Centres of the cells of spacing `L / (M sqrt d)` covering the closed ball of diameter `L`.
pub fn cover_ball(center: &[f64], l: f64, m: usize) -> Vec<Vec<f64>> {
    let g = Grid::new(center, l, m);
    let k = g.reach;
    let side = (2 * k + 1) as usize;
    let d = center.len();
    (0..side.pow(d as u32))
        .filter_map(|flat| {
            let idx: Vec<i64> = unflatten(flat, side, d).into_iter().map(|i| i as i64 - k).collect();
            g.in_ball(&idx).then(|| g.point(&idx))
        })
        .collect()
}

/// Phase difference `arg(u2 * conj(u1))`.
pub fn phase_diff(u1: crate::numerics::C64, u2: crate::numerics::C64) -> f64 {
    (u2 * u1.conj()).arg()
}

/// Whether a candidate frequency receives the vote of one round.
pub fn votes_for(phi: f64, z: &[f64], candidate: &[f64], varpi: f64) -> bool {
    let proj: f64 = z.iter().zip(candidate).map(|(a, b)| a * b).sum();
    circ_dist(phi - 2.0 * PI * proj) <= PI * varpi
}

/// Votes of one round for explicit candidate lists, one list per bin.
pub fn vote_round(u1: &BinSketch, u2: &BinSketch, candidates: &[Vec<Vec<f64>>], z: &[f64], varpi: f64) -> Vec<Vec<bool>> {
    candidates
        .iter()
        .enumerate()
        .map(|(j, list)| {
            let phi = phase_diff(u1.u_hat[j], u2.u_hat[j]);
            list.iter().map(|c| votes_for(phi, z, c, varpi)).collect()
        })
        .collect()
}

/// One phase observation `(z, phi)` for a single bin.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub z: Vec<f64>,
    pub phi: f64,
}

struct Grid {
    center: Vec<f64>,
    spacing: f64,
    radius: f64,
    reach: i64,
}

impl Grid {
    fn new(center: &[f64], l: f64, m: usize) -> Self {
        let d = center.len() as f64;
        let radius = (m as f64 + 1.0) * d.sqrt() / 2.0;
        Self {
            center: center.to_vec(),
            spacing: l / (m as f64 * d.sqrt()),
            radius,
            reach: (radius + 1e-9).floor() as i64,
        }
    }

    fn in_ball(&self, idx: &[i64]) -> bool {
        let n2: f64 = idx.iter().map(|&i| (i * i) as f64).sum();
        n2 <= self.radius * self.radius + 1e-9
    }

    fn point(&self, idx: &[i64]) -> Vec<f64> {
        self.center.iter().zip(idx).map(|(c, &i)| c + self.spacing * i as f64).collect()
    }
}

/// Result of one election.
#[derive(Debug, Clone, PartialEq)]
pub struct Election {
    /// Winning cells as `(grid index, votes)`, in lexicographic order.
    pub winners: Vec<(Vec<i64>, usize)>,
    pub center: Option<Vec<f64>>,
    /// Whether the argmax centre contained every winner.
    pub contained: bool,
}

struct Search<'a> {
    /// Residual phases at the ball centre, in turns.
    theta: Vec<f64>,
    /// Phase step per grid index, in turns, row-major by observation.
    kappa: Vec<f64>,
    d: usize,
    tol: f64,
    threshold: usize,
    grid: &'a Grid,
    winners: Vec<(Vec<i64>, usize)>,
}

/// Boxes with at most this many cells are enumerated instead of split.
const LEAF_CELLS: i64 = 64;

/// Distance from `x` to the nearest integer. Adding and subtracting `1.5 * 2^52` rounds to the
/// nearest integer for `|x| < 2^51` without a libm call.
fn turn_dist(x: f64) -> f64 {
    const MAGIC: f64 = 6_755_399_441_055_744.0;
    if x.abs() < 2f64.powi(51) {
        (x - ((x + MAGIC) - MAGIC)).abs()
    } else {
        (x - x.round()).abs()
    }
}

impl Search<'_> {
    fn bound(&self, mid: &[f64], half: &[f64]) -> usize {
        let total = self.theta.len();
        let mut count = 0;
        for (r, (theta, kappa)) in self.theta.iter().zip(self.kappa.chunks_exact(self.d)).enumerate() {
            let mut proj = 0.0;
            let mut slack = 0.0;
            for s in 0..self.d {
                proj += kappa[s] * mid[s];
                slack += kappa[s].abs() * half[s];
            }
            if turn_dist(theta - proj) <= self.tol + slack {
                count += 1;
            } else if count + (total - r - 1) < self.threshold {
                return count;
            }
        }
        count
    }

    fn box_outside_ball(&self, lo: &[i64], hi: &[i64]) -> bool {
        let n2: f64 = lo
            .iter()
            .zip(hi)
            .map(|(&a, &b)| {
                let x = if a > 0 { a } else if b < 0 { -b } else { 0 };
                (x * x) as f64
            })
            .sum();
        n2 > self.grid.radius * self.grid.radius + 1e-9
    }

    fn enumerate(&mut self, lo: &[i64], hi: &[i64]) {
        let d = lo.len();
        let zeros = vec![0.0; d];
        let mut idx = lo.to_vec();
        let mut at = vec![0.0; d];
        loop {
            if self.grid.in_ball(&idx) {
                at.iter_mut().zip(&idx).for_each(|(a, &i)| *a = i as f64);
                let votes = self.bound(&at, &zeros);
                if votes >= self.threshold {
                    self.winners.push((idx.clone(), votes));
                }
            }
            let mut s = d;
            loop {
                if s == 0 {
                    return;
                }
                s -= 1;
                if idx[s] < hi[s] {
                    idx[s] += 1;
                    break;
                }
                idx[s] = lo[s];
            }
        }
    }

    fn run(&mut self, lo: &mut Vec<i64>, hi: &mut Vec<i64>) {
        if self.box_outside_ball(lo, hi) {
            return;
        }
        let d = self.d;
        let mut stack = [0.0; 16];
        let mut heap = Vec::new();
        let buf: &mut [f64] = if d <= 8 {
            &mut stack[..2 * d]
        } else {
            heap.resize(2 * d, 0.0);
            &mut heap
        };
        let (mid, half) = buf.split_at_mut(d);
        for s in 0..d {
            mid[s] = (lo[s] + hi[s]) as f64 / 2.0;
            half[s] = (hi[s] - lo[s]) as f64 / 2.0;
        }
        if self.bound(mid, half) < self.threshold {
            return;
        }
        let cells = lo.iter().zip(hi.iter()).try_fold(1i64, |acc, (&a, &b)| acc.checked_mul(b - a + 1));
        if cells.is_some_and(|c| c <= LEAF_CELLS) {
            self.enumerate(lo, hi);
            return;
        }
        let (axis, width) = lo
            .iter()
            .zip(hi.iter())
            .map(|(&a, &b)| b - a)
            .enumerate()
            .fold((0, 0), |best, (s, w)| if w > best.1 { (s, w) } else { best });
        let split = lo[axis] + width / 2;
        let saved = hi[axis];
        hi[axis] = split;
        self.run(lo, hi);
        hi[axis] = saved;
        let saved = lo[axis];
        lo[axis] = split + 1;
        self.run(lo, hi);
        lo[axis] = saved;
    }
}

/// Elect the cells of the ball `(center, L)` holding at least `threshold` of the observations.
pub fn elect(center: &[f64], l: f64, m: usize, varpi: f64, obs: &[Observation], threshold: usize) -> Election {
    let grid = Grid::new(center, l, m);
    let d = center.len();
    let mut search = Search {
        theta: obs
            .iter()
            .map(|o| {
                let proj: f64 = o.z.iter().zip(center).map(|(a, b)| a * b).sum();
                o.phi / (2.0 * PI) - proj
            })
            .collect(),
        kappa: obs.iter().flat_map(|o| o.z.iter().map(|x| grid.spacing * x)).collect(),
        d,
        tol: varpi / 2.0,
        threshold: threshold.max(1),
        grid: &grid,
        winners: Vec::new(),
    };
    let mut lo = vec![-grid.reach; d];
    let mut hi = vec![grid.reach; d];
    search.run(&mut lo, &mut hi);
    let mut winners = search.winners;
    winners.sort();
    if winners.is_empty() {
        return Election { winners, center: None, contained: false };
    }
    let best = winners
        .iter()
        .fold(&winners[0], |acc, w| if w.1 > acc.1 { w } else { acc });
    let star = best.0.clone();
    let cell = l / (2.0 * m as f64);
    let contained = winners.iter().all(|(idx, _)| {
        let dist = idx
            .iter()
            .zip(&star)
            .map(|(&a, &b)| ((a - b) as f64 * grid.spacing).powi(2))
            .sum::<f64>()
            .sqrt();
        dist + cell <= l / 4.0 + 1e-12 * l
    });
    let new_center = if contained {
        grid.point(&star)
    } else {
        (0..d)
            .map(|s| {
                let lo = winners.iter().map(|w| w.0[s]).min().unwrap();
                let hi = winners.iter().map(|w| w.0[s]).max().unwrap();
                center[s] + grid.spacing * (lo + hi) as f64 / 2.0
            })
            .collect()
    };
    Election { winners, center: Some(new_center), contained }
}

fn sketch_pair(
    oracle: &dyn Oracle,
    h: &HashInstance,
    filter: &Filter,
    pair: &TimePair,
) -> Result<(BinSketch, BinSketch)> {
    let u1 = hash_to_bins(oracle, h, &pair.a, filter)?;
    let u2 = hash_to_bins(oracle, h, &pair.shifted(), filter)?;
    Ok((u1, u2))
}

/// `R_vote` voting rounds followed by one election per active bin; halves the diameter.
pub fn locate_inner<R: Rng + ?Sized>(
    oracle: &dyn Oracle,
    h: &HashInstance,
    filter: &Filter,
    cfg: &LocateConfig,
    table: &HypothesisTable,
    rng: &mut R,
) -> Result<HypothesisTable> {
    let l = table.diameter;
    let mut out = HypothesisTable { centers: vec![None; table.centers.len()], diameter: l / 2.0 };
    if table.active() == 0 {
        return Ok(out);
    }
    let mut obs: Vec<Vec<Observation>> = vec![Vec::with_capacity(cfg.r_vote); table.centers.len()];
    for _ in 0..cfg.r_vote {
        let pair = sample_time_point(rng, h, filter, cfg, l, oracle.duration(), false)?;
        let (u1, u2) = sketch_pair(oracle, h, filter, &pair)?;
        for (j, c) in table.centers.iter().enumerate() {
            if c.is_some() {
                obs[j].push(Observation { z: pair.z.clone(), phi: phase_diff(u1.u_hat[j], u2.u_hat[j]) });
            }
        }
    }
    for (j, c) in table.centers.iter().enumerate() {
        if let Some(center) = c {
            out.centers[j] = elect(center, l, cfg.m, cfg.varpi, &obs[j], cfg.threshold()).center;
        }
    }
    Ok(out)
}

/// A located frequency for one bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Located {
    pub bin: usize,
    pub f: Vec<f64>,
    pub coarse: Vec<f64>,
    /// False when the regression matrix was rank deficient and `f` is the coarse centre.
    pub refined: bool,
}

/// Least-squares solve of `2 pi Z (f - f0) = wrap(phi - 2 pi Z f0)`.
pub fn refine(f0: &[f64], obs: &[Observation]) -> Option<Vec<f64>> {
    let d = f0.len();
    let n = obs.len();
    if n < d {
        return None;
    }
    let z = DMatrix::from_fn(n, d, |r, s| 2.0 * PI * obs[r].z[s]);
    let psi = DVector::from_fn(n, |r, _| {
        let proj: f64 = obs[r].z.iter().zip(f0).map(|(a, b)| a * b).sum();
        wrap_phase(obs[r].phi - 2.0 * PI * proj)
    });
    let svd = z.svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smax > 0.0) || smin <= 1e-10 * smax {
        return None;
    }
    let step = svd.solve(&psi, 0.0).ok()?;
    Some(f0.iter().zip(step.iter()).map(|(a, b)| a + b).collect())
}

/// `R_reg` observations with clamped time differences, then one least-squares solve per active bin.
pub fn locate_inner_fine<R: Rng + ?Sized>(
    oracle: &dyn Oracle,
    h: &HashInstance,
    filter: &Filter,
    cfg: &LocateConfig,
    table: &HypothesisTable,
    rng: &mut R,
) -> Result<Vec<Located>> {
    let l = table.diameter;
    if table.active() == 0 {
        return Ok(Vec::new());
    }
    let mut obs: Vec<Vec<Observation>> = vec![Vec::with_capacity(cfg.r_reg); table.centers.len()];
    for _ in 0..cfg.r_reg {
        let pair = sample_time_point(rng, h, filter, cfg, l, oracle.duration(), true)?;
        let (u1, u2) = sketch_pair(oracle, h, filter, &pair)?;
        for (j, c) in table.centers.iter().enumerate() {
            if c.is_some() {
                obs[j].push(Observation { z: pair.z.clone(), phi: phase_diff(u1.u_hat[j], u2.u_hat[j]) });
            }
        }
    }
    Ok(table
        .centers
        .iter()
        .enumerate()
        .filter_map(|(j, c)| {
            let center = c.as_ref()?;
            let fine = refine(center, &obs[j]);
            Some(Located {
                bin: j,
                refined: fine.is_some(),
                f: fine.unwrap_or_else(|| center.clone()),
                coarse: center.clone(),
            })
        })
        .collect())
}

/// Full search from the diameter `2 sqrt(d) F` down to `(20d/T, 40d/T]`, then the fine step.
pub fn locate_signal<R: Rng + ?Sized>(
    oracle: &dyn Oracle,
    h: &HashInstance,
    filter: &Filter,
    cfg: &LocateConfig,
    rng: &mut R,
) -> Result<Vec<Located>> {
    let p = filter.params();
    cfg.validate()?;
    check_duration(h, filter, cfg, p.band, oracle.duration())?;
    let mut table = HypothesisTable::new(p.bins(), p.d, initial_diameter(p.d, p.band));
    for _ in 0..search_rounds(p.d, p.band, oracle.duration()) {
        table = locate_inner(oracle, h, filter, cfg, &table, rng)?;
    }
    locate_inner_fine(oracle, h, filter, cfg, &table, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filters::{derive_params, ParamOverrides};
    use crate::hashing::sample_hash_instance;
    use crate::numerics::C64;
    use crate::signal::{NoiseModel, SignalOracle, SparseSignal, Tone};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(d: usize, duration_scale: f64, seed: u64) -> (Filter, HashInstance, LocateConfig, f64, ChaCha8Rng) {
        let ov = ParamOverrides { ell: Some(2), alpha: Some(0.5), c_b: Some(1.0), ..ParamOverrides::desk() };
        let p = derive_params(1, d, 0.1, 1.0, 1.0, &ov).unwrap();
        let filter = Filter::new(p.clone()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = sample_hash_instance(&mut rng, &p);
        let cfg = LocateConfig::new(120.0, d, 1.0, 1.0).unwrap();
        (filter, h, cfg, duration_scale * d as f64, rng)
    }

    #[test]
    fn worst_case_check_implies_instance_check() {
        let (filter, _, cfg, _, mut rng) = setup(2, 1.0, 11);
        let t = sufficient_duration(&filter, &cfg, 10.0);
        assert!(check_duration_any(&filter, &cfg, t).is_ok());
        assert!(check_duration_any(&filter, &cfg, t / 2f64.powf(1.0 / 16.0)).is_err());
        for _ in 0..50 {
            let h = sample_hash_instance(&mut rng, filter.params());
            assert!(check_duration(&h, &filter, &cfg, 1.0, t).is_ok());
        }
    }

    #[test]
    fn config_defaults() {
        let c = LocateConfig::new(120.0, 2, 1.0, 1.0).unwrap();
        assert_eq!(c.m, 552);
        assert_eq!(c.r_vote, 39);
        assert_eq!(c.r_reg, 20);
        assert_eq!(c.threshold(), 20);
        assert!((c.varpi - 120f64.powf(-2.0 / 3.0)).abs() < 1e-15);
        assert!(LocateConfig::new(100.0, 2, 1.0, 1.0).is_err());
    }

    #[test]
    fn search_rounds_land_in_target_window() {
        for &(d, f, t) in &[(1, 1.0, 200.0), (2, 3.0, 1000.0), (3, 0.5, 900.0)] {
            let r = search_rounds(d, f, t);
            let l = initial_diameter(d, f) / 2f64.powi(r as i32);
            assert!(l > 20.0 * d as f64 / t && l <= 40.0 * d as f64 / t);
        }
    }

    #[test]
    fn time_point_direction_in_one_dimension() {
        let (filter, h, cfg, _, mut rng) = setup(1, 200.0, 1);
        let mut plus = 0;
        let n = 4000;
        for _ in 0..n {
            let tp = sample_time_point(&mut rng, &h, &filter, &cfg, 0.5, 200.0, false).unwrap();
            if tp.z[0] > 0.0 {
                plus += 1;
            }
        }
        let sd = (n as f64 * 0.25).sqrt();
        assert!((plus as f64 - n as f64 / 2.0).abs() < 4.0 * sd);
    }

    #[test]
    fn time_point_norm_and_box() {
        let (filter, h, cfg, _, mut rng) = setup(2, 200.0, 2);
        let l = 0.3;
        let t = 400.0;
        let margin = time_margin(&h, &filter, t);
        let lo = cfg.varpi * cfg.m as f64 / (4.0 * l);
        for _ in 0..10_000 {
            let tp = sample_time_point(&mut rng, &h, &filter, &cfg, l, t, false).unwrap();
            let n = tp.z.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!(n >= lo * (1.0 - 1e-12) && n <= 2.0 * lo * (1.0 + 1e-12));
            for pt in [h.apply_t(&tp.a), h.apply_t(&tp.shifted())] {
                for (x, m) in pt.iter().zip(&margin) {
                    assert!(*x >= m - 1e-6 && *x <= t - m + 1e-6);
                }
            }
        }
    }

    #[test]
    fn time_point_base_marginal_is_uniform() {
        let (filter, h, cfg, _, mut rng) = setup(1, 200.0, 3);
        let l = 1.0;
        let t = 400.0;
        let margin = time_margin(&h, &filter, t)[0];
        // Condition on the sign of z so the feasible interval is fixed, then KS against uniform.
        let reach = 0.0;
        let mut xs = Vec::new();
        while xs.len() < 2000 {
            let tp = sample_time_point(&mut rng, &h, &filter, &cfg, l, t, false).unwrap();
            if tp.z[0] > reach {
                let lo = margin;
                let hi = t - margin - tp.z[0];
                xs.push((h.apply_t(&tp.a)[0] - lo) / (hi - lo));
            }
        }
        xs.sort_by(f64::total_cmp);
        let n = xs.len() as f64;
        let ks = xs
            .iter()
            .enumerate()
            .map(|(i, &x)| ((i + 1) as f64 / n - x).abs().max((x - i as f64 / n).abs()))
            .fold(0.0, f64::max);
        assert!(ks < 1.63 / n.sqrt(), "ks = {ks}");
    }

    #[test]
    fn empty_region_is_a_duration_error() {
        let (filter, h, cfg, _, mut rng) = setup(1, 200.0, 4);
        let err = sample_time_point(&mut rng, &h, &filter, &cfg, 1e-3, 50.0, false).unwrap_err();
        assert!(matches!(err, Error::DurationTooShort(_)));
    }

    #[test]
    fn cover_ball_one_dimension() {
        let c = cover_ball(&[0.0], 1.0, 4);
        let xs: Vec<f64> = c.iter().map(|v| v[0]).collect();
        assert_eq!(xs, vec![-0.5, -0.25, 0.0, 0.25, 0.5]);
        for i in 0..=1000 {
            let f = -0.5 + i as f64 / 1000.0;
            assert!(xs.iter().any(|x| (x - f).abs() <= 1.0 / 8.0 + 1e-12));
        }
    }

    #[test]
    fn cover_ball_covers_and_respects_count_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for d in 1..=3 {
            let m = 8;
            let centre: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            let l = 0.7;
            let cells = cover_ball(&centre, l, m);
            assert!((cells.len() as f64) <= (4.0 * m as f64 * (d as f64).sqrt()).powi(d));
            for _ in 0..10_000 {
                let mut u: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
                let n = u.iter().map(|x| x * x).sum::<f64>().sqrt();
                let r = l / 2.0 * rng.random::<f64>().powf(1.0 / d as f64);
                u.iter_mut().for_each(|x| *x *= r / n);
                let f: Vec<f64> = centre.iter().zip(&u).map(|(a, b)| a + b).collect();
                let best = cells
                    .iter()
                    .map(|c| c.iter().zip(&f).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt())
                    .fold(f64::INFINITY, f64::min);
                assert!(best <= l / (2.0 * m as f64) + 1e-12);
            }
        }
    }

    fn brute_elect(center: &[f64], l: f64, m: usize, varpi: f64, obs: &[Observation], thr: usize) -> Vec<usize> {
        cover_ball(center, l, m)
            .iter()
            .map(|c| obs.iter().filter(|o| votes_for(o.phi, &o.z, c, varpi)).count())
            .filter(|&v| v >= thr)
            .collect()
    }

    #[test]
    fn branch_and_bound_matches_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for trial in 0..40 {
            let d = 1 + trial % 3;
            let m = 12;
            let l = 2.0;
            let varpi = 0.2;
            let centre: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            let truth: Vec<f64> = centre.iter().map(|c| c + rng.random_range(-0.3..0.3)).collect();
            let obs: Vec<Observation> = (0..15)
                .map(|_| {
                    let z: Vec<f64> = (0..d).map(|_| rng.random_range(-5.0..5.0)).collect();
                    let proj: f64 = z.iter().zip(&truth).map(|(a, b)| a * b).sum();
                    let noise = if rng.random_bool(0.3) { rng.random_range(-PI..PI) } else { 0.0 };
                    Observation { phi: wrap_phase(2.0 * PI * proj + noise), z }
                })
                .collect();
            let thr = 6;
            let e = elect(&centre, l, m, varpi, &obs, thr);
            let mut got: Vec<usize> = e.winners.iter().map(|w| w.1).collect();
            let mut want = brute_elect(&centre, l, m, varpi, &obs, thr);
            got.sort();
            want.sort();
            assert_eq!(got, want, "trial {trial}");
        }
    }

    #[test]
    fn exact_phases_elect_the_true_cell() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let cfg = LocateConfig::new(120.0, 2, 1.0, 1.0).unwrap();
        for _ in 0..20 {
            let l = 1.0;
            let truth = vec![rng.random_range(-0.4..0.4), rng.random_range(-0.4..0.4)];
            let obs: Vec<Observation> = (0..cfg.r_vote)
                .map(|_| {
                    let ang = rng.random_range(0.0..2.0 * PI);
                    let s = rng.random_range(1.0..2.0) * cfg.varpi * cfg.m as f64 / (4.0 * l);
                    let z = vec![s * ang.cos(), s * ang.sin()];
                    let proj: f64 = z.iter().zip(&truth).map(|(a, b)| a * b).sum();
                    Observation { phi: wrap_phase(2.0 * PI * proj), z }
                })
                .collect();
            let e = elect(&[0.0, 0.0], l, cfg.m, cfg.varpi, &obs, cfg.threshold());
            let c = e.center.unwrap();
            let dist = c.iter().zip(&truth).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            assert!(dist <= l / 4.0, "{dist}");
        }
    }

    #[test]
    fn identical_sketches_vote_for_phase_zero_candidates() {
        let u = BinSketch { b: 2, d: 1, a: vec![0.0], u_hat: vec![C64::new(1.0, 2.0), C64::new(-0.5, 0.1)] };
        let z = [4.0];
        let cands = vec![vec![vec![0.0], vec![0.25], vec![0.1]], vec![vec![0.5]]];
        let v = vote_round(&u, &u, &cands, &z, 0.01);
        assert_eq!(v, vec![vec![true, true, false], vec![true]]);
    }

    #[test]
    fn refine_one_dimension_exact() {
        let f = 0.123_456;
        let obs = [Observation { z: vec![2.0], phi: wrap_phase(2.0 * PI * 2.0 * f) }];
        let got = refine(&[0.1], &obs).unwrap();
        assert!((got[0] - f).abs() < 1e-14);
        assert!(refine(&[0.0, 0.0], &obs).is_none());
    }

    fn tone_oracle(d: usize, f: Vec<f64>, duration: f64) -> SignalOracle {
        let sig = SparseSignal::new(d, 1.0, 1.0, duration, vec![Tone::new(C64::new(1.2, -0.4), f)]).unwrap();
        SignalOracle::new(sig, NoiseModel::none())
    }

    #[test]
    fn all_nil_stays_nil() {
        let (filter, h, cfg, t, mut rng) = setup(1, 200.0, 8);
        let o = tone_oracle(1, vec![0.3], t);
        let table = HypothesisTable { centers: vec![None; filter.params().bins()], diameter: 1.0 };
        let out = locate_inner(&o, &h, &filter, &cfg, &table, &mut rng).unwrap();
        assert_eq!(out.active(), 0);
        assert_eq!(out.diameter, 0.5);
        assert_eq!(o.samples_taken(), 0);
    }

    #[test]
    fn chained_rounds_shrink_onto_the_tone() {
        let (filter, h, cfg, t, mut rng) = setup(1, 200.0, 9);
        let f = vec![0.377];
        let o = tone_oracle(1, f.clone(), t);
        let j = flat_bin(&h, &filter, &f);
        let l0 = initial_diameter(1, 1.0);
        let mut table = HypothesisTable::new(filter.params().bins(), 1, l0);
        for _ in 0..5 {
            table = locate_inner(&o, &h, &filter, &cfg, &table, &mut rng).unwrap();
        }
        let c = table.centers[j].as_ref().unwrap();
        assert!((c[0] - f[0]).abs() <= l0 / 32.0);
    }

    #[test]
    fn exact_centre_survives() {
        let (filter, h, cfg, t, mut rng) = setup(1, 200.0, 10);
        let f = vec![-0.61];
        let o = tone_oracle(1, f.clone(), t);
        let j = flat_bin(&h, &filter, &f);
        let mut table = HypothesisTable { centers: vec![None; filter.params().bins()], diameter: 0.5 };
        table.centers[j] = Some(f.clone());
        for _ in 0..3 {
            table = locate_inner(&o, &h, &filter, &cfg, &table, &mut rng).unwrap();
            let c = table.centers[j].as_ref().unwrap();
            assert!((c[0] - f[0]).abs() <= table.diameter / 2.0);
        }
    }

    fn flat_bin(h: &HashInstance, filter: &Filter, f: &[f64]) -> usize {
        crate::numerics::flat_index(&h.hash_bin(filter.params().b, f), filter.params().b)
    }

    #[test]
    fn noiseless_locate_signal_two_dimensions() {
        let (filter, h, cfg, t, mut rng) = setup(2, 200.0, 11);
        let f = vec![0.21, -0.47];
        let o = tone_oracle(2, f.clone(), t);
        let out = locate_signal(&o, &h, &filter, &cfg, &mut rng).unwrap();
        assert!(out.len() <= filter.params().bins());
        let hit = out
            .iter()
            .find(|x| crate::signal::l2_dist(&x.coarse, &f) <= 40.0 * 2.0 / t)
            .expect("coarse hit");
        assert!(crate::signal::l2_dist(&hit.f, &f) <= 1e-4 / t);
    }

    #[test]
    fn regression_matrix_is_well_conditioned() {
        let (filter, h, cfg, _, mut rng) = setup(2, 200.0, 12);
        let t = 2000.0;
        let d = 2;
        let l = 30.0 * d as f64 / t;
        for _ in 0..100 {
            let rows: Vec<Vec<f64>> = (0..10 * d)
                .map(|_| sample_time_point(&mut rng, &h, &filter, &cfg, l, t, true).unwrap().z_raw)
                .collect();
            let z = DMatrix::from_fn(rows.len(), d, |r, s| rows[r][s]);
            let smin = z.singular_values().min();
            assert!(smin >= t / (4.0 * d as f64), "{smin}");
        }
    }
}
