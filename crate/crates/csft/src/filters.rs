//! Building-block window `(G, G_hat)`, its shifted single-dimension filter, the
//! tensor-product multi-dimension filter and the lattice tap cache used by
//! [`crate::hash2bins`].

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::numerics::{box_selfconv, sinc1, Quadrature};

/// Rule for the passband width `s2` of the building block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum S2Rule {
    /// `(1 - alpha/2) / B`: the passband edge sits in the middle of the transition band.
    Transition,
    /// `1 / B`: adjacent bins split a boundary tone evenly.
    FullBin,
    /// `1 / (B + B/d)`.
    Literal,
    Value(f64),
}

/// Optional pins for [`derive_params`]. Unset fields follow the default rules.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamOverrides {
    pub b: Option<usize>,
    pub alpha: Option<f64>,
    pub ell: Option<u32>,
    pub s2: Option<S2Rule>,
    pub w: Option<usize>,
    pub lattice_d: Option<usize>,
    pub c_b: Option<f64>,
    pub c_ell: Option<f64>,
    pub c_w: Option<f64>,
    pub c_d: Option<f64>,
}

impl ParamOverrides {
    /// Small-lattice profile used by the CLI and the end-to-end tests:
    /// `ell = 4`, `alpha = 1/3`, `s2 = 1/B`.
    pub fn desk() -> Self {
        Self {
            alpha: Some(1.0 / 3.0),
            ell: Some(4),
            s2: Some(S2Rule::FullBin),
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterParams {
    pub k: usize,
    pub d: usize,
    pub delta: f64,
    #[serde(rename = "F")]
    pub band: f64,
    pub eta: f64,
    #[serde(rename = "B")]
    pub b: usize,
    pub alpha: f64,
    pub ell: u32,
    pub s0: f64,
    pub s1: f64,
    pub s2: f64,
    #[serde(rename = "W")]
    pub w: usize,
    #[serde(rename = "D")]
    pub lattice_d: usize,
}

fn positive_finite(name: &str, x: f64) -> Result<()> {
    if x.is_finite() && x > 0.0 {
        Ok(())
    } else {
        Err(invalid(format!("{name} must be positive and finite, got {x}")))
    }
}

fn integer_root_ceil(k: usize, d: usize) -> usize {
    let mut r = 1usize;
    while (r as u128).pow(d as u32) < k as u128 {
        r += 1;
    }
    r
}

fn near_integer(x: f64) -> bool {
    (x - x.round()).abs() <= 1e-9 * x.abs().max(1.0)
}

/// Derive every filter constant from `(k, d, delta, F, eta)`.
pub fn derive_params(
    k: usize,
    d: usize,
    delta: f64,
    band: f64,
    eta: f64,
    ov: &ParamOverrides,
) -> Result<FilterParams> {
    if k == 0 || d == 0 {
        return Err(invalid("k and d must be at least 1"));
    }
    positive_finite("delta", delta)?;
    if delta >= 1.0 {
        return Err(invalid("delta must lie in (0, 1)"));
    }
    positive_finite("F", band)?;
    positive_finite("eta", eta)?;
    let df = d as f64;

    let b = match ov.b {
        Some(b) => b,
        None => {
            let target = ov.c_b.unwrap_or(2.0) * df * integer_root_ceil(k, d) as f64;
            let m = (target / df).ceil().max(1.0) as usize;
            m * d
        }
    };
    let alpha = ov.alpha.unwrap_or(1.0 / (100.0 * (df + 1.0)));
    let ell = match ov.ell {
        Some(l) => l,
        None => {
            let base = ov.c_ell.unwrap_or(2.0) * ((k * d) as f64 / delta).log2().ceil();
            let mut l = base.ceil().max(10.0) as u32;
            if l % 2 == 1 {
                l += 1;
            }
            l
        }
    };
    let bf = b as f64;
    let w = match ov.w {
        Some(w) => w,
        None => ((ov.c_w.unwrap_or(2.0) * df * band / (bf * eta)).ceil() as usize).max(1),
    };
    let lattice_d = match ov.lattice_d {
        Some(dd) => dd,
        None => (ov.c_d.unwrap_or(2.0) * ell as f64 / alpha - 1e-9).ceil() as usize,
    };
    let s1 = 2.0 * bf / alpha;
    let s2 = match ov.s2.unwrap_or(S2Rule::Transition) {
        S2Rule::Transition => (1.0 - alpha / 2.0) / bf,
        S2Rule::FullBin => 1.0 / bf,
        S2Rule::Literal => 1.0 / (bf + bf / df),
        S2Rule::Value(v) => v,
    };
    let mut p = FilterParams {
        k,
        d,
        delta,
        band,
        eta,
        b,
        alpha,
        ell,
        s0: 1.0,
        s1,
        s2,
        w,
        lattice_d,
    };
    p.validate_structure()?;
    p.s0 = 1.0 / g_hat_raw(&p, 0.0, &Quadrature::new(16));
    Ok(p)
}

impl FilterParams {
    fn validate_structure(&self) -> Result<()> {
        if self.b == 0 || !self.b.is_multiple_of(self.d) {
            return Err(invalid(format!("B = {} must be a positive multiple of d = {}", self.b, self.d)));
        }
        if self.ell < 2 || !self.ell.is_multiple_of(2) {
            return Err(invalid(format!("ell = {} must be an even integer >= 2", self.ell)));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(invalid(format!("alpha = {} must lie in (0, 1)", self.alpha)));
        }
        positive_finite("s2", self.s2)?;
        let prod = self.s1 * self.s2;
        if !near_integer(prod) || prod.round() < 1.0 {
            return Err(invalid(format!("s1 * s2 = {prod} must be a positive integer")));
        }
        if self.w == 0 {
            return Err(invalid("W must be at least 1"));
        }
        if self.lattice_extent() < self.support_half_width() {
            return Err(invalid(format!(
                "lattice half-extent B*D/2 = {} does not cover the window support {}",
                self.lattice_extent(),
                self.support_half_width()
            )));
        }
        Ok(())
    }

    /// Re-check every hard invariant, including the normalization.
    pub fn validate(&self) -> Result<()> {
        self.validate_structure()?;
        let g0 = g_hat_raw(self, 0.0, &Quadrature::new(16)) * self.s0;
        if (g0 - 1.0).abs() > 1e-8 {
            return Err(invalid(format!("G_hat(0) = {g0}, expected 1")));
        }
        Ok(())
    }

    /// Whether `1/(100 (d+1) alpha)` is a positive integer.
    pub fn is_standard_regime(&self) -> bool {
        let r = 1.0 / (100.0 * (self.d as f64 + 1.0) * self.alpha);
        r >= 1.0 - 1e-9 && near_integer(r)
    }

    /// Half-width `ell * B / alpha` of the support of `G`.
    pub fn support_half_width(&self) -> f64 {
        self.ell as f64 * self.b as f64 / self.alpha
    }

    pub fn lattice_extent(&self) -> f64 {
        (self.b * self.lattice_d) as f64 / 2.0
    }

    pub fn bins(&self) -> usize {
        self.b.pow(self.d as u32)
    }
}

fn sinc_pow(s1: f64, ell: u32, x: f64) -> f64 {
    let s = sinc1(s1, x);
    if ell > 30 {
        if s == 0.0 {
            0.0
        } else {
            (ell as f64 * s.abs().ln()).exp()
        }
    } else {
        s.powi(ell as i32)
    }
}

/// `G_hat(f) / s0`, integrated with Gauss-Legendre panels of width at most `1/(4 s1)`.
fn g_hat_raw(p: &FilterParams, f: f64, q: &Quadrature) -> f64 {
    let lo = f - p.s2 / 2.0;
    let hi = f + p.s2 / 2.0;
    let panels = ((hi - lo) * 4.0 * p.s1).ceil() as usize;
    q.integrate(|x| sinc_pow(p.s1, p.ell, x), lo, hi, panels) / p.s2
}

/// Filter evaluator with a cached table of lattice taps.
#[derive(Debug, Clone)]
pub struct Filter {
    params: FilterParams,
    quad_order: usize,
    taps: Vec<(i64, f64)>,
}

impl Filter {
    pub fn new(params: FilterParams) -> Result<Self> {
        params.validate_structure()?;
        let half = (params.b * params.lattice_d / 2) as i64;
        let lo = -half;
        let hi = (params.b * params.lattice_d) as i64 - half;
        let mut f = Filter { params, quad_order: 16, taps: Vec::new() };
        let mut taps = Vec::new();
        for n in lo..hi {
            let w = f.lattice_weight(n);
            if w != 0.0 {
                taps.push((n, w));
            }
        }
        f.taps = taps;
        Ok(f)
    }

    pub fn params(&self) -> &FilterParams {
        &self.params
    }

    /// Integer lattice positions with a non-zero weight `G(n)`, ascending.
    pub fn taps(&self) -> &[(i64, f64)] {
        &self.taps
    }

    /// Largest `|n|` among the taps.
    pub fn tap_radius(&self) -> i64 {
        self.taps.iter().map(|(n, _)| n.abs()).max().unwrap_or(0)
    }

    fn lattice_weight(&self, n: i64) -> f64 {
        let p = &self.params;
        let x = p.s2 * n as f64;
        if n != 0 && near_integer(x) {
            return 0.0;
        }
        self.g_time(n as f64)
    }

    pub fn g_hat(&self, f: f64) -> f64 {
        let q = Quadrature::new(self.quad_order);
        self.params.s0 * g_hat_raw(&self.params, f.abs(), &q)
    }

    pub fn g_time(&self, t: f64) -> f64 {
        let p = &self.params;
        p.s0 * box_selfconv(p.ell, p.s1, t) * sinc1(p.s2, t)
    }

    /// `sum_{|i| <= W} exp(-2 pi i t i)`, real and even in `t`.
    pub fn dirichlet(&self, t: f64) -> f64 {
        let mut acc = 1.0;
        for i in 1..=self.params.w {
            acc += 2.0 * (2.0 * std::f64::consts::PI * i as f64 * t).cos();
        }
        acc
    }

    pub fn filt1d_time(&self, t: f64) -> f64 {
        let g = self.g_time(t);
        if g == 0.0 {
            0.0
        } else {
            g * self.dirichlet(t)
        }
    }

    pub fn filt1d_freq(&self, f: f64) -> f64 {
        let p = &self.params;
        let reach = 3.0 / p.b as f64;
        let w = p.w as i64;
        let lo = ((-f - reach).ceil() as i64).max(-w);
        let hi = ((-f + reach).floor() as i64).min(w);
        (lo..=hi).map(|i| self.g_hat(f + i as f64)).sum()
    }

    pub fn filt_multi_time(&self, t: &[f64]) -> f64 {
        t.iter().map(|&x| self.filt1d_time(x)).product()
    }

    pub fn filt_multi_freq(&self, f: &[f64]) -> f64 {
        f.iter().map(|&x| self.filt1d_freq(x)).product()
    }

    /// Idealized window: 1 near the integer grid, 0 away from it, `G_hat` in between.
    pub fn window_multi_freq(&self, f: &[f64]) -> f64 {
        let p = &self.params;
        let w = p.w as f64;
        let dist = f
            .iter()
            .map(|&x| (x - x.round().clamp(-w, w)).abs())
            .fold(0.0, f64::max);
        let bf = p.b as f64;
        if dist <= (1.0 - p.alpha) / (2.0 * bf) {
            1.0
        } else if dist < 1.0 / (2.0 * bf) {
            self.filt_multi_freq(f)
        } else {
            0.0
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn small() -> Filter {
        let ov = ParamOverrides { b: Some(4), alpha: Some(0.25), ell: Some(6), ..Default::default() };
        Filter::new(derive_params(1, 1, 0.1, 1.0, 1.0, &ov).unwrap()).unwrap()
    }

    #[test]
    fn derive_defaults() {
        let p = derive_params(1, 1, 0.5, 1.0, 1.0, &ParamOverrides::default()).unwrap();
        assert_eq!(p.b, 2);
        assert!((p.alpha - 1.0 / 200.0).abs() < 1e-15);
        assert_eq!(p.ell, 10);
        assert_eq!(p.w, 1);
        assert_eq!(p.lattice_d, 4000);
        assert!(p.is_standard_regime());
        let lit = ParamOverrides { s2: Some(S2Rule::Literal), ..Default::default() };
        let p = derive_params(1, 1, 0.5, 1.0, 1.0, &lit).unwrap();
        assert!((p.s2 - 1.0 / (2.0 + 2.0)).abs() < 1e-15);

        let p3 = derive_params(1, 3, 0.5, 1.0, 1.0, &ParamOverrides::default()).unwrap();
        assert!((p3.alpha - 1.0 / 400.0).abs() < 1e-15);
        assert_eq!(p3.b % 3, 0);
    }

    #[test]
    fn derive_b_and_ell_rules() {
        let p = derive_params(16, 2, 0.1, 1.0, 1.0, &ParamOverrides::default()).unwrap();
        assert_eq!(p.b, 16);
        // 2 * ceil(log2(320)) = 18
        assert_eq!(p.ell, 18);
        let p = derive_params(5, 3, 0.1, 1.0, 1.0, &ParamOverrides::default()).unwrap();
        // 2 * 3 * ceil(5^(1/3)) = 12
        assert_eq!(p.b, 12);
    }

    #[test]
    fn s1_s2_integrality_for_standard_alpha() {
        for d in 1..=4 {
            for rule in [S2Rule::Transition, S2Rule::FullBin] {
                let ov = ParamOverrides { s2: Some(rule), ..Default::default() };
                let p = derive_params(2, d, 0.2, 1.0, 1.0, &ov).unwrap();
                assert!(near_integer(p.s1 * p.s2));
            }
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let ov = ParamOverrides::default();
        assert!(derive_params(1, 1, 0.0, 1.0, 1.0, &ov).is_err());
        assert!(derive_params(1, 1, 0.1, f64::NAN, 1.0, &ov).is_err());
        assert!(derive_params(1, 1, 0.1, 1.0, -1.0, &ov).is_err());
        assert!(derive_params(0, 1, 0.1, 1.0, 1.0, &ov).is_err());
        let odd = ParamOverrides { ell: Some(5), ..Default::default() };
        assert!(derive_params(1, 1, 0.1, 1.0, 1.0, &odd).is_err());
        let badb = ParamOverrides { b: Some(3), ..Default::default() };
        assert!(derive_params(1, 2, 0.1, 1.0, 1.0, &badb).is_err());
        let bad_s2 = ParamOverrides { s2: Some(S2Rule::Value(0.3)), b: Some(4), alpha: Some(0.25), ..Default::default() };
        assert!(derive_params(1, 1, 0.1, 1.0, 1.0, &bad_s2).is_err());
        let short = ParamOverrides { lattice_d: Some(3), ..ParamOverrides::desk() };
        assert!(derive_params(1, 1, 0.1, 1.0, 1.0, &short).is_err());
    }

    #[test]
    fn g_hat_normalized_and_even() {
        let f = small();
        assert!((f.g_hat(0.0) - 1.0).abs() < 1e-12);
        assert_eq!(f.g_hat(0.123), f.g_hat(-0.123));
        f.params().validate().unwrap();
    }

    #[test]
    fn g_time_support_and_peak() {
        let f = small();
        let p = f.params().clone();
        let edge = p.support_half_width();
        assert_eq!(f.g_time(edge + 1.0), 0.0);
        assert_eq!(f.g_time(2.5), f.g_time(-2.5));
        let g0 = f.g_time(0.0);
        for i in 1..200 {
            let t = edge * i as f64 / 200.0;
            assert!(f.g_time(t).abs() <= g0);
        }
    }

    #[test]
    fn taps_cover_support_and_skip_zeros() {
        let f = small();
        let p = f.params();
        let r = f.tap_radius() as f64;
        assert!(r < p.support_half_width());
        assert!(r >= p.support_half_width() - 1.0);
        assert!(f.taps().iter().all(|&(_, w)| w != 0.0));
    }

    #[test]
    fn filter_is_building_block_times_dirichlet() {
        let f = small();
        let w = f.params().w as f64;
        for &t in &[0.0, 1.0, -3.0] {
            assert!((f.filt1d_time(t) - (2.0 * w + 1.0) * f.g_time(t)).abs() < 1e-14);
        }
        for &t in &[0.3, 4.7, -9.2] {
            let direct = f.g_time(t) * (-(w as i64)..=w as i64).map(|i| (2.0 * PI * i as f64 * t).cos()).sum::<f64>();
            assert!((f.filt1d_time(t) - direct).abs() < 1e-14);
        }
        let edge = f.params().support_half_width();
        assert_eq!(f.filt1d_time(edge + 0.5), 0.0);
    }

    #[test]
    fn dirichlet_at_integers_and_half_integers() {
        let ov = ParamOverrides { w: Some(3), ..ParamOverrides::desk() };
        let f = Filter::new(derive_params(1, 1, 0.1, 1.0, 1.0, &ov).unwrap()).unwrap();
        for i in -5..5 {
            assert!((f.dirichlet(i as f64) - 7.0).abs() < 1e-12);
            assert!((f.dirichlet(i as f64 + 0.5).abs() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn multi_filters_are_products() {
        let f = small();
        let t = [0.7, -2.1];
        assert!((f.filt_multi_time(&t) - f.filt1d_time(0.7) * f.filt1d_time(-2.1)).abs() < 1e-15);
        assert_eq!(f.filt_multi_time(&[0.0, 1e6]), 0.0);
        assert_eq!(f.filt_multi_freq(&[0.05]), f.filt1d_freq(0.05));
    }

    #[test]
    fn window_regions() {
        let f = small();
        let b = f.params().b as f64;
        assert_eq!(f.window_multi_freq(&[0.0]), 1.0);
        assert_eq!(f.window_multi_freq(&[1.0 / b]), 0.0);
        let mid = (1.0 - f.params().alpha / 2.0) / (2.0 * b);
        assert_eq!(f.window_multi_freq(&[mid]), f.filt_multi_freq(&[mid]));
    }
}
