//! Univariate families, weighted maximum-likelihood fitting and hurdle models.

use std::sync::OnceLock;

use argmin::core::{CostFunction, Executor};
use argmin::solver::neldermead::NelderMead;
use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{checked_gamma_lr, digamma, ln_gamma};

use crate::error::{Error, Result};
use crate::stats::{effective_n, norm_cdf, norm_ln_cdf, norm_ln_pdf, norm_ppf, normalize_to_effective};

/// Below this effective count a marginal falls back to a moment-matched normal.
pub const MIN_FIT_N_EFF: f64 = 5.0;

/// Probabilities are clamped to `[Z_CLAMP, 1 − Z_CLAMP]` before the normal
/// quantile transform.
pub const Z_CLAMP: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Family {
    Normal,
    SkewNormal,
    ExpNormal,
    Gamma,
    GenGamma,
    Exponential,
}

impl Family {
    /// Candidates for a parameter without a point mass.
    pub const REGULAR: [Family; 4] = [
        Family::Normal,
        Family::SkewNormal,
        Family::ExpNormal,
        Family::Gamma,
    ];
    /// Candidates for the continuous part of a hurdle model.
    pub const HURDLE: [Family; 3] = [Family::Gamma, Family::GenGamma, Family::Exponential];

    pub fn n_params(self) -> usize {
        match self {
            Family::Normal | Family::Gamma => 2,
            Family::SkewNormal | Family::ExpNormal | Family::GenGamma => 3,
            Family::Exponential => 1,
        }
    }

    pub fn positive_support(self) -> bool {
        matches!(self, Family::Gamma | Family::GenGamma | Family::Exponential)
    }
}

/// `y = (reflect ? −x : x) − shift`, applied before fitting a
/// positive-support family.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct AffinePre {
    pub shift: f64,
    pub reflect: bool,
}

impl AffinePre {
    pub fn forward(&self, x: f64) -> f64 {
        (if self.reflect { -x } else { x }) - self.shift
    }

    pub fn inverse(&self, y: f64) -> f64 {
        let u = y + self.shift;
        if self.reflect {
            -u
        } else {
            u
        }
    }

    /// Reflect when the weighted mean is negative, then shift so every
    /// value is positive. Identity when the data are already positive.
    pub fn for_data(x: &[f64], w: &[f64]) -> AffinePre {
        let min = x.iter().copied().fold(f64::INFINITY, f64::min);
        if min > 0.0 {
            return AffinePre::default();
        }
        let reflect = crate::stats::weighted_mean(x, w) < 0.0;
        let y: Vec<f64> = x.iter().map(|&v| if reflect { -v } else { v }).collect();
        let lo = y.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let delta = (0.01 * (hi - lo)).max(1e-6);
        AffinePre {
            shift: lo - delta,
            reflect,
        }
    }
}

/// A fitted univariate distribution. Parameter order per family:
/// Normal `[μ, σ]`, SkewNormal `[α, loc, scale]`, ExpNormal `[K, loc, scale]`,
/// Gamma `[shape, scale]`, GenGamma `[a, c, scale]`, Exponential `[rate]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedDist {
    pub family: Family,
    pub params: Vec<f64>,
    #[serde(default)]
    pub affine_pre: AffinePre,
    pub loglik: f64,
    pub aic: f64,
}

impl FittedDist {
    /// A distribution with the given parameters and no pre-transformation;
    /// `loglik`/`aic` are left at zero.
    pub fn new(family: Family, params: Vec<f64>) -> FittedDist {
        FittedDist {
            family,
            params,
            affine_pre: AffinePre::default(),
            loglik: 0.0,
            aic: 0.0,
        }
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        ln_pdf_raw(self.family, &self.params, self.affine_pre.forward(x))
    }

    pub fn cdf(&self, x: f64) -> f64 {
        let y = self.affine_pre.forward(x);
        if self.affine_pre.reflect {
            1.0 - cdf_raw(self.family, &self.params, y)
        } else {
            cdf_raw(self.family, &self.params, y)
        }
    }

    pub fn ppf(&self, p: f64) -> f64 {
        let q = if self.affine_pre.reflect { 1.0 - p } else { p };
        self.affine_pre.inverse(ppf_raw(self.family, &self.params, q))
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        self.ppf(u.clamp(Z_CLAMP, 1.0 - Z_CLAMP))
    }
}

/// Owen's T function `T(h, a) = (1/2π) ∫₀ᵃ exp(−h²(1+x²)/2) / (1+x²) dx`.
pub fn owens_t(h: f64, a: f64) -> f64 {
    if a < 0.0 {
        return -owens_t(h, -a);
    }
    let h = h.abs();
    if a == 0.0 {
        return 0.0;
    }
    if a <= 1.0 {
        return owens_t_quadrature(h, a);
    }
    let ah = a * h;
    let (ph, pah) = (norm_cdf(h), norm_cdf(ah));
    0.5 * ph + 0.5 * pah - ph * pah - owens_t_quadrature(ah, 1.0 / a)
}

fn owens_t_quadrature(h: f64, a: f64) -> f64 {
    const PIECES: usize = 4;
    let (nodes, weights) = gauss_legendre();
    let f = |x: f64| {
        let q = 1.0 + x * x;
        (-0.5 * h * h * q).exp() / q
    };
    let width = a / PIECES as f64;
    let mut sum = 0.0;
    for k in 0..PIECES {
        let mid = (k as f64 + 0.5) * width;
        for (x, w) in nodes.iter().zip(weights) {
            sum += w * f(mid + 0.5 * width * x);
        }
    }
    sum * 0.5 * width / (2.0 * std::f64::consts::PI)
}

/// 20-point Gauss–Legendre nodes and weights on `[−1, 1]`.
fn gauss_legendre() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| {
        const N: usize = 20;
        let mut nodes = Vec::with_capacity(N);
        let mut weights = Vec::with_capacity(N);
        for i in 0..N {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (N as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (mut p0, mut p1) = (1.0, x);
                for k in 2..=N {
                    let k = k as f64;
                    let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
                    p0 = p1;
                    p1 = p2;
                }
                dp = N as f64 * (x * p1 - p0) / (x * x - 1.0);
                let dx = p1 / dp;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            nodes.push(x);
            weights.push(2.0 / ((1.0 - x * x) * dp * dp));
        }
        (nodes, weights)
    })
}

fn reg_lower_gamma(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else if x.is_infinite() {
        1.0
    } else {
        checked_gamma_lr(a, x).unwrap_or(f64::NAN)
    }
}

fn ln_pdf_raw(family: Family, p: &[f64], y: f64) -> f64 {
    match family {
        Family::Normal => norm_ln_pdf((y - p[0]) / p[1]) - p[1].ln(),
        Family::SkewNormal => {
            let z = (y - p[1]) / p[2];
            std::f64::consts::LN_2 + norm_ln_pdf(z) + norm_ln_cdf(p[0] * z) - p[2].ln()
        }
        Family::ExpNormal => {
            let (k, x) = (p[0], (y - p[1]) / p[2]);
            -k.ln() + 0.5 / (k * k) - x / k + norm_ln_cdf(x - 1.0 / k) - p[2].ln()
        }
        Family::Gamma => {
            if y <= 0.0 {
                return f64::NEG_INFINITY;
            }
            let x = y / p[1];
            (p[0] - 1.0) * x.ln() - x - ln_gamma(p[0]) - p[1].ln()
        }
        Family::GenGamma => {
            if y <= 0.0 {
                return f64::NEG_INFINITY;
            }
            let (a, c) = (p[0], p[1]);
            let x = y / p[2];
            c.ln() + (c * a - 1.0) * x.ln() - x.powf(c) - ln_gamma(a) - p[2].ln()
        }
        Family::Exponential => {
            if y < 0.0 {
                return f64::NEG_INFINITY;
            }
            p[0].ln() - p[0] * y
        }
    }
}

fn cdf_raw(family: Family, p: &[f64], y: f64) -> f64 {
    match family {
        Family::Normal => norm_cdf((y - p[0]) / p[1]),
        Family::SkewNormal => {
            let z = (y - p[1]) / p[2];
            (norm_cdf(z) - 2.0 * owens_t(z, p[0])).clamp(0.0, 1.0)
        }
        Family::ExpNormal => {
            let (k, x) = (p[0], (y - p[1]) / p[2]);
            let tail = (0.5 / (k * k) - x / k + norm_ln_cdf(x - 1.0 / k)).exp();
            (norm_cdf(x) - tail).clamp(0.0, 1.0)
        }
        Family::Gamma => reg_lower_gamma(p[0], y / p[1]),
        Family::GenGamma => {
            if y <= 0.0 {
                0.0
            } else {
                reg_lower_gamma(p[0], (y / p[2]).powf(p[1]))
            }
        }
        Family::Exponential => {
            if y <= 0.0 {
                0.0
            } else {
                -(-p[0] * y).exp_m1()
            }
        }
    }
}

fn ppf_raw(family: Family, p: &[f64], q: f64) -> f64 {
    match family {
        Family::Normal => p[0] + p[1] * norm_ppf(q),
        Family::Exponential => -(-q).ln_1p() / p[0],
        _ => {
            let cdf = |y: f64| cdf_raw(family, p, y);
            let positive = family.positive_support();
            let (mut lo, mut hi) = match family {
                Family::SkewNormal | Family::ExpNormal => (p[1] - p[2], p[1] + p[2]),
                Family::Gamma => (0.0, p[0] * p[1]),
                _ => (0.0, p[2]),
            };
            let mut step = (hi - lo).max(1e-12);
            while !positive && cdf(lo) > q {
                lo -= step;
                step *= 2.0;
            }
            step = (hi - lo).max(1e-12);
            while cdf(hi) < q {
                lo = hi;
                hi += step;
                step *= 2.0;
            }
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if cdf(mid) < q {
                    lo = mid;
                } else {
                    hi = mid;
                }
                if hi - lo <= 1e-13 * hi.abs().max(1.0) {
                    break;
                }
            }
            0.5 * (lo + hi)
        }
    }
}

fn weighted_loglik(family: Family, p: &[f64], y: &[f64], w: &[f64]) -> f64 {
    y.iter()
        .zip(w)
        .map(|(&v, &wi)| wi * ln_pdf_raw(family, p, v))
        .sum()
}

#[derive(Clone, Copy)]
struct NegLogLik<'a> {
    family: Family,
    y: &'a [f64],
    w: &'a [f64],
}

impl NegLogLik<'_> {
    /// Optimizer coordinates → family parameters (positive ones on log scale).
    fn decode(&self, theta: &[f64]) -> Vec<f64> {
        match self.family {
            Family::SkewNormal => vec![theta[0], theta[1], theta[2].exp()],
            Family::ExpNormal => vec![theta[0].exp(), theta[1], theta[2].exp()],
            Family::GenGamma => theta.iter().map(|t| t.exp()).collect(),
            _ => unreachable!("closed-form family"),
        }
    }
}

impl CostFunction for NegLogLik<'_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, theta: &Vec<f64>) -> std::result::Result<f64, argmin::core::Error> {
        if theta.iter().any(|t| !t.is_finite() || t.abs() > 700.0) {
            return Ok(f64::MAX);
        }
        let ll = weighted_loglik(self.family, &self.decode(theta), self.y, self.w);
        Ok(if ll.is_finite() { -ll } else { f64::MAX })
    }
}

fn nelder_mead(problem: NegLogLik<'_>, starts: &[Vec<f64>]) -> Option<Vec<f64>> {
    let mut best: Option<(f64, Vec<f64>)> = None;
    for start in starts {
        let simplex: Vec<Vec<f64>> = std::iter::once(start.clone())
            .chain((0..start.len()).map(|i| {
                let mut v = start.clone();
                v[i] += if v[i].abs() > 0.5 { 0.2 * v[i].abs() } else { 0.3 };
                v
            }))
            .collect();
        let solver = match NelderMead::new(simplex).with_sd_tolerance(1e-10) {
            Ok(s) => s,
            Err(_) => continue,
        };
        let Ok(res) = Executor::new(problem, solver)
            .configure(|s| s.max_iters(2000))
            .run()
        else {
            continue;
        };
        let state = res.state();
        let (Some(theta), cost) = (state.best_param.clone(), state.best_cost) else {
            continue;
        };
        if cost.is_finite() && cost < f64::MAX && best.as_ref().is_none_or(|(c, _)| cost < *c) {
            best = Some((cost, theta));
        }
    }
    best.map(|(_, theta)| problem.decode(&theta))
}

fn moments(y: &[f64], w: &[f64]) -> (f64, f64, f64) {
    let sw: f64 = w.iter().sum();
    let m = y.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let var = y.iter().zip(w).map(|(a, b)| b * (a - m).powi(2)).sum::<f64>() / sw;
    let sd = var.sqrt();
    let skew = if sd > 0.0 {
        y.iter().zip(w).map(|(a, b)| b * ((a - m) / sd).powi(3)).sum::<f64>() / sw
    } else {
        0.0
    };
    (m, sd, skew)
}

/// Weighted gamma MLE `(shape, scale)` on positive data.
fn gamma_mle(y: &[f64], w: &[f64]) -> Option<(f64, f64)> {
    let sw: f64 = w.iter().sum();
    let mean = y.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let mean_ln = y.iter().zip(w).map(|(a, b)| b * a.ln()).sum::<f64>() / sw;
    let s = mean.ln() - mean_ln;
    if !(s > 0.0) || !s.is_finite() {
        return None;
    }
    // ln k − ψ(k) decreases monotonically from +∞ to 0.
    let f = |k: f64| k.ln() - digamma(k) - s;
    let (mut lo, mut hi) = (1e-8_f64, 1e8_f64);
    for _ in 0..300 {
        let mid = (lo * hi).sqrt();
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi / lo - 1.0 < 1e-14 {
            break;
        }
    }
    let k = (lo * hi).sqrt();
    Some((k, mean / k))
}

fn fit_family(family: Family, y: &[f64], w: &[f64]) -> Option<Vec<f64>> {
    let (m, sd, skew) = moments(y, w);
    if !(sd > 0.0) {
        return None;
    }
    let problem = NegLogLik { family, y, w };
    match family {
        Family::Normal => Some(vec![m, sd]),
        Family::Exponential => {
            if y.iter().any(|&v| v < 0.0) {
                return None;
            }
            Some(vec![1.0 / m])
        }
        Family::Gamma => {
            if y.iter().any(|&v| v <= 0.0) {
                return None;
            }
            gamma_mle(y, w).map(|(k, s)| vec![k, s])
        }
        Family::SkewNormal => {
            // Method-of-moments start on the attainable skewness range.
            let g = skew.clamp(-0.99, 0.99);
            let r = (2.0 * g.abs() / (4.0 - std::f64::consts::PI)).cbrt();
            let delta = g.signum() * (std::f64::consts::FRAC_PI_2 * r * r / (1.0 + r * r)).sqrt();
            let delta = delta.clamp(-0.99, 0.99);
            let alpha = delta / (1.0 - delta * delta).sqrt();
            let b = (2.0 / std::f64::consts::PI).sqrt() * delta;
            let omega = sd / (1.0 - b * b).sqrt();
            let xi = m - omega * b;
            nelder_mead(
                problem,
                &[vec![alpha, xi, omega.ln()], vec![0.0, m, sd.ln()]],
            )
        }
        Family::ExpNormal => {
            let g = skew.clamp(0.05, 1.9);
            // skew = 2K³ / (1 + K²)^{3/2}; solve for K by bisection.
            let (mut lo, mut hi) = (1e-3_f64, 1e3_f64);
            for _ in 0..100 {
                let k = (lo * hi).sqrt();
                if 2.0 * k.powi(3) / (1.0 + k * k).powf(1.5) < g {
                    lo = k;
                } else {
                    hi = k;
                }
            }
            let k = (lo * hi).sqrt();
            let scale = sd / (1.0 + k * k).sqrt();
            let loc = m - k * scale;
            nelder_mead(
                problem,
                &[
                    vec![k.ln(), loc, scale.ln()],
                    vec![(0.3_f64).ln(), m - 0.3 * sd, (0.95 * sd).ln()],
                ],
            )
        }
        Family::GenGamma => {
            if y.iter().any(|&v| v <= 0.0) {
                return None;
            }
            // If Y^c ~ Gamma(a, θ) then Y ~ GenGamma(a, c, θ^{1/c}).
            let starts: Vec<Vec<f64>> = [1.0, 2.0, 0.5]
                .iter()
                .filter_map(|&c: &f64| {
                    let yc: Vec<f64> = y.iter().map(|v| v.powf(c)).collect();
                    gamma_mle(&yc, w).map(|(a, th)| vec![a.ln(), c.ln(), th.ln() / c])
                })
                .collect();
            nelder_mead(problem, &starts)
        }
    }
}

/// Weighted MLE for each candidate family; the lowest-AIC fit wins.
/// Weights are normalized to sum to the effective sample size first, so the
/// choice does not depend on the weight scale.
pub fn fit_univariate(values: &[f64], weights: &[f64], families: &[Family]) -> Result<FittedDist> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::AllFitsFailed("non-finite values".into()));
    }
    if crate::stats::is_constant(values) {
        return Err(Error::AllFitsFailed("zero variance".into()));
    }
    let w = normalize_to_effective(weights);
    let fits: Vec<FittedDist> = families
        .iter()
        .filter_map(|&family| {
            let affine = if family.positive_support() {
                AffinePre::for_data(values, &w)
            } else {
                AffinePre::default()
            };
            let y: Vec<f64> = values.iter().map(|&v| affine.forward(v)).collect();
            let params = fit_family(family, &y, &w)?;
            let loglik = weighted_loglik(family, &params, &y, &w);
            if !loglik.is_finite() || params.iter().any(|p| !p.is_finite()) {
                return None;
            }
            Some(FittedDist {
                family,
                params,
                affine_pre: affine,
                loglik,
                aic: 2.0 * family.n_params() as f64 - 2.0 * loglik,
            })
        })
        .collect();
    fits.into_iter()
        .min_by(|a, b| a.aic.total_cmp(&b.aic))
        .ok_or_else(|| Error::AllFitsFailed(format!("no family in {families:?} converged")))
}

/// Moment-matched normal for samples too small for likelihood fitting.
pub fn fallback_normal(values: &[f64], weights: &[f64]) -> Option<FittedDist> {
    let w = normalize_to_effective(weights);
    let (m, sd, _) = moments(values, &w);
    (sd > 0.0).then(|| {
        let loglik = weighted_loglik(Family::Normal, &[m, sd], values, &w);
        FittedDist {
            family: Family::Normal,
            params: vec![m, sd],
            affine_pre: AffinePre::default(),
            loglik,
            aic: 4.0 - 2.0 * loglik,
        }
    })
}

/// Exact value holding at least `threshold` of the weight, for one parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointMassSpec {
    pub param: crate::Param,
    pub mass_value: f64,
    pub mass_probability: f64,
}

/// Modal exact value and its weighted share, if the share reaches
/// `threshold`. Needs at least five effective samples.
pub fn detect_point_mass(values: &[f64], weights: &[f64], threshold: f64) -> Option<(f64, f64)> {
    if values.is_empty() || effective_n(weights) < MIN_FIT_N_EFF {
        return None;
    }
    let mut pairs: Vec<(f64, f64)> = values.iter().copied().zip(weights.iter().copied()).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total: f64 = weights.iter().sum();
    let mut best: Option<(f64, f64)> = None;
    let mut i = 0;
    while i < pairs.len() {
        let v = pairs[i].0;
        let mut mass = 0.0;
        let mut count = 0;
        while i < pairs.len() && pairs[i].0 == v {
            mass += pairs[i].1;
            count += 1;
            i += 1;
        }
        if count > 1 && best.is_none_or(|(_, m)| mass > m) {
            best = Some((v, mass));
        }
    }
    best.map(|(v, m)| (v, m / total))
        .filter(|&(_, share)| share >= threshold)
}

/// What the hurdle model draws when it does not return the mass value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum HurdleRest {
    Fitted(FittedDist),
    /// All non-mass observations share one value.
    Constant(f64),
    /// Every observation sits at the mass value.
    Absent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HurdleDist {
    pub mass_value: f64,
    pub mass_probability: f64,
    pub rest: HurdleRest,
}

impl HurdleDist {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        if u < self.mass_probability {
            return self.mass_value;
        }
        match &self.rest {
            HurdleRest::Fitted(d) => loop {
                let x = d.sample(rng);
                if x != self.mass_value {
                    break x;
                }
            },
            HurdleRest::Constant(c) => *c,
            HurdleRest::Absent => self.mass_value,
        }
    }
}

/// Binary component from the weighted mass share; continuous component
/// chosen by AIC over the hurdle families on the non-mass values, or an
/// exponential with MLE rate when those are too few.
pub fn fit_hurdle(values: &[f64], weights: &[f64], mass_value: f64) -> Result<HurdleDist> {
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(Error::EmptyInput);
    }
    let (mut rx, mut rw) = (Vec::new(), Vec::new());
    let mut mass = 0.0;
    for (&x, &w) in values.iter().zip(weights) {
        if x == mass_value {
            mass += w;
        } else {
            rx.push(x);
            rw.push(w);
        }
    }
    let rest = if rx.is_empty() {
        HurdleRest::Absent
    } else if crate::stats::is_constant(&rx) {
        HurdleRest::Constant(rx[0])
    } else if effective_n(&rw) < MIN_FIT_N_EFF {
        log::debug!("hurdle rest has {} values, using exponential fallback", rx.len());
        let w = normalize_to_effective(&rw);
        let affine = AffinePre::for_data(&rx, &w);
        let y: Vec<f64> = rx.iter().map(|&v| affine.forward(v)).collect();
        let params = fit_family(Family::Exponential, &y, &w)
            .ok_or_else(|| Error::AllFitsFailed("exponential fallback".into()))?;
        let loglik = weighted_loglik(Family::Exponential, &params, &y, &w);
        HurdleRest::Fitted(FittedDist {
            family: Family::Exponential,
            params,
            affine_pre: affine,
            loglik,
            aic: 2.0 - 2.0 * loglik,
        })
    } else {
        HurdleRest::Fitted(fit_univariate(&rx, &rw, &Family::HURDLE)?)
    };
    Ok(HurdleDist {
        mass_value,
        mass_probability: mass / total,
        rest,
    })
}

/// `Φ⁻¹(F(x))` with `F(x)` clamped to `[1e-10, 1 − 1e-10]`.
pub fn quantile_normalize(values: &[f64], dist: &FittedDist) -> Vec<f64> {
    values
        .iter()
        .map(|&x| norm_ppf(dist.cdf(x).clamp(Z_CLAMP, 1.0 - Z_CLAMP)))
        .collect()
}

/// Inverse of [`quantile_normalize`].
pub fn quantile_denormalize(z: f64, dist: &FittedDist) -> f64 {
    dist.ppf(norm_cdf(z).clamp(Z_CLAMP, 1.0 - Z_CLAMP))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn owens_t_reference_values() {
        assert_relative_eq!(owens_t(0.5, 3.0), 0.15108404307601844, epsilon = 1e-11);
        assert_relative_eq!(owens_t(-1.2, 2.5), 0.057508756529188444, epsilon = 1e-11);
        assert_relative_eq!(owens_t(2.0, 0.4), 0.0074296977040216525, epsilon = 1e-13);
        assert_relative_eq!(owens_t(0.0, 5.0), 0.2185835209054994, epsilon = 1e-11);
        assert_relative_eq!(owens_t(1.0, -0.5), -owens_t(1.0, 0.5));
    }

    fn check(d: &FittedDist, xs: &[f64], cdf: &[f64], logpdf: &[f64], tol: f64) {
        for (i, &x) in xs.iter().enumerate() {
            assert_relative_eq!(d.cdf(x), cdf[i], max_relative = tol, epsilon = 1e-12);
            if let Some(&l) = logpdf.get(i) {
                assert_relative_eq!(d.ln_pdf(x), l, max_relative = tol);
            }
        }
    }

    #[test]
    fn family_densities_match_reference() {
        let en = FittedDist::new(Family::ExpNormal, vec![1.5, 0.2, 0.8]);
        check(
            &en,
            &[-1.0, 0.5, 3.0],
            &[0.01544456, 0.27145371, 0.87894297],
            &[-3.15116583, -1.16390828, -2.29573859],
            1e-6,
        );
        assert_relative_eq!(en.ln_pdf(40.0), -33.126766, max_relative = 1e-6);
        let sn = FittedDist::new(Family::SkewNormal, vec![4.0, 0.5, 1.3]);
        check(
            &sn,
            &[-1.0, 0.3, 2.0],
            &[3.80059680e-08, 3.13692476e-02, 7.51436790e-01],
            &[-14.29546387, -1.81247498, -1.15383805],
            1e-6,
        );
        let gg = FittedDist::new(Family::GenGamma, vec![2.0, 1.7, 1.4]);
        check(
            &gg,
            &[0.5, 1.2, 3.0],
            &[0.01344945, 0.18027715, 0.87945644],
            &[-2.4506432, -0.94527343, -1.63003424],
            1e-6,
        );
        let ga = FittedDist::new(Family::Gamma, vec![2.5, 1.2]);
        check(&ga, &[0.5, 2.0, 6.0], &[0.0251413, 0.35125764, 0.92476475], &[], 1e-6);
    }

    #[test]
    fn ppf_inverts_cdf_for_every_family() {
        let dists = [
            FittedDist::new(Family::Normal, vec![1.0, 2.0]),
            FittedDist::new(Family::SkewNormal, vec![-3.0, 0.5, 1.3]),
            FittedDist::new(Family::ExpNormal, vec![1.5, 0.2, 0.8]),
            FittedDist::new(Family::Gamma, vec![0.7, 2.0]),
            FittedDist::new(Family::GenGamma, vec![2.0, 1.7, 1.4]),
            FittedDist::new(Family::Exponential, vec![2.0]),
        ];
        for d in &dists {
            for p in [0.001, 0.1, 0.5, 0.9, 0.999] {
                assert_relative_eq!(d.cdf(d.ppf(p)), p, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn affine_reflect_then_shift_round_trips() {
        let x = [-3.0, -1.0, -2.0, 0.5];
        let a = AffinePre::for_data(&x, &[1.0; 4]);
        assert!(a.reflect);
        for &v in &x {
            assert!(a.forward(v) > 0.0);
            assert_relative_eq!(a.inverse(a.forward(v)), v);
        }
        let mut d = FittedDist::new(Family::Gamma, vec![2.0, 1.0]);
        d.affine_pre = a;
        for p in [0.05, 0.5, 0.95] {
            assert_relative_eq!(d.cdf(d.ppf(p)), p, epsilon = 1e-9);
        }
    }

    fn draws(n: usize, seed: u64, f: impl Fn(&mut ChaCha8Rng) -> f64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| f(&mut rng)).collect()
    }

    #[test]
    fn standard_normal_sample_selects_normal() {
        let z = FittedDist::new(Family::Normal, vec![0.0, 1.0]);
        let x = draws(10_000, 2, |r| z.sample(r));
        let d = fit_univariate(&x, &vec![1.0; x.len()], &Family::REGULAR).unwrap();
        assert_eq!(d.family, Family::Normal);
        assert!(d.params[0].abs() < 0.05);
        assert!((d.params[1] - 1.0).abs() < 0.05);
    }

    #[test]
    fn exponential_sample_is_fitted_within_two_aic_of_exact() {
        let e = FittedDist::new(Family::Exponential, vec![2.0]);
        let x = draws(5000, 11, |r| e.sample(r));
        let w = vec![1.0; x.len()];
        let d = fit_univariate(&x, &w, &Family::REGULAR).unwrap();
        assert!(matches!(d.family, Family::Gamma | Family::ExpNormal));
        let mean = x.iter().sum::<f64>() / x.len() as f64;
        let rate = 1.0 / mean;
        let ll_exact: f64 = x.iter().map(|v| rate.ln() - rate * v).sum();
        assert!(d.aic <= 2.0 - 2.0 * ll_exact + 2.0);
    }

    #[test]
    fn aic_choice_ignores_weight_scale() {
        let e = FittedDist::new(Family::ExpNormal, vec![1.0, 0.0, 1.0]);
        let x = draws(400, 3, |r| e.sample(r));
        let w: Vec<f64> = (0..x.len()).map(|i| 1.0 + (i % 3) as f64).collect();
        let w10: Vec<f64> = w.iter().map(|v| v * 10.0).collect();
        let a = fit_univariate(&x, &w, &Family::REGULAR).unwrap();
        let b = fit_univariate(&x, &w10, &Family::REGULAR).unwrap();
        assert_eq!(a.family, b.family);
        assert_relative_eq!(a.aic, b.aic, max_relative = 1e-9);
    }

    #[test]
    fn constant_data_fails() {
        assert!(matches!(
            fit_univariate(&[2.0; 10], &[1.0; 10], &Family::REGULAR),
            Err(Error::AllFitsFailed(_))
        ));
    }

    #[test]
    fn point_mass_detection() {
        let mut v: Vec<f64> = (0..60).map(|i| 0.1 + i as f64 * 0.013).collect();
        v.extend([0.0; 40]);
        assert_eq!(detect_point_mass(&v, &[1.0; 100], 0.1), Some((0.0, 0.4)));
        let jitter: Vec<f64> = (0..100).map(|i| (i as f64 * 0.7).sin()).collect();
        assert_eq!(detect_point_mass(&jitter, &[1.0; 100], 0.1), None);
        let mut two: Vec<f64> = (0..58).map(|i| 0.1 + i as f64 * 0.013).collect();
        two.extend([0.0; 30]);
        two.extend([5.0; 12]);
        assert_eq!(detect_point_mass(&two, &[1.0; 100], 0.1), Some((0.0, 0.3)));
        let mut edge: Vec<f64> = (0..90).map(|i| 1.0 + i as f64).collect();
        edge.extend([0.0; 10]);
        assert_eq!(detect_point_mass(&edge, &[1.0; 100], 0.1), Some((0.0, 0.1)));
    }

    #[test]
    fn hurdle_recovers_mass_and_rate() {
        let e = FittedDist::new(Family::Exponential, vec![1.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x: Vec<f64> = (0..20_000)
            .map(|i| if i % 2 == 0 { 0.0 } else { e.sample(&mut rng) })
            .collect();
        let h = fit_hurdle(&x, &vec![1.0; x.len()], 0.0).unwrap();
        assert!((h.mass_probability - 0.5).abs() < 0.02);
        let HurdleRest::Fitted(d) = &h.rest else { panic!("expected fitted rest") };
        // Every hurdle family nests the exponential; its mean must be ≈ 1.
        let mean = match d.family {
            Family::Exponential => 1.0 / d.params[0],
            Family::Gamma => d.params[0] * d.params[1],
            Family::GenGamma => {
                let (a, c, s) = (d.params[0], d.params[1], d.params[2]);
                s * (ln_gamma(a + 1.0 / c) - ln_gamma(a)).exp()
            }
            _ => unreachable!(),
        } + d.affine_pre.shift;
        assert!((mean - 1.0).abs() < 0.05, "{d:?}");
        let all = fit_hurdle(&[0.0; 8], &[1.0; 8], 0.0).unwrap();
        assert_eq!(all.mass_probability, 1.0);
        assert_eq!(all.rest, HurdleRest::Absent);
    }

    #[test]
    fn quantile_normalization_examples() {
        let z = FittedDist::new(Family::Normal, vec![0.0, 1.0]);
        let x = [-2.0, -0.3, 0.0, 1.7];
        for (a, b) in quantile_normalize(&x, &z).iter().zip(x) {
            assert_relative_eq!(*a, b, epsilon = 1e-9);
        }
        let g = FittedDist::new(Family::Gamma, vec![2.5, 1.2]);
        let median = g.ppf(0.5);
        assert!(quantile_normalize(&[median], &g)[0].abs() < 1e-9);
        for p in [0.02, 0.3, 0.77, 0.98] {
            let x = g.ppf(p);
            let z = quantile_normalize(&[x], &g)[0];
            assert_relative_eq!(quantile_denormalize(z, &g), x, epsilon = 1e-6);
        }
    }
}
