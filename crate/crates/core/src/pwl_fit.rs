//! Weighted continuous piecewise-linear fits of speed profiles, loss-based
//! breakpoint-count selection, negative-speed repair and six-parameter
//! extraction.
//!
//! Breakpoint locations are estimated by iterative linearization of the
//! hinge terms (each `(t − ψ)₊` is expanded around the current `ψ`, the
//! extra `−1{t > ψ}` column yields the update), started from one evenly
//! spaced and `max_restarts − 1` random initializations. When no start
//! converges, an exhaustive search over sample midpoints provides the
//! estimate instead.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{validate_event, window_event, RawEvent, Severity, SourceGroup, SpeedProfile};
use crate::stats::seed_for_id;
use crate::T_START;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub n_b_max: usize,
    pub lambda: f64,
    /// m/s
    pub epsilon: f64,
    /// |slope| at or below this (m/s²) marks a steady-speed final segment.
    pub steady_slope_tol: f64,
    pub max_restarts: usize,
    pub convergence_tol: f64,
    /// Master seed; each event derives its own stream from it and its id.
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            n_b_max: 3,
            lambda: 0.006,
            epsilon: 1e-6,
            steady_slope_tol: 0.05,
            max_restarts: 10,
            convergence_tol: 1e-6,
            seed: 0,
        }
    }
}

impl FitConfig {
    pub fn check(&self) -> Result<()> {
        if !(self.lambda > 0.0) || !(self.epsilon > 0.0) {
            return Err(Error::Config("lambda and epsilon must be positive".into()));
        }
        if !(self.steady_slope_tol >= 0.0) || !(self.convergence_tol > 0.0) {
            return Err(Error::Config(
                "steady_slope_tol must be >= 0 and convergence_tol > 0".into(),
            ));
        }
        if self.max_restarts == 0 {
            return Err(Error::Config("max_restarts must be at least 1".into()));
        }
        Ok(())
    }
}

/// One straight piece `v = slope · t + intercept` on `[t_start, t_end]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub t_start: f64,
    pub t_end: f64,
    pub slope: f64,
    pub intercept: f64,
}

impl Segment {
    pub fn at(&self, t: f64) -> f64 {
        self.slope * t + self.intercept
    }

    pub fn duration(&self) -> f64 {
        self.t_end - self.t_start
    }

    fn through(t0: f64, v0: f64, t1: f64, v1: f64) -> Segment {
        let slope = (v1 - v0) / (t1 - t0);
        Segment {
            t_start: t0,
            t_end: t1,
            slope,
            intercept: v0 - slope * t0,
        }
    }
}

/// A connected piecewise-linear speed model over `[-5, 0]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PwlFit {
    /// Breakpoint count of the regression (drives the loss and adjusted R²).
    pub n_b: usize,
    /// Current breakpoints, including any added by the non-negativity repair.
    pub breakpoints: Vec<f64>,
    pub segments: Vec<Segment>,
    pub r_squared: f64,
    pub loss: f64,
    pub modified_for_nonnegativity: bool,
}

impl PwlFit {
    /// Build from knot values at `-5`, each breakpoint and `0`.
    pub fn from_knots(knots: &[(f64, f64)]) -> PwlFit {
        let segments = knots
            .windows(2)
            .map(|k| Segment::through(k[0].0, k[0].1, k[1].0, k[1].1))
            .collect();
        PwlFit {
            n_b: knots.len().saturating_sub(2),
            breakpoints: knots[1..knots.len() - 1].iter().map(|k| k.0).collect(),
            segments,
            r_squared: 0.0,
            loss: 0.0,
            modified_for_nonnegativity: false,
        }
    }

    pub fn predict(&self, t: f64) -> f64 {
        let seg = self
            .segments
            .iter()
            .find(|s| t <= s.t_end)
            .or(self.segments.last())
            .expect("fit has at least one segment");
        seg.at(t)
    }

    /// `(t, v̂)` at the start, every breakpoint and the end.
    pub fn knots(&self) -> Vec<(f64, f64)> {
        let mut out = Vec::with_capacity(self.segments.len() + 1);
        for s in &self.segments {
            out.push((s.t_start, s.at(s.t_start)));
        }
        if let Some(last) = self.segments.last() {
            out.push((last.t_end, last.at(last.t_end)));
        }
        out
    }

    /// Adjusted R² with `2(n_b + 1)` fitted parameters.
    pub fn adjusted_r_squared(&self, n_samples: usize) -> f64 {
        let n = n_samples as f64;
        let k = 2.0 * (self.n_b as f64 + 1.0);
        if n - k <= 0.0 {
            return self.r_squared;
        }
        1.0 - (1.0 - self.r_squared) * (n - 1.0) / (n - k)
    }
}

/// The six-parameter description of an event plus its sample weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventParams {
    pub event_id: String,
    pub source_group: Option<SourceGroup>,
    pub severity: Option<Severity>,
    pub v_c: f64,
    pub a1: f64,
    pub a2: f64,
    pub tau_s: f64,
    pub tau_1: f64,
    pub tau_2: f64,
    pub weight: f64,
}

impl EventParams {
    pub fn new(v_c: f64, a1: f64, a2: f64, tau_s: f64, tau_1: f64, tau_2: f64) -> Self {
        EventParams {
            event_id: String::new(),
            source_group: None,
            severity: None,
            v_c,
            a1,
            a2,
            tau_s,
            tau_1,
            tau_2,
            weight: 1.0,
        }
    }

    pub fn vector(&self) -> [f64; 6] {
        [self.v_c, self.a1, self.a2, self.tau_s, self.tau_1, self.tau_2]
    }
}

/// Per-sample fit weights `(0.1 − t)^(−1/2)`.
pub fn sample_weights(times: &[f64]) -> Vec<f64> {
    times.iter().map(|t| (0.1 - t).powf(-0.5)).collect()
}

/// Breakpoint-penalized loss from its ingredients.
pub fn loss_value(max_v: f64, delta_v: f64, n_b: usize, r_squared: f64, cfg: &FitConfig) -> f64 {
    (cfg.epsilon + cfg.lambda * max_v / (delta_v + cfg.epsilon)) * n_b as f64 - r_squared
}

/// Loss of candidate `c` on the observed samples of `p`.
pub fn loss(c: &PwlFit, p: &SpeedProfile, cfg: &FitConfig) -> f64 {
    let (lo, hi) = p
        .samples
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| {
            (lo.min(s.v), hi.max(s.v))
        });
    loss_value(hi, hi - lo, c.n_b, c.r_squared, cfg)
}

/// Candidate with minimum loss; ties go to fewer breakpoints.
pub fn select_best(candidates: &[PwlFit]) -> Result<PwlFit> {
    let mut best: Option<&PwlFit> = None;
    for c in candidates {
        best = match best {
            None => Some(c),
            Some(b) if c.loss < b.loss || (c.loss == b.loss && c.n_b < b.n_b) => Some(c),
            keep => keep,
        };
    }
    best.cloned().ok_or(Error::EmptyCandidates)
}

struct Data<'a> {
    t: &'a [f64],
    v: &'a [f64],
    w: &'a [f64],
}

impl Data<'_> {
    fn n(&self) -> usize {
        self.t.len()
    }

    fn span(&self) -> (f64, f64) {
        (self.t[0], self.t[self.n() - 1])
    }

    fn weighted_sst(&self) -> (f64, f64) {
        let sw: f64 = self.w.iter().sum();
        let mean = self.v.iter().zip(self.w).map(|(v, w)| v * w).sum::<f64>() / sw;
        let sst = self
            .v
            .iter()
            .zip(self.w)
            .map(|(v, w)| w * (v - mean).powi(2))
            .sum();
        (sst, mean)
    }
}

/// Weighted least squares through the normal equations; `row` fills the
/// design row of sample `i`.
fn wls<F: Fn(usize, &mut [f64])>(d: &Data, cols: usize, row: F) -> Option<(DVector<f64>, f64)> {
    let mut xtx = DMatrix::<f64>::zeros(cols, cols);
    let mut xty = DVector::<f64>::zeros(cols);
    let mut r = vec![0.0; cols];
    for i in 0..d.n() {
        row(i, &mut r);
        let w = d.w[i];
        for a in 0..cols {
            xty[a] += w * r[a] * d.v[i];
            for b in a..cols {
                xtx[(a, b)] += w * r[a] * r[b];
            }
        }
    }
    for a in 0..cols {
        for b in 0..a {
            xtx[(a, b)] = xtx[(b, a)];
        }
    }
    // Relative pivot guard: reject numerically singular designs.
    let scale = (0..cols).map(|a| xtx[(a, a)]).fold(0.0, f64::max);
    let chol = xtx.cholesky()?;
    let l = chol.l();
    if (0..cols).any(|a| l[(a, a)] * l[(a, a)] <= 1e-12 * scale) {
        return None;
    }
    let coef = chol.solve(&xty);
    let mut sse = 0.0;
    for i in 0..d.n() {
        row(i, &mut r);
        let pred: f64 = r.iter().zip(coef.iter()).map(|(a, b)| a * b).sum();
        sse += d.w[i] * (d.v[i] - pred).powi(2);
    }
    Some((coef, sse))
}

fn hinge_row(t: f64, psi: &[f64], r: &mut [f64]) {
    r[0] = 1.0;
    r[1] = t;
    for (j, p) in psi.iter().enumerate() {
        r[2 + j] = (t - p).max(0.0);
    }
}

/// Hinge regression for fixed breakpoints: `(coefficients, weighted SSE)`.
fn fit_fixed(d: &Data, psi: &[f64]) -> Option<(DVector<f64>, f64)> {
    wls(d, psi.len() + 2, |i, r| hinge_row(d.t[i], psi, r))
}

/// Breakpoints must be increasing, strictly inside the sampled span and
/// leave at least two samples in every segment.
fn admissible(d: &Data, psi: &[f64]) -> bool {
    let (lo, hi) = d.span();
    if psi.iter().any(|p| !p.is_finite() || *p <= lo || *p >= hi) {
        return false;
    }
    if psi.windows(2).any(|p| p[1] <= p[0]) {
        return false;
    }
    let mut edges = vec![f64::NEG_INFINITY];
    edges.extend_from_slice(psi);
    edges.push(f64::INFINITY);
    edges.windows(2).all(|e| {
        d.t.iter().filter(|&&t| t > e[0] && t <= e[1]).count() >= 2
    })
}

const MAX_ITER: usize = 60;
const MAX_HALVINGS: usize = 10;

/// Iterative breakpoint linearization from `start`; `None` if it fails to
/// converge or leaves the admissible region.
fn linearized_search(d: &Data, start: &[f64], tol: f64) -> Option<(Vec<f64>, f64)> {
    let k = start.len();
    let mut psi = start.to_vec();
    if !admissible(d, &psi) {
        return None;
    }
    let mut sse = fit_fixed(d, &psi)?.1;
    for _ in 0..MAX_ITER {
        let (coef, _) = wls(d, 2 * k + 2, |i, r| {
            let t = d.t[i];
            hinge_row(t, &psi, r);
            for (j, p) in psi.iter().enumerate() {
                r[2 + k + j] = if t > *p { -1.0 } else { 0.0 };
            }
        })?;
        let step: Vec<f64> = (0..k)
            .map(|j| {
                let beta = coef[2 + j];
                if beta.abs() < 1e-10 {
                    f64::NAN
                } else {
                    coef[2 + k + j] / beta
                }
            })
            .collect();
        if step.iter().any(|s| !s.is_finite()) {
            return None;
        }
        let mut h = 1.0;
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let cand: Vec<f64> = psi.iter().zip(&step).map(|(p, s)| p + h * s).collect();
            if admissible(d, &cand) {
                if let Some((_, s_new)) = fit_fixed(d, &cand) {
                    if s_new <= sse * (1.0 + 1e-12) + 1e-300 {
                        accepted = Some((cand, s_new));
                        break;
                    }
                }
            }
            h *= 0.5;
        }
        let (cand, s_new) = accepted?;
        let moved = psi
            .iter()
            .zip(&cand)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let improvement = sse - s_new;
        psi = cand;
        sse = s_new;
        if moved < tol || improvement <= tol * sse.max(1e-12) * 1e-3 {
            return Some((psi, sse));
        }
    }
    None
}

fn combinations(n: usize, k: usize, min_gap: usize, mut f: impl FnMut(&[usize])) {
    fn rec(
        start: usize,
        n: usize,
        k: usize,
        min_gap: usize,
        cur: &mut Vec<usize>,
        f: &mut dyn FnMut(&[usize]),
    ) {
        if cur.len() == k {
            f(cur);
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + min_gap, n, k, min_gap, cur, f);
            cur.pop();
        }
    }
    rec(0, n, k, min_gap, &mut Vec::with_capacity(k), &mut f);
}

const GRID_BUDGET: usize = 60_000;

/// Exhaustive search over sample midpoints (thinned when the number of
/// combinations would exceed a fixed budget).
fn grid_search(d: &Data, k: usize) -> Option<(Vec<f64>, f64)> {
    let mids: Vec<f64> = d.t.windows(2).map(|p| 0.5 * (p[0] + p[1])).collect();
    let mut stride = 1;
    loop {
        let m = mids.len().div_ceil(stride);
        let count = (0..k).fold(1.0, |acc: f64, i| acc * (m - i.min(m)) as f64 / (i + 1) as f64);
        if count <= GRID_BUDGET as f64 || stride > mids.len() {
            break;
        }
        stride += 1;
    }
    let cand: Vec<f64> = mids.iter().step_by(stride).copied().collect();
    let mut best: Option<(Vec<f64>, f64)> = None;
    combinations(cand.len(), k, 1, |idx| {
        let psi: Vec<f64> = idx.iter().map(|&i| cand[i]).collect();
        if !admissible(d, &psi) {
            return;
        }
        if let Some((_, sse)) = fit_fixed(d, &psi) {
            if best.as_ref().is_none_or(|b| sse < b.1) {
                best = Some((psi, sse));
            }
        }
    });
    best
}

fn estimate_breakpoints(d: &Data, k: usize, cfg: &FitConfig, rng: &mut ChaCha8Rng) -> Option<Vec<f64>> {
    if k == 0 {
        return Some(Vec::new());
    }
    if d.n() < 2 * (k + 1) {
        return None;
    }
    let (lo, hi) = d.span();
    let mut best: Option<(Vec<f64>, f64)> = None;
    for restart in 0..cfg.max_restarts {
        let start: Vec<f64> = if restart == 0 {
            (1..=k)
                .map(|j| lo + (hi - lo) * j as f64 / (k + 1) as f64)
                .collect()
        } else {
            let mut s: Vec<f64> = (0..k).map(|_| rng.random_range(lo..hi)).collect();
            s.sort_by(f64::total_cmp);
            s
        };
        if let Some((psi, sse)) = linearized_search(d, &start, cfg.convergence_tol) {
            if best.as_ref().is_none_or(|b| sse < b.1) {
                best = Some((psi, sse));
            }
        }
    }
    if best.is_none() {
        let (psi, sse) = grid_search(d, k)?;
        best = match linearized_search(d, &psi, cfg.convergence_tol) {
            Some((p2, s2)) if s2 <= sse => Some((p2, s2)),
            _ => Some((psi, sse)),
        };
    }
    best.map(|b| b.0)
}

/// Weighted R²; degenerate (constant) data yields 0.
fn weighted_r_squared(sse: f64, sst: f64, mean: f64, weight_sum: f64) -> f64 {
    if sst <= 1e-18 * weight_sum * mean.abs().max(1.0).powi(2) {
        0.0
    } else {
        1.0 - sse / sst
    }
}

fn build_fit(d: &Data, psi: &[f64]) -> Option<PwlFit> {
    let (coef, sse) = fit_fixed(d, psi)?;
    let line = |t: f64| {
        let mut r = vec![0.0; psi.len() + 2];
        hinge_row(t, psi, &mut r);
        r.iter().zip(coef.iter()).map(|(a, b)| a * b).sum::<f64>()
    };
    let mut knots = vec![(T_START, line(T_START))];
    knots.extend(psi.iter().map(|&p| (p, line(p))));
    knots.push((0.0, line(0.0)));
    let (sst, mean) = d.weighted_sst();
    let mut fit = PwlFit::from_knots(&knots);
    fit.r_squared = weighted_r_squared(sse, sst, mean, d.w.iter().sum());
    Some(fit)
}

fn event_rng(p: &SpeedProfile, cfg: &FitConfig) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed_for_id(cfg.seed, &p.event_id))
}

/// One weighted piecewise-linear regression per breakpoint count
/// `0..=n_b_max`, each carrying its R² and loss. Counts that cannot be fitted
/// (too few samples) are dropped.
pub fn fit_candidates(p: &SpeedProfile, cfg: &FitConfig) -> Result<Vec<PwlFit>> {
    let t = p.times();
    let v = p.speeds();
    let w = p.weights();
    let d = Data {
        t: &t,
        v: &v,
        w: &w,
    };
    if d.n() < 2 {
        return Err(Error::FitDiverged { n_b: 0 });
    }
    let mut rng = event_rng(p, cfg);
    let mut out = Vec::with_capacity(cfg.n_b_max + 1);
    for k in 0..=cfg.n_b_max {
        let fit = estimate_breakpoints(&d, k, cfg, &mut rng).and_then(|psi| build_fit(&d, &psi));
        match fit {
            Some(mut f) => {
                f.loss = loss(&f, p, cfg);
                out.push(f);
            }
            None if k == 0 => return Err(Error::FitDiverged { n_b: 0 }),
            None => log::debug!("{}: no fit with {k} breakpoints", p.event_id),
        }
    }
    Ok(out)
}

/// Make `v̂ ≥ 0` on `[-5, 0]`: a negative start or end value is cut off at
/// the zero crossing of its terminal segment (adding a breakpoint there and
/// holding zero outward), then any negative breakpoint value is raised to
/// zero with its neighbors reconnected.
pub fn enforce_nonnegative(fit: &PwlFit) -> PwlFit {
    let mut knots = fit.knots();
    let mut modified = false;

    let n = knots.len();
    if knots[n - 1].1 < 0.0 {
        let (t0, v0) = knots[n - 2];
        let (t1, v1) = knots[n - 1];
        if v0 > 0.0 {
            let tz = t0 + (t1 - t0) * v0 / (v0 - v1);
            if t1 - tz > 1e-9 {
                knots.insert(n - 1, (tz, 0.0));
            }
        }
        let last = knots.len() - 1;
        knots[last].1 = 0.0;
        modified = true;
    }
    if knots[0].1 < 0.0 {
        let (t0, v0) = knots[0];
        let (t1, v1) = knots[1];
        if v1 > 0.0 {
            let tz = t0 + (t1 - t0) * (-v0) / (v1 - v0);
            if tz - t0 > 1e-9 {
                knots.insert(1, (tz, 0.0));
            }
        }
        knots[0].1 = 0.0;
        modified = true;
    }
    let last = knots.len() - 1;
    for k in knots[1..last].iter_mut() {
        if k.1 < 0.0 {
            k.1 = 0.0;
            modified = true;
        }
    }

    if !modified {
        return fit.clone();
    }
    let mut out = PwlFit::from_knots(&knots);
    out.n_b = fit.n_b;
    out.r_squared = fit.r_squared;
    out.loss = fit.loss;
    out.modified_for_nonnegativity = true;
    out
}

/// Six-parameter description from the (at most three) segments nearest time
/// zero. The tail counts as the steady segment S while its slopes stay within
/// `steady_slope_tol`; then come segment 1 and segment 2.
pub fn extract_params(fit: &PwlFit, cfg: &FitConfig) -> EventParams {
    let segs = &fit.segments;
    let mut idx = segs.len();
    let mut tau_s = 0.0;
    while idx > 0 && segs[idx - 1].slope.abs() <= cfg.steady_slope_tol {
        idx -= 1;
        tau_s += segs[idx].duration();
    }
    let (mut a1, mut tau_1) = (0.0, 0.0);
    if idx > 0 {
        idx -= 1;
        a1 = segs[idx].slope;
        tau_1 = segs[idx].duration();
    }
    let (mut a2, mut tau_2) = (a1, 0.0);
    if tau_1 > 0.0 && idx > 0 {
        idx -= 1;
        a2 = segs[idx].slope;
        tau_2 = segs[idx].duration();
    }
    if tau_2 == 0.0 {
        a2 = a1;
    }
    let snap = |x: f64| if x.abs() < SNAP_TOL { 0.0 } else { x };
    EventParams::new(
        snap(fit.predict(0.0).max(0.0)),
        snap(a1),
        snap(a2),
        snap(tau_s),
        snap(tau_1),
        snap(tau_2),
    )
}

/// Values this close to zero are rounding residue from the regression (an
/// all-zero standstill fits to ~1e-17) and are reported as exact zeros.
const SNAP_TOL: f64 = 1e-9;

/// Result of parameterizing one event.
#[derive(Debug, Clone)]
pub struct EventFit {
    pub profile: SpeedProfile,
    pub fit: PwlFit,
    pub params: EventParams,
    pub adjusted_r_squared: f64,
    pub valid: bool,
}

/// Window, fit, select, repair, validate and extract one event.
pub fn fit_event(e: &RawEvent, cfg: &FitConfig) -> Result<EventFit> {
    let profile = window_event(e)?;
    let candidates = fit_candidates(&profile, cfg)?;
    let best = select_best(&candidates)?;
    let adjusted = best.adjusted_r_squared(profile.samples.len());
    let fit = enforce_nonnegative(&best);
    let valid = validate_event(&profile, &fit);
    let mut params = extract_params(&fit, cfg);
    params.event_id = e.event_id.clone();
    params.source_group = Some(e.source_group);
    params.severity = Some(e.severity);
    params.weight = e.native_weight.unwrap_or(1.0);
    Ok(EventFit {
        profile,
        fit,
        params,
        adjusted_r_squared: adjusted,
        valid,
    })
}

/// [`fit_event`] over a corpus, in parallel when enabled.
pub fn fit_events(events: &[RawEvent], cfg: &FitConfig) -> Vec<Result<EventFit>> {
    crate::par::map(events, |e| fit_event(e, cfg))
}
