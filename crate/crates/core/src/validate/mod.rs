//! Weighted ECDFs, the weighted two-sample KS permutation test, descriptive
//! statistics and the raw-versus-synthetic comparison report.

mod bootstrap;

pub use bootstrap::{bootstrap_robustness, BootstrapConfig, BootstrapReport, FractionResult, RepOutcome};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pwl_fit::EventParams;
use crate::stats::{mix_seed, weighted_mean, weighted_var_freq};
use crate::Param;

/// Default permutation count for [`weighted_ks_test`].
pub const DEFAULT_N_PERM: usize = 2000;

/// Step function `F(x) = Σ_{v ≤ x} w / Σ w` stored at its jump points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedEcdf {
    pub support: Vec<f64>,
    pub cumulative: Vec<f64>,
}

impl WeightedEcdf {
    pub fn eval(&self, x: f64) -> f64 {
        match self.support.partition_point(|&s| s <= x) {
            0 => 0.0,
            k => self.cumulative[k - 1],
        }
    }
}

pub fn weighted_ecdf(values: &[f64], weights: &[f64]) -> Result<WeightedEcdf> {
    let total: f64 = weights.iter().sum();
    if values.is_empty() || !(total > 0.0) {
        return Err(Error::EmptyInput);
    }
    let mut pairs: Vec<(f64, f64)> = values.iter().copied().zip(weights.iter().copied()).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut support = Vec::new();
    let mut cumulative = Vec::new();
    let mut acc = 0.0;
    for (i, &(v, w)) in pairs.iter().enumerate() {
        acc += w;
        if pairs.get(i + 1).is_none_or(|n| n.0 != v) {
            support.push(v);
            cumulative.push(acc / total);
        }
    }
    if let Some(last) = cumulative.last_mut() {
        *last = 1.0;
    }
    Ok(WeightedEcdf { support, cumulative })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
    pub n_permutations: usize,
}

/// Pooled sample sorted by value: `(value, weight, from_first_sample)`.
struct Pooled {
    values: Vec<f64>,
    weights: Vec<f64>,
    n_first: usize,
}

impl Pooled {
    fn new(x: &[f64], wx: &[f64], y: &[f64], wy: &[f64]) -> (Pooled, Vec<bool>) {
        let scale = |w: &[f64]| {
            let m = w.iter().sum::<f64>() / w.len() as f64;
            w.iter().map(move |v| v / m).collect::<Vec<f64>>()
        };
        let mut rows: Vec<(f64, f64, bool)> = x
            .iter()
            .zip(scale(wx))
            .map(|(&v, w)| (v, w, true))
            .chain(y.iter().zip(scale(wy)).map(|(&v, w)| (v, w, false)))
            .collect();
        rows.sort_by(|a, b| a.0.total_cmp(&b.0));
        let labels = rows.iter().map(|r| r.2).collect();
        (
            Pooled {
                values: rows.iter().map(|r| r.0).collect(),
                weights: rows.iter().map(|r| r.1).collect(),
                n_first: x.len(),
            },
            labels,
        )
    }

    /// Sup distance between the two weighted ECDFs defined by `labels`.
    fn statistic(&self, labels: &[bool]) -> f64 {
        let (mut t1, mut t2) = (0.0, 0.0);
        for (w, &l) in self.weights.iter().zip(labels) {
            if l {
                t1 += w;
            } else {
                t2 += w;
            }
        }
        let (mut c1, mut c2, mut d) = (0.0_f64, 0.0_f64, 0.0_f64);
        let n = self.values.len();
        for i in 0..n {
            if labels[i] {
                c1 += self.weights[i];
            } else {
                c2 += self.weights[i];
            }
            if i + 1 == n || self.values[i + 1] != self.values[i] {
                d = d.max((c1 / t1 - c2 / t2).abs());
            }
        }
        d.min(1.0)
    }
}

/// Sup distance between the weighted ECDFs of two samples.
pub fn weighted_ks_statistic(x: &[f64], wx: &[f64], y: &[f64], wy: &[f64]) -> Result<f64> {
    let fx = weighted_ecdf(x, wx)?;
    let fy = weighted_ecdf(y, wy)?;
    let mut d = 0.0_f64;
    for s in fx.support.iter().chain(&fy.support) {
        d = d.max((fx.eval(*s) - fy.eval(*s)).abs());
    }
    Ok(d)
}

/// Weighted two-sample KS test. The p-value is the permutation tail
/// probability `(1 + #{D_perm ≥ D_obs}) / (1 + n_perm)`: events keep their
/// weights (each sample's weights scaled to mean one) and only the sample
/// labels are reshuffled, group sizes fixed.
pub fn weighted_ks_test(
    x: &[f64],
    wx: &[f64],
    y: &[f64],
    wy: &[f64],
    n_perm: usize,
    seed: u64,
) -> Result<KsResult> {
    let statistic = weighted_ks_statistic(x, wx, y, wy)?;
    let (pooled, _) = Pooled::new(x, wx, y, wy);
    let n = pooled.values.len();
    let exceed: Vec<bool> = crate::par::map_range(n_perm, |k| {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, k as u64));
        let mut labels: Vec<bool> = (0..n).map(|i| i < pooled.n_first).collect();
        labels.shuffle(&mut rng);
        pooled.statistic(&labels) >= statistic - 1e-12
    });
    let hits = exceed.iter().filter(|&&b| b).count();
    Ok(KsResult {
        statistic,
        p_value: (1 + hits) as f64 / (1 + n_perm) as f64,
        n_permutations: n_perm,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    /// Frequency-weight convention, divisor `Σw − 1`.
    pub sd: f64,
}

pub fn describe_values(values: &[f64], weights: &[f64]) -> Result<Summary> {
    if values.is_empty() || !(weights.iter().sum::<f64>() > 0.0) {
        return Err(Error::EmptyInput);
    }
    Ok(Summary {
        mean: weighted_mean(values, weights),
        sd: weighted_var_freq(values, weights).max(0.0).sqrt(),
    })
}

/// Weighted mean and SD of each parameter, in canonical order.
pub fn describe(events: &[EventParams]) -> Result<Vec<(Param, Summary)>> {
    let w: Vec<f64> = events.iter().map(|e| e.weight).collect();
    Param::ALL
        .iter()
        .map(|&p| {
            let x: Vec<f64> = events.iter().map(|e| p.get(e)).collect();
            describe_values(&x, &w).map(|s| (p, s))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamComparison {
    pub param: Param,
    pub raw: Summary,
    pub synthetic: Summary,
    pub ks: KsResult,
    pub significant: bool,
    pub raw_ecdf: WeightedEcdf,
    pub synthetic_ecdf: WeightedEcdf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub alpha: f64,
    pub n_raw: usize,
    pub n_synthetic: usize,
    pub params: Vec<ParamComparison>,
}

impl ValidationReport {
    /// No parameter differs significantly.
    pub fn all_pass(&self) -> bool {
        self.params.iter().all(|p| !p.significant)
    }
}

/// Compare raw (weighted) and synthetic events parameter by parameter.
pub fn compare(
    raw: &[EventParams],
    synthetic: &[EventParams],
    alpha: f64,
    n_perm: usize,
    seed: u64,
) -> Result<ValidationReport> {
    if raw.is_empty() || synthetic.is_empty() {
        return Err(Error::EmptyInput);
    }
    let wr: Vec<f64> = raw.iter().map(|e| e.weight).collect();
    let ws: Vec<f64> = synthetic.iter().map(|e| e.weight).collect();
    let mut params = Vec::new();
    for p in Param::ALL {
        let xr: Vec<f64> = raw.iter().map(|e| p.get(e)).collect();
        let xs: Vec<f64> = synthetic.iter().map(|e| p.get(e)).collect();
        let ks = weighted_ks_test(&xr, &wr, &xs, &ws, n_perm, mix_seed(seed, p.index() as u64))?;
        params.push(ParamComparison {
            param: p,
            raw: describe_values(&xr, &wr)?,
            synthetic: describe_values(&xs, &ws)?,
            significant: ks.p_value <= alpha,
            ks,
            raw_ecdf: weighted_ecdf(&xr, &wr)?,
            synthetic_ecdf: weighted_ecdf(&xs, &ws)?,
        });
    }
    Ok(ValidationReport {
        alpha,
        n_raw: raw.len(),
        n_synthetic: synthetic.len(),
        params,
    })
}
