//! Weighted summary statistics, normal-distribution helpers and seed
//! derivation shared by the modeling stages.

use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use crate::error::{Error, Result};

pub fn weight_sum(w: &[f64]) -> f64 {
    w.iter().sum()
}

/// Kish effective sample size `(Σw)² / Σw²`.
pub fn effective_n(w: &[f64]) -> f64 {
    let s: f64 = w.iter().sum();
    let s2: f64 = w.iter().map(|x| x * x).sum();
    if s2 > 0.0 {
        s * s / s2
    } else {
        0.0
    }
}

pub fn weighted_mean(x: &[f64], w: &[f64]) -> f64 {
    let sw: f64 = w.iter().sum();
    x.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw
}

/// Weighted variance about the weighted mean with divisor Σw (MLE form).
pub fn weighted_var_pop(x: &[f64], w: &[f64]) -> f64 {
    let m = weighted_mean(x, w);
    let sw: f64 = w.iter().sum();
    x.iter().zip(w).map(|(a, b)| b * (a - m).powi(2)).sum::<f64>() / sw
}

/// Weighted variance with the frequency-weight divisor `Σw − 1`.
pub fn weighted_var_freq(x: &[f64], w: &[f64]) -> f64 {
    let m = weighted_mean(x, w);
    let sw: f64 = w.iter().sum();
    x.iter().zip(w).map(|(a, b)| b * (a - m).powi(2)).sum::<f64>() / (sw - 1.0)
}

/// Rescale weights to sum to their Kish effective sample size. Likelihoods
/// and significance tests use this normalization so that large raw weights
/// do not inflate the apparent amount of information.
pub fn normalize_to_effective(w: &[f64]) -> Vec<f64> {
    let s: f64 = w.iter().sum();
    let n_eff = effective_n(w);
    w.iter().map(|x| x * n_eff / s).collect()
}

/// Weighted quantile on the step ECDF: smallest value whose cumulative
/// normalized weight reaches `q`.
pub fn weighted_quantile(x: &[f64], w: &[f64], q: f64) -> Result<f64> {
    if x.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let total: f64 = w.iter().sum();
    let mut acc = 0.0;
    for &i in &idx {
        acc += w[i];
        if acc / total >= q - 1e-12 {
            return Ok(x[i]);
        }
    }
    Ok(x[*idx.last().unwrap()])
}

/// True when all values agree to within a relative 1e-9.
pub fn is_constant(x: &[f64]) -> bool {
    let (lo, hi) = x
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    x.is_empty() || hi - lo <= 1e-9 * lo.abs().max(hi.abs()).max(1.0)
}

fn std_normal() -> Normal {
    Normal::standard()
}

pub fn norm_cdf(z: f64) -> f64 {
    std_normal().cdf(z)
}

pub fn norm_sf(z: f64) -> f64 {
    std_normal().sf(z)
}

pub fn norm_ppf(p: f64) -> f64 {
    std_normal().inverse_cdf(p)
}

pub fn norm_ln_pdf(z: f64) -> f64 {
    -0.5 * z * z - 0.5 * (2.0 * std::f64::consts::PI).ln()
}

/// `ln Φ(z)`, accurate far into the lower tail.
pub fn norm_ln_cdf(z: f64) -> f64 {
    if z > -30.0 {
        norm_cdf(z).ln()
    } else {
        // Mills-ratio asymptotic expansion.
        let z2 = z * z;
        let series = 1.0 - 1.0 / z2 + 3.0 / (z2 * z2) - 15.0 / (z2 * z2 * z2);
        norm_ln_pdf(z) - (-z).ln() + series.ln()
    }
}

/// Two-sided p-value of a Student t statistic with (possibly fractional)
/// degrees of freedom.
pub fn student_t_two_sided(t: f64, df: f64) -> f64 {
    if !t.is_finite() {
        return 0.0;
    }
    match StudentsT::new(0.0, 1.0, df) {
        Ok(dist) => (2.0 * dist.sf(t.abs())).clamp(0.0, 1.0),
        Err(_) => 1.0,
    }
}

/// splitmix64 finalizer, used to derive independent substream seeds.
pub fn mix_seed(master: u64, key: u64) -> u64 {
    let mut z = master ^ key.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed keyed by a string identifier (FNV-1a), independent of processing order.
pub fn seed_for_id(master: u64, id: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in id.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    mix_seed(master, h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn unit_weights_match_unweighted_formulas() {
        let x = [1.0, 2.0, 4.0, 7.0];
        let w = [1.0; 4];
        assert_relative_eq!(weighted_mean(&x, &w), 3.5);
        // sample variance: ((2.5²+1.5²+0.5²+3.5²)/3)
        assert_relative_eq!(weighted_var_freq(&x, &w), 21.0 / 3.0, epsilon = 1e-12);
        assert_relative_eq!(weighted_var_pop(&x, &w), 21.0 / 4.0, epsilon = 1e-12);
    }

    #[test]
    fn effective_n_of_equal_weights_is_count() {
        assert_relative_eq!(effective_n(&[3.0; 7]), 7.0, epsilon = 1e-12);
        assert_relative_eq!(effective_n(&[1.0, 0.0, 0.0]), 1.0);
    }

    #[test]
    fn weighted_quantile_follows_step_ecdf() {
        let x = [3.0, 1.0, 2.0];
        let w = [1.0, 1.0, 2.0];
        assert_eq!(weighted_quantile(&x, &w, 0.25).unwrap(), 1.0);
        assert_eq!(weighted_quantile(&x, &w, 0.5).unwrap(), 2.0);
        assert_eq!(weighted_quantile(&x, &w, 0.76).unwrap(), 3.0);
    }

    #[test]
    fn ln_cdf_tail_is_continuous() {
        let a = norm_ln_cdf(-29.999);
        let b = norm_ln_cdf(-30.001);
        assert!((a - b).abs() < 0.1);
        assert!(b < a);
    }

    #[test]
    fn t_test_p_value_matches_reference() {
        // scipy: 2 * t.sf(2.1, 17.3)
        assert_relative_eq!(student_t_two_sided(2.1, 17.3), 0.050688223022868, epsilon = 1e-9);
    }
}
