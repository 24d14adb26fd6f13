//! Weighted correlation, regression decorrelation and correlation-matrix repair.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::{effective_n, student_t_two_sided, weighted_mean};
use crate::Param;

/// Weighted Pearson correlation and its two-sided p-value from a t-test on
/// the effective sample size `(Σw)²/Σw²`.
pub fn weighted_corr(x: &[f64], y: &[f64], w: &[f64]) -> Result<(f64, f64)> {
    let mx = weighted_mean(x, w);
    let my = weighted_mean(y, w);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for i in 0..x.len() {
        let (dx, dy) = (x[i] - mx, y[i] - my);
        sxy += w[i] * dx * dy;
        sxx += w[i] * dx * dx;
        syy += w[i] * dy * dy;
    }
    let scale = |s: f64, m: f64| s <= 1e-24 * w.iter().sum::<f64>() * m.abs().max(1.0).powi(2);
    if scale(sxx, mx) || scale(syy, my) {
        return Err(Error::ZeroVariance("correlation operand".into()));
    }
    let r = (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0);
    let df = effective_n(w) - 2.0;
    let p = if df <= 0.0 {
        1.0
    } else if r.abs() >= 1.0 {
        0.0
    } else {
        student_t_two_sided(r * (df / (1.0 - r * r)).sqrt(), df)
    };
    Ok((r, p))
}

/// Thresholds deciding whether a correlation counts as significant and
/// non-weak.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrRule {
    pub threshold: f64,
    pub alpha: f64,
}

impl Default for CorrRule {
    fn default() -> Self {
        CorrRule {
            threshold: 0.3,
            alpha: 0.05,
        }
    }
}

impl CorrRule {
    pub fn holds(&self, r: f64, p: f64) -> bool {
        r.abs() >= self.threshold && p < self.alpha
    }

    /// Rule applied to `x` and `y`; operands without variance never correlate.
    pub fn correlated(&self, x: &[f64], y: &[f64], w: &[f64]) -> bool {
        weighted_corr(x, y, w).is_ok_and(|(r, p)| self.holds(r, p))
    }
}

/// `x′ = x − f(X_pm)` with `f` the weighted least-squares fit of a parameter
/// on the point-mass parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformSpec {
    pub param: Param,
    pub regressors: Vec<Param>,
    /// Intercept first, then one coefficient per regressor.
    pub coefficients: Vec<f64>,
}

impl TransformSpec {
    pub fn predict(&self, regressor_values: &[f64]) -> f64 {
        self.coefficients[0]
            + self.coefficients[1..]
                .iter()
                .zip(regressor_values)
                .map(|(b, x)| b * x)
                .sum::<f64>()
    }
}

/// Regress `x` on the columns of `pm` (one per point-mass parameter) by
/// weighted least squares and return the residuals. Columns that add no rank
/// (constant or collinear with earlier ones) are dropped.
pub fn decorrelate(
    param: Param,
    x: &[f64],
    pm: &[(Param, Vec<f64>)],
    w: &[f64],
) -> Result<(Vec<f64>, TransformSpec)> {
    let n = x.len();
    let sqrt_w: Vec<f64> = w.iter().map(|v| v.sqrt()).collect();
    let mut kept: Vec<usize> = Vec::new();
    let design = |cols: &[usize]| {
        DMatrix::from_fn(n, cols.len() + 1, |i, j| {
            sqrt_w[i] * if j == 0 { 1.0 } else { pm[cols[j - 1]].1[i] }
        })
    };
    for c in 0..pm.len() {
        let mut trial = kept.clone();
        trial.push(c);
        let sv = design(&trial).singular_values();
        let max = sv.max();
        if sv.min() > 1e-9 * max {
            kept = trial;
        } else {
            log::debug!("dropping collinear regressor {} for {param}", pm[c].0);
        }
    }
    let a = design(&kept);
    let b = DVector::from_iterator(n, x.iter().zip(&sqrt_w).map(|(v, s)| v * s));
    let coef = a
        .svd(true, true)
        .solve(&b, 1e-12)
        .map_err(|e| Error::ModelBuildFailed(format!("regression for {param}: {e}")))?;
    let spec = TransformSpec {
        param,
        regressors: kept.iter().map(|&c| pm[c].0).collect(),
        coefficients: coef.iter().copied().collect(),
    };
    let residual = (0..n)
        .map(|i| {
            let row: Vec<f64> = kept.iter().map(|&c| pm[c].1[i]).collect();
            x[i] - spec.predict(&row)
        })
        .collect();
    Ok((residual, spec))
}

/// Weighted correlation matrix of the columns (unit diagonal).
pub fn correlation_matrix(cols: &[Vec<f64>], w: &[f64]) -> Vec<Vec<f64>> {
    let k = cols.len();
    let mut m = vec![vec![0.0; k]; k];
    for i in 0..k {
        m[i][i] = 1.0;
        for j in 0..i {
            let r = weighted_corr(&cols[i], &cols[j], w).map_or(0.0, |(r, _)| r);
            m[i][j] = r;
            m[j][i] = r;
        }
    }
    m
}

/// Project a symmetric matrix with unit diagonal onto the PSD cone by
/// clipping negative eigenvalues, then rescale back to unit diagonal.
/// Returns the repaired matrix and the most negative eigenvalue removed.
pub fn nearest_psd(m: &[Vec<f64>]) -> (Vec<Vec<f64>>, f64) {
    let k = m.len();
    if k == 0 {
        return (Vec::new(), 0.0);
    }
    let a = DMatrix::from_fn(k, k, |i, j| 0.5 * (m[i][j] + m[j][i]));
    let eig = SymmetricEigen::new(a.clone());
    let min_eig = eig.eigenvalues.min();
    if min_eig >= 0.0 {
        return (to_rows(&a), 0.0);
    }
    let clipped = eig.eigenvalues.map(|l| l.max(1e-10));
    let b = &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose();
    let d: Vec<f64> = (0..k).map(|i| b[(i, i)].sqrt()).collect();
    let c = DMatrix::from_fn(k, k, |i, j| if i == j { 1.0 } else { 0.5 * (b[(i, j)] + b[(j, i)]) / (d[i] * d[j]) });
    (to_rows(&c), min_eig)
}

/// `L` with `L Lᵀ = Σ` from the eigendecomposition, valid for singular Σ.
pub fn sampling_factor(sigma: &[Vec<f64>]) -> DMatrix<f64> {
    let k = sigma.len();
    if k == 0 {
        return DMatrix::zeros(0, 0);
    }
    let a = DMatrix::from_fn(k, k, |i, j| sigma[i][j]);
    let eig = SymmetricEigen::new(a);
    let root = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&root)
}

fn to_rows(a: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..a.nrows())
        .map(|i| (0..a.ncols()).map(|j| a[(i, j)]).collect())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn perfect_correlation() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        let (r, p) = weighted_corr(&x, &x, &[1.0; 5]).unwrap();
        assert_relative_eq!(r, 1.0);
        assert!(p < 1e-12);
    }

    #[test]
    fn equal_weights_match_unweighted_pearson() {
        let x = [1.0, 2.0, 4.0, 3.0, 7.0, 5.5];
        let y = [2.0, 1.0, 5.0, 2.5, 6.0, 7.0];
        let n = x.len() as f64;
        let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
        let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
        let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
        let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
        let (r, _) = weighted_corr(&x, &y, &[2.0; 6]).unwrap();
        assert_relative_eq!(r, sxy / (sxx * syy).sqrt(), epsilon = 1e-14);
    }

    #[test]
    fn pearson_p_value_reference() {
        let x = [1.0, 2.0, 4.0, 3.0, 7.0, 5.5];
        let y = [2.0, 1.0, 5.0, 2.5, 6.0, 7.0];
        let (r, p) = weighted_corr(&x, &y, &[1.0; 6]).unwrap();
        assert_relative_eq!(r, 0.885744465618957, epsilon = 1e-12);
        assert_relative_eq!(p, 0.018835726143552365, epsilon = 1e-10);
    }

    #[test]
    fn independent_samples_are_weakly_correlated() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x: Vec<f64> = (0..5000).map(|_| rng.random()).collect();
        let y: Vec<f64> = (0..5000).map(|_| rng.random()).collect();
        let (r, _) = weighted_corr(&x, &y, &vec![1.0; 5000]).unwrap();
        assert!(r.abs() < 0.1);
    }

    #[test]
    fn zero_variance_is_an_error() {
        assert!(matches!(
            weighted_corr(&[1.0; 4], &[1.0, 2.0, 3.0, 4.0], &[1.0; 4]),
            Err(Error::ZeroVariance(_))
        ));
    }

    #[test]
    fn decorrelation_removes_linear_dependence() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pm: Vec<f64> = (0..500)
            .map(|i| if i % 3 == 0 { 0.0 } else { rng.random::<f64>() * 4.0 })
            .collect();
        let x: Vec<f64> = pm.iter().map(|v| 2.0 * v + 0.1 * (rng.random::<f64>() - 0.5)).collect();
        let w = vec![1.0; 500];
        let (xp, spec) = decorrelate(Param::Vc, &x, &[(Param::TauS, pm.clone())], &w).unwrap();
        assert_relative_eq!(spec.coefficients[1], 2.0, epsilon = 0.01);
        let (r, _) = weighted_corr(&xp, &pm, &w).unwrap();
        assert!(r.abs() < 0.05);
    }

    #[test]
    fn exact_linearity_leaves_zero_residual() {
        let pm: Vec<f64> = (0..20).map(|i| (i % 4) as f64).collect();
        let x: Vec<f64> = pm.iter().map(|v| 3.0 - 0.5 * v).collect();
        let (xp, _) = decorrelate(Param::A1, &x, &[(Param::TauS, pm)], &[1.0; 20]).unwrap();
        assert!(xp.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn collinear_regressors_are_dropped() {
        let a: Vec<f64> = (0..30).map(|i| (i % 5) as f64).collect();
        let b: Vec<f64> = a.iter().map(|v| 2.0 * v).collect();
        let x: Vec<f64> = a.iter().map(|v| 1.0 + v).collect();
        let (_, spec) = decorrelate(
            Param::A1,
            &x,
            &[(Param::TauS, a), (Param::Tau2, b)],
            &[1.0; 30],
        )
        .unwrap();
        assert_eq!(spec.regressors, vec![Param::TauS]);
        assert_relative_eq!(spec.coefficients[1], 1.0, epsilon = 1e-10);
    }

    #[test]
    fn psd_repair() {
        let bad = vec![
            vec![1.0, 0.9, -0.9],
            vec![0.9, 1.0, 0.9],
            vec![-0.9, 0.9, 1.0],
        ];
        let (fixed, min_eig) = nearest_psd(&bad);
        assert!(min_eig < 0.0);
        let m = DMatrix::from_fn(3, 3, |i, j| fixed[i][j]);
        assert!(SymmetricEigen::new(m).eigenvalues.min() >= -1e-12);
        for i in 0..3 {
            assert_relative_eq!(fixed[i][i], 1.0, epsilon = 1e-12);
            for j in 0..3 {
                assert_eq!(fixed[i][j], fixed[j][i]);
            }
        }
        let l = sampling_factor(&fixed);
        let back = &l * l.transpose();
        for i in 0..3 {
            for j in 0..3 {
                assert_relative_eq!(back[(i, j)], fixed[i][j], epsilon = 1e-9);
            }
        }
    }
}
