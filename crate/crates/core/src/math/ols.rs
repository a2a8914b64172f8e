use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{expit, LinearModel, MathError, RANK_TOLERANCE};

/// Fit quality of a least-squares baseline on its own fitting data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    /// Coefficient of determination on the logit scale (unadjusted).
    pub r_squared: f64,
    /// Mean absolute error in accuracy percentage points.
    pub mae_points: f64,
    pub n_models: usize,
    /// `target - fitted`, logit scale, in input row order.
    pub residuals: Vec<f64>,
}

/// Least-squares fit of `targets ≈ design · w + b`.
///
/// `design` holds one row per model with `k` logit ID accuracies; `targets`
/// holds the logit OOD accuracy of each row. The intercept column is appended
/// internally and the system is solved by Householder QR.
pub fn fit_ols(
    design: &[Vec<f64>],
    targets: &[f64],
) -> Result<(LinearModel, FitDiagnostics), MathError> {
    let n = design.len();
    if targets.len() != n {
        return Err(MathError::DimensionMismatch {
            expected: n,
            got: targets.len(),
        });
    }
    let k = design.first().map_or(0, Vec::len);
    if k == 0 {
        return Err(MathError::DimensionMismatch {
            expected: 1,
            got: 0,
        });
    }
    if let Some(row) = design.iter().find(|r| r.len() != k) {
        return Err(MathError::DimensionMismatch {
            expected: k,
            got: row.len(),
        });
    }
    if n < k + 1 {
        return Err(MathError::TooFewModels { n, k });
    }
    if let Some(&bad) = design
        .iter()
        .flatten()
        .chain(targets)
        .find(|v| !v.is_finite())
    {
        return Err(MathError::NonFinite(bad));
    }

    let p = k + 1;
    // column-major augmented design [X | 1]
    let mut cols: Vec<Vec<f64>> = (0..k)
        .map(|j| design.iter().map(|row| row[j]).collect())
        .collect();
    cols.push(vec![1.0; n]);

    let rank = numerical_rank(&cols, n);
    if rank < p {
        return Err(MathError::RankDeficient { rank, columns: p });
    }

    let coef = householder_solve(cols, targets.to_vec());
    let model = LinearModel::new(coef[..k].to_vec(), coef[k])?;

    let fitted: Vec<f64> = design
        .iter()
        .map(|row| model.eval_logit(row))
        .collect::<Result<_, _>>()?;
    let diagnostics = diagnose(&fitted, targets)?;
    Ok((model, diagnostics))
}

fn diagnose(fitted: &[f64], targets: &[f64]) -> Result<FitDiagnostics, MathError> {
    let residuals: Vec<f64> = targets.iter().zip(fitted).map(|(t, f)| t - f).collect();
    let r_squared = match r_squared(fitted, targets) {
        Ok(r2) => r2,
        // constant target: the intercept reproduces it exactly
        Err(MathError::DegenerateTarget) | Err(MathError::TooShort { .. }) => 1.0,
        Err(e) => return Err(e),
    };
    let pred_acc: Vec<f64> = fitted.iter().map(|&z| expit(z)).collect();
    let true_acc: Vec<f64> = targets.iter().map(|&z| expit(z)).collect();
    Ok(FitDiagnostics {
        r_squared,
        mae_points: mae_points(&pred_acc, &true_acc)?,
        n_models: targets.len(),
        residuals,
    })
}

/// Rank of the `n × cols.len()` matrix, counting singular values above
/// `RANK_TOLERANCE × σ_max`.
fn numerical_rank(cols: &[Vec<f64>], n: usize) -> usize {
    let m = DMatrix::from_fn(n, cols.len(), |i, j| cols[j][i]);
    let sv = m.singular_values();
    let max = sv.iter().cloned().fold(0.0, f64::max);
    if max == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > RANK_TOLERANCE * max).count()
}

/// Solves `min ‖A c − b‖` for full-column-rank `A` given as columns.
fn householder_solve(mut cols: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    let p = cols.len();
    for j in 0..p {
        let norm = cols[j][j..].iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            continue;
        }
        let alpha = if cols[j][j] > 0.0 { -norm } else { norm };
        let mut v: Vec<f64> = cols[j][j..].to_vec();
        v[0] -= alpha;
        let vnorm2: f64 = v.iter().map(|x| x * x).sum();
        if vnorm2 == 0.0 {
            continue;
        }
        let reflect = |x: &mut [f64]| {
            let dot: f64 = v.iter().zip(x.iter()).map(|(a, b)| a * b).sum();
            let scale = 2.0 * dot / vnorm2;
            for (xi, vi) in x.iter_mut().zip(&v) {
                *xi -= scale * vi;
            }
        };
        for col in cols.iter_mut().skip(j) {
            reflect(&mut col[j..n]);
        }
        reflect(&mut b[j..n]);
    }
    // back substitution on the upper-triangular R
    let mut coef = vec![0.0; p];
    for i in (0..p).rev() {
        let tail: f64 = ((i + 1)..p).map(|j| cols[j][i] * coef[j]).sum();
        coef[i] = (b[i] - tail) / cols[i][i];
    }
    coef
}

/// `1 − SS_res / SS_tot`, computed on whatever scale the inputs are in
/// (the fitting code passes logits).
pub fn r_squared(predicted: &[f64], actual: &[f64]) -> Result<f64, MathError> {
    if predicted.len() != actual.len() {
        return Err(MathError::DimensionMismatch {
            expected: actual.len(),
            got: predicted.len(),
        });
    }
    if actual.len() < 2 {
        return Err(MathError::TooShort {
            required: 2,
            got: actual.len(),
        });
    }
    let (lo, hi) = actual
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    if hi - lo <= 1e-12 {
        return Err(MathError::DegenerateTarget);
    }
    let mean = actual.iter().sum::<f64>() / actual.len() as f64;
    let ss_tot: f64 = actual.iter().map(|a| (a - mean).powi(2)).sum();
    let ss_res: f64 = actual
        .iter()
        .zip(predicted)
        .map(|(a, p)| (a - p).powi(2))
        .sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// `100 · mean |predicted − actual|` on raw accuracies.
pub fn mae_points(predicted: &[f64], actual: &[f64]) -> Result<f64, MathError> {
    if predicted.len() != actual.len() {
        return Err(MathError::DimensionMismatch {
            expected: actual.len(),
            got: predicted.len(),
        });
    }
    if actual.is_empty() {
        return Err(MathError::TooShort {
            required: 1,
            got: 0,
        });
    }
    let total: f64 = predicted
        .iter()
        .zip(actual)
        .map(|(p, a)| (p - a).abs())
        .sum();
    Ok(100.0 * total / actual.len() as f64)
}
