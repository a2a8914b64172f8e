//! Kendall rank correlation in O(n log n) (Knight's algorithm).

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::MathError;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TauVariant {
    /// `(C − D) / n₀`
    A,
    /// `(C − D) / √((n₀ − n₁)(n₀ − n₂))`, tie-corrected.
    #[default]
    B,
}

/// Kendall's tau-b between two score vectors.
pub fn kendall_tau(scores_a: &[f64], scores_b: &[f64]) -> Result<f64, MathError> {
    kendall_tau_with(scores_a, scores_b, TauVariant::B)
}

pub fn kendall_tau_with(
    scores_a: &[f64],
    scores_b: &[f64],
    variant: TauVariant,
) -> Result<f64, MathError> {
    let n = scores_a.len();
    if scores_b.len() != n {
        return Err(MathError::DimensionMismatch {
            expected: n,
            got: scores_b.len(),
        });
    }
    if n < 2 {
        return Err(MathError::TooShort {
            required: 2,
            got: n,
        });
    }
    if let Some(&bad) = scores_a.iter().chain(scores_b).find(|v| !v.is_finite()) {
        return Err(MathError::NonFinite(bad));
    }

    // +0.0 folds -0.0 into 0.0 so total_cmp and == agree on ties
    let scores_a: Vec<f64> = scores_a.iter().map(|v| v + 0.0).collect();
    let scores_b: Vec<f64> = scores_b.iter().map(|v| v + 0.0).collect();

    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&i, &j| {
        scores_a[i]
            .total_cmp(&scores_a[j])
            .then(scores_b[i].total_cmp(&scores_b[j]))
    });

    let pairs = |t: u64| t * (t.saturating_sub(1)) / 2;
    let n0 = pairs(n as u64);

    // ties in a (n1) and joint ties (n3), read off the lexicographic sort
    let (mut n1, mut n3) = (0u64, 0u64);
    let (mut run_a, mut run_ab) = (1u64, 1u64);
    for w in idx.windows(2) {
        let (i, j) = (w[0], w[1]);
        if scores_a[i] == scores_a[j] {
            run_a += 1;
            if scores_b[i] == scores_b[j] {
                run_ab += 1;
            } else {
                n3 += pairs(run_ab);
                run_ab = 1;
            }
        } else {
            n1 += pairs(run_a);
            n3 += pairs(run_ab);
            run_a = 1;
            run_ab = 1;
        }
    }
    n1 += pairs(run_a);
    n3 += pairs(run_ab);

    let mut ys: Vec<f64> = idx.iter().map(|&i| scores_b[i]).collect();
    let mut buf = vec![0.0; n];
    let discordant = merge_count(&mut ys, &mut buf);

    // ys is now sorted; count ties in b
    let mut n2 = 0u64;
    let mut run_b = 1u64;
    for w in ys.windows(2) {
        if w[0] == w[1] {
            run_b += 1;
        } else {
            n2 += pairs(run_b);
            run_b = 1;
        }
    }
    n2 += pairs(run_b);

    if n1 == n0 || n2 == n0 {
        return Err(MathError::AllTied);
    }
    let numerator = (n0 + n3) as i64 - n1 as i64 - n2 as i64 - 2 * discordant as i64;
    Ok(tau_from_counts(numerator, n0, n1, n2, variant))
}

/// Shared final step: `numerator` is `C − D`.
fn tau_from_counts(numerator: i64, n0: u64, n1: u64, n2: u64, variant: TauVariant) -> f64 {
    match variant {
        TauVariant::A => numerator as f64 / n0 as f64,
        TauVariant::B => {
            numerator as f64 / (((n0 - n1) as f64) * ((n0 - n2) as f64)).sqrt()
        }
    }
}

/// Stable merge sort returning the number of strict inversions.
fn merge_count(v: &mut [f64], buf: &mut [f64]) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = {
        let (left, right) = v.split_at_mut(mid);
        let (bl, br) = buf.split_at_mut(mid);
        merge_count(left, bl) + merge_count(right, br)
    };
    let (mut i, mut j, mut k) = (0, mid, 0);
    while i < mid && j < n {
        if v[j].total_cmp(&v[i]) == Ordering::Less {
            buf[k] = v[j];
            swaps += (mid - i) as u64;
            j += 1;
        } else {
            buf[k] = v[i];
            i += 1;
        }
        k += 1;
    }
    buf[k..k + mid - i].copy_from_slice(&v[i..mid]);
    let k = k + mid - i;
    buf[k..n].copy_from_slice(&v[j..n]);
    v.copy_from_slice(&buf[..n]);
    swaps
}
