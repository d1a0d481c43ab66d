//! One-sided two-sample tests used to compare SS and HRMS cells.

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, FisherSnedecor, Normal};

/// Largest combined sample size for which the rank-sum p-value is computed
/// from the exact null distribution (when there are no ties).
const EXACT_RANK_SUM_MAX: usize = 50;

pub fn mean(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s.iter().sum::<f64>() / s.len() as f64
}

/// Sample variance (n − 1 denominator); `None` below two values. Sums run
/// over sorted values so the result does not depend on input order.
pub fn sample_variance(v: &[f64]) -> Option<f64> {
    if v.len() < 2 {
        return None;
    }
    let m = mean(v);
    let mut sq: Vec<f64> = v.iter().map(|x| (x - m).powi(2)).collect();
    sq.sort_by(f64::total_cmp);
    Some(sq.iter().sum::<f64>() / (v.len() - 1) as f64)
}

pub fn sample_sd(v: &[f64]) -> Option<f64> {
    sample_variance(v).map(f64::sqrt)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FTest {
    /// `var(b) / var(a)`.
    pub ratio: f64,
    pub df_num: f64,
    pub df_den: f64,
    pub p_value: f64,
}

/// F-test of `var(a) < var(b)` against equal variances.
pub fn f_test_less(a: &[f64], b: &[f64]) -> Option<FTest> {
    let va = sample_variance(a)?;
    let vb = sample_variance(b)?;
    let df_num = (b.len() - 1) as f64;
    let df_den = (a.len() - 1) as f64;
    let ratio = vb / va;
    let p_value = if va == 0.0 {
        if vb == 0.0 { 1.0 } else { 0.0 }
    } else {
        let dist = FisherSnedecor::new(df_num, df_den).ok()?;
        dist.sf(ratio)
    };
    Some(FTest { ratio, df_num, df_den, p_value })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RankSumTest {
    /// Mann-Whitney U of sample `a`.
    pub u: f64,
    pub p_value: f64,
    pub exact: bool,
}

/// Average ranks (1-based) of the pooled values, and the tie-group sizes.
fn pooled_ranks(a: &[f64], b: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let mut order: Vec<usize> = (0..pooled.len()).collect();
    order.sort_by(|&i, &j| pooled[i].total_cmp(&pooled[j]));
    let mut ranks = vec![0.0; pooled.len()];
    let mut ties = Vec::new();
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && pooled[order[j + 1]] == pooled[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        if j > i {
            ties.push(j - i + 1);
        }
        i = j + 1;
    }
    (ranks, ties)
}

/// Wilcoxon rank-sum (Mann-Whitney) test that `a` tends to be smaller than
/// `b`. Exact without ties for small samples, otherwise the normal
/// approximation with tie and continuity corrections.
pub fn rank_sum_less(a: &[f64], b: &[f64]) -> Option<RankSumTest> {
    let (na, nb) = (a.len(), b.len());
    if na == 0 || nb == 0 {
        return None;
    }
    let (ranks, ties) = pooled_ranks(a, b);
    let w: f64 = ranks[..na].iter().sum();
    let u = w - (na * (na + 1)) as f64 / 2.0;
    let n = na + nb;
    if ties.is_empty() && n <= EXACT_RANK_SUM_MAX {
        return Some(RankSumTest { u, p_value: exact_u_cdf(na, nb, u.round() as usize), exact: true });
    }
    let nf = n as f64;
    let tie_term: f64 = ties.iter().map(|&t| (t * t * t - t) as f64).sum::<f64>() / (nf * (nf - 1.0));
    let var = (na * nb) as f64 / 12.0 * ((nf + 1.0) - tie_term);
    let p_value = if var <= 0.0 {
        1.0
    } else {
        let z = (u - (na * nb) as f64 / 2.0 + 0.5) / var.sqrt();
        Normal::new(0.0, 1.0).ok()?.cdf(z)
    };
    Some(RankSumTest { u, p_value, exact: false })
}

/// `P(U ≤ u)` under the null, by counting rank subsets.
fn exact_u_cdf(na: usize, nb: usize, u: usize) -> f64 {
    // counts[k][s]: subsets of size k of the ranks seen so far with U-sum s,
    // where U-sum adds (rank − position) so that it ranges over 0..=na·nb.
    let max_u = na * nb;
    let mut counts = vec![vec![0.0f64; max_u + 1]; na + 1];
    counts[0][0] = 1.0;
    for item in 0..na + nb {
        for k in (1..=na.min(item + 1)).rev() {
            // Choosing `item` as the k-th smallest contributes item − (k − 1)
            // elements of b below it.
            let add = item + 1 - k;
            if add > nb {
                continue;
            }
            for s in (add..=max_u).rev() {
                counts[k][s] += counts[k - 1][s - add];
            }
        }
    }
    let total: f64 = counts[na].iter().sum();
    let below: f64 = counts[na][..=u.min(max_u)].iter().sum();
    below / total
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn f_test_matches_reference_values() {
        // var(b)/var(a) = 2.5 with 20 values each.
        let a: Vec<f64> = (0..20).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let s = 2.5f64.sqrt();
        let b: Vec<f64> = a.iter().map(|v| v * s).collect();
        let t = f_test_less(&a, &b).unwrap();
        assert!((t.ratio - 2.5).abs() < 1e-12);
        assert!((t.p_value - 0.026285770210352513).abs() < 1e-10);
        let t = f_test_less(&a, &a).unwrap();
        assert!((t.p_value - 0.5).abs() < 1e-10);
    }

    #[test]
    fn f_test_needs_two_values() {
        assert!(f_test_less(&[1.0], &[1.0, 2.0]).is_none());
    }

    #[test]
    fn rank_sum_exact_matches_reference() {
        let a = [1.1, 2.3, 0.7, 4.2, 3.3, 0.2, 5.1];
        let b = [3.4, 6.2, 4.4, 7.7, 5.9, 8.1];
        let t = rank_sum_less(&a, &b).unwrap();
        assert!(t.exact);
        assert_eq!(t.u, 3.0);
        assert!((t.p_value - 0.004079254079254079).abs() < 1e-12);
    }

    #[test]
    fn rank_sum_with_ties_matches_reference() {
        let a = [1.0, 2.0, 2.0, 3.0, 4.0, 4.0, 4.0];
        let b = [3.0, 5.0, 5.0, 6.0, 4.0, 7.0];
        let t = rank_sum_less(&a, &b).unwrap();
        assert!(!t.exact);
        assert_eq!(t.u, 5.0);
        assert!((t.p_value - 0.01206923188268247).abs() < 1e-10);
    }

    #[test]
    fn exact_distribution_is_symmetric() {
        // P(U ≤ k) + P(U ≤ na·nb − k − 1) = 1.
        for k in 0..12 {
            let lhs = exact_u_cdf(3, 4, k) + exact_u_cdf(3, 4, 12 - k - 1);
            assert!((lhs - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn variance_is_order_independent() {
        let v = [0.1, 1e8, -3.0, 0.7, 1e-9];
        let mut w = v;
        w.reverse();
        assert_eq!(sample_variance(&v), sample_variance(&w));
    }
}
