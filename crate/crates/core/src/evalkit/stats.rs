//! Agreement and paired significance statistics.

use statrs::distribution::{ContinuousCDF, Normal};

use super::EvalError;

/// Largest effective sample size for which exact p-values are computed.
pub const EXACT_MAX_N: usize = 20;

/// Cohen's kappa for two raters over the same items.
///
/// Returns 1.0 when both raters used a single shared category, where the
/// usual formula is 0/0.
pub fn cohen_kappa<T: Ord>(a: &[T], b: &[T]) -> Result<f64, EvalError> {
    if a.len() != b.len() {
        return Err(EvalError::LengthMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(EvalError::Empty);
    }
    let n = a.len() as f64;
    let mut cats: Vec<&T> = a.iter().chain(b).collect();
    cats.sort();
    cats.dedup();
    let index = |x: &T| cats.binary_search(&x).expect("category collected above");
    let mut ma = vec![0usize; cats.len()];
    let mut mb = vec![0usize; cats.len()];
    let mut agree = 0usize;
    for (x, y) in a.iter().zip(b) {
        ma[index(x)] += 1;
        mb[index(y)] += 1;
        if x == y {
            agree += 1;
        }
    }
    let p_o = agree as f64 / n;
    let p_e: f64 = ma
        .iter()
        .zip(&mb)
        .map(|(&x, &y)| x as f64 * y as f64)
        .sum::<f64>()
        / (n * n);
    if (1.0 - p_e).abs() < 1e-15 {
        return Ok(1.0);
    }
    Ok((p_o - p_e) / (1.0 - p_e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WilcoxonMode {
    Exact,
    Approx,
    #[default]
    Auto,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct WilcoxonResult {
    /// min(W+, W-).
    pub statistic: f64,
    pub p_value: f64,
    /// Pairs left after dropping zero differences.
    pub n_effective: usize,
    pub exact: bool,
}

/// Mid-ranks of `values`, doubled so that they are integers.
fn doubled_ranks(values: &[f64]) -> Vec<u64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0u64; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // positions start+1..=end average to (start + 1 + end) / 2
        let doubled = (start + 1 + end) as u64;
        for &i in &order[start..end] {
            ranks[i] = doubled;
        }
        start = end;
    }
    ranks
}

/// Number of sign assignments giving each doubled positive rank sum.
fn null_counts(ranks: &[u64]) -> Vec<u64> {
    let total: u64 = ranks.iter().sum();
    let mut counts = vec![0u64; total as usize + 1];
    counts[0] = 1;
    let mut reach = 0usize;
    for &r in ranks {
        let r = r as usize;
        for s in (0..=reach).rev() {
            if counts[s] > 0 {
                counts[s + r] += counts[s];
            }
        }
        reach += r;
    }
    counts
}

/// Two-sided Wilcoxon signed-rank test on paired samples. Zero differences
/// are dropped and ties get mid-ranks. The approximation uses the
/// tie-corrected variance with a continuity correction.
pub fn wilcoxon_signed_rank(
    x: &[f64],
    y: &[f64],
    mode: WilcoxonMode,
) -> Result<WilcoxonResult, EvalError> {
    if x.len() != y.len() {
        return Err(EvalError::LengthMismatch(x.len(), y.len()));
    }
    if x.is_empty() {
        return Err(EvalError::Empty);
    }
    let d: Vec<f64> = x
        .iter()
        .zip(y)
        .map(|(a, b)| a - b)
        .filter(|d| *d != 0.0)
        .collect();
    if d.iter().any(|v| !v.is_finite()) {
        return Err(EvalError::NonFinite);
    }
    let n = d.len();
    let exact = match mode {
        WilcoxonMode::Exact if n > EXACT_MAX_N => return Err(EvalError::ExactTooLarge(n)),
        WilcoxonMode::Exact => true,
        WilcoxonMode::Approx => false,
        WilcoxonMode::Auto => n <= EXACT_MAX_N,
    };
    if n == 0 {
        return Ok(WilcoxonResult {
            statistic: 0.0,
            p_value: 1.0,
            n_effective: 0,
            exact,
        });
    }
    let abs: Vec<f64> = d.iter().map(|v| v.abs()).collect();
    let ranks = doubled_ranks(&abs);
    let total: u64 = ranks.iter().sum();
    let plus: u64 = ranks
        .iter()
        .zip(&d)
        .filter(|(_, v)| **v > 0.0)
        .map(|(r, _)| r)
        .sum();
    let w2 = plus.min(total - plus);
    let statistic = w2 as f64 / 2.0;

    let p_value = if exact {
        let counts = null_counts(&ranks);
        let tail: u64 = counts[..=w2 as usize].iter().sum();
        (2.0 * tail as f64 / 2f64.powi(n as i32)).min(1.0)
    } else {
        let nf = n as f64;
        let mean = nf * (nf + 1.0) / 4.0;
        let mut ties = 0.0;
        let mut sorted = ranks.clone();
        sorted.sort_unstable();
        for group in sorted.chunk_by(|a, b| a == b) {
            let t = group.len() as f64;
            ties += t * t * t - t;
        }
        let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - ties / 48.0;
        if var <= 0.0 {
            1.0
        } else {
            let z = ((statistic - mean).abs() - 0.5).max(0.0) / var.sqrt();
            let normal = Normal::standard();
            (2.0 * normal.sf(z)).min(1.0)
        }
    };
    Ok(WilcoxonResult {
        statistic,
        p_value,
        n_effective: n,
        exact,
    })
}

/// Holm step-down adjustment, returned in input order.
pub fn holm_correct(p: &[f64]) -> Result<Vec<f64>, EvalError> {
    if let Some(&bad) = p.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(EvalError::PValue(bad));
    }
    let m = p.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&i, &j| p[i].total_cmp(&p[j]).then(i.cmp(&j)));
    let mut out = vec![0.0; m];
    let mut running: f64 = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        running = running.max(((m - rank) as f64 * p[i]).min(1.0));
        out[i] = running;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn doubled_mid_ranks() {
        assert_eq!(doubled_ranks(&[3.0, 1.0, 1.0, 2.0]), [8, 3, 3, 6]);
    }

    #[test]
    fn null_counts_small() {
        // ranks 1,2,3 doubled: subsets sums 0,2,4,6,6,8,10,12
        assert_eq!(
            null_counts(&[2, 4, 6]),
            [1, 0, 1, 0, 1, 0, 2, 0, 1, 0, 1, 0, 1]
        );
    }

    #[test]
    fn exact_mode_refuses_large_n() {
        let x: Vec<f64> = (0..25).map(f64::from).collect();
        let y: Vec<f64> = x.iter().map(|v| v + 1.0).collect();
        assert!(matches!(
            wilcoxon_signed_rank(&x, &y, WilcoxonMode::Exact),
            Err(EvalError::ExactTooLarge(25))
        ));
        assert!(
            !wilcoxon_signed_rank(&x, &y, WilcoxonMode::Auto)
                .unwrap()
                .exact
        );
    }

    #[test]
    fn kappa_single_category() {
        assert_eq!(cohen_kappa(&[1, 1, 1], &[1, 1, 1]).unwrap(), 1.0);
    }

    #[test]
    fn holm_rejects_out_of_range() {
        assert!(holm_correct(&[0.2, 1.5]).is_err());
        assert!(holm_correct(&[f64::NAN]).is_err());
        assert!(holm_correct(&[]).unwrap().is_empty());
    }
}
