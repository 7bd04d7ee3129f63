//! Agreement, signed-rank and Holm oracles, and the bundled ratings golden.

use std::path::{Path, PathBuf};

use kc_core::evalkit::{
    cohen_kappa, evaluate, holm_correct, load_pairs, load_scores, wilcoxon_signed_rank, EvalError,
    RubricItem, WilcoxonMode,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// (p_o - p_e) / (1 - p_e) from explicit marginal counts.
fn direct_kappa(a: &[u8], b: &[u8]) -> f64 {
    let n = a.len() as f64;
    let p_o = a.iter().zip(b).filter(|(x, y)| x == y).count() as f64 / n;
    let p_e: f64 = (0..=u8::MAX)
        .map(|c| {
            let ca = a.iter().filter(|v| **v == c).count() as f64;
            let cb = b.iter().filter(|v| **v == c).count() as f64;
            (ca / n) * (cb / n)
        })
        .sum();
    if p_e == 1.0 {
        return 1.0;
    }
    (p_o - p_e) / (1.0 - p_e)
}

#[test]
fn kappa_reference_cases() {
    assert_eq!(cohen_kappa(&[0, 0, 1, 1], &[1, 1, 0, 0]).unwrap(), -1.0);
    assert_eq!(cohen_kappa(&[0, 1, 2, 1], &[0, 1, 2, 1]).unwrap(), 1.0);
    assert_eq!(cohen_kappa(&[1, 1, 1], &[1, 1, 1]).unwrap(), 1.0);

    let a = [2, 2, 1, 2, 0, 1, 2, 2, 1, 2];
    let b = [2, 2, 1, 2, 1, 1, 2, 2, 1, 2];
    // p_o = 9/10; marginals a = (1, 3, 6)/10, b = (0, 4, 6)/10
    let p_e = 0.0 * 0.1 + 0.3 * 0.4 + 0.6 * 0.6;
    let want = (0.9 - p_e) / (1.0 - p_e);
    assert!((cohen_kappa(&a, &b).unwrap() - want).abs() < 1e-12);
    assert!(matches!(
        cohen_kappa(&[1, 2], &[1]),
        Err(EvalError::LengthMismatch(2, 1))
    ));
}

#[test]
fn kappa_matches_direct_formula_on_random_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    for _ in 0..100 {
        let n = rng.random_range(2..40);
        let a: Vec<u8> = (0..n).map(|_| rng.random_range(0..3)).collect();
        let b: Vec<u8> = a
            .iter()
            .map(|&v| {
                if rng.random_bool(0.6) {
                    v
                } else {
                    rng.random_range(0..3)
                }
            })
            .collect();
        let k = cohen_kappa(&a, &b).unwrap();
        assert!((k - direct_kappa(&a, &b)).abs() < 1e-12);
        assert_eq!(k, cohen_kappa(&b, &a).unwrap());
        assert!((-1.0..=1.0).contains(&k));
    }
}

/// Two-sided p by listing every sign pattern of the ranked differences.
fn enumerated_p(x: &[f64], y: &[f64]) -> f64 {
    let d: Vec<f64> = x
        .iter()
        .zip(y)
        .map(|(a, b)| a - b)
        .filter(|v| *v != 0.0)
        .collect();
    let n = d.len();
    if n == 0 {
        return 1.0;
    }
    let abs: Vec<f64> = d.iter().map(|v| v.abs()).collect();
    let ranks: Vec<f64> = abs
        .iter()
        .map(|v| {
            let below = abs.iter().filter(|w| *w < v).count() as f64;
            let tied = abs.iter().filter(|w| *w == v).count() as f64;
            below + (tied + 1.0) / 2.0
        })
        .collect();
    let total: f64 = ranks.iter().sum();
    let plus: f64 = ranks
        .iter()
        .zip(&d)
        .filter(|(_, v)| **v > 0.0)
        .map(|(r, _)| r)
        .sum();
    let w = plus.min(total - plus);
    let mut hits = 0u64;
    for mask in 0u64..1 << n {
        let s: f64 = (0..n)
            .filter(|i| mask >> i & 1 == 1)
            .map(|i| ranks[i])
            .sum();
        if s.min(total - s) <= w + 1e-9 {
            hits += 1;
        }
    }
    (hits as f64 / (1u64 << n) as f64).min(1.0)
}

#[test]
fn six_unit_decreases() {
    let x = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
    let y = [2.0, 3.0, 4.0, 5.0, 6.0, 7.0];
    let r = wilcoxon_signed_rank(&x, &y, WilcoxonMode::Exact).unwrap();
    assert_eq!(r.p_value, 0.03125);
    assert_eq!(r.statistic, 0.0);
    assert_eq!(r.n_effective, 6);
    assert!(r.exact);
}

#[test]
fn identical_samples_give_unit_p() {
    let x = [0.0, 1.0, 2.0, 2.0];
    for mode in [
        WilcoxonMode::Exact,
        WilcoxonMode::Approx,
        WilcoxonMode::Auto,
    ] {
        let r = wilcoxon_signed_rank(&x, &x, mode).unwrap();
        assert_eq!((r.p_value, r.n_effective), (1.0, 0));
    }
}

#[test]
fn wilcoxon_errors() {
    assert!(matches!(
        wilcoxon_signed_rank(&[1.0], &[1.0, 2.0], WilcoxonMode::Auto),
        Err(EvalError::LengthMismatch(1, 2))
    ));
    assert!(matches!(
        wilcoxon_signed_rank(&[], &[], WilcoxonMode::Auto),
        Err(EvalError::Empty)
    ));
    let x: Vec<f64> = (0..21).map(f64::from).collect();
    let y: Vec<f64> = x.iter().map(|v| v + 1.0).collect();
    assert!(matches!(
        wilcoxon_signed_rank(&x, &y, WilcoxonMode::Exact),
        Err(EvalError::ExactTooLarge(21))
    ));
    assert!(
        !wilcoxon_signed_rank(&x, &y, WilcoxonMode::Auto)
            .unwrap()
            .exact
    );
}

fn rubric_like(rng: &mut ChaCha8Rng, n: usize) -> (Vec<f64>, Vec<f64>) {
    let x: Vec<f64> = (0..n)
        .map(|_| f64::from(rng.random_range(0..3u8)))
        .collect();
    let y: Vec<f64> = (0..n)
        .map(|_| f64::from(rng.random_range(0..3u8)))
        .collect();
    (x, y)
}

#[test]
fn exact_p_matches_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for draw in 0..100 {
        let n = rng.random_range(1..=12);
        let (x, y) = if draw % 2 == 0 {
            rubric_like(&mut rng, n)
        } else {
            let x: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
            let y: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
            (x, y)
        };
        let r = wilcoxon_signed_rank(&x, &y, WilcoxonMode::Exact).unwrap();
        let want = enumerated_p(&x, &y);
        assert!(
            (r.p_value - want).abs() <= 1e-12,
            "draw {draw}: {} vs {want}",
            r.p_value
        );

        let swapped = wilcoxon_signed_rank(&y, &x, WilcoxonMode::Exact).unwrap();
        assert_eq!(swapped.p_value, r.p_value);

        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut rng);
        let px: Vec<f64> = idx.iter().map(|&i| x[i]).collect();
        let py: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
        let permuted = wilcoxon_signed_rank(&px, &py, WilcoxonMode::Exact).unwrap();
        assert_eq!(permuted.p_value, r.p_value);
    }
}

#[test]
fn approximation_close_to_exact_at_twelve() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for draw in 0..50 {
        // distinct magnitudes, so no ties and no zeros
        let x: Vec<f64> = (0..12).map(|_| rng.random_range(-5.0..5.0)).collect();
        let y: Vec<f64> = (0..12).map(|_| rng.random_range(-5.0..5.0)).collect();
        let exact = wilcoxon_signed_rank(&x, &y, WilcoxonMode::Exact)
            .unwrap()
            .p_value;
        let approx = wilcoxon_signed_rank(&x, &y, WilcoxonMode::Approx)
            .unwrap()
            .p_value;
        assert!(
            (exact - approx).abs() <= 0.02,
            "draw {draw}: {exact} vs {approx}"
        );
    }
}

#[test]
fn holm_reference_and_properties() {
    let adj = holm_correct(&[0.01, 0.04, 0.03]).unwrap();
    for (g, w) in adj.iter().zip([0.03, 0.06, 0.06]) {
        assert!((g - w).abs() < 1e-15, "{adj:?}");
    }
    assert_eq!(holm_correct(&[0.2]).unwrap(), [0.2]);
    assert_eq!(holm_correct(&[1.0, 1.0]).unwrap(), [1.0, 1.0]);
    assert!(matches!(
        holm_correct(&[0.5, 1.5]),
        Err(EvalError::PValue(_))
    ));

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..100 {
        let p: Vec<f64> = (0..rng.random_range(1..8))
            .map(|_| rng.random_range(0.0..1.0))
            .collect();
        let adj = holm_correct(&p).unwrap();
        let mut order: Vec<usize> = (0..p.len()).collect();
        order.sort_by(|&i, &j| p[i].total_cmp(&p[j]));
        for w in order.windows(2) {
            assert!(adj[w[0]] <= adj[w[1]]);
        }
        for (a, r) in adj.iter().zip(&p) {
            assert!(a >= r && *a <= 1.0);
        }
    }
}

fn ratings(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures/ratings")
        .join(name)
}

#[test]
fn bundled_ratings_reproduce_golden_table() {
    let scores = load_scores(&ratings("scores.jsonl")).unwrap();
    let pairs = load_pairs(&ratings("pairs.jsonl")).unwrap();
    let summary = evaluate(&scores, &pairs, WilcoxonMode::Exact).unwrap();
    let golden = std::fs::read_to_string(ratings("summary_table.txt")).unwrap();
    assert_eq!(summary.render_table(), golden);
    assert_eq!(summary.render_table().lines().count(), 9);

    let oracle: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(ratings("oracle.json")).unwrap()).unwrap();
    for (row, want) in summary
        .items
        .iter()
        .zip(oracle["items"].as_array().unwrap())
    {
        assert_eq!(row.item.as_str(), want["item"]);
        for (got, key) in [
            (row.baseline_mean, "baseline_mean"),
            (row.kc_conditioned_mean, "kc_conditioned_mean"),
            (row.statistic, "statistic"),
            (row.p_value, "p_value"),
            (row.p_holm, "p_holm"),
        ] {
            assert!((got - want[key].as_f64().unwrap()).abs() < 1e-12, "{key}");
        }
        assert_eq!(
            row.n_effective as u64,
            want["n_effective"].as_u64().unwrap()
        );
    }
    let agreement = summary.agreement.as_ref().unwrap();
    assert!((agreement.kappa - oracle["kappa"].as_f64().unwrap()).abs() < 1e-12);
    assert_eq!(agreement.per_item.len(), RubricItem::ALL.len());
    assert!(
        (summary.kc_coverage_mean - oracle["kc_coverage_mean"].as_f64().unwrap()).abs() < 1e-12
    );
    assert_eq!(summary.excluded, ["sub31"]);

    let again: kc_core::evalkit::Summary = serde_json::from_str(&summary.to_json()).unwrap();
    assert_eq!(again, summary);
}
