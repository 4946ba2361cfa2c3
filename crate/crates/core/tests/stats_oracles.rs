mod support;

use invariaudit_core::stats::{
    bca_ci, bootstrap_replicates, cliffs_delta, holm_adjust, kendall_tau_b, kruskal_wallis,
    mann_whitney_u, median, paired_t, pct_delta, shapiro_wilk, spearman, wilcoxon_signed_rank,
};
use proptest::prelude::*;
use serde_json::Value;
use support::oracles::{
    bca_reference, cliffs_brute, holm_reference, kruskal_reference, wilcoxon_enumerated, Lcg,
};

fn fixture() -> Value {
    serde_json::from_str(include_str!("fixtures/scipy_oracles.json")).unwrap()
}

fn floats(v: &Value) -> Vec<f64> {
    v.as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect()
}

#[test]
fn wilcoxon_exact_matches_enumeration() {
    let mut g = Lcg(2025);
    for n in 1..=12 {
        for rep in 0..5 {
            // Coarse grid values so that ties occur.
            let d: Vec<f64> = (0..n)
                .map(|_| (g.next_f64() * 9.0).floor() - 3.0 + if rep % 2 == 0 { 0.5 } else { 0.0 })
                .collect();
            if d.iter().all(|v| *v == 0.0) {
                continue;
            }
            let got = wilcoxon_signed_rank(&d).unwrap().p_value;
            let want = wilcoxon_enumerated(&d);
            assert!((got - want).abs() < 1e-12, "n={n} d={d:?} got {got} want {want}");
        }
    }
}

#[test]
fn wilcoxon_normal_approximation() {
    let f = fixture();
    let d = floats(&f["wilcoxon_approx"]["d"]);
    let r = wilcoxon_signed_rank(&d).unwrap();
    assert_eq!(r.statistic, f["wilcoxon_approx"]["statistic"].as_f64().unwrap());
    assert!((r.p_value - f["wilcoxon_approx"]["p"].as_f64().unwrap()).abs() < 1e-6);
}

#[test]
fn shapiro_wilk_matches_reference_values() {
    let f = fixture();
    for case in f["shapiro"].as_array().unwrap() {
        let x = floats(&case["x"]);
        let r = shapiro_wilk(&x).unwrap();
        let (w, p) = (case["w"].as_f64().unwrap(), case["p"].as_f64().unwrap());
        assert!((r.statistic - w).abs() < 1e-6, "{}: W {} vs {w}", case["name"], r.statistic);
        assert!((r.p_value - p).abs() < 1e-4 * p.max(1e-3), "{}: p {} vs {p}", case["name"], r.p_value);
    }
    let normal = f["shapiro"].as_array().unwrap().iter().find(|c| c["name"] == "n50_normal").unwrap();
    assert!(shapiro_wilk(&floats(&normal["x"])).unwrap().p_value > 0.05);
}

#[test]
fn kruskal_wallis_oracles() {
    let f = fixture();
    let groups: Vec<Vec<f64>> =
        f["kruskal"]["groups"].as_array().unwrap().iter().map(floats).collect();
    let r = kruskal_wallis(&groups).unwrap();
    assert!((r.statistic - kruskal_reference(&groups)).abs() < 1e-9);
    assert!((r.statistic - f["kruskal"]["h"].as_f64().unwrap()).abs() < 1e-9);
    assert!((r.p_value - f["kruskal"]["p"].as_f64().unwrap()).abs() < 1e-9);
}

#[test]
fn kruskal_wallis_separated_groups_hit_the_maximum() {
    // Enumerate every split of ranks 1..12 into three labelled groups of four.
    let mut best: f64 = 0.0;
    let mut count = 0;
    for a in 0u32..(1 << 12) {
        if a.count_ones() != 4 {
            continue;
        }
        let rest: Vec<u32> = (0..12).filter(|i| a >> i & 1 == 0).collect();
        for b in 0u32..(1 << 8) {
            if b.count_ones() != 4 {
                continue;
            }
            count += 1;
            let ga: Vec<f64> = (0..12).filter(|i| a >> i & 1 == 1).map(|i| i as f64).collect();
            let gb: Vec<f64> = (0..8).filter(|i| b >> i & 1 == 1).map(|i| rest[i] as f64).collect();
            let gc: Vec<f64> = (0..8).filter(|i| b >> i & 1 == 0).map(|i| rest[i] as f64).collect();
            best = best.max(kruskal_reference(&[ga, gb, gc]));
        }
    }
    assert_eq!(count, 34650);
    let sep: Vec<Vec<f64>> = (0..3).map(|g| (0..4).map(|i| (g * 4 + i) as f64).collect()).collect();
    let h = kruskal_wallis(&sep).unwrap().statistic;
    assert!((h - best).abs() < 1e-9);
}

#[test]
fn holm_matches_step_down_definition() {
    let mut g = Lcg(99);
    for _ in 0..20 {
        let m = 1 + g.below(12);
        let p: Vec<f64> = (0..m).map(|_| g.next_f64().powi(3)).collect();
        let got = holm_adjust(&p);
        let want = holm_reference(&p);
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() < 1e-15);
        }
    }
}

#[test]
fn cliffs_matches_brute_force() {
    let mut g = Lcg(7);
    for _ in 0..100 {
        let a: Vec<f64> = (0..1 + g.below(15)).map(|_| (g.next_f64() * 6.0).floor()).collect();
        let b: Vec<f64> = (0..1 + g.below(15)).map(|_| (g.next_f64() * 6.0).floor()).collect();
        assert_eq!(cliffs_delta(&a, &b).unwrap(), cliffs_brute(&a, &b));
    }
}

#[test]
fn rank_correlations_match_reference() {
    let f = fixture();
    let x = floats(&f["rank"]["x"]);
    let y = floats(&f["rank"]["y"]);
    assert!((kendall_tau_b(&x, &y).unwrap() - f["rank"]["kendall"].as_f64().unwrap()).abs() < 1e-12);
    assert!((spearman(&x, &y).unwrap() - f["rank"]["spearman"].as_f64().unwrap()).abs() < 1e-12);
}

#[test]
fn mann_whitney_and_paired_t_reference() {
    let f = fixture();
    let mw = &f["mann_whitney"];
    let r = mann_whitney_u(&floats(&mw["a"]), &floats(&mw["b"])).unwrap();
    assert_eq!(r.statistic, mw["u"].as_f64().unwrap());
    assert!((r.p_value - mw["p"].as_f64().unwrap()).abs() < 1e-9, "{} vs {}", r.p_value, mw["p"]);
    let pt = &f["paired_t"];
    let r = paired_t(&floats(&pt["orig"]), &floats(&pt["pert"])).unwrap();
    assert!((r.statistic - pt["t"].as_f64().unwrap()).abs() < 1e-9);
    assert!((r.p_value - pt["p"].as_f64().unwrap()).abs() < 1e-9);
}

#[test]
fn bca_matches_reference_implementation() {
    let x = [0.2, 0.3, 0.3, 0.45, 0.5, 0.8, 1.1, 1.4, 2.0, 2.9, 3.3, 4.8, 6.0, 9.5, 14.0];
    let ci = bca_ci(&x, &median, 10_000, 2025, 0.95).unwrap();
    let reps = bootstrap_replicates(&x, &median, 10_000, 2025);
    let (p, lo, hi) = bca_reference(&x, support::oracles::median_ref, &reps, 0.95);
    assert!((ci.point - p).abs() < 1e-9);
    assert!((ci.lo - lo).abs() < 1e-9, "{} vs {lo}", ci.lo);
    assert!((ci.hi - hi).abs() < 1e-9, "{} vs {hi}", ci.hi);
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let ci = bca_ci(&x, &mean, 4000, 11, 0.9).unwrap();
    let reps = bootstrap_replicates(&x, &mean, 4000, 11);
    let (_, lo, hi) = bca_reference(&x, mean, &reps, 0.9);
    assert!((ci.lo - lo).abs() < 1e-9 && (ci.hi - hi).abs() < 1e-9);
    // Bit-identical on rerun.
    assert_eq!(bca_ci(&x, &median, 10_000, 2025, 0.95).unwrap(), bca_ci(&x, &median, 10_000, 2025, 0.95).unwrap());
}

proptest! {
    #[test]
    fn holm_is_monotone_and_dominates(p in proptest::collection::vec(0.0f64..=1.0, 1..30)) {
        let adj = holm_adjust(&p);
        let mut order: Vec<usize> = (0..p.len()).collect();
        order.sort_by(|&a, &b| p[a].total_cmp(&p[b]).then(a.cmp(&b)));
        for w in order.windows(2) {
            prop_assert!(adj[w[0]] <= adj[w[1]]);
        }
        for (a, r) in adj.iter().zip(&p) {
            prop_assert!(a >= r && *a <= 1.0);
        }
    }

    #[test]
    fn cliffs_antisymmetric(a in proptest::collection::vec(-5i32..5, 1..20), b in proptest::collection::vec(-5i32..5, 1..20)) {
        let a: Vec<f64> = a.into_iter().map(f64::from).collect();
        let b: Vec<f64> = b.into_iter().map(f64::from).collect();
        let d = cliffs_delta(&a, &b).unwrap();
        prop_assert_eq!(d, -cliffs_delta(&b, &a).unwrap());
        prop_assert!(d.abs() <= 1.0);
    }

    #[test]
    fn pct_delta_scale_invariant(o in 0.01f64..1.0, p in 0.0f64..1.0, k in 0.1f64..50.0) {
        let a = pct_delta(o, p).unwrap();
        let b = pct_delta(o * k, p * k).unwrap();
        prop_assert!((a - b).abs() < 1e-9 * a.abs().max(1.0));
    }

    #[test]
    fn bca_interval_contains_point(x in proptest::collection::vec(-10.0f64..10.0, 3..25), seed in any::<u64>()) {
        let ci = bca_ci(&x, &median, 300, seed, 0.95).unwrap();
        prop_assert!(ci.lo <= ci.point && ci.point <= ci.hi);
    }
}
