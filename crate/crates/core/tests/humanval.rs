use invariaudit_core::humanval::{
    fleiss_kappa, majority_acceptability, preference_accuracy, read_annotations,
    refilter_and_recompute, synthetic_annotations, write_annotations, Correctness,
    Preference, PreferencePair, RefilterMode, SyntheticRates,
};
use invariaudit_core::rng::AuditRng;
use invariaudit_core::stats::pipeline::{CellInput, PairedObs, PipelineParams};
use invariaudit_core::table::ContrastFamily;
use proptest::prelude::*;

#[test]
fn kappa_hand_example() {
    // Per-subject agreement 1, 1/3, 1/3, 0 gives 5/12; category shares 1/2, 1/3, 1/6 give
    // chance agreement 7/18; kappa = (5/12 - 7/18) / (11/18) = 1/22.
    let m = vec![vec![3, 0, 0], vec![2, 1, 0], vec![0, 2, 1], vec![1, 1, 1]];
    assert!((fleiss_kappa(&m).unwrap() - 1.0 / 22.0).abs() < 1e-9);
}

#[test]
fn kappa_of_uniform_random_labels_is_near_zero() {
    let mut rng = AuditRng::new(2025);
    let m: Vec<Vec<usize>> = (0..5000)
        .map(|_| {
            let mut row = vec![0; 3];
            for _ in 0..3 {
                row[rng.below(3)] += 1;
            }
            row
        })
        .collect();
    assert!(fleiss_kappa(&m).unwrap().abs() < 0.05);
}

proptest! {
    #[test]
    fn kappa_invariant_under_category_relabeling(rows in prop::collection::vec((0usize..4, 0usize..4), 5..40), perm in Just([2usize, 0, 1]).prop_shuffle()) {
        let m: Vec<Vec<usize>> = rows.iter().map(|&(a, b)| { let b = b.min(3 - a); vec![a, b, 3 - a - b] }).collect();
        let p: Vec<Vec<usize>> = m.iter().map(|r| perm.iter().map(|&j| r[j]).collect()).collect();
        match (fleiss_kappa(&m), fleiss_kappa(&p)) {
            (Ok(x), Ok(y)) => prop_assert!((x - y).abs() < 1e-12),
            (x, y) => prop_assert_eq!(x.is_err(), y.is_err()),
        }
    }

    #[test]
    fn majority_ignores_annotator_order(labels in prop::collection::vec(0usize..3, 3), rot in 0usize..3) {
        let l: Vec<Correctness> = labels.iter().map(|&i| Correctness::ALL[i]).collect();
        let mut r = l.clone();
        r.rotate_left(rot);
        prop_assert_eq!(majority_acceptability(&l).unwrap(), majority_acceptability(&r).unwrap());
    }

    #[test]
    fn preference_accuracy_swap_invariant(pairs in prop::collection::vec((0usize..3, 0.0f64..1.0, 0.0f64..1.0), 3..30)) {
        let swap = |p: Preference| match p { Preference::A => Preference::B, Preference::B => Preference::A, t => t };
        let fwd: Vec<PreferencePair> = pairs.iter().enumerate().map(|(i, &(h, a, b))| PreferencePair {
            pair_id: i.to_string(), human: Preference::ALL[h], score_a: Some(a), score_b: Some(b) }).collect();
        let rev: Vec<PreferencePair> = fwd.iter().map(|p| PreferencePair {
            pair_id: p.pair_id.clone(), human: swap(p.human), score_a: p.score_b, score_b: p.score_a }).collect();
        let x = preference_accuracy(&fwd, 1000, 7).unwrap().accuracy;
        let y = preference_accuracy(&rev, 1000, 7).unwrap().accuracy;
        prop_assert!((0.0..=1.0).contains(&x));
        prop_assert_eq!(x, y);
    }
}

fn cell(n: usize, shift: f64) -> CellInput {
    let mut rng = AuditRng::new(11);
    CellInput {
        scorer_id: "m".into(),
        dataset: "synthetic".into(),
        family: ContrastFamily::VerticalFlip,
        obs: (0..n)
            .map(|i| {
                let s = 0.5 + 0.1 * rng.unit();
                PairedObs {
                    item_id: format!("i{i}"),
                    level: "vertical_flip".into(),
                    size_bin: "10-20".into(),
                    category: "furniture".into(),
                    s_ref: s,
                    s_pert: s * (1.0 + shift) + 0.002 * rng.normal(),
                }
            })
            .collect(),
    }
}

#[test]
fn refilter_without_removals_is_identity() {
    let inputs = vec![cell(60, 0.05)];
    let keys: Vec<(String, Option<String>)> = (0..60).map(|i| (format!("i{i}"), None)).collect();
    let rates = SyntheticRates { both_acceptable: 1.0, one_sided: 0.0, ..Default::default() };
    let ann = synthetic_annotations(&keys, &rates, 1);
    let params = PipelineParams { n_resamples: 1000, ..Default::default() };
    let r = refilter_and_recompute(&inputs, &ann, RefilterMode::DropOneSided, &params).unwrap();
    assert_eq!(r.items_removed, 0);
    assert!(r.rows.iter().all(|row| row.median_change == Some(0.0) && row.n_before == row.n_after));
}

#[test]
fn planted_one_sided_items_barely_move_medians() {
    let inputs = vec![cell(200, 0.05)];
    let keys: Vec<(String, Option<String>)> = (0..200).map(|i| (format!("i{i}"), None)).collect();
    let rates = SyntheticRates { one_sided: 0.02, both_acceptable: 0.98, ..Default::default() };
    let ann = synthetic_annotations(&keys, &rates, 3);
    let params = PipelineParams { n_resamples: 2000, ..Default::default() };
    let r = refilter_and_recompute(&inputs, &ann, RefilterMode::DropOneSided, &params).unwrap();
    assert!(r.items_removed > 0);
    assert!(r.all_directions_preserved);
    for row in &r.rows {
        assert!(row.median_change.unwrap().abs() < row.ci_half_width.unwrap(), "{row:?}");
    }
}

#[test]
fn removing_everything_reports_insufficient_data() {
    let inputs = vec![cell(10, 0.05)];
    let keys: Vec<(String, Option<String>)> = (0..10).map(|i| (format!("i{i}"), None)).collect();
    let rates = SyntheticRates { both_acceptable: 0.0, one_sided: 1.0, ..Default::default() };
    let ann = synthetic_annotations(&keys, &rates, 3);
    let params = PipelineParams { n_resamples: 1000, ..Default::default() };
    let r = refilter_and_recompute(&inputs, &ann, RefilterMode::DropOneSided, &params).unwrap();
    assert_eq!(r.items_removed, 10);
    assert!(r.rows.iter().all(|row| row.note.is_some() && row.n_after == 0));
}

#[test]
fn annotations_round_trip_jsonl() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("annotations.jsonl");
    let keys = vec![("a".to_string(), Some("vertical_flip".to_string())), ("b".to_string(), None)];
    let ann = synthetic_annotations(&keys, &SyntheticRates::default(), 5);
    write_annotations(&p, &ann).unwrap();
    assert_eq!(read_annotations(&p).unwrap(), ann);
    std::fs::write(&p, r#"{"item_id":"x","version_a_labels":["incorrect"],"version_b_labels":[],"preference_labels":[]}"#).unwrap();
    assert!(read_annotations(&p).is_err());
}
