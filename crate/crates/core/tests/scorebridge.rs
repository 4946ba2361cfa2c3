use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use invariaudit_core::scorebridge::{
    valence_analysis, BridgeConfig, CachedScorer, ExternalScorer, ImageRef, MockScorer,
    MockSpec, PlantedShift, Provenance, ProvenanceRegistry, ScoreCache, ScoreError, Scorer,
    NEGATIVE_POLE, POSITIVE_POLE,
};

fn script() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/echo_scorer.py")
}

fn bridge(mode: &str, timeout: f64) -> Result<ExternalScorer, ScoreError> {
    ExternalScorer::spawn(BridgeConfig {
        command: vec!["python3".into(), script().display().to_string(), mode.into()],
        timeout_secs: timeout,
        handshake_timeout_secs: 10.0,
        ..Default::default()
    })
}

fn img(path: &str) -> ImageRef {
    ImageRef { path: path.into(), sha256: format!("sha-{path}") }
}

#[test]
fn bridge_round_trip_and_out_of_order() {
    let b = Arc::new(bridge("ok", 10.0).unwrap());
    assert_eq!(b.id(), "echo");
    assert_eq!(b.range(), (0.0, 1.0));
    assert_eq!(b.handshake().metadata["resolution"], 224);
    assert_eq!(b.score(&img("x.png"), "abc").unwrap(), 0.3);
    assert_eq!(b.embed_text("abcd").unwrap(), vec![4.0, 1.0]);
    // A slow request does not hold up the fast ones behind it.
    let t0 = Instant::now();
    let slow = {
        let b = Arc::clone(&b);
        std::thread::spawn(move || b.score(&img("s.png"), "slow one").unwrap())
    };
    std::thread::sleep(std::time::Duration::from_millis(30));
    let fast: Vec<f64> = (0..5).map(|i| b.score(&img("f.png"), &"x".repeat(i)).unwrap()).collect();
    let fast_done = t0.elapsed();
    assert_eq!(slow.join().unwrap(), 0.8);
    assert_eq!(fast, vec![0.0, 0.1, 0.2, 0.3, 0.4]);
    assert!(fast_done.as_millis() < 300, "fast requests waited for the slow one: {fast_done:?}");
}

#[test]
fn bridge_errors() {
    assert!(matches!(bridge("bad_handshake", 1.0), Err(ScoreError::Handshake(_))));
    let silent = bridge("silent", 0.1).unwrap();
    assert!(matches!(silent.score(&img("a.png"), "a cat"), Err(ScoreError::Unavailable { .. })));
    let flaky = bridge("flaky", 5.0).unwrap();
    assert_eq!(flaky.score(&img("a.png"), "ab").unwrap(), 0.2);
    assert!(matches!(
        ExternalScorer::spawn(BridgeConfig { command: vec!["/nonexistent/scorer".into()], ..Default::default() }),
        Err(ScoreError::Handshake(_))
    ));
}

#[test]
fn cache_marks_repeat_calls() {
    let dir = tempfile::tempdir().unwrap();
    let png = dir.path().join("a.png");
    std::fs::write(&png, b"not really a png").unwrap();
    let image = ImageRef::from_path(&png).unwrap();
    let reg = ProvenanceRegistry::new();
    let mock: Arc<dyn Scorer> = Arc::new(MockScorer::new(MockSpec::spatial("spatial"), reg));
    let cache = Arc::new(ScoreCache::open(&dir.path().join("cache")).unwrap());
    let cs = CachedScorer::new(mock, Arc::clone(&cache));
    let (s1, c1) = cs.score(&image, "There is a cat.").unwrap();
    let (s2, c2) = cs.score(&image, "There is a cat.").unwrap();
    assert_eq!((s1, c1), (s2, !c2));
    assert!(c2);
    let reopened = ScoreCache::open(&dir.path().join("cache")).unwrap();
    assert_eq!(reopened.get(&image.sha256, "There is a cat.", "spatial"), Some(s1));
    assert_eq!(reopened.get(&image.sha256, "There is a cat.", "other"), None);
}

#[test]
fn unreadable_image_is_unavailable_with_item() {
    let e = ImageRef::from_path(Path::new("/nonexistent/x.png")).unwrap_err().with_item("item-7");
    assert!(matches!(e, ScoreError::Unavailable { item_id: Some(ref i), .. } if i == "item-7"));
}

#[test]
fn planted_shift_recovered_per_item() {
    let reg = ProvenanceRegistry::new();
    let mut spec = MockSpec::invariant("m");
    spec.noise_sd = 0.004;
    spec.image_shifts.insert("vertical_flip".into(), PlantedShift::Abs(0.05));
    let m = MockScorer::new(spec, reg.clone());
    for i in 0..50 {
        let item = format!("item{i}");
        let base = "There is a chair.";
        for key in ["orig", "vertical_flip"] {
            reg.register(
                &format!("{item}-{key}"),
                Provenance { item_id: item.clone(), image_key: key.into(), base_caption: Some(base.into()) },
            );
        }
        let s0 = m.score(&by_sha(&format!("{item}-orig")), base).unwrap();
        let s1 = m.score(&by_sha(&format!("{item}-vertical_flip")), base).unwrap();
        assert!((s1 - s0 - 0.05).abs() <= 3.0 * 0.004 + 1e-12);
    }
}

fn by_sha(sha: &str) -> ImageRef {
    ImageRef { path: "unused.png".into(), sha256: sha.to_string() }
}

#[test]
fn mock_valence_tracks_planted_framing() {
    let m = MockScorer::new(MockSpec::framing("f"), ProvenanceRegistry::new());
    let shifts: BTreeMap<String, f64> =
        [("african", -7.0), ("american", 1.2), ("cheap", 2.0), ("expensive", -6.2)]
            .iter()
            .map(|(k, v)| (k.to_string(), *v))
            .collect();
    let words = POSITIVE_POLE.iter().chain(NEGATIVE_POLE.iter()).copied().chain(shifts.keys().map(String::as_str));
    let embeds = invariaudit_core::scorebridge::embed_words(&m, words).unwrap();
    assert_eq!(embeds["good"][0], 1.0);
    assert_eq!(embeds["ugly"][0], -1.0);
    let r = valence_analysis(&shifts, &embeds, &POSITIVE_POLE, &NEGATIVE_POLE).unwrap();
    assert!(r.spearman_rho > 0.0, "rho {}", r.spearman_rho);
}
