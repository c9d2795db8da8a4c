use fastwalk::bench::{derive_seed, place_seeds, run_benchmark, BenchReport, SuiteConfig};
use fastwalk::core::image::LabelMap;

fn suite(extra: &str) -> SuiteConfig {
    let text = format!(
        r#"{{"master_seed": 7, "phantoms": [{{"kind": "blobs2d", "dims": [14, 14], "noise": 0.03}}],
            "methods": ["basic", "fast", "adaptive"], "m_values": [8, 24], "seeds_per_region": 4{extra}}}"#
    );
    SuiteConfig::from_json(&text).unwrap()
}

#[test]
fn untimed_reports_are_byte_identical() {
    let cfg = suite(r#", "repetitions": 5, "timings": false"#);
    let a = run_benchmark(&cfg).unwrap().to_csv_string();
    let b = run_benchmark(&cfg).unwrap().to_csv_string();
    assert_eq!(a, b);
    // Five repetitions of basic, fast at two sizes and adaptive.
    assert_eq!(a.lines().count(), 1 + 5 * 4);
}

#[test]
fn basic_rows_have_zero_gap() {
    let cfg = suite(r#", "timings": false"#);
    let report = run_benchmark(&cfg).unwrap();
    for r in &report.records {
        assert_eq!(r.metric, "dsc");
        assert!((0.0..=1.0).contains(&r.score));
        if r.method == "basic" {
            assert_eq!(r.gap, 0.0);
            assert_eq!(r.m_use, None);
        } else {
            assert!(r.gap >= 0.0 && r.m_use.is_some());
        }
        assert_eq!(r.online_ms, None);
    }
}

#[test]
fn csv_round_trip() {
    let cfg = suite(r#", "repetitions": 2"#);
    let report = run_benchmark(&cfg).unwrap();
    let text = report.to_csv_string();
    let back = BenchReport::read_csv(text.as_bytes()).unwrap();
    assert_eq!(back, report);
}

#[test]
fn registration_rows_report_endpoint_error() {
    let text = r#"{"phantoms": [{"kind": "shifted_pair", "dims": [16, 16], "noise": 0.02}],
        "methods": ["basic", "fast", "delta"], "m_values": [32], "timings": false,
        "registration": {"grid": [5, 5], "aggregate_tol": 0.5, "aggregate_radius": 1}}"#;
    let report = run_benchmark(&SuiteConfig::from_json(text).unwrap()).unwrap();
    assert_eq!(report.records.len(), 3);
    for r in &report.records {
        assert_eq!(r.metric, "mo");
        assert!(r.endpoint_error.unwrap() >= 0.0);
    }
    let delta = report.records.iter().find(|r| r.method == "delta").unwrap();
    assert!(delta.n_bar.unwrap() <= 256);
}

#[test]
fn seeds_are_reproducible_and_inside_their_regions() {
    let labels = LabelMap::new(&[4, 4], (0..16).map(|i| u16::from(i >= 8)).collect()).unwrap();
    let a = place_seeds(&labels, 2, 3, 11);
    assert_eq!(a, place_seeds(&labels, 2, 3, 11));
    assert_eq!(a.len(), 6);
    for &(x, l) in &a {
        assert_eq!(labels.labels()[x] as usize, l);
    }
    assert_ne!(derive_seed(1, 0), derive_seed(1, 1));
    assert_ne!(derive_seed(1, 0), derive_seed(2, 0));
}

#[test]
fn empty_suites_are_rejected() {
    let cfg = SuiteConfig::from_json(r#"{"phantoms": [], "methods": ["basic"]}"#).unwrap();
    assert_eq!(run_benchmark(&cfg).unwrap_err().exit_code(), 1);
}
