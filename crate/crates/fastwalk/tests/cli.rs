use std::path::Path;

use fastwalk::cli::run;
use fastwalk::core::phantom::{make_phantom, PhantomKind};
use fastwalk::io::{load_labels, save_image_rawj, save_pgm};
use fastwalk::pack::load_pack;
use fastwalk::seeds::save_seeds;

fn args(list: &[&str]) -> Vec<String> {
    std::iter::once("fastwalk").chain(list.iter().copied()).map(String::from).collect()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    assert_eq!(run(args(&["frobnicate"])), 1);
    assert_eq!(run(args(&["precompute", "img.pgm"])), 1);
}

#[test]
fn missing_pack_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let ph = make_phantom(PhantomKind::Blobs2d, &[8, 8], 1, 0.0).unwrap();
    let img = dir.path().join("img.pgm");
    save_pgm(&ph.image, &img).unwrap();
    let seeds = dir.path().join("seeds.json");
    save_seeds(&[(0, 0), (63, 1)], &seeds).unwrap();
    let missing = dir.path().join("nope.rwpk");
    assert_eq!(run(args(&["segment", p(&img), p(&missing), p(&seeds)])), 2);
    let err = fastwalk::pack::load_pack(&missing).unwrap_err();
    assert!(err.to_string().contains("nope.rwpk"), "{err}");
}

#[test]
fn precompute_then_segment_adaptively() {
    let dir = tempfile::tempdir().unwrap();
    let ph = make_phantom(PhantomKind::Blobs2d, &[16, 16], 4, 0.02).unwrap();
    let img = dir.path().join("ph.rawj");
    save_image_rawj(&ph.image, &img).unwrap();
    let packs = dir.path().join("packs");
    let code = run(args(&["precompute", p(&img), "--beta", "25", "--beta", "50", "--m", "40", "--out-dir", p(&packs)]));
    assert_eq!(code, 0);
    let p25 = packs.join("ph_b25.rwpk");
    let p50 = packs.join("ph_b50.rwpk");
    assert_eq!(load_pack(&p25).unwrap().beta(), 25.0);
    assert_eq!(load_pack(&p50).unwrap().basis().m(), 40);

    let seeds = fastwalk::bench::place_seeds(&ph.labels, ph.k, 4, 9);
    let seeds_path = dir.path().join("seeds.json");
    save_seeds(&seeds, &seeds_path).unwrap();
    let out = dir.path().join("out");
    let code = run(args(&[
        "segment",
        p(&img),
        p(&p25),
        p(&p50),
        p(&seeds_path),
        "--adaptive",
        "--beta-online",
        "35",
        "--out-dir",
        p(&out),
    ]));
    assert_eq!(code, 0);
    let labels = load_labels(&out.join("labels.rawj")).unwrap();
    assert_eq!(labels.dims(), &[16, 16]);
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    let m_use = report["m_use"].as_u64().unwrap();
    assert!((1..=40).contains(&m_use), "{report}");
    assert_eq!(report["refreshed"], true);
    assert_eq!(report["base_beta"], 25.0);
    assert!(out.join("probabilities.json").exists());
}

#[test]
fn segment_rejects_a_pack_of_another_image() {
    let dir = tempfile::tempdir().unwrap();
    let a = make_phantom(PhantomKind::Blobs2d, &[8, 8], 1, 0.0).unwrap();
    let b = make_phantom(PhantomKind::Blobs2d, &[8, 8], 2, 0.0).unwrap();
    let (ia, ib) = (dir.path().join("a.rawj"), dir.path().join("b.rawj"));
    save_image_rawj(&a.image, &ia).unwrap();
    save_image_rawj(&b.image, &ib).unwrap();
    assert_eq!(run(args(&["precompute", p(&ib), "--beta", "50", "--m", "8", "--out-dir", p(dir.path())])), 0);
    let seeds = dir.path().join("seeds.json");
    save_seeds(&[(0, 0), (63, 1)], &seeds).unwrap();
    let code = run(args(&["segment", p(&ia), p(&dir.path().join("b_b50.rwpk")), p(&seeds)]));
    assert_eq!(code, 1);
}

#[test]
fn register_writes_a_displacement_field() {
    let dir = tempfile::tempdir().unwrap();
    let ph = make_phantom(PhantomKind::ShiftedPair, &[16, 16], 3, 0.02).unwrap();
    let (moving, labels) = ph.moving.clone().unwrap();
    let (f, m) = (dir.path().join("fixed.rawj"), dir.path().join("moving.rawj"));
    save_image_rawj(&ph.image, &f).unwrap();
    save_image_rawj(&moving, &m).unwrap();
    let ml = dir.path().join("moving_labels.rawj");
    fastwalk::io::save_labels(&labels, &ml).unwrap();
    let out = dir.path().join("reg");
    let code = run(args(&["register", p(&f), p(&m), "--grid", "5,5", "--moving-labels", p(&ml), "--out-dir", p(&out)]));
    assert_eq!(code, 0);
    let field = fastwalk::io::load_displacement(&out.join("displacement.rawj")).unwrap();
    assert_eq!(field.dims(), &[16, 16]);
    assert!(out.join("warped_labels.json").exists());
}

#[test]
fn bench_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let suite = dir.path().join("suite.json");
    std::fs::write(
        &suite,
        r#"{"phantoms": [{"kind": "blobs2d", "dims": [12, 12]}], "methods": ["basic", "fast"], "m_values": [10],
            "seeds_per_region": 3, "timings": false}"#,
    )
    .unwrap();
    let out = dir.path().join("bench.csv");
    assert_eq!(run(args(&["bench", p(&suite), "--out", p(&out)])), 0);
    let text = std::fs::read_to_string(&out).unwrap();
    assert!(text.starts_with(fastwalk::bench::CSV_HEADER));
    assert_eq!(text.lines().count(), 3);
}
