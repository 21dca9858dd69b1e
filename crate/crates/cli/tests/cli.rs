use std::path::{Path, PathBuf};
use std::process::Command;

use polytrace::geometry::{Point2, PolygonWithHoles, Ring};
use polytrace::{rasterize_polygon, MaskRaster};
use polytrace_cli::geojson::{read_vector_layer, write_vector_layer, Feature, VectorLayer};
use polytrace_cli::raster_io::{read_mask, write_mask};
use polytrace_cli::records::{read_jsonl, write_jsonl, LabelRecord, QueryRecord, ScoreRecord};
use polytrace_cli::run_command;
use serde_json::Value;

fn run(args: &[&str]) -> i32 {
    let mut argv = vec!["polytrace"];
    argv.extend_from_slice(args);
    run_command(argv)
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn rect(x0: f64, y0: f64, x1: f64, y1: f64) -> PolygonWithHoles {
    PolygonWithHoles::from_exterior(
        Ring::new(vec![
            Point2::new(x0, y0),
            Point2::new(x1, y0),
            Point2::new(x1, y1),
            Point2::new(x0, y1),
        ])
        .unwrap(),
    )
}

fn scene() -> Vec<(u8, PolygonWithHoles)> {
    vec![
        (1, rect(10.0, 10.0, 110.0, 90.0)),
        (1, rect(140.0, 20.0, 200.0, 150.0)),
        (2, rect(20.0, 120.0, 100.0, 180.0)),
    ]
}

fn write_scene_mask(dir: &Path) -> PathBuf {
    let mut m = MaskRaster::new(220, 200);
    for (class, poly) in scene() {
        rasterize_polygon(&mut m, &poly, class);
    }
    let path = dir.join("mask.png");
    write_mask(&m, &path).unwrap();
    path
}

fn write_scene_layer(dir: &Path) -> PathBuf {
    let layer = VectorLayer {
        features: scene()
            .into_iter()
            .map(|(class, polygon)| Feature {
                class,
                polygon,
                instance_score: Some(1.0),
                vertex_conf: None,
            })
            .collect(),
        ..Default::default()
    };
    let path = dir.join("gt.geojson");
    write_vector_layer(&layer, &path).unwrap();
    path
}

#[test]
fn trace_square_gives_four_vertices() {
    let dir = tempfile::tempdir().unwrap();
    let mut m = MaskRaster::new(120, 120);
    rasterize_polygon(&mut m, &rect(20.0, 20.0, 100.0, 100.0), 1);
    let mask = dir.path().join("sq.pgm");
    write_mask(&m, &mask).unwrap();
    let out = dir.path().join("sq.geojson");
    assert_eq!(run(&["trace", "--mask", p(&mask), "--out", p(&out)]), 0);

    let layer = read_vector_layer(&out).unwrap();
    assert_eq!(layer.features.len(), 1);
    let f = &layer.features[0];
    assert_eq!(f.polygon.exterior().len(), 4);
    assert_eq!(f.vertex_conf.as_ref().unwrap().len(), 4);
    // rasterized pixel boundary of the square is the square itself
    let (lo, hi) = f.polygon.bounds();
    assert_eq!((lo.x, lo.y, hi.x, hi.y), (20.0, 20.0, 100.0, 100.0));
}

#[test]
fn trace_is_deterministic_across_job_counts() {
    let dir = tempfile::tempdir().unwrap();
    let mask = write_scene_mask(dir.path());
    let outs: Vec<PathBuf> = ["a", "b", "c"].iter().map(|n| dir.path().join(format!("{n}.geojson"))).collect();
    assert_eq!(run(&["trace", "--mask", p(&mask), "--out", p(&outs[0])]), 0);
    assert_eq!(run(&["trace", "--mask", p(&mask), "--out", p(&outs[1]), "--jobs", "1"]), 0);
    assert_eq!(run(&["trace", "--mask", p(&mask), "--out", p(&outs[2]), "--jobs", "3"]), 0);
    let a = std::fs::read(&outs[0]).unwrap();
    assert_eq!(a, std::fs::read(&outs[1]).unwrap());
    assert_eq!(a, std::fs::read(&outs[2]).unwrap());
    let v: Value = serde_json::from_slice(&a).unwrap();
    assert_eq!(v["features"].as_array().unwrap().len(), 3);
}

#[test]
fn eval_self_comparison_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let gt = write_scene_layer(dir.path());
    let mask = write_scene_mask(dir.path());
    let report = dir.path().join("report.json");
    assert_eq!(
        run(&["eval", "--pred", p(&gt), "--gt", p(&gt), "--gt-mask", p(&mask), "--report", p(&report)]),
        0
    );
    let r: Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(r["polis"], 0.0);
    assert_eq!(r["ciou"], 100.0);
    assert_eq!(r["ap"], 100.0);
    assert_eq!(r["iou"], 100.0);
    assert_eq!(r["f1"], 100.0);
    assert_eq!(r["counts"]["matched"], 3);
    assert!(r.get("apls").is_none());
}

#[test]
fn eval_traced_layer_and_graphs() {
    let dir = tempfile::tempdir().unwrap();
    let gt = write_scene_layer(dir.path());
    let mask = write_scene_mask(dir.path());
    let pred = dir.path().join("pred.geojson");
    assert_eq!(run(&["trace", "--mask", p(&mask), "--out", p(&pred)]), 0);
    let g1 = dir.path().join("g.txt");
    let g2 = dir.path().join("h.txt");
    std::fs::write(&g1, "node 1 0 0\nnode 2 10 0\nedge 1 2 10\n").unwrap();
    std::fs::write(&g2, "node 1 1 0\nnode 2 10 1\nedge 1 2 12\n").unwrap();
    let report = dir.path().join("r.json");
    let code = run(&[
        "eval", "--pred", p(&pred), "--gt", p(&gt), "--metrics", "polis,ciou,ap,apls", "--graph-gt", p(&g1),
        "--graph-pred", p(&g2), "--report", p(&report),
    ]);
    assert_eq!(code, 0);
    let r: Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert!((r["apls"].as_f64().unwrap() - 80.0).abs() < 1e-9);
    assert_eq!(r["polis"], 0.0);
    assert!(r.get("iou").is_none());

    // apls without graphs is an input error
    assert_eq!(run(&["eval", "--pred", p(&pred), "--gt", p(&gt), "--metrics", "apls", "--report", p(&report)]), 1);
    assert_eq!(run(&["eval", "--pred", p(&pred), "--gt", p(&gt), "--metrics", "bf", "--report", p(&report)]), 1);
}

#[test]
fn file_scorer_reproduces_rule_scorer() {
    let dir = tempfile::tempdir().unwrap();
    let mask = write_scene_mask(dir.path());
    let rule_out = dir.path().join("rule.geojson");
    let queries = dir.path().join("q.jsonl");
    assert_eq!(
        run(&["trace", "--mask", p(&mask), "--out", p(&rule_out), "--iters", "0", "--emit-queries", p(&queries)]),
        0
    );
    let q: Vec<QueryRecord> = read_jsonl(&queries).unwrap();
    assert_eq!(q.len(), 3);
    let threshold = 135f64.to_radians();
    let scores: Vec<ScoreRecord> = q
        .iter()
        .map(|r| ScoreRecord {
            instance_id: r.instance_id,
            ring: r.ring,
            offsets: Vec::new(),
            probs: r.theta.iter().map(|t| polytrace::tracer::angle_probability(t[0], threshold)).collect(),
        })
        .collect();
    let score_file = dir.path().join("s.jsonl");
    write_jsonl(&score_file, &scores).unwrap();
    let file_out = dir.path().join("file.geojson");
    let scorer = format!("file:{}", p(&score_file));
    assert_eq!(
        run(&["trace", "--mask", p(&mask), "--out", p(&file_out), "--iters", "0", "--scorer", &scorer]),
        0
    );
    assert_eq!(std::fs::read(&rule_out).unwrap(), std::fs::read(&file_out).unwrap());

    // scores without the requested iterations fail, but still write output
    let code = run(&["trace", "--mask", p(&mask), "--out", p(&file_out), "--scorer", &scorer]);
    assert_eq!(code, 1);
}

#[test]
fn mcr_label_writes_records() {
    let dir = tempfile::tempdir().unwrap();
    let gt = write_scene_layer(dir.path());
    let mask = write_scene_mask(dir.path());
    let out = dir.path().join("labels.jsonl");
    assert_eq!(run(&["mcr-label", "--mask", p(&mask), "--gt", p(&gt), "--out", p(&out)]), 0);
    let recs: Vec<LabelRecord> = read_jsonl(&out).unwrap();
    assert_eq!(recs.len(), 3);
    for r in &recs {
        assert_eq!(r.r.len(), r.g_prime.len());
        assert_eq!(r.r.len(), r.c.len());
        assert_eq!(r.matched, 4);
        assert_eq!(r.c.iter().map(|&c| c as usize).sum::<usize>(), 4);
    }
}

#[test]
fn pyramid_slice_then_stitch_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let mask = write_scene_mask(dir.path());
    let tiles = dir.path().join("tiles");
    let code = run(&[
        "pyramid-slice", "--image", p(&mask), "--rates", "1,3,6", "--window", "64", "--stride", "48", "--out-dir",
        p(&tiles), "--mask",
    ]);
    assert_eq!(code, 0);
    let manifest: Value = serde_json::from_str(&std::fs::read_to_string(tiles.join("manifest.json")).unwrap()).unwrap();
    let groups = manifest["groups"].as_array().unwrap();
    // anchors 0,48,96,144,156 by 0,48,96,136
    assert_eq!(groups.len(), 20);
    assert_eq!(groups[0]["files"].as_array().unwrap().len(), 3);

    let out = dir.path().join("stitched.png");
    assert_eq!(run(&["pyramid-stitch", "--manifest", p(&tiles), "--out", p(&out)]), 0);
    assert_eq!(std::fs::read(&mask).unwrap(), std::fs::read(&out).unwrap());

    let upper = read_mask(&tiles.join("g00000_l2.png")).unwrap();
    assert_eq!((upper.width(), upper.height()), (64, 64));

    std::fs::remove_file(tiles.join("g00003_l0.png")).unwrap();
    assert_eq!(
        run(&["pyramid-stitch", "--manifest", p(&tiles.join("manifest.json")), "--out", p(&out)]),
        1
    );
}

#[test]
fn pyramid_slice_rejects_bad_config() {
    let dir = tempfile::tempdir().unwrap();
    let mask = write_scene_mask(dir.path());
    let tiles = dir.path().join("t");
    assert_eq!(run(&["pyramid-slice", "--image", p(&mask), "--window", "500", "--out-dir", p(&tiles)]), 1);
    assert_eq!(
        run(&["pyramid-slice", "--image", p(&mask), "--rates", "2,4", "--window", "50", "--out-dir", p(&tiles)]),
        1
    );
}

#[test]
fn input_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let gt = dir.path().join("line.geojson");
    std::fs::write(
        &gt,
        r#"{"type":"FeatureCollection","features":[{"type":"Feature","properties":{},"geometry":{"type":"LineString","coordinates":[[0,0],[5,5]]}}]}"#,
    )
    .unwrap();
    let report = dir.path().join("r.json");
    assert_eq!(run(&["eval", "--pred", p(&gt), "--gt", p(&gt), "--report", p(&report)]), 1);
    assert_eq!(run(&["trace", "--mask", "/nonexistent.png", "--out", p(&report)]), 1);
    let mask = write_scene_mask(dir.path());
    assert_eq!(run(&["trace", "--mask", p(&mask), "--out", p(&report), "--epsilon=-1"]), 1);
    assert_eq!(run(&["trace", "--mask", p(&mask), "--out", p(&report), "--scorer", "magic"]), 1);
    assert_eq!(run(&["trace", "--mask", p(&mask), "--out", p(&report), "--jobs", "0"]), 1);
}

#[test]
fn unknown_flag_prints_usage_to_stderr() {
    let out = Command::new(env!("CARGO_BIN_EXE_polytrace"))
        .args(["trace", "--bogus"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(out.stdout.is_empty());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("Usage"), "{err}");

    let help = Command::new(env!("CARGO_BIN_EXE_polytrace")).arg("--help").output().unwrap();
    assert_eq!(help.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&help.stdout).contains("pyramid-slice"));
}
