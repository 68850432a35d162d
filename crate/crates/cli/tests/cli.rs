use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mitodg_cli::commands::read_folds;
use mitodg_core::eval::{evaluate_at, optimize_threshold, EvalReport, MatchConfig};
use mitodg_core::io::read_detections;
use mitodg_core::sampler::{DatasetManifest, ImageEntry};
use mitodg_core::{Annotation, BBox, Label, RandomStream, Rgb8Image};

fn mitodg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mitodg")).args(args).output().unwrap()
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstderr: {}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Four scanners with three images each; objects at least 60 px apart.
fn dataset(dir: &Path) -> PathBuf {
    let mut rng = RandomStream::new(9);
    let mut images = Vec::new();
    let mut anns = Vec::new();
    for (si, scanner) in ["A", "B", "C", "D"].iter().enumerate() {
        for k in 0..3 {
            let id = (si * 3 + k) as u64 + 1;
            let (w, h) = (rng.int_inclusive(470, 800) as u32, rng.int_inclusive(460, 700) as u32);
            let img = Rgb8Image::from_fn(w, h, |x, y| [(x % 256) as u8, (y % 256) as u8, 180]);
            let file_name = format!("{scanner}{k}.png");
            std::fs::write(dir.join(&file_name), img.encode_png()).unwrap();
            let mut centers: Vec<(f64, f64)> = Vec::new();
            for _ in 0..6 {
                let (x, y) = (rng.uniform(30.0, w as f64 - 30.0), rng.uniform(30.0, h as f64 - 30.0));
                if centers.iter().any(|&(cx, cy)| (cx - x).hypot(cy - y) < 60.0) {
                    continue;
                }
                centers.push((x, y));
                let label = if rng.bernoulli(0.7) {
                    Label::MitoticFigure
                } else {
                    Label::Imposter
                };
                anns.push(
                    Annotation::from_box(anns.len() as u64, id, BBox::centered(x, y, 50.0, 50.0), label).unwrap(),
                );
            }
            images.push(ImageEntry {
                id,
                file_name,
                width: w,
                height: h,
                scanner: scanner.to_string(),
            });
        }
    }
    let path = dir.join("manifest.json");
    std::fs::write(&path, DatasetManifest::new(images, anns).unwrap().to_json_string()).unwrap();
    path
}

#[test]
fn ingest_reports_scanners() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dataset(dir.path());
    let out = mitodg(&["ingest", "--manifest", s(&manifest)]);
    ok(&out);
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["images_per_scanner"].as_object().unwrap().len(), 4);
    assert_eq!(report["images"], 12);
}

#[test]
fn ingest_names_unknown_image() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(
        &path,
        r#"{"images": [{"id": 1, "file_name": "a.png", "width": 10, "height": 10, "scanner": "A"}],
            "annotations": [{"id": 1, "image_id": 4242, "bbox": [0, 0, 5, 5], "category": "imposter"}]}"#,
    )
    .unwrap();
    let out = mitodg(&["ingest", "--manifest", s(&path)]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("4242"), "{}", stderr(&out));
}

#[test]
fn ingest_warns_on_empty_annotations() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("empty.json");
    std::fs::write(
        &path,
        r#"{"images": [{"id": 1, "file_name": "a.png", "width": 10, "height": 10, "scanner": "A"}], "annotations": []}"#,
    )
    .unwrap();
    let out = mitodg(&["ingest", "--manifest", s(&path), "--image-root", s(dir.path())]);
    ok(&out);
    let err = stderr(&out);
    assert!(err.contains("no annotations"), "{err}");
    assert!(err.contains("a.png"), "{err}");
}

#[test]
fn preview_is_deterministic_and_has_all_rows() {
    let dir = tempfile::tempdir().unwrap();
    let img = dir.path().join("tile.png");
    std::fs::write(
        &img,
        Rgb8Image::from_fn(20, 16, |x, y| [(x * 9) as u8, (y * 13) as u8, 120]).encode_png(),
    )
    .unwrap();
    let (a, b) = (dir.path().join("a.png"), dir.path().join("b.png"));
    ok(&mitodg(&["preview", "--image", s(&img), "--seed", "5", "--out", s(&a)]));
    ok(&mitodg(&["preview", "--image", s(&img), "--seed", "5", "--out", s(&b)]));
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let grid = Rgb8Image::open(&a).unwrap();
    assert_eq!(grid.dimensions(), (5 * 22 + 2, 19 * 18 + 2));

    let one = dir.path().join("one.png");
    ok(&mitodg(&[
        "preview",
        "--image",
        s(&img),
        "--seed",
        "5",
        "--kinds",
        "solarize,posterize",
        "--strengths",
        "0.5",
        "--out",
        s(&one),
    ]));
    assert_eq!(Rgb8Image::open(&one).unwrap().dimensions(), (24, 2 * 18 + 2));
}

#[test]
fn preview_missing_input_names_path() {
    let out = mitodg(&[
        "preview",
        "--image",
        "/nonexistent/slide.png",
        "--seed",
        "1",
        "--out",
        "/tmp/never.png",
    ]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("/nonexistent/slide.png"));
}

#[test]
fn seed_is_mandatory_for_stochastic_commands() {
    let out = mitodg(&["split-folds", "--manifest", "m.json", "--out", "f.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("--seed"));
    let dir = tempfile::tempdir().unwrap();
    let manifest = dataset(dir.path());
    let out = mitodg(&[
        "tile",
        "--manifest",
        s(&manifest),
        "--out",
        s(&dir.path().join("d.jsonl")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("--seed"));
}

#[test]
fn folds_sample_and_anchor_commands() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dataset(dir.path());
    let folds = dir.path().join("folds.json");
    ok(&mitodg(&[
        "split-folds",
        "--manifest",
        s(&manifest),
        "--seed",
        "3",
        "--folds",
        "3",
        "--out",
        s(&folds),
    ]));
    let parsed = read_folds(&folds).unwrap();
    assert_eq!(parsed.len(), 3);
    assert_eq!(parsed[0].test.len(), 4);

    let patches = dir.path().join("patches");
    ok(&mitodg(&[
        "sample",
        "--manifest",
        s(&manifest),
        "--seed",
        "4",
        "--count",
        "5",
        "--folds-file",
        s(&folds),
        "--split",
        "train-val",
        "--augment",
        "--out-dir",
        s(&patches),
    ]));
    let lines = std::fs::read_to_string(patches.join("patches.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), 5);
    for line in lines.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        let id = v["provenance"]["image_id"].as_u64().unwrap();
        assert!(parsed[0].train_val().contains(&id));
        assert!(v["augmentation"]["chosen"].is_string());
        let png = Rgb8Image::open(patches.join(v["file"].as_str().unwrap())).unwrap();
        assert_eq!(png.dimensions(), (448, 448));
    }

    let out = mitodg(&[
        "optimize-anchors",
        "--manifest",
        s(&manifest),
        "--seed",
        "1",
        "--generations",
        "20",
    ]);
    ok(&out);
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["search"]["scales"].as_array().unwrap().len(), 3);
    assert!(report["search"]["fitness"].as_f64().unwrap() >= report["octave_fitness"].as_f64().unwrap() - 1e-9);
}

#[test]
fn tile_evaluate_and_threshold_commands() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dataset(dir.path());
    let dets = dir.path().join("d.jsonl");
    ok(&mitodg(&[
        "tile",
        "--manifest",
        s(&manifest),
        "--seed",
        "2",
        "--dropout",
        "0.3",
        "--confidence-min",
        "0.2",
        "--out",
        s(&dets),
    ]));
    let report_path = dir.path().join("r.json");
    let csv = dir.path().join("per-image.csv");
    ok(&mitodg(&[
        "evaluate",
        "--detections",
        s(&dets),
        "--manifest",
        s(&manifest),
        "--threshold",
        "0.0",
        "--out",
        s(&report_path),
        "--per-image",
        s(&csv),
    ]));
    let report: EvalReport = serde_json::from_slice(&std::fs::read(&report_path).unwrap()).unwrap();
    assert_eq!(report.fp, 0);
    assert!(report.fn_ > 0);
    let csv_text = std::fs::read_to_string(&csv).unwrap();
    assert!(csv_text.starts_with("image_id,tp,fp,fn"));
    assert_eq!(csv_text.lines().count(), 13);

    let out = mitodg(&[
        "optimize-threshold",
        "--detections",
        s(&dets),
        "--manifest",
        s(&manifest),
        "--per-scanner",
    ]);
    ok(&out);
    let per: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(per.as_object().unwrap().len(), 4);
}

fn write_config(dir: &Path, manifest: &Path, out: &str, detector: &str) -> PathBuf {
    let path = dir.join(format!("{out}.toml"));
    let text = format!(
        "seed = 11\n[folds]\ncount = 3\nindex = 1\n{detector}\n[paths]\nmanifest = {:?}\noutput = {:?}\n",
        s(manifest),
        s(&dir.join(out))
    );
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn pipeline_report_matches_recomputation() {
    let dir = tempfile::tempdir().unwrap();
    let manifest_path = dataset(dir.path());
    let detector =
        "[detector]\nkind = \"mock\"\ndropout = 0.2\nfalse_positive_rate = 0.1\nconfidence = [0.3, 0.95]\njitter = 3.0";
    let cfg = write_config(dir.path(), &manifest_path, "run", detector);
    ok(&mitodg(&["pipeline", "--config", s(&cfg)]));
    let run = dir.path().join("run");
    for f in ["folds.json", "detections.jsonl", "report.json", "run-provenance.json"] {
        assert!(run.join(f).exists(), "{f}");
    }

    // independent recomputation from the written artifacts
    let manifest = DatasetManifest::load(&manifest_path).unwrap();
    let dets = read_detections(&run.join("detections.jsonl")).unwrap();
    let fold = &read_folds(&run.join("folds.json")).unwrap()[1];
    let pick = |ids: &std::collections::BTreeSet<u64>| {
        (
            dets.iter()
                .filter(|d| ids.contains(&d.image_id))
                .cloned()
                .collect::<Vec<_>>(),
            manifest
                .annotations()
                .iter()
                .filter(|a| ids.contains(&a.image_id))
                .cloned()
                .collect::<Vec<_>>(),
        )
    };
    let (tv_d, tv_g) = pick(&fold.train_val());
    let chosen = optimize_threshold(&tv_d, &tv_g, &MatchConfig::default());
    let (t_d, t_g) = pick(&fold.test);
    let expected = evaluate_at(&t_d, &t_g, &MatchConfig::default(), chosen.threshold);
    let written: EvalReport = serde_json::from_slice(&std::fs::read(run.join("report.json")).unwrap()).unwrap();
    assert_eq!(written, expected);

    let prov: serde_json::Value =
        serde_json::from_slice(&std::fs::read(run.join("run-provenance.json")).unwrap()).unwrap();
    assert_eq!(prov["seed"], 11);
    assert_eq!(prov["config"]["detector"]["dropout"], 0.2);
    assert_eq!(prov["inputs"]["images"].as_object().unwrap().len(), 12);
    assert_eq!(prov["outputs"]["report.json"].as_str().unwrap().len(), 64);
}

#[test]
fn pipeline_failure_names_stage_and_keeps_earlier_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dataset(dir.path());
    let cfg = write_config(
        dir.path(),
        &manifest,
        "broken",
        "[detector]\nkind = \"replay\"\npath = \"/nonexistent/d.jsonl\"",
    );
    let out = mitodg(&["pipeline", "--config", s(&cfg)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("`detector`"), "{}", stderr(&out));
    assert!(dir.path().join("broken/folds.json").exists());
    assert!(!dir.path().join("broken/report.json").exists());

    let out = mitodg(&[
        "pipeline",
        "--seed",
        "1",
        "--manifest",
        "/nonexistent/m.json",
        "--output",
        s(dir.path()),
    ]);
    assert!(stderr(&out).contains("`ingest`"), "{}", stderr(&out));
}

#[test]
fn replay_detector_through_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let manifest_path = dataset(dir.path());
    let manifest = DatasetManifest::load(&manifest_path).unwrap();
    // per-tile records: every object reported by the first tile that fully contains its centre
    let mut lines = String::new();
    for e in manifest.images() {
        let tiles = mitodg_core::tiler::plan_tiles((e.width, e.height), &Default::default()).unwrap();
        for a in manifest.annotations_for(e.id) {
            let Some(&(tx, ty)) = tiles.iter().find(|&&(tx, ty)| {
                a.center.x >= tx as f64
                    && a.center.y >= ty as f64
                    && a.center.x < tx as f64 + 448.0
                    && a.center.y < ty as f64 + 448.0
            }) else {
                continue;
            };
            let (ox, oy) = (tx as f64, ty as f64);
            lines.push_str(
                &serde_json::json!({
                    "image_id": e.id, "cx": a.center.x - ox, "cy": a.center.y - oy,
                    "x_min": a.bbox.x_min - ox, "y_min": a.bbox.y_min - oy,
                    "x_max": a.bbox.x_max - ox, "y_max": a.bbox.y_max - oy,
                    "label": a.label, "confidence": 0.9, "tile_x": tx, "tile_y": ty,
                })
                .to_string(),
            );
            lines.push('\n');
        }
    }
    let replay = dir.path().join("tiles.jsonl");
    std::fs::write(&replay, lines).unwrap();
    let cfg = write_config(
        dir.path(),
        &manifest_path,
        "replay",
        &format!("[detector]\nkind = \"replay\"\npath = {:?}", s(&replay)),
    );
    ok(&mitodg(&["pipeline", "--config", s(&cfg)]));
    let report: EvalReport =
        serde_json::from_slice(&std::fs::read(dir.path().join("replay/report.json")).unwrap()).unwrap();
    assert_eq!(report.f1, 1.0);
    assert_eq!(report.threshold, 0.9);
}

#[test]
fn dump_config_roundtrips() {
    let dir = tempfile::tempdir().unwrap();
    let dumped = dir.path().join("run.toml");
    ok(&mitodg(&[
        "pipeline",
        "--seed",
        "18446744073709551615",
        "--manifest",
        "m.json",
        "--output",
        "o",
        "--folds",
        "4",
        "--dump-config",
        s(&dumped),
    ]));
    let cfg = mitodg_cli::RunConfig::load(&dumped).unwrap();
    assert_eq!(cfg.seed, u64::MAX);
    assert_eq!(cfg.folds.count, 4);
}
