use std::io::{BufRead, BufReader, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use base64::Engine as _;
use serde_json::{json, Value};

use taps_core::captions::CaptionDataset;
use taps_core::dataset::load_manifest;
use taps_core::embedding::{EmbeddingProvider, EmbeddingVector, ReferenceProvider, PROTOCOL};
use taps_core::metrics::MetricReport;
use taps_core::model::{Checkpoint, MappingConfig};
use taps_core::raster::Raster;
use taps_core::train::{TrainConfig, TrainState};

fn taps(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_taps"))
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(out: &Path, args: &[&str]) {
    let o = taps(out, args);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
}

fn code(out: &Path, args: &[&str]) -> i32 {
    taps(out, args).status.code().expect("exited normally")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Small fixture with its captions: `(dir, manifest, captions)`.
fn fixture(objects: &str) -> (tempfile::TempDir, PathBuf, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok(&data, &["make-fixture", "--objects", objects, "--views", "2", "--resolution", "16"]);
    let caps = dir.path().join("caps");
    let manifest = data.join("manifest.tsv");
    ok(&caps, &["gen-captions", "--manifest", s(&manifest), "--captions-per-object", "8"]);
    (dir, manifest, caps.join("captions.tsv"))
}

#[test]
fn exit_codes_by_error_category() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    assert_eq!(code(&out, &["train", "--bogus"]), 2);
    assert_eq!(code(&out, &["gen-captions", "--manifest", "/nonexistent/manifest.tsv"]), 3);
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "objects = 2\ncolour = red\n").unwrap();
    assert_eq!(code(&out, &["--config", s(&cfg), "make-fixture"]), 4);
    std::fs::write(&cfg, "objects = 2\nviews = 2\nresolution = 8\n").unwrap();
    ok(&out, &["--config", s(&cfg), "make-fixture"]);
    let refused = {
        let l = TcpListener::bind("127.0.0.1:0").unwrap();
        l.local_addr().unwrap().to_string()
    };
    let manifest = out.join("manifest.tsv");
    let args = ["gen-captions", "--manifest", s(&manifest), "--provider", "service", "--service-addr", &refused];
    assert_eq!(code(&dir.path().join("c"), &args), 5);
}

#[test]
fn zero_learning_rate_is_rejected() {
    let (dir, manifest, captions) = fixture("2");
    let out = dir.path().join("t");
    let base = ["train", "--manifest", s(&manifest), "--captions", s(&captions), "--split", "all", "--iters", "1"];
    assert_eq!(code(&out, &[&base[..], &["--lr-geo", "0"]].concat()), 4);
    assert_eq!(code(&out, &[&base[..], &["--lr-tex=-1"]].concat()), 4);
    assert_eq!(code(&out, &[&base[..], &["--no-clip-loss", "--no-img-loss"]].concat()), 4);
}

fn own_mean_dot(views: &[EmbeddingVector], e: &EmbeddingVector) -> f64 {
    let mut acc = 0.0;
    for v in views {
        let mut d = 0.0;
        for k in 0..v.dim() {
            d += v.values()[k] * e.values()[k];
        }
        acc += d;
    }
    acc / views.len() as f64
}

fn top(words: &[String], views: &[EmbeddingVector], p: &ReferenceProvider, k: usize) -> Vec<String> {
    let mut scored: Vec<(f64, String)> =
        words.iter().map(|w| (own_mean_dot(views, &p.encode_text(w).unwrap()), w.clone())).collect();
    scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    scored.into_iter().take(k).map(|x| x.1).collect()
}

#[test]
fn captions_file_matches_brute_force_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok(&data, &["make-fixture", "--objects", "3", "--views", "3", "--resolution", "16"]);
    let nouns: Vec<String> = ["chair", "car", "table", "airplane", "lamp", "sofa"].map(String::from).to_vec();
    let adjs: Vec<String> = ["red", "blue", "wooden", "tall", "round", "shiny", "small", "dark"].map(String::from).to_vec();
    let np = dir.path().join("nouns.txt");
    let ap = dir.path().join("adjectives.txt");
    std::fs::write(&np, nouns.join("\n")).unwrap();
    std::fs::write(&ap, adjs.join("\n")).unwrap();
    let manifest = data.join("manifest.tsv");
    let run = |name: &str| {
        let out = dir.path().join(name);
        ok(
            &out,
            &[
                "gen-captions", "--manifest", s(&manifest), "--nouns", s(&np), "--adjectives", s(&ap),
                "--k1", "2", "--k2", "3", "--captions-per-object", "7",
            ],
        );
        std::fs::read(out.join("captions.tsv")).unwrap()
    };
    let bytes = run("a");
    assert_eq!(bytes, run("b"));
    let got = CaptionDataset::parse(std::str::from_utf8(&bytes).unwrap()).unwrap();

    let p = ReferenceProvider::default();
    let m = load_manifest(&manifest).unwrap();
    let mut want = Vec::new();
    for id in m.object_ids() {
        let views: Vec<EmbeddingVector> = m
            .records_for(&id)
            .map(|r| p.encode_image(&m.load_image(r).unwrap().raster).unwrap())
            .collect();
        let n = top(&nouns, &views, &p, 2);
        let a = top(&adjs, &views, &p, 3);
        let mut cands = Vec::new();
        for noun in &n {
            for x in &a {
                cands.push(format!("a {x} {noun}"));
            }
            for x in &a {
                for y in &a {
                    if x != y {
                        cands.push(format!("a {x} {y} {noun}"));
                    }
                }
            }
        }
        let mut scored: Vec<(f64, String)> =
            cands.into_iter().map(|c| (own_mean_dot(&views, &p.encode_text(&c).unwrap()), c)).collect();
        scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
        want.extend(scored.into_iter().take(7).map(|(sc, t)| (id.clone(), t, sc)));
    }
    assert_eq!(got.records.len(), want.len());
    for (c, (id, t, sc)) in got.records.iter().zip(&want) {
        assert_eq!((&c.object_id, &c.text), (id, t));
        assert!((c.score - sc).abs() < 1e-9);
    }
}

#[test]
fn zero_iterations_write_the_initial_networks() {
    let (dir, manifest, captions) = fixture("2");
    let out = dir.path().join("t");
    ok(&out, &["--seed", "7", "train", "--manifest", s(&manifest), "--captions", s(&captions), "--split", "all", "--iters", "0"]);
    let ckpt = Checkpoint::load(&out.join("checkpoint.bin")).unwrap();
    let init = TrainState::new(&TrainConfig { seed: 7, ..Default::default() }, &MappingConfig::standard(64)).unwrap();
    assert_eq!(ckpt.geometry, init.geometry);
    assert_eq!(ckpt.texture, init.texture);
}

#[test]
fn trace_has_one_line_per_iteration() {
    let (dir, manifest, captions) = fixture("2");
    let out = dir.path().join("t");
    ok(
        &out,
        &["train", "--manifest", s(&manifest), "--captions", s(&captions), "--split", "all", "--iters", "4", "--batch", "2"],
    );
    let trace = std::fs::read_to_string(out.join("loss_trace.tsv")).unwrap();
    assert_eq!(trace.lines().filter(|l| !l.starts_with('#')).count(), 4);
}

#[test]
fn identical_feature_sets_have_zero_distance() {
    let dir = tempfile::tempdir().unwrap();
    let feats = dir.path().join("f.txt");
    let rows: Vec<String> = (0..30)
        .map(|i| (0..5).map(|j| format!("{}", ((i * 7 + j * 3) % 11) as f64 * 0.37)).collect::<Vec<_>>().join(" "))
        .collect();
    std::fs::write(&feats, rows.join("\n")).unwrap();
    let out = dir.path().join("e");
    ok(&out, &["eval", "--features-a", s(&feats), "--features-b", s(&feats)]);
    let report = MetricReport::parse(&std::fs::read_to_string(out.join("metrics.tsv")).unwrap()).unwrap();
    assert!(report.get("fid").unwrap().abs() < 1e-8);
}

#[test]
fn run_manifests_reproduce() {
    let dir = tempfile::tempdir().unwrap();
    let read = |name: &str| {
        let out = dir.path().join(name);
        ok(&out, &["--seed", "3", "make-fixture", "--objects", "3", "--views", "2", "--resolution", "8"]);
        std::fs::read_to_string(out.join("run-manifest.tsv")).unwrap()
    };
    let a = read("a");
    assert_eq!(a, read("b"));
    assert!(a.lines().any(|l| l.starts_with("output\tmanifest.tsv\t")));
    assert!(a.contains("seed\t3\n"));
}

/// Answers every request with the reference provider's vector.
fn mock_service() -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap().to_string();
    std::thread::spawn(move || {
        let (stream, _) = listener.accept().unwrap();
        stream.set_nodelay(true).unwrap();
        let mut out = std::io::BufWriter::new(stream.try_clone().unwrap());
        writeln!(out, "{}", json!({ "protocol": PROTOCOL, "dimension": 64, "model": "mock" })).unwrap();
        out.flush().unwrap();
        let p = ReferenceProvider::default();
        for line in BufReader::new(stream).lines() {
            let Ok(line) = line else { break };
            let req: Value = serde_json::from_str(&line).unwrap();
            let payload = req["payload"].as_str().unwrap();
            let e = if req["kind"] == "text" {
                p.encode_text(payload).unwrap()
            } else {
                let png = base64::engine::general_purpose::STANDARD.decode(payload).unwrap();
                p.encode_image(&Raster::from_rgba8(&image::load_from_memory(&png).unwrap().to_rgba8())).unwrap()
            };
            if writeln!(out, "{}", json!({ "id": req["id"], "embedding": e.values() })).and_then(|_| out.flush()).is_err() {
                break;
            }
        }
    });
    addr
}

#[test]
fn gen_captions_through_service() {
    let (dir, manifest, reference) = fixture("2");
    let out = dir.path().join("svc");
    let addr = mock_service();
    ok(
        &out,
        &["gen-captions", "--manifest", s(&manifest), "--captions-per-object", "8", "--provider", "service", "--service-addr", &addr],
    );
    let a = CaptionDataset::load(&out.join("captions.tsv")).unwrap();
    let b = CaptionDataset::load(&reference).unwrap();
    assert_eq!(a.provider, "service:mock");
    let texts = |d: &CaptionDataset| d.records.iter().map(|c| c.text.clone()).collect::<Vec<_>>();
    assert_eq!(texts(&a), texts(&b));

    let train = [
        "train", "--manifest", s(&manifest), "--captions", s(&reference), "--split", "all", "--iters", "1",
        "--provider", "service", "--service-addr", &mock_service(),
    ];
    let o = taps(&dir.path().join("t"), &train);
    assert_eq!(o.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&o.stderr).contains("no image gradient"));
}
