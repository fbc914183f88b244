use std::io::{BufRead, BufReader, Cursor, Write};
use std::net::TcpListener;
use std::thread;

use base64::Engine as _;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use taps_core::captions::{generate_pseudo_captions, CaptionGenConfig, ObjectViews};
use taps_core::embedding::{EmbeddingProvider, ReferenceProvider, ServiceProvider, PROTOCOL};
use taps_core::raster::Raster;
use taps_core::vocab::Vocabulary;
use taps_core::Error;

#[derive(Clone, Copy)]
enum Mode {
    Honest,
    WrongId,
    Refuses,
    ShortVector,
    Unnormalized,
}

/// One-connection mock that answers with the reference provider's vectors.
fn serve(mode: Mode, handshake: Value) -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap().to_string();
    thread::spawn(move || {
        let (stream, _) = listener.accept().unwrap();
        stream.set_nodelay(true).unwrap();
        let mut out = std::io::BufWriter::new(stream.try_clone().unwrap());
        writeln!(out, "{handshake}").unwrap();
        out.flush().unwrap();
        let reference = ReferenceProvider::default();
        for line in BufReader::new(stream).lines() {
            let Ok(line) = line else { break };
            let req: Value = serde_json::from_str(&line).unwrap();
            let payload = req["payload"].as_str().unwrap();
            let e = match req["kind"].as_str().unwrap() {
                "text" => reference.encode_text(payload).unwrap(),
                _ => {
                    let png = base64::engine::general_purpose::STANDARD.decode(payload).unwrap();
                    let img = image::load_from_memory(&png).unwrap().to_rgba8();
                    reference.encode_image(&Raster::from_rgba8(&img)).unwrap()
                }
            };
            let mut values = e.values().to_vec();
            let id = req["id"].as_u64().unwrap();
            let resp = match mode {
                Mode::Honest => json!({ "id": id, "embedding": values }),
                Mode::WrongId => json!({ "id": id + 1, "embedding": values }),
                Mode::Refuses => json!({ "id": id, "error": "payload rejected" }),
                Mode::ShortVector => {
                    values.pop();
                    json!({ "id": id, "embedding": values })
                }
                Mode::Unnormalized => {
                    values.iter_mut().for_each(|v| *v *= 2.0);
                    json!({ "id": id, "embedding": values })
                }
            };
            if writeln!(out, "{resp}").and_then(|_| out.flush()).is_err() {
                break;
            }
        }
    });
    addr
}

fn handshake() -> Value {
    json!({ "protocol": PROTOCOL, "dimension": 64, "model": "mock" })
}

#[test]
fn honest_service_returns_unit_vectors_of_handshake_dimension() {
    let p = ServiceProvider::connect(&serve(Mode::Honest, handshake())).unwrap();
    let reference = ReferenceProvider::default();
    let d = p.descriptor();
    assert_eq!(d.name, "service:mock");
    assert_eq!(d.dimension, 64);
    assert!(!d.differentiable);
    assert!(p.as_differentiable().is_none());
    for t in ["a red car", "a tall wooden chair"] {
        let e = p.encode_text(t).unwrap();
        assert_eq!(e.dim(), 64);
        let n: f64 = e.values().iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-9);
        let r = reference.encode_text(t).unwrap();
        for (a, b) in e.values().iter().zip(r.values()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let data = (0..8 * 8 * 4).map(|_| (rng.random_range(0..=255u8) as f64) / 255.0).collect();
    let img = Raster::new(8, 8, data).unwrap();
    let e = p.encode_image(&img).unwrap();
    let r = reference.encode_image(&img).unwrap();
    for (a, b) in e.values().iter().zip(r.values()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn captions_through_service_match_reference() {
    let vocab = Vocabulary::new(
        ["chair", "car", "lamp", "table"].map(String::from).to_vec(),
        ["red", "blue", "tall", "round", "wooden"].map(String::from).to_vec(),
        "test",
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let objects: Vec<ObjectViews> = (0..2)
        .map(|i| ObjectViews {
            object_id: format!("o{i}"),
            views: (0..2)
                .map(|_| {
                    let data = (0..8 * 8 * 4).map(|_| (rng.random_range(0..=255u8) as f64) / 255.0).collect();
                    Raster::new(8, 8, data).unwrap()
                })
                .collect(),
        })
        .collect();
    let cfg = CaptionGenConfig { k1: 2, k2: 3, captions_per_object: 6, ..Default::default() };
    let svc = ServiceProvider::connect(&serve(Mode::Honest, handshake())).unwrap();
    let a = generate_pseudo_captions(&objects, &vocab, &svc, &cfg).unwrap();
    let b = generate_pseudo_captions(&objects, &vocab, &ReferenceProvider::default(), &cfg).unwrap();
    let texts = |r: &taps_core::captions::CaptionRun| r.dataset.records.iter().map(|c| c.text.clone()).collect::<Vec<_>>();
    assert_eq!(texts(&a), texts(&b));
    assert_eq!(a.dataset.provider, "service:mock");
}

#[test]
fn error_response_is_invalid_input() {
    let p = ServiceProvider::connect(&serve(Mode::Refuses, handshake())).unwrap();
    assert!(matches!(p.encode_text("a red car"), Err(Error::InvalidInput(_))));
}

#[test]
fn protocol_violations_are_unavailable() {
    for mode in [Mode::WrongId, Mode::ShortVector, Mode::Unnormalized] {
        let p = ServiceProvider::connect(&serve(mode, handshake())).unwrap();
        assert!(matches!(p.encode_text("a red car"), Err(Error::ProviderUnavailable(_))));
    }
    let bad = json!({ "protocol": "other/2", "dimension": 64, "model": "mock" });
    assert!(matches!(ServiceProvider::connect(&serve(Mode::Honest, bad)), Err(Error::ProviderUnavailable(_))));
    let zero = json!({ "protocol": PROTOCOL, "dimension": 0 });
    assert!(matches!(ServiceProvider::connect(&serve(Mode::Honest, zero)), Err(Error::ProviderUnavailable(_))));
}

#[test]
fn missing_service_is_unavailable() {
    let port = {
        let l = TcpListener::bind("127.0.0.1:0").unwrap();
        l.local_addr().unwrap().port()
    };
    assert!(matches!(ServiceProvider::connect(&format!("127.0.0.1:{port}")), Err(Error::ProviderUnavailable(_))));
    assert!(matches!(
        ServiceProvider::spawn_stdio("/nonexistent/embed-service", &[]),
        Err(Error::ProviderUnavailable(_))
    ));
    let silent = ServiceProvider::from_transport(Box::new(Cursor::new(Vec::new())), Box::new(std::io::sink()));
    assert!(matches!(silent, Err(Error::ProviderUnavailable(_))));
}

#[test]
fn transport_closed_mid_session_is_unavailable() {
    let hs = format!("{}\n", handshake());
    let p = ServiceProvider::from_transport(Box::new(Cursor::new(hs.into_bytes())), Box::new(std::io::sink())).unwrap();
    assert_eq!(p.model(), "mock");
    assert!(matches!(p.encode_text("a red car"), Err(Error::ProviderUnavailable(_))));
}
