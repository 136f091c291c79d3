//! Replays the checked-in fuzz seeds through the same checks as the fuzz
//! targets, so the corpus stays exercised without a nightly toolchain.

use std::path::PathBuf;

use chartseal::chartgen::{apply_tamper, Manifest, TamperOp};
use chartseal::detect::{regions_to_json, TamperRegion};
use chartseal::imaging::{decode_image, ImageTensor};
use chartseal::inn::{decode_checkpoint, encode_checkpoint};
use chartseal::intent::{extract_json_block, parse_and_validate, Schema};

fn seeds(target: &str) -> Vec<(String, Vec<u8>)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut out: Vec<_> = std::fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap())
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds for {target}");
    out
}

#[test]
fn decode_image_seeds() {
    let mut decoded = 0;
    for (name, data) in seeds("decode_image") {
        if let Ok(img) = decode_image(&data) {
            assert_eq!(img.data().len(), img.height() * img.width() * img.channels(), "{name}");
            assert!(img.data().iter().all(|v| (0.0..=1.0).contains(v)), "{name}");
            decoded += 1;
        }
    }
    assert!(decoded >= 4);
}

#[test]
fn decode_checkpoint_seeds() {
    let mut decoded = 0;
    for (name, data) in seeds("decode_checkpoint") {
        if let Ok(model) = decode_checkpoint(&data) {
            let again = decode_checkpoint(&encode_checkpoint(&model)).unwrap();
            assert_eq!(again.config(), model.config(), "{name}");
            decoded += 1;
        }
    }
    assert_eq!(decoded, 1);
}

#[test]
fn parse_mllm_seeds() {
    for (_, data) in seeds("parse_mllm") {
        let text = String::from_utf8(data).unwrap();
        let _ = extract_json_block(&text);
        let _ = parse_and_validate(&text, Schema::Refinement);
        let _ = parse_and_validate(&text, Schema::Intent);
    }
}

#[test]
fn parse_manifest_seeds() {
    for (name, data) in seeds("parse_manifest") {
        let m: Manifest = serde_json::from_slice(&data).unwrap_or_else(|e| panic!("{name}: {e}"));
        let _ = m.truth_table();
        let back: Manifest = serde_json::from_str(&m.to_json()).unwrap();
        assert_eq!(back.items.len(), m.items.len());
    }
}

#[test]
fn parse_regions_seeds() {
    for (name, data) in seeds("parse_regions") {
        let regions: Vec<TamperRegion> = serde_json::from_slice(&data).unwrap_or_else(|e| panic!("{name}: {e}"));
        let back: Vec<TamperRegion> = serde_json::from_str(&regions_to_json(&regions)).unwrap();
        assert_eq!(back, regions);
    }
}

#[test]
fn parse_tamper_ops_seeds() {
    let canvas = ImageTensor::filled(32, 32, 3, 1.0);
    for (name, data) in seeds("parse_tamper_ops") {
        let ops: Vec<TamperOp> = serde_json::from_slice(&data).unwrap_or_else(|e| panic!("{name}: {e}"));
        let _ = apply_tamper(&canvas, &ops);
    }
}
