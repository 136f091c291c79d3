use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use chartseal::eval::patch_tamper;
use chartseal::imaging::{encode_png, load_image};

fn fixture_model() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/toy.vzmk")
}

fn run(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_chartseal"))
        .args(args)
        .current_dir(cwd)
        .env_remove("CHARTSEAL_API_TOKEN")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// A clean 64×64 chart at `<dir>/chart.png`.
fn chart(dir: &Path) -> PathBuf {
    let corpus = dir.join("c");
    let o = run(
        &["gen-corpus", corpus.to_str().unwrap(), "--n", "1", "--ops-per-item", "0", "--size", "64"],
        dir,
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let p = dir.join("chart.png");
    fs::copy(corpus.join("clean/0000.png"), &p).unwrap();
    p
}

fn protect(dir: &Path, input: &Path, output: &str) -> Output {
    let model = fixture_model();
    run(
        &[
            "--model",
            model.to_str().unwrap(),
            "protect",
            input.to_str().unwrap(),
            output,
        ],
        dir,
    )
}

#[test]
fn protect_writes_image_and_psnr() {
    let d = tempfile::tempdir().unwrap();
    let input = chart(d.path());
    let o = protect(d.path(), &input, "out.png");
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let line = stdout(&o);
    let db: f64 = line.trim().strip_prefix("psnr_db=").expect("psnr line").parse().unwrap();
    assert!(db > 20.0, "{db}");
    let out = load_image(d.path().join("out.png")).unwrap();
    assert_eq!((out.height(), out.width()), (64, 64));
}

#[test]
fn missing_checkpoint_exits_2_naming_path() {
    let d = tempfile::tempdir().unwrap();
    let input = chart(d.path());
    let o = run(
        &["--model", "nowhere/model.vzmk", "protect", input.to_str().unwrap(), "o.png"],
        d.path(),
    );
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("nowhere/model.vzmk"), "{}", stderr(&o));
}

#[test]
fn odd_sized_input_keeps_size() {
    let d = tempfile::tempdir().unwrap();
    let img = load_image(chart(d.path())).unwrap().crop(63, 61).unwrap();
    let p = d.path().join("odd.png");
    fs::write(&p, encode_png(&img)).unwrap();
    let o = protect(d.path(), &p, "odd_out.png");
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = load_image(d.path().join("odd_out.png")).unwrap();
    assert_eq!((out.height(), out.width()), (63, 61));
    let model = fixture_model();
    let o = run(&["--model", model.to_str().unwrap(), "detect", "odd_out.png"], d.path());
    assert!(code(&o) <= 1, "{}", stderr(&o));
    let mask = load_image(d.path().join("odd_out.mask.png")).unwrap();
    assert_eq!((mask.height(), mask.width()), (63, 61));
}

#[test]
fn detect_exit_codes() {
    let d = tempfile::tempdir().unwrap();
    let input = chart(d.path());
    assert_eq!(code(&protect(d.path(), &input, "prot.png")), 0);
    let model = fixture_model();
    let m = model.to_str().unwrap();

    let clean = run(&["--model", m, "detect", "prot.png"], d.path());
    assert_eq!(code(&clean), 0, "{}{}", stdout(&clean), stderr(&clean));
    for suffix in ["mask.png", "regions.json", "overlay.png"] {
        assert!(d.path().join(format!("prot.{suffix}")).exists(), "{suffix}");
    }
    assert_eq!(fs::read_to_string(d.path().join("prot.regions.json")).unwrap().trim(), "[]");

    let prot = load_image(d.path().join("prot.png")).unwrap();
    let (patched, _) = patch_tamper(&prot, 20, 24, 16, &[0.8, 0.3, 0.2]).unwrap();
    fs::write(d.path().join("patched.png"), encode_png(&patched)).unwrap();
    let hit = run(&["--model", m, "detect", "patched.png"], d.path());
    assert_eq!(code(&hit), 1, "{}{}", stdout(&hit), stderr(&hit));
    let regions: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d.path().join("patched.regions.json")).unwrap()).unwrap();
    assert!(!regions.as_array().unwrap().is_empty());
    let plain = fs::read(d.path().join("patched.overlay.png")).unwrap();
    let lit = run(&["--model", m, "detect", "patched.png", "--spotlight"], d.path());
    assert_eq!(code(&lit), 1);
    assert_ne!(fs::read(d.path().join("patched.overlay.png")).unwrap(), plain);

    fs::write(d.path().join("corrupt.png"), b"\x89PNG\r\n\x1a\nnot really").unwrap();
    assert_eq!(code(&run(&["--model", m, "detect", "corrupt.png"], d.path())), 2);
}

#[test]
fn tamper_applies_ops() {
    let d = tempfile::tempdir().unwrap();
    let input = chart(d.path());
    fs::write(
        d.path().join("ops.json"),
        r#"[{"kind": "paint_rect", "rect": {"x0": 5, "y0": 5, "x1": 15, "y1": 15}, "color": [0.1, 0.9, 0.1],
             "method": "Modifying data point values", "intent": ""}]"#,
    )
    .unwrap();
    let o = run(
        &["tamper", input.to_str().unwrap(), "t.png", "--ops", "ops.json", "--mask", "m.png"],
        d.path(),
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(stdout(&o).trim(), "changed_pixels=100");

    fs::write(
        d.path().join("bad.json"),
        r#"[{"kind": "paint_rect", "rect": {"x0": 60, "y0": 60, "x1": 70, "y1": 70}, "color": [0, 0, 0],
             "method": "Modifying data point values", "intent": ""}]"#,
    )
    .unwrap();
    let o = run(&["tamper", input.to_str().unwrap(), "t2.png", "--ops", "bad.json"], d.path());
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("geometry"), "{}", stderr(&o));
}

#[test]
fn evaluate_csv_shape_and_determinism() {
    let d = tempfile::tempdir().unwrap();
    let model = fixture_model();
    let m = model.to_str().unwrap();
    for (name, ops) in [("clean", "0"), ("tampered", "1")] {
        let o = run(
            &["--seed", "2", "gen-corpus", name, "--n", "3", "--ops-per-item", ops, "--size", "64"],
            d.path(),
        );
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    let eval = |corpus: &str, out: &str| {
        let o = run(&["--model", m, "--jobs", "2", "evaluate", corpus, "--out", out], d.path());
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        fs::read_to_string(d.path().join(out)).unwrap()
    };
    let clean = eval("clean", "clean.csv");
    assert_eq!(clean.lines().next().unwrap(), "id,psnr_db,noise_percentage,rmse");
    assert_eq!(clean.lines().count(), 1 + 3 + 3);
    assert!(d.path().join("items/0002.json").exists());

    let a = eval("tampered", "a.csv");
    let b = eval("tampered", "b.csv");
    assert_eq!(a, b);
    assert_eq!(a.lines().next().unwrap(), "id,psnr_db,noise_percentage,rmse,iou,f1");

    fs::create_dir_all(d.path().join("empty")).unwrap();
    fs::write(d.path().join("empty/manifest.json"), "[]").unwrap();
    let o = run(&["--model", m, "evaluate", "empty"], d.path());
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("no items"), "{}", stderr(&o));
}

#[test]
fn analyze_with_truth_mock() {
    let d = tempfile::tempdir().unwrap();
    let o = run(&["--seed", "5", "gen-corpus", "c", "--n", "4", "--size", "64"], d.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = run(
        &["--output-dir", "reports", "analyze", "--backend", "truth", "--corpus", "c"],
        d.path(),
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d.path().join("c/manifest.json")).unwrap()).unwrap();
    for item in manifest.as_array().unwrap() {
        let id = item["id"].as_str().unwrap();
        let report: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(d.path().join(format!("reports/{id}.intent.json"))).unwrap())
                .unwrap();
        assert_eq!(report["tampering_intents"][0]["method"], item["ops"][0]["method"]);
    }
}

#[test]
fn analyze_http_requires_endpoint() {
    let d = tempfile::tempdir().unwrap();
    let input = chart(d.path());
    fs::write(d.path().join("r.json"), "[]").unwrap();
    let o = run(
        &["analyze", input.to_str().unwrap(), "--regions", "r.json", "--backend", "http"],
        d.path(),
    );
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("endpoint"), "{}", stderr(&o));
}

#[test]
fn token_is_not_a_flag() {
    let d = tempfile::tempdir().unwrap();
    let o = run(&["--api-token", "secret", "gen-corpus", "c", "--n", "1"], d.path());
    assert_eq!(code(&o), 2);
}

#[test]
fn train_is_reproducible() {
    let d = tempfile::tempdir().unwrap();
    fs::write(
        d.path().join("tiny.toml"),
        "[model]\nimage_channels = 1\nblocks = 1\ngrowth = 1\npem_features = 2\n\
         pem_resblocks = 1\npem_attention = 1\n[train]\nbatch_size = 2\n",
    )
    .unwrap();
    for name in ["a.vzmk", "b.vzmk"] {
        let o = run(
            &[
                "--config", "tiny.toml", "--model", name, "--seed", "9", "train", "--iterations", "3", "--synthetic",
                "2", "--log", "log.txt",
            ],
            d.path(),
        );
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    assert_eq!(fs::read(d.path().join("a.vzmk")).unwrap(), fs::read(d.path().join("b.vzmk")).unwrap());
    assert_eq!(fs::read_to_string(d.path().join("log.txt")).unwrap().lines().count(), 3);
}

#[test]
fn config_file_and_flag_precedence() {
    let d = tempfile::tempdir().unwrap();
    fs::write(d.path().join("c.toml"), "[detection]\ntau = 0.5\n").unwrap();
    let o = run(&["--config", "c.toml", "--tau", "1.5", "gen-corpus", "x", "--n", "1"], d.path());
    assert_eq!(code(&o), 2, "flag tau overrides the file and is validated");
    let o = run(&["--config", "c.toml", "gen-corpus", "x", "--n", "1", "--size", "64"], d.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
}
