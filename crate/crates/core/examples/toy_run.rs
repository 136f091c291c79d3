//! Runs the scripted toy training and prints the probe metrics plus the
//! precision and recall of the patch detection.
//!
//! `cargo run -p chartseal --example toy_run -- [iterations] [lr] [checkpoint]`
//!
//! `SEED`, `AUG`, `BATCH`, `TAMPER` and `CLIP` override the toy settings.

use std::time::Instant;

use chartseal::detect::{detect_pipeline, DetectionConfig};
use chartseal::eval::patch_tamper;
use chartseal::inn::{realize_location_map, save_checkpoint, MapPattern};
use chartseal::toy::{patch_origin, run_toy, toy_covers, ToyRunConfig, PATCH_COLOR, PATCH_SIDE};

fn main() -> chartseal::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let env = |k: &str| std::env::var(k).ok().and_then(|v| v.parse::<f64>().ok());
    let mut cfg = ToyRunConfig::default();
    if let Some(v) = args.get(1).and_then(|s| s.parse().ok()) {
        cfg.train.iterations = v;
    }
    if let Some(v) = args.get(2).and_then(|s| s.parse().ok()) {
        cfg.train.learning_rate = v;
    }
    if let Some(v) = env("AUG") {
        cfg.train.map_augment = v;
    }
    if let Some(v) = env("BATCH") {
        cfg.train.batch_size = v as usize;
    }
    if let Some(v) = env("SEED") {
        cfg.model_seed = v as u64;
        cfg.train.seed = v as u64;
    }
    if let Some(v) = env("CLIP") {
        cfg.train.grad_clip = v;
    }
    if let Some(v) = env("TAMPER") {
        cfg.train.tamper_rate = v;
    }
    println!("{:?}", cfg.train);
    let t = Instant::now();
    let out = run_toy(&cfg, &mut std::io::sink(), None)?;
    println!("train+probe {:.1}s", t.elapsed().as_secs_f64());
    let n = cfg.train.iterations;
    for w in [n / 10, n / 20] {
        let s = out.report.smoothed(w.max(1));
        println!("smoothed/{w} {:?}", s.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>());
    }
    println!("{:?}", out.probe);

    let covers = toy_covers(cfg.charts, cfg.size, cfg.chart_seed)?;
    let pattern = MapPattern::default();
    let det = DetectionConfig::default();
    let (mut inter, mut pred, mut truth_n) = (0usize, 0usize, 0usize);
    for (i, cover) in covers.iter().enumerate() {
        let map = realize_location_map(&pattern, cfg.size, cfg.size, 3)?;
        let protected = out.model.embed(cover, &map)?.quantize8();
        let (y, x) = patch_origin(i, cfg.size);
        let (patched, truth) = patch_tamper(&protected, y, x, PATCH_SIDE, &PATCH_COLOR)?;
        let m = detect_pipeline(&out.model, &pattern, &patched, &det)?.mask;
        for (a, b) in m.bits.iter().zip(&truth.bits) {
            inter += (*a && *b) as usize;
            pred += *a as usize;
            truth_n += *b as usize;
        }
    }
    println!(
        "patch precision {:.3} recall {:.3}",
        inter as f64 / pred.max(1) as f64,
        inter as f64 / truth_n as f64
    );
    if let Some(p) = args.get(3) {
        save_checkpoint(&out.model, std::path::Path::new(p))?;
    }
    Ok(())
}
