use std::fs;
use std::path::{Path, PathBuf};

use chartseal::chartgen::{apply_tamper, gen_corpus, load_manifest, write_corpus, CorpusConfig, TamperOp};
use chartseal::degrade::Degradation;
use chartseal::detect::{detect_pipeline, extract_regions, regions_to_json, TamperMask, TamperRegion};
use chartseal::error::{Error, Result};
use chartseal::eval::{evaluate, load_items, EvalConfig};
use chartseal::imaging::{encode_png, load_image, render_overlay, ImageTensor, OverlayStyle};
use chartseal::inn::{load_checkpoint, realize_location_map, save_checkpoint, InnModel};
use chartseal::intent::{analyze_batch, AnalyzeConfig, AnalyzeJob, HttpBackend, MllmBackend, MockBackend};
use chartseal::metrics::psnr;
use chartseal::toy::toy_covers;
use chartseal::train::train;

use crate::config::CliConfig;
use crate::{Backend, Command};

/// Returns the process exit code for a completed command.
pub fn run(command: Command, cfg: &CliConfig) -> Result<u8> {
    match command {
        Command::Train {
            covers,
            synthetic,
            size,
            iterations,
            learning_rate,
            checkpoint_dir,
            checkpoint_every,
            log,
        } => {
            let mut tc = cfg.train.clone();
            tc.seed = cfg.seed;
            if let Some(v) = iterations {
                tc.iterations = v;
            }
            if let Some(v) = learning_rate {
                tc.learning_rate = v;
            }
            if let Some(v) = checkpoint_every {
                tc.checkpoint_every = v;
            }
            let covers = match covers {
                Some(dir) => load_covers(&dir, cfg.model.image_channels)?,
                None => toy_covers(synthetic, size, cfg.seed)?
                    .into_iter()
                    .map(|c| fit_channels(&c, cfg.model.image_channels))
                    .collect(),
            };
            if let Some(d) = &checkpoint_dir {
                fs::create_dir_all(d).map_err(|e| io_err(d, e))?;
            }
            let mut model = InnModel::new(cfg.model, cfg.seed)?;
            let mut sink: Box<dyn std::io::Write> = match &log {
                Some(p) => Box::new(fs::File::create(p).map_err(|e| io_err(p, e))?),
                None => Box::new(std::io::sink()),
            };
            let report = train(&mut model, &covers, &cfg.map_pattern, &tc, &mut sink, checkpoint_dir.as_deref())?;
            save_checkpoint(&model, &cfg.model_path)?;
            let last = report.losses.last().map_or(f64::NAN, |l| l.total);
            println!("iterations={} final_loss={last:.6} model={}", report.losses.len(), cfg.model_path.display());
            Ok(0)
        }
        Command::Protect { input, output } => {
            let model = load_model(&cfg.model_path)?;
            let img = fit_channels(&load_image(&input)?, model.config().image_channels);
            let padded = img.pad_to_even();
            let map = realize_location_map(&cfg.map_pattern, padded.height(), padded.width(), padded.channels())?;
            let protected = model
                .embed(&padded, &map)?
                .quantize8()
                .crop(img.height(), img.width())?;
            write_atomic(&output, &encode_png(&protected))?;
            println!("psnr_db={}", fmt_db(psnr(&protected, &img)?));
            Ok(0)
        }
        Command::Tamper { input, output, ops, mask } => {
            let text = fs::read_to_string(&ops).map_err(|e| io_err(&ops, e))?;
            let ops: Vec<TamperOp> =
                serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", ops.display())))?;
            let (tampered, m) = apply_tamper(&load_image(&input)?, &ops)?;
            write_atomic(&output, &encode_png(&tampered))?;
            if let Some(p) = mask {
                write_atomic(&p, &m.encode_png())?;
            }
            println!("changed_pixels={}", m.count());
            Ok(0)
        }
        Command::Detect { input, spotlight } => {
            let model = load_model(&cfg.model_path)?;
            let img = fit_channels(&load_image(&input)?, model.config().image_channels);
            let (mask, regions) = detect_regions(&model, &img, cfg)?;
            let style = if spotlight { OverlayStyle::spotlight() } else { OverlayStyle::default() };
            let overlay = render_overlay(&img, &regions, &style)?;
            write_atomic(&output_path(cfg, &input, "mask.png")?, &mask.encode_png())?;
            write_atomic(&output_path(cfg, &input, "regions.json")?, regions_to_json(&regions).as_bytes())?;
            write_atomic(&output_path(cfg, &input, "overlay.png")?, &encode_png(&overlay))?;
            println!("regions={}", regions.len());
            Ok(if regions.is_empty() { 0 } else { 1 })
        }
        Command::Analyze {
            inputs,
            backend,
            corpus,
            regions,
        } => analyze(cfg, inputs, backend, corpus, regions),
        Command::GenCorpus {
            output,
            n,
            ops_per_item,
            kinds,
            size,
        } => {
            let cc = CorpusConfig {
                n,
                kinds,
                ops_per_item,
                seed: cfg.seed,
                size: (size, size),
            };
            write_corpus(&gen_corpus(&cc)?, &output)?;
            println!("items={n} dir={}", output.display());
            Ok(0)
        }
        Command::Evaluate { corpus, out, jpeg } => {
            let model = load_model(&cfg.model_path)?;
            let items = load_items(&corpus)?;
            let ec = EvalConfig {
                detection: cfg.detection,
                map_pattern: cfg.map_pattern.clone(),
                degradation: jpeg.map(Degradation::jpeg),
                jobs: cfg.jobs,
            };
            let report = evaluate(&model, &items, &ec)?;
            let csv_path = out.unwrap_or_else(|| cfg.output_dir.join("evaluation.csv"));
            let item_dir = csv_path.parent().unwrap_or(Path::new(".")).join("items");
            fs::create_dir_all(&item_dir).map_err(|e| io_err(&item_dir, e))?;
            for s in &report.items {
                write_atomic(&item_dir.join(format!("{}.json", s.id)), s.to_json().as_bytes())?;
            }
            write_atomic(&csv_path, report.to_csv().as_bytes())?;
            println!("items={} csv={}", report.items.len(), csv_path.display());
            Ok(0)
        }
    }
}

fn analyze(
    cfg: &CliConfig,
    inputs: Vec<PathBuf>,
    backend: Backend,
    corpus: Option<PathBuf>,
    regions: Option<PathBuf>,
) -> Result<u8> {
    let manifest = corpus.as_deref().map(load_manifest).transpose()?;
    let backend: Box<dyn MllmBackend> = match backend {
        Backend::Http => Box::new(HttpBackend::new(cfg.backend.clone())?),
        Backend::Geometric => Box::new(MockBackend::geometric()),
        Backend::Truth => {
            let m = manifest
                .as_ref()
                .ok_or_else(|| Error::Argument("the truth backend needs --corpus".into()))?;
            Box::new(MockBackend::truth(m.truth_table()))
        }
    };
    let mut jobs = Vec::new();
    let mut names = Vec::new();
    if let (Some(root), Some(m)) = (&corpus, &manifest) {
        for item in &m.items {
            let mask = item.load_mask(root)?;
            jobs.push(AnalyzeJob {
                suspect: item.load_tampered(root)?,
                regions: extract_regions(&mask, &cfg.detection)?,
                label: Some(item.id.clone()),
            });
            names.push(PathBuf::from(&item.id));
        }
    } else {
        if inputs.is_empty() {
            return Err(Error::Argument("no input images".into()));
        }
        if regions.is_some() && inputs.len() != 1 {
            return Err(Error::Argument("--regions applies to exactly one input".into()));
        }
        let model = if regions.is_none() { Some(load_model(&cfg.model_path)?) } else { None };
        for input in &inputs {
            let img = load_image(input)?;
            let found = match (&regions, &model) {
                (Some(p), _) => {
                    let text = fs::read_to_string(p).map_err(|e| io_err(p, e))?;
                    let rs: Vec<TamperRegion> =
                        serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", p.display())))?;
                    rs
                }
                (None, Some(m)) => detect_regions(m, &fit_channels(&img, m.config().image_channels), cfg)?.1,
                (None, None) => unreachable!("model loaded when regions are absent"),
            };
            jobs.push(AnalyzeJob {
                suspect: img.to_rgb(),
                regions: found,
                label: stem(input),
            });
            names.push(input.clone());
        }
    }
    let ac = AnalyzeConfig {
        max_in_flight: cfg.backend.max_in_flight.max(1),
        ..AnalyzeConfig::default()
    };
    let results = analyze_batch(backend.as_ref(), &jobs, &ac);
    let mut failed = 0;
    for (name, r) in names.iter().zip(results) {
        match r {
            Ok(a) => {
                let out = output_path(cfg, name, "intent.json")?;
                write_atomic(&out, a.report.to_json().as_bytes())?;
                println!("{} entries={} conformant={}", out.display(), a.report.tampering_intents.len(), a.report.conformant());
            }
            Err(e) => {
                eprintln!("error: {}: {e}", name.display());
                failed += 1;
            }
        }
    }
    Ok(if failed == 0 { 0 } else { 2 })
}

/// Detection on the even-padded image, cropped back to the input size.
fn detect_regions(model: &InnModel, img: &ImageTensor, cfg: &CliConfig) -> Result<(TamperMask, Vec<TamperRegion>)> {
    let det = detect_pipeline(model, &cfg.map_pattern, &img.pad_to_even(), &cfg.detection)?;
    let mask = det.mask.crop(img.height(), img.width())?;
    let regions = extract_regions(&mask, &cfg.detection)?;
    Ok((mask, regions))
}

fn load_model(path: &Path) -> Result<InnModel> {
    if !path.exists() {
        return Err(Error::Argument(format!("model checkpoint not found: {}", path.display())));
    }
    load_checkpoint(path)
}

fn load_covers(dir: &Path, channels: usize) -> Result<Vec<ImageTensor>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| io_err(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| chartseal::imaging::FileFormat::from_path(p).is_some())
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Argument(format!("no PNG or JPEG covers in {}", dir.display())));
    }
    paths
        .iter()
        .map(|p| Ok(fit_channels(&load_image(p)?, channels).pad_to_even()))
        .collect()
}

fn fit_channels(img: &ImageTensor, channels: usize) -> ImageTensor {
    match (img.channels(), channels) {
        (a, b) if a == b => img.clone(),
        (_, 3) => img.to_rgb(),
        _ => {
            let data = img
                .data()
                .chunks_exact(img.channels())
                .map(|p| p.iter().sum::<f64>() / p.len() as f64)
                .collect();
            ImageTensor::new(img.height(), img.width(), 1, data).expect("same pixel count")
        }
    }
}

fn stem(path: &Path) -> Option<String> {
    path.file_stem().map(|s| s.to_string_lossy().into_owned())
}

/// `<output_dir>/<stem>.<suffix>`.
fn output_path(cfg: &CliConfig, input: &Path, suffix: &str) -> Result<PathBuf> {
    fs::create_dir_all(&cfg.output_dir).map_err(|e| io_err(&cfg.output_dir, e))?;
    let s = stem(input).ok_or_else(|| Error::Argument(format!("no file name in {}", input.display())))?;
    Ok(cfg.output_dir.join(format!("{s}.{suffix}")))
}

/// Writes through a sibling temporary file and renames it into place.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| io_err(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| io_err(path, e))
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

fn fmt_db(v: f64) -> String {
    if v.is_infinite() {
        "inf".into()
    } else {
        format!("{v:.4}")
    }
}
