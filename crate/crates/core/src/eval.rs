//! Corpus evaluation: protect, replay the tamper, detect, score.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::chartgen::{load_manifest, Corpus};
use crate::degrade::{self, Degradation};
use crate::detect::{detect_pipeline, DetectionConfig, TamperMask};
use crate::error::{Error, Result};
use crate::imaging::ImageTensor;
use crate::inn::{realize_location_map, InnModel, MapPattern};
use crate::metrics::{mask_scores, psnr, rmse_map, summarize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub detection: DetectionConfig,
    pub map_pattern: MapPattern,
    /// Channel between protection and detection; `None` is lossless.
    pub degradation: Option<Degradation>,
    pub jobs: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            detection: DetectionConfig::default(),
            map_pattern: MapPattern::default(),
            degradation: None,
            jobs: 1,
        }
    }
}

/// One clean chart with its tampered version and exact truth mask.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalItem {
    pub id: String,
    pub clean: ImageTensor,
    pub tampered: ImageTensor,
    pub truth: TamperMask,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemScores {
    pub id: String,
    pub psnr_db: f64,
    pub noise_percentage: f64,
    pub rmse: f64,
    /// Present only for tampered corpora.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iou: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub f1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub tampered: bool,
    pub items: Vec<ItemScores>,
}

/// The protected image with tampered pixels pasted in where `truth` is set.
pub fn replay_tamper(protected: &ImageTensor, tampered: &ImageTensor, truth: &TamperMask) -> Result<ImageTensor> {
    let tampered = if tampered.channels() == protected.channels() {
        tampered.clone()
    } else {
        tampered.to_rgb()
    };
    protected.check_same_shape(&tampered)?;
    if truth.height != protected.height() || truth.width != protected.width() {
        return Err(Error::shape("truth mask does not match image size"));
    }
    let mut out = protected.clone();
    for y in 0..out.height() {
        for x in 0..out.width() {
            if truth.get(y, x) {
                out.set_pixel(y, x, tampered.pixel(y, x));
            }
        }
    }
    Ok(out)
}

/// Square patch of `color` with its top-left corner at `(y, x)`.
pub fn patch_tamper(
    img: &ImageTensor,
    y: usize,
    x: usize,
    side: usize,
    color: &[f64],
) -> Result<(ImageTensor, TamperMask)> {
    if y + side > img.height() || x + side > img.width() {
        return Err(Error::geometry(format!(
            "{side}x{side} patch at ({y}, {x}) outside {}x{} image",
            img.height(),
            img.width()
        )));
    }
    let mut out = img.clone();
    let mut mask = TamperMask::empty(img.height(), img.width());
    let px: Vec<f64> = if img.channels() == 1 {
        vec![color.iter().sum::<f64>() / color.len() as f64]
    } else {
        color.to_vec()
    };
    for yy in y..y + side {
        for xx in x..x + side {
            out.set_pixel(yy, xx, &px);
            mask.set(yy, xx, true);
        }
    }
    Ok((out, mask))
}

fn channel(received: &ImageTensor, cfg: &EvalConfig) -> Result<ImageTensor> {
    match &cfg.degradation {
        Some(d) => degrade::apply(d, received),
        None => Ok(received.clone()),
    }
}

fn score_item(model: &InnModel, item: &EvalItem, tampered: bool, cfg: &EvalConfig) -> Result<ItemScores> {
    let channels = model.config().image_channels;
    let clean = if channels == 1 { item.clean.clone() } else { item.clean.to_rgb() };
    let map = realize_location_map(&cfg.map_pattern, clean.height(), clean.width(), channels)?;
    let protected = model.embed(&clean, &map)?.quantize8();
    let psnr_db = psnr(&protected, &clean)?;

    let received = channel(&protected, cfg)?;
    let clean_run = detect_pipeline(model, &cfg.map_pattern, &received, &cfg.detection)?;
    let noise_percentage = clean_run.mask.count() as f64 / (clean.height() * clean.width()) as f64;
    let rmse = rmse_map(&map, &clean_run.revealed.map)?;

    let (iou, f1) = if tampered {
        let suspect = channel(&replay_tamper(&protected, &item.tampered, &item.truth)?, cfg)?;
        let run = detect_pipeline(model, &cfg.map_pattern, &suspect, &cfg.detection)?;
        let s = mask_scores(&run.mask, &item.truth)?;
        (Some(s.iou), Some(s.f1))
    } else {
        (None, None)
    };
    Ok(ItemScores {
        id: item.id.clone(),
        psnr_db,
        noise_percentage,
        rmse,
        iou,
        f1,
    })
}

/// Scores every item; output order follows input order for any `cfg.jobs`.
pub fn evaluate(model: &InnModel, items: &[EvalItem], cfg: &EvalConfig) -> Result<EvalReport> {
    if items.is_empty() {
        return Err(Error::arg("corpus has no items"));
    }
    cfg.detection.validate()?;
    if let Some(d) = &cfg.degradation {
        d.validate()?;
    }
    let tampered = items.iter().any(|i| !i.truth.is_empty());
    let workers = cfg.jobs.clamp(1, items.len());
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<ItemScores>>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(item) = items.get(i) else { break };
                let r = score_item(model, item, tampered, cfg);
                slots.lock().expect("no worker panics while holding the lock")[i] = Some(r);
            });
        }
    });
    let items = slots
        .into_inner()
        .expect("workers joined")
        .into_iter()
        .map(|r| r.expect("every item ran"))
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport { tampered, items })
}

pub fn items_from_corpus(corpus: &Corpus) -> Vec<EvalItem> {
    corpus
        .items
        .iter()
        .map(|c| EvalItem {
            id: c.id.clone(),
            clean: c.clean.clone(),
            tampered: c.tampered.clone(),
            truth: c.truth_mask.clone(),
        })
        .collect()
}

/// Loads every item listed in `<root>/manifest.json`.
pub fn load_items(root: &Path) -> Result<Vec<EvalItem>> {
    load_manifest(root)?
        .items
        .iter()
        .map(|m| {
            Ok(EvalItem {
                id: m.id.clone(),
                clean: m.load_clean(root)?,
                tampered: m.load_tampered(root)?,
                truth: m.load_mask(root)?,
            })
        })
        .collect()
}

fn fmt_value(v: f64) -> String {
    if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v:.6}")
    }
}

impl EvalReport {
    fn columns(&self) -> Vec<(&'static str, Vec<f64>)> {
        let col = |f: fn(&ItemScores) -> f64| self.items.iter().map(f).collect::<Vec<_>>();
        let mut cols = vec![
            ("psnr_db", col(|i| i.psnr_db)),
            ("noise_percentage", col(|i| i.noise_percentage)),
            ("rmse", col(|i| i.rmse)),
        ];
        if self.tampered {
            cols.push(("iou", col(|i| i.iou.unwrap_or(f64::NAN))));
            cols.push(("f1", col(|i| i.f1.unwrap_or(f64::NAN))));
        }
        cols
    }

    /// Per-item rows followed by `mean`, `ci95_lower` and `ci95_upper` rows.
    pub fn to_csv(&self) -> String {
        let cols = self.columns();
        let mut out = String::from("id");
        for (name, _) in &cols {
            out.push(',');
            out.push_str(name);
        }
        out.push('\n');
        for (row, item) in self.items.iter().enumerate() {
            out.push_str(&item.id);
            for (_, values) in &cols {
                let _ = write!(out, ",{}", fmt_value(values[row]));
            }
            out.push('\n');
        }
        let sums: Vec<_> = cols.iter().map(|(_, v)| summarize(v).expect("report has items")).collect();
        for (label, pick) in [
            ("mean", (|s| s.mean) as fn(&crate::metrics::Summary) -> f64),
            ("ci95_lower", |s| s.lower),
            ("ci95_upper", |s| s.upper),
        ] {
            out.push_str(label);
            for s in &sums {
                let _ = write!(out, ",{}", fmt_value(pick(s)));
            }
            out.push('\n');
        }
        out
    }

    pub fn mean(&self, column: &str) -> Option<f64> {
        self.columns()
            .into_iter()
            .find(|(n, _)| *n == column)
            .and_then(|(_, v)| summarize(&v))
            .map(|s| s.mean)
    }
}

impl ItemScores {
    pub fn to_json(&self) -> String {
        let mut v = serde_json::to_value(self).expect("scores serialize");
        if self.psnr_db.is_infinite() {
            v["psnr_db"] = "inf".into();
        }
        serde_json::to_string_pretty(&v).expect("scores serialize")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chartgen::{gen_corpus, CorpusConfig};
    use crate::inn::InnConfig;

    fn model() -> InnModel {
        InnModel::zeroed(InnConfig::toy()).unwrap()
    }

    fn items(ops: usize, n: usize) -> Vec<EvalItem> {
        let cfg = CorpusConfig {
            n,
            ops_per_item: ops,
            size: (64, 64),
            seed: 4,
            ..CorpusConfig::default()
        };
        items_from_corpus(&gen_corpus(&cfg).unwrap())
    }

    #[test]
    fn empty_corpus_is_argument_error() {
        assert!(matches!(
            evaluate(&model(), &[], &EvalConfig::default()),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn untampered_corpus_omits_iou() {
        let r = evaluate(&model(), &items(0, 2), &EvalConfig::default()).unwrap();
        let csv = r.to_csv();
        let header = csv.lines().next().unwrap();
        assert_eq!(header, "id,psnr_db,noise_percentage,rmse");
        assert_eq!(csv.lines().count(), 1 + 2 + 3);
        assert!(r.items.iter().all(|i| i.iou.is_none()));
        assert!(!r.items[0].to_json().contains("iou"));
    }

    #[test]
    fn tampered_csv_is_deterministic_across_jobs() {
        let its = items(1, 3);
        let one = evaluate(&model(), &its, &EvalConfig::default()).unwrap();
        let three = evaluate(&model(), &its, &EvalConfig { jobs: 3, ..EvalConfig::default() }).unwrap();
        assert_eq!(one.to_csv(), three.to_csv());
        assert!(one.to_csv().starts_with("id,psnr_db,noise_percentage,rmse,iou,f1\n"));
        assert!(one.items.iter().all(|i| i.iou.is_some()));
    }

    #[test]
    fn replay_pastes_only_masked_pixels() {
        let protected = ImageTensor::filled(4, 4, 3, 0.5);
        let tampered = ImageTensor::filled(4, 4, 3, 0.0);
        let mut m = TamperMask::empty(4, 4);
        m.set(1, 2, true);
        let out = replay_tamper(&protected, &tampered, &m).unwrap();
        assert_eq!(out.pixel(1, 2), &[0.0; 3]);
        assert_eq!(out.pixel(2, 1), &[0.5; 3]);
    }

    #[test]
    fn patch_geometry() {
        let img = ImageTensor::filled(32, 32, 3, 1.0);
        let (_, m) = patch_tamper(&img, 4, 8, 16, &[0.8, 0.3, 0.2]).unwrap();
        assert_eq!(m.count(), 256);
        assert!(matches!(patch_tamper(&img, 20, 0, 16, &[0.0; 3]), Err(Error::Geometry(_))));
    }

    #[test]
    fn summary_rows() {
        let r = EvalReport {
            tampered: false,
            items: vec![
                ItemScores { id: "a".into(), psnr_db: 30.0, noise_percentage: 0.0, rmse: 0.1, iou: None, f1: None },
                ItemScores { id: "b".into(), psnr_db: 32.0, noise_percentage: 0.02, rmse: 0.3, iou: None, f1: None },
            ],
        };
        let csv = r.to_csv();
        assert!(csv.contains("\nmean,31.000000,0.010000,0.200000\n"));
        assert_eq!(r.mean("rmse"), Some(0.2));
        assert_eq!(r.mean("iou"), None);
    }
}
