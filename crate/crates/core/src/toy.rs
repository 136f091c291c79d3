//! Scripted desk-scale training run on synthetic charts, with the probes
//! used to judge it.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::chartgen::{render_chart, ChartSpec};
use crate::degrade::{self, Degradation};
use crate::detect::{detect_pipeline, DetectionConfig};
use crate::error::Result;
use crate::eval::patch_tamper;
use crate::imaging::ImageTensor;
use crate::inn::{realize_location_map, InnConfig, InnModel, MapPattern};
use crate::metrics::{mask_scores, psnr};
use crate::train::{train, TrainConfig, TrainReport};

pub const PATCH_SIDE: usize = 16;
pub const PATCH_COLOR: [f64; 3] = [0.8, 0.3, 0.2];
pub const PROBE_JPEG_QUALITY: u8 = 90;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyRunConfig {
    pub charts: usize,
    pub size: usize,
    pub chart_seed: u64,
    pub model_seed: u64,
    pub model: InnConfig,
    pub train: TrainConfig,
}

impl Default for ToyRunConfig {
    fn default() -> Self {
        Self {
            charts: 32,
            size: 64,
            chart_seed: 1000,
            model_seed: 7,
            model: InnConfig::toy(),
            train: TrainConfig::toy(),
        }
    }
}

/// Means over the training covers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToyProbe {
    pub psnr_db: f64,
    pub noise_percentage: f64,
    pub patch_iou: f64,
    pub jpeg_noise_percentage: f64,
    pub jpeg_patch_iou: f64,
    /// Mean absolute error of the revealed map on untampered images.
    pub map_error: f64,
}

#[derive(Debug, Clone)]
pub struct ToyOutcome {
    pub model: InnModel,
    pub report: TrainReport,
    pub probe: ToyProbe,
}

pub fn toy_covers(n: usize, size: usize, seed: u64) -> Result<Vec<ImageTensor>> {
    (0..n as u64)
        .map(|i| render_chart(&ChartSpec::random(seed + i, size, size)).map(|r| r.0))
        .collect()
}

/// Top-left corner of the probe patch for cover `i`; varies across covers
/// and stays inside a `size × size` image.
pub fn patch_origin(i: usize, size: usize) -> (usize, usize) {
    let span = size - PATCH_SIDE;
    ((2 + i * 5) % span, (2 + i * 7) % span)
}

pub fn probe(model: &InnModel, covers: &[ImageTensor], pattern: &MapPattern, det: &DetectionConfig) -> Result<ToyProbe> {
    let jpeg = Degradation::jpeg(PROBE_JPEG_QUALITY);
    let mut acc = [0.0; 6];
    for (i, cover) in covers.iter().enumerate() {
        let (h, w) = (cover.height(), cover.width());
        let map = realize_location_map(pattern, h, w, cover.channels())?;
        let protected = model.embed(cover, &map)?.quantize8();
        let noise = |img: &ImageTensor| -> Result<f64> {
            Ok(detect_pipeline(model, pattern, img, det)?.mask.count() as f64 / (h * w) as f64)
        };
        let (y, x) = patch_origin(i, h.min(w));
        let (patched, truth) = patch_tamper(&protected, y, x, PATCH_SIDE, &PATCH_COLOR)?;
        let iou = |img: &ImageTensor| -> Result<f64> {
            Ok(mask_scores(&detect_pipeline(model, pattern, img, det)?.mask, &truth)?.iou)
        };
        let revealed = model.reveal(&protected)?.map;
        let err = revealed.data().iter().zip(map.data()).map(|(a, b)| (a - b).abs()).sum::<f64>()
            / map.data().len() as f64;
        let vals = [
            psnr(&protected, cover)?,
            noise(&protected)?,
            iou(&patched)?,
            noise(&degrade::apply(&jpeg, &protected)?)?,
            iou(&degrade::apply(&jpeg, &patched)?)?,
            err,
        ];
        for (a, v) in acc.iter_mut().zip(vals) {
            *a += v;
        }
    }
    let n = covers.len().max(1) as f64;
    let [psnr_db, noise_percentage, patch_iou, jpeg_noise_percentage, jpeg_patch_iou, map_error] = acc.map(|a| a / n);
    Ok(ToyProbe {
        psnr_db,
        noise_percentage,
        patch_iou,
        jpeg_noise_percentage,
        jpeg_patch_iou,
        map_error,
    })
}

/// Trains from scratch, then probes with the default detection settings.
pub fn run_toy(cfg: &ToyRunConfig, log: &mut dyn Write, checkpoint_dir: Option<&Path>) -> Result<ToyOutcome> {
    let covers = toy_covers(cfg.charts, cfg.size, cfg.chart_seed)?;
    let pattern = MapPattern::default();
    let mut model = InnModel::new(cfg.model, cfg.model_seed)?;
    let report = train(&mut model, &covers, &pattern, &cfg.train, log, checkpoint_dir)?;
    let probe = probe(&model, &covers, &pattern, &DetectionConfig::default())?;
    Ok(ToyOutcome { model, report, probe })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn patch_origins_fit() {
        for size in [32, 64, 128] {
            for i in 0..64 {
                let (y, x) = patch_origin(i, size);
                assert!(y + PATCH_SIDE <= size && x + PATCH_SIDE <= size);
            }
        }
    }

    #[test]
    fn covers_deterministic() {
        assert_eq!(toy_covers(2, 64, 5).unwrap(), toy_covers(2, 64, 5).unwrap());
    }
}
