//! Image fidelity and mask accuracy measures.

use serde::{Deserialize, Serialize};

use crate::detect::TamperMask;
use crate::error::{Error, Result};
use crate::imaging::ImageTensor;

pub const SSIM_WINDOW: usize = 8;
pub const SSIM_C1: f64 = 1e-4;
pub const SSIM_C2: f64 = 9e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FidelityReport {
    /// `f64::INFINITY` for identical images.
    #[serde(serialize_with = "ser_db")]
    pub psnr: f64,
    pub ssim: f64,
    pub rmse: f64,
    /// Always `None`; kept so reports line up with three-metric tables.
    pub lpips: Option<f64>,
}

fn ser_db<S: serde::Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_infinite() {
        s.serialize_str("inf")
    } else {
        s.serialize_f64(*v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskReport {
    pub iou: f64,
    pub f1: f64,
    pub noise_percentage: f64,
}

fn check(a: &ImageTensor, b: &ImageTensor) -> Result<()> {
    if !a.same_shape(b) {
        return Err(Error::shape(format!(
            "{}x{}x{} vs {}x{}x{}",
            a.height(),
            a.width(),
            a.channels(),
            b.height(),
            b.width(),
            b.channels()
        )));
    }
    Ok(())
}

fn mse(a: &ImageTensor, b: &ImageTensor) -> f64 {
    let n = a.data().len().max(1) as f64;
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / n
}

/// Peak 1.0; infinite when the images are identical.
pub fn psnr(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    check(a, b)?;
    let m = mse(a, b);
    Ok(if m == 0.0 { f64::INFINITY } else { 10.0 * (1.0 / m).log10() })
}

pub fn rmse_map(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    check(a, b)?;
    Ok(mse(a, b).sqrt())
}

/// Mean SSIM over non-overlapping 8×8 windows and all channels. Partial
/// windows at the right and bottom edges are ignored.
pub fn ssim(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    check(a, b)?;
    let (wy, wx) = (a.height() / SSIM_WINDOW, a.width() / SSIM_WINDOW);
    if wy == 0 || wx == 0 {
        return Err(Error::shape("ssim needs at least one full 8x8 window"));
    }
    let n = (SSIM_WINDOW * SSIM_WINDOW) as f64;
    let mut total = 0.0;
    for c in 0..a.channels() {
        for by in 0..wy {
            for bx in 0..wx {
                let (mut sa, mut sb) = (0.0, 0.0);
                for y in by * SSIM_WINDOW..(by + 1) * SSIM_WINDOW {
                    for x in bx * SSIM_WINDOW..(bx + 1) * SSIM_WINDOW {
                        sa += a.get(y, x, c);
                        sb += b.get(y, x, c);
                    }
                }
                let (ma, mb) = (sa / n, sb / n);
                let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
                for y in by * SSIM_WINDOW..(by + 1) * SSIM_WINDOW {
                    for x in bx * SSIM_WINDOW..(bx + 1) * SSIM_WINDOW {
                        let (da, db) = (a.get(y, x, c) - ma, b.get(y, x, c) - mb);
                        va += da * da;
                        vb += db * db;
                        cov += da * db;
                    }
                }
                let (va, vb, cov) = (va / n, vb / n, cov / n);
                total += ((2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2))
                    / ((ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2));
            }
        }
    }
    Ok(total / (wy * wx * a.channels()) as f64)
}

pub fn fidelity(a: &ImageTensor, b: &ImageTensor) -> Result<FidelityReport> {
    Ok(FidelityReport {
        psnr: psnr(a, b)?,
        ssim: ssim(a, b)?,
        rmse: rmse_map(a, b)?,
        lpips: None,
    })
}

/// IoU and F1 are 1 when both masks are empty.
pub fn mask_scores(pred: &TamperMask, truth: &TamperMask) -> Result<MaskReport> {
    if !pred.same_shape(truth) {
        return Err(Error::shape("mask shapes differ"));
    }
    let (mut inter, mut p, mut t) = (0usize, 0usize, 0usize);
    for (a, b) in pred.bits.iter().zip(&truth.bits) {
        p += *a as usize;
        t += *b as usize;
        inter += (*a && *b) as usize;
    }
    let union = p + t - inter;
    let (iou, f1) = if union == 0 {
        (1.0, 1.0)
    } else {
        (inter as f64 / union as f64, 2.0 * inter as f64 / (p + t) as f64)
    };
    Ok(MaskReport {
        iou,
        f1,
        noise_percentage: p as f64 / (pred.height * pred.width).max(1) as f64,
    })
}

/// Mean with a 95% normal-approximation confidence interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
    pub n: usize,
}

pub fn summarize(values: &[f64]) -> Option<Summary> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let half = if values.len() > 1 {
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        1.96 * (var / n).sqrt()
    } else {
        0.0
    };
    Some(Summary {
        mean,
        lower: mean - half,
        upper: mean + half,
        n: values.len(),
    })
}
