use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};

use serde_json::json;

use super::backend::{MllmBackend, MllmRequest};
use super::parse::{extract_json_block, parse_refinement};
use super::prompts::REGION_INPUT_LABEL;
use super::rules::{home_component, rule_lookup, ComponentLabel, TamperMethod};
use super::RefinedRegion;
use crate::detect::{label_components, TamperMask};
use crate::error::{Error, Result};
use crate::imaging::decode_image;

/// One ground-truth edit as known to the truth-backed mock.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthOp {
    pub method: TamperMethod,
    /// `(x0, y0, x1, y1)`, upper bounds exclusive.
    pub bbox: (usize, usize, usize, usize),
}

enum Mode {
    Geometric,
    Truth(BTreeMap<String, Vec<TruthOp>>),
}

/// Deterministic local stand-in for a remote model. Always answers with
/// schema-valid JSON.
pub struct MockBackend {
    mode: Mode,
    calls: AtomicUsize,
}

/// Smallest green component taken as a drawn contour.
const MIN_CONTOUR_PIXELS: usize = 4;

impl MockBackend {
    /// Reads green contours from the attached overlay and labels them by
    /// position: bottom 15% strip → axis, right 20% strip → legend, else region.
    pub fn geometric() -> Self {
        Self {
            mode: Mode::Geometric,
            calls: AtomicUsize::new(0),
        }
    }

    /// Answers from ground truth keyed by [`MllmRequest::label`].
    pub fn truth(table: BTreeMap<String, Vec<TruthOp>>) -> Self {
        Self {
            mode: Mode::Truth(table),
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

fn fenced(v: serde_json::Value) -> String {
    format!("```json\n{}\n```", serde_json::to_string_pretty(&v).expect("json"))
}

type BBox = (usize, usize, usize, usize);

fn bbox_text(prefix: &str, b: BBox) -> String {
    format!("{prefix} at [{}, {}, {}, {}]", b.0, b.1, b.2, b.3)
}

/// Bounding boxes of pure-green components in the overlay, raster order.
fn green_boxes(png: &[u8]) -> Result<(usize, usize, Vec<BBox>)> {
    let img = decode_image(png)?;
    if img.channels() != 3 {
        return Ok((img.height(), img.width(), Vec::new()));
    }
    let bits = img
        .data()
        .chunks_exact(3)
        .map(|p| p[0] < 0.02 && p[1] > 0.98 && p[2] < 0.02)
        .collect();
    let mask = TamperMask::from_bits(img.height(), img.width(), bits)?;
    let (labels, n) = label_components(&mask, 8);
    let mut boxes = vec![(usize::MAX, usize::MAX, 0, 0, 0usize); n];
    for (i, &l) in labels.iter().enumerate() {
        if l == 0 {
            continue;
        }
        let (x, y) = (i % img.width(), i / img.width());
        let b = &mut boxes[l - 1];
        b.0 = b.0.min(x);
        b.1 = b.1.min(y);
        b.2 = b.2.max(x + 1);
        b.3 = b.3.max(y + 1);
        b.4 += 1;
    }
    let boxes = boxes
        .into_iter()
        .filter(|b| b.4 >= MIN_CONTOUR_PIXELS)
        .map(|b| (b.0, b.1, b.2, b.3))
        .collect();
    Ok((img.height(), img.width(), boxes))
}

fn classify(h: usize, w: usize, b: (usize, usize, usize, usize)) -> ComponentLabel {
    let cy = (b.1 + b.3) as f64 / 2.0;
    let cx = (b.0 + b.2) as f64 / 2.0;
    if cy >= 0.85 * h as f64 {
        ComponentLabel::Axis
    } else if cx >= 0.8 * w as f64 {
        ComponentLabel::Legend
    } else {
        ComponentLabel::Region
    }
}

fn refined_from_prompt(prompt: &str) -> Result<Vec<RefinedRegion>> {
    let start = prompt
        .find(REGION_INPUT_LABEL)
        .ok_or_else(|| Error::Parse("intent prompt lacks region input".into()))?;
    let rest = &prompt[start + REGION_INPUT_LABEL.len()..];
    let block = extract_json_block(rest).ok_or_else(|| Error::Parse("intent prompt lacks region JSON".into()))?;
    parse_refinement(&format!("```json\n{block}\n```"))
}

fn intent_entry(region: &RefinedRegion, method: TamperMethod) -> serde_json::Value {
    let component = region.tampered_component.first().copied().unwrap_or(ComponentLabel::Region);
    json!({
        "tampered_region": region.tampered_region,
        "method": method.display_name(),
        "tamper": format!("The {} was altered by {}.", component.name(), method.display_name().to_lowercase()),
        "intent": format!("To mislead readers about what the chart's {} conveys.", component.name()),
    })
}

impl MockBackend {
    fn refine(&self, request: &MllmRequest) -> Result<String> {
        let regions: Vec<serde_json::Value> = match &self.mode {
            Mode::Geometric => {
                let png = request
                    .images
                    .first()
                    .ok_or_else(|| Error::arg("refinement request carries no image"))?;
                let (h, w, boxes) = green_boxes(png)?;
                boxes
                    .into_iter()
                    .map(|b| {
                        let c = classify(h, w, b);
                        json!({
                            "tampered_region": bbox_text("outlined area", b),
                            "tampered_component": [c.name()],
                            "reason": "Highlighted area with a regular outline.",
                        })
                    })
                    .collect()
            }
            Mode::Truth(table) => {
                let ops = request.label.as_ref().and_then(|l| table.get(l));
                ops.into_iter()
                    .flatten()
                    .enumerate()
                    .map(|(k, op)| {
                        let c = home_component(op.method).unwrap_or(ComponentLabel::Region);
                        json!({
                            "tampered_region": bbox_text(&format!("op {k}"), op.bbox),
                            "tampered_component": [c.name()],
                            "reason": "Known edit.",
                        })
                    })
                    .collect()
            }
        };
        Ok(fenced(json!({ "tampered_regions": regions })))
    }

    fn explain(&self, request: &MllmRequest) -> Result<String> {
        let refined = refined_from_prompt(&request.prompt)?;
        let entries: Vec<serde_json::Value> = match &self.mode {
            Mode::Geometric => refined
                .iter()
                .map(|r| {
                    let c = r.tampered_component.first().copied().unwrap_or(ComponentLabel::Region);
                    intent_entry(r, rule_lookup(c).primary_methods[0])
                })
                .collect(),
            Mode::Truth(table) => {
                let ops = request.label.as_ref().and_then(|l| table.get(l));
                refined
                    .iter()
                    .map(|r| {
                        let method = r
                            .tampered_region
                            .strip_prefix("op ")
                            .and_then(|s| s.split_whitespace().next())
                            .and_then(|k| k.parse::<usize>().ok())
                            .and_then(|k| ops.and_then(|o| o.get(k)))
                            .map_or(TamperMethod::Others, |op| op.method);
                        intent_entry(r, method)
                    })
                    .collect()
            }
        };
        Ok(fenced(json!({ "tampering_intents": entries })))
    }
}

impl MllmBackend for MockBackend {
    fn complete(&self, request: &MllmRequest) -> Result<String> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        if request.prompt.contains("\"tampering_intents\"") {
            self.explain(request)
        } else {
            self.refine(request)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detect::TamperRegion;
    use crate::imaging::ImageTensor;
    use crate::intent::{analyze, analyze_detailed, AnalyzeConfig};

    fn square(x0: u32, y0: u32, side: u32) -> TamperRegion {
        let mut px = Vec::new();
        for y in y0..y0 + side {
            for x in x0..x0 + side {
                px.push((x, y));
            }
        }
        TamperRegion::from_pixels(0, px)
    }

    #[test]
    fn geometric_positions() {
        let img = ImageTensor::filled(100, 100, 3, 1.0);
        let mock = MockBackend::geometric();
        let cfg = AnalyzeConfig::default();
        let cases = [
            (square(40, 90, 6), TamperMethod::Mcv),
            (square(88, 30, 6), TamperMethod::Ml),
            (square(30, 30, 10), TamperMethod::Mdv),
        ];
        for (region, expected) in cases {
            let r = analyze(&mock, &img, &[region], &cfg).unwrap();
            assert_eq!(r.tampering_intents.len(), 1);
            assert_eq!(r.tampering_intents[0].method, expected);
            assert!(r.conformant());
        }
    }

    #[test]
    fn truth_mock_passes_labels_through() {
        let mut table = BTreeMap::new();
        table.insert(
            "0007".to_string(),
            vec![
                TruthOp { method: TamperMethod::Dvd, bbox: (1, 2, 3, 4) },
                TruthOp { method: TamperMethod::Hl, bbox: (5, 6, 7, 8) },
            ],
        );
        let mock = MockBackend::truth(table);
        let img = ImageTensor::filled(32, 32, 3, 1.0);
        let a = analyze_detailed(&mock, &img, &[square(4, 4, 5)], &AnalyzeConfig::default(), Some("0007")).unwrap();
        let methods: Vec<_> = a.report.tampering_intents.iter().map(|e| e.method).collect();
        assert_eq!(methods, vec![TamperMethod::Dvd, TamperMethod::Hl]);
        assert_eq!(a.refined[1].tampered_component, vec![ComponentLabel::DataLabels]);
        assert!(a.report.conformant());
        assert_eq!(mock.calls(), 2);
    }

    #[test]
    fn unknown_label_yields_empty_report() {
        let mock = MockBackend::truth(BTreeMap::new());
        let img = ImageTensor::filled(32, 32, 3, 1.0);
        let a = analyze_detailed(&mock, &img, &[square(4, 4, 5)], &AnalyzeConfig::default(), Some("x")).unwrap();
        assert!(a.report.tampering_intents.is_empty());
    }
}
