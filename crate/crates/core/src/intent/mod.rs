//! Two-agent explanation of detected regions: a refinement agent that
//! filters regions and names components, and an intent agent that picks a
//! tampering method constrained by the component-to-method rules.

mod backend;
mod mock;
mod parse;
mod prompts;
mod rules;

use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

pub use backend::{HttpBackend, HttpBackendConfig, MllmBackend, MllmRequest, API_TOKEN_ENV};
pub use mock::{MockBackend, TruthOp};
pub use parse::{extract_json_block, parse_and_validate, parse_intent, parse_refinement, Parsed, Schema};
pub use prompts::{build_intent_prompt, build_refinement_prompt, REGION_INPUT_LABEL};
pub use rules::{home_component, rule_lookup, ComponentLabel, MappingRule, TamperMethod};

use crate::detect::TamperRegion;
use crate::error::{Error, Result};
use crate::imaging::{encode_png, render_overlay, ImageTensor, OverlayStyle};

/// Output record of the refinement agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinedRegion {
    pub tampered_region: String,
    pub tampered_component: Vec<ComponentLabel>,
    pub reason: String,
}

fn is_false(b: &bool) -> bool {
    !*b
}

/// One explained region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntentEntry {
    pub tampered_region: String,
    pub method: TamperMethod,
    pub tamper: String,
    pub intent: String,
    /// Set when `method` is not reachable from the region's components.
    #[serde(default, skip_serializing_if = "is_false")]
    pub non_conformant: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IntentReport {
    pub tampering_intents: Vec<IntentEntry>,
}

impl IntentReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn conformant(&self) -> bool {
        self.tampering_intents.iter().all(|e| !e.non_conformant)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalyzeConfig {
    /// Placeholder naming the attached overlay inside prompts.
    pub image_ref: String,
    pub overlay: OverlayStyle,
    /// Concurrent backend requests in batch mode.
    pub max_in_flight: usize,
}

impl Default for AnalyzeConfig {
    fn default() -> Self {
        Self {
            image_ref: "<image 1>".into(),
            overlay: OverlayStyle::default(),
            max_in_flight: 4,
        }
    }
}

/// Both agents' outputs for one image.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Analysis {
    pub refined: Vec<RefinedRegion>,
    pub report: IntentReport,
}

fn ask(backend: &dyn MllmBackend, request: MllmRequest, schema: Schema) -> Result<Parsed> {
    let first = backend.complete(&request)?;
    let err = match parse_and_validate(&first, schema) {
        Ok(p) => return Ok(p),
        Err(e @ (Error::Parse(_) | Error::Validation { .. })) => e,
        Err(e) => return Err(e),
    };
    let retry = MllmRequest {
        prompt: format!(
            "{}\n\nYour previous response could not be used: {err}. \
             Answer again using exactly the JSON format above.",
            request.prompt
        ),
        ..request
    };
    let second = backend.complete(&retry)?;
    parse_and_validate(&second, schema)
        .map_err(|e| Error::Analysis(format!("response invalid after one re-ask: {e}")))
}

/// Flags entries whose method the rule table does not allow for the
/// components of the matching refined region (matched by description, then
/// by position).
fn flag_non_conformant(refined: &[RefinedRegion], report: &mut IntentReport) {
    for (i, entry) in report.tampering_intents.iter_mut().enumerate() {
        let region = refined
            .iter()
            .find(|r| r.tampered_region == entry.tampered_region)
            .or_else(|| refined.get(i));
        let allowed = region.is_some_and(|r| {
            r.tampered_component
                .iter()
                .any(|c| rule_lookup(*c).allows(entry.method))
        });
        entry.non_conformant = !allowed;
    }
}

/// Runs both agents on one suspect image. `label` is passed through to the
/// backend as request metadata.
pub fn analyze_detailed(
    backend: &dyn MllmBackend,
    suspect: &ImageTensor,
    regions: &[TamperRegion],
    cfg: &AnalyzeConfig,
    label: Option<&str>,
) -> Result<Analysis> {
    if regions.is_empty() {
        return Ok(Analysis::default());
    }
    let overlay = encode_png(&render_overlay(suspect, regions, &cfg.overlay)?);
    let request = |prompt: String| MllmRequest {
        prompt,
        images: vec![overlay.clone()],
        label: label.map(str::to_owned),
    };
    let refined = match ask(backend, request(build_refinement_prompt(&cfg.image_ref)), Schema::Refinement)? {
        Parsed::Refinement(r) => r,
        Parsed::Intent(_) => unreachable!("schema fixed by caller"),
    };
    if refined.is_empty() {
        return Ok(Analysis::default());
    }
    let prompt = build_intent_prompt(&cfg.image_ref, &refined)?;
    let mut report = match ask(backend, request(prompt), Schema::Intent)? {
        Parsed::Intent(r) => r,
        Parsed::Refinement(_) => unreachable!("schema fixed by caller"),
    };
    flag_non_conformant(&refined, &mut report);
    Ok(Analysis { refined, report })
}

pub fn analyze(
    backend: &dyn MllmBackend,
    suspect: &ImageTensor,
    regions: &[TamperRegion],
    cfg: &AnalyzeConfig,
) -> Result<IntentReport> {
    analyze_detailed(backend, suspect, regions, cfg, None).map(|a| a.report)
}

/// One image queued for batch analysis.
#[derive(Debug, Clone)]
pub struct AnalyzeJob {
    pub suspect: ImageTensor,
    pub regions: Vec<TamperRegion>,
    pub label: Option<String>,
}

/// Analyzes many images with at most `cfg.max_in_flight` in progress;
/// results come back in input order.
pub fn analyze_batch(backend: &dyn MllmBackend, jobs: &[AnalyzeJob], cfg: &AnalyzeConfig) -> Vec<Result<Analysis>> {
    let workers = cfg.max_in_flight.clamp(1, jobs.len().max(1));
    let next = AtomicUsize::new(0);
    let mut slots: Vec<Option<Result<Analysis>>> = (0..jobs.len()).map(|_| None).collect();
    let results = std::sync::Mutex::new(&mut slots);
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(job) = jobs.get(i) else { break };
                let r = analyze_detailed(backend, &job.suspect, &job.regions, cfg, job.label.as_deref());
                results.lock().expect("no worker panics while holding the lock")[i] = Some(r);
            });
        }
    });
    slots.into_iter().map(|r| r.expect("every job ran")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Mutex;

    struct Scripted {
        replies: Mutex<Vec<String>>,
        prompts: Mutex<Vec<String>>,
    }

    impl Scripted {
        fn new(replies: &[&str]) -> Self {
            Self {
                replies: Mutex::new(replies.iter().rev().map(|s| s.to_string()).collect()),
                prompts: Mutex::new(Vec::new()),
            }
        }
    }

    impl MllmBackend for Scripted {
        fn complete(&self, req: &MllmRequest) -> Result<String> {
            self.prompts.lock().unwrap().push(req.prompt.clone());
            self.replies
                .lock()
                .unwrap()
                .pop()
                .ok_or_else(|| Error::Transport("script exhausted".into()))
        }
    }

    const REFINED_AXIS: &str = r#"```json
{"tampered_regions": [{"tampered_region": "x ticks", "tampered_component": ["axis"], "reason": "edited"}]}
```"#;

    fn regions() -> Vec<TamperRegion> {
        vec![TamperRegion::from_pixels(0, vec![(1, 1), (2, 1), (1, 2), (2, 2)])]
    }

    fn image() -> ImageTensor {
        ImageTensor::filled(8, 8, 3, 1.0)
    }

    #[test]
    fn empty_regions_make_no_calls() {
        let mock = MockBackend::geometric();
        let r = analyze(&mock, &image(), &[], &AnalyzeConfig::default()).unwrap();
        assert!(r.tampering_intents.is_empty());
        assert_eq!(mock.calls(), 0);
    }

    #[test]
    fn method_outside_rules_is_flagged() {
        let intent = r#"```json
{"tampering_intents": [{"tampered_region": "x ticks", "method": "Modifying the legend", "tamper": "t", "intent": "i"}]}
```"#;
        let b = Scripted::new(&[REFINED_AXIS, intent]);
        let r = analyze(&b, &image(), &regions(), &AnalyzeConfig::default()).unwrap();
        assert!(r.tampering_intents[0].non_conformant);
        assert!(r.to_json().contains("\"non_conformant\": true"));
    }

    #[test]
    fn conformant_entries_omit_flag() {
        let intent = r#"```json
{"tampering_intents": [{"tampered_region": "x ticks", "method": "MCV", "tamper": "t", "intent": "i"}]}
```"#;
        let b = Scripted::new(&[REFINED_AXIS, intent]);
        let r = analyze(&b, &image(), &regions(), &AnalyzeConfig::default()).unwrap();
        assert!(r.conformant());
        assert!(!r.to_json().contains("non_conformant"));
        assert!(r.to_json().contains("\"method\": \"Modifying coordinate values\""));
    }

    #[test]
    fn one_reask_then_success() {
        let bad = r#"```json
{"tampered_regions": [{"tampered_region": "t", "tampered_component": ["title"], "reason": "r"}]}
```"#;
        let intent = r#"{"tampering_intents": []}"#;
        let b = Scripted::new(&[bad, REFINED_AXIS, intent]);
        let r = analyze(&b, &image(), &regions(), &AnalyzeConfig::default()).unwrap();
        assert!(r.tampering_intents.is_empty());
        let prompts = b.prompts.lock().unwrap();
        assert_eq!(prompts.len(), 3);
        assert!(prompts[1].contains("tampered_component[0]"));
    }

    #[test]
    fn persistent_violation_is_analysis_error() {
        let b = Scripted::new(&["no json here", "still nothing"]);
        let err = analyze(&b, &image(), &regions(), &AnalyzeConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Analysis(_)));
    }

    #[test]
    fn transport_errors_propagate() {
        let b = Scripted::new(&[]);
        assert!(matches!(
            analyze(&b, &image(), &regions(), &AnalyzeConfig::default()),
            Err(Error::Transport(_))
        ));
    }

    #[test]
    fn batch_preserves_order() {
        let mock = MockBackend::geometric();
        let mut jobs = Vec::new();
        for i in 0..5 {
            let regions = if i % 2 == 0 { regions() } else { Vec::new() };
            jobs.push(AnalyzeJob {
                suspect: ImageTensor::filled(64, 64, 3, 1.0),
                regions,
                label: None,
            });
        }
        let cfg = AnalyzeConfig {
            max_in_flight: 3,
            ..AnalyzeConfig::default()
        };
        let out = analyze_batch(&mock, &jobs, &cfg);
        for (i, r) in out.iter().enumerate() {
            let a = r.as_ref().unwrap();
            assert_eq!(a.report.tampering_intents.is_empty(), i % 2 == 1);
        }
    }
}
