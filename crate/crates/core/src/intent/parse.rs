use serde_json::{Map, Value};

use super::rules::{ComponentLabel, TamperMethod};
use super::{IntentEntry, IntentReport, RefinedRegion};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Schema {
    Refinement,
    Intent,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Parsed {
    Refinement(Vec<RefinedRegion>),
    Intent(IntentReport),
}

/// Body of the first fenced code block. A closing `'''` is accepted as a
/// fence too. Without any fence, a response that is itself a JSON object is
/// returned whole.
pub fn extract_json_block(text: &str) -> Option<&str> {
    if let Some(open) = text.find("```") {
        let after = &text[open + 3..];
        // skip the info string (`json`, etc.)
        let body_start = after.find('\n').map_or(after.len(), |i| i + 1);
        let body = &after[body_start..];
        let end = [body.find("```"), body.find("'''")]
            .into_iter()
            .flatten()
            .min()
            .unwrap_or(body.len());
        return Some(body[..end].trim());
    }
    let trimmed = text.trim();
    (trimmed.starts_with('{') && trimmed.ends_with('}')).then_some(trimmed)
}

fn object<'a>(v: &'a Value, path: &str) -> Result<&'a Map<String, Value>> {
    v.as_object()
        .ok_or_else(|| Error::validation(path, "expected an object"))
}

fn field<'a>(obj: &'a Map<String, Value>, key: &str, path: &str) -> Result<&'a Value> {
    obj.get(key)
        .ok_or_else(|| Error::validation(format!("{path}.{key}"), "missing required key"))
}

fn string(obj: &Map<String, Value>, key: &str, path: &str) -> Result<String> {
    field(obj, key, path)?
        .as_str()
        .map(str::to_owned)
        .ok_or_else(|| Error::validation(format!("{path}.{key}"), "expected a string"))
}

fn array<'a>(obj: &'a Map<String, Value>, key: &str, path: &str) -> Result<&'a Vec<Value>> {
    field(obj, key, path)?
        .as_array()
        .ok_or_else(|| Error::validation(format!("{path}.{key}"), "expected an array"))
}

fn root(text: &str) -> Result<Value> {
    let block = extract_json_block(text).ok_or_else(|| Error::Parse("no JSON block in response".into()))?;
    serde_json::from_str(block).map_err(|e| Error::Parse(format!("malformed JSON: {e}")))
}

pub fn parse_refinement(text: &str) -> Result<Vec<RefinedRegion>> {
    let v = root(text)?;
    let top = object(&v, "$")?;
    let items = array(top, "tampered_regions", "$")?;
    items
        .iter()
        .enumerate()
        .map(|(i, item)| {
            let path = format!("$.tampered_regions[{i}]");
            let obj = object(item, &path)?;
            let comps = array(obj, "tampered_component", &path)?;
            if comps.is_empty() {
                return Err(Error::validation(format!("{path}.tampered_component"), "must list at least one component"));
            }
            let tampered_component = comps
                .iter()
                .enumerate()
                .map(|(j, c)| {
                    let cpath = format!("{path}.tampered_component[{j}]");
                    let s = c.as_str().ok_or_else(|| Error::validation(&cpath, "expected a string"))?;
                    ComponentLabel::parse(s).ok_or_else(|| Error::validation(&cpath, format!("unknown component `{s}`")))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(RefinedRegion {
                tampered_region: string(obj, "tampered_region", &path)?,
                tampered_component,
                reason: string(obj, "reason", &path)?,
            })
        })
        .collect()
}

pub fn parse_intent(text: &str) -> Result<IntentReport> {
    let v = root(text)?;
    let top = object(&v, "$")?;
    let items = array(top, "tampering_intents", "$")?;
    let entries = items
        .iter()
        .enumerate()
        .map(|(i, item)| {
            let path = format!("$.tampering_intents[{i}]");
            let obj = object(item, &path)?;
            let m = string(obj, "method", &path)?;
            let method = TamperMethod::parse(&m)
                .ok_or_else(|| Error::validation(format!("{path}.method"), format!("unknown method `{m}`")))?;
            Ok(IntentEntry {
                tampered_region: string(obj, "tampered_region", &path)?,
                method,
                tamper: string(obj, "tamper", &path)?,
                intent: string(obj, "intent", &path)?,
                non_conformant: false,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(IntentReport {
        tampering_intents: entries,
    })
}

/// Treats `response` as untrusted text and validates it against `schema`.
pub fn parse_and_validate(response: &str, schema: Schema) -> Result<Parsed> {
    match schema {
        Schema::Refinement => parse_refinement(response).map(Parsed::Refinement),
        Schema::Intent => parse_intent(response).map(Parsed::Intent),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const REFINED: &str = "Here you go:\n```json\n{\"tampered_regions\": [{\"tampered_region\": \"left bar\", \"tampered_component\": [\"region\", \"data labels\"], \"reason\": \"clean rectangle\"}]}\n```\nDone.";
    const INTENT: &str = "```json\n{ \"tampering_intents\": [{\"tampered_region\": \"legend\", \"method\": \"Modifying the legend\", \"tamper\": \"Swapped colors.\", \"intent\": \"Mislabel series.\"}]}\n'''";

    #[test]
    fn refinement_one_region() {
        let r = parse_refinement(REFINED).unwrap();
        assert_eq!(r.len(), 1);
        assert_eq!(r[0].tampered_component, vec![ComponentLabel::Region, ComponentLabel::DataLabels]);
    }

    #[test]
    fn intent_with_paper_style_fence() {
        let r = parse_intent(INTENT).unwrap();
        assert_eq!(r.tampering_intents[0].method, TamperMethod::Ml);
    }

    #[test]
    fn bare_object_accepted() {
        assert!(parse_intent("{\"tampering_intents\": []}").is_ok());
    }

    #[test]
    fn errors() {
        assert!(matches!(parse_intent("nothing"), Err(Error::Parse(_))));
        assert!(matches!(parse_intent("```json\n{oops\n```"), Err(Error::Parse(_))));
        let bad = REFINED.replace("\"region\"", "\"title\"");
        match parse_refinement(&bad) {
            Err(Error::Validation { path, .. }) => assert_eq!(path, "$.tampered_regions[0].tampered_component[0]"),
            other => panic!("{other:?}"),
        }
        let bad = INTENT.replace("Modifying the legend", "Others-ish");
        assert!(matches!(parse_intent(&bad), Err(Error::Validation { .. })));
    }

    fn drop_key(text: &str, array_key: &str, key: &str) -> String {
        let block = extract_json_block(text).unwrap();
        let mut v: Value = serde_json::from_str(block).unwrap();
        if key == array_key {
            v.as_object_mut().unwrap().remove(key);
        } else {
            v[array_key][0].as_object_mut().unwrap().remove(key);
        }
        format!("```json\n{v}\n```")
    }

    proptest! {
        #[test]
        fn missing_refinement_key_rejected(k in 0usize..4) {
            let key = ["tampered_regions", "tampered_region", "tampered_component", "reason"][k];
            let text = drop_key(REFINED, "tampered_regions", key);
            let is_validation = matches!(parse_refinement(&text), Err(Error::Validation { .. }));
            prop_assert!(is_validation);
        }

        #[test]
        fn missing_intent_key_rejected(k in 0usize..5) {
            let key = ["tampering_intents", "tampered_region", "method", "tamper", "intent"][k];
            let text = drop_key(INTENT, "tampering_intents", key);
            let is_validation = matches!(parse_intent(&text), Err(Error::Validation { .. }));
            prop_assert!(is_validation);
        }

        #[test]
        fn arbitrary_text_never_panics(s in ".{0,200}") {
            let _ = parse_and_validate(&s, Schema::Refinement);
            let _ = parse_and_validate(&s, Schema::Intent);
        }
    }
}
