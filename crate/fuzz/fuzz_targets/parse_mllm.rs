#![no_main]

use chartseal::intent::{extract_json_block, parse_and_validate, Schema};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let _ = extract_json_block(text);
    let _ = parse_and_validate(text, Schema::Refinement);
    let _ = parse_and_validate(text, Schema::Intent);
});
