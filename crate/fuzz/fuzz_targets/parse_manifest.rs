#![no_main]

use chartseal::chartgen::Manifest;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(m) = serde_json::from_slice::<Manifest>(data) {
        let _ = m.truth_table();
        let back: Manifest = serde_json::from_str(&m.to_json()).expect("manifest round-trips");
        assert_eq!(back.items.len(), m.items.len());
    }
});
