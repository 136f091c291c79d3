#![no_main]

use chartseal::detect::{regions_to_json, TamperRegion};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(regions) = serde_json::from_slice::<Vec<TamperRegion>>(data) {
        let back: Vec<TamperRegion> = serde_json::from_str(&regions_to_json(&regions)).expect("regions round-trip");
        assert_eq!(back, regions);
    }
});
