#![no_main]

use chartseal::chartgen::{apply_tamper, TamperOp};
use chartseal::imaging::ImageTensor;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(ops) = serde_json::from_slice::<Vec<TamperOp>>(data) {
        let canvas = ImageTensor::filled(32, 32, 3, 1.0);
        let _ = apply_tamper(&canvas, &ops);
    }
});
