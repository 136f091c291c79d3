#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(img) = chartseal::imaging::decode_image(data) {
        assert_eq!(img.data().len(), img.height() * img.width() * img.channels());
        assert!(img.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
});
