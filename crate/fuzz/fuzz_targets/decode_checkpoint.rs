#![no_main]

use chartseal::inn::{decode_checkpoint, encode_checkpoint};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(model) = decode_checkpoint(data) {
        let again = decode_checkpoint(&encode_checkpoint(&model)).expect("re-encoded checkpoint decodes");
        assert_eq!(again.config(), model.config());
    }
});
