#![no_main]

use dmn_rerank::model::{decode_checkpoint, encode_checkpoint};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(model) = decode_checkpoint(data) {
        assert_eq!(encode_checkpoint(&model).expect("decoded checkpoint re-encodes"), data);
    }
});
