#![no_main]

use dmn_rerank::data::{decode_tokrep, encode_tokrep};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(records) = decode_tokrep(data) {
        let enc_dim = u32::from_le_bytes(data[8..12].try_into().unwrap()) as usize;
        let again = encode_tokrep(enc_dim, &records).expect("decoded records re-encode");
        assert_eq!(decode_tokrep(&again).expect("re-encoded file decodes"), records);
    }
});
