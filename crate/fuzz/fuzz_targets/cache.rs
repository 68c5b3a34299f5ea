#![no_main]

use dmn_rerank::data::{decode_cache, encode_cache};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(store) = decode_cache(data) {
        let again = encode_cache(&store).expect("decoded cache re-encodes");
        assert_eq!(
            decode_cache(&again).expect("re-encoded cache decodes").checksum(),
            store.checksum()
        );
    }
});
