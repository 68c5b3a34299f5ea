#![no_main]

use std::path::Path;

use dmn_rerank::data::parse_tsv;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let _ = parse_tsv(data, Path::new("fuzz.tsv"));
});
