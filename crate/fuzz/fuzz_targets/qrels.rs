#![no_main]

use std::path::Path;

use dmn_rerank::data::parse_qrels;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(qrels) = parse_qrels(data, 1, Path::new("fuzz.qrels")) {
        for qid in qrels.queries() {
            assert!(qrels.has_judgments(qid));
        }
    }
});
