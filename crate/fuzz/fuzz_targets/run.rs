#![no_main]

use std::path::Path;

use dmn_rerank::data::{parse_run, write_run_to};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(run) = parse_run(data, Path::new("fuzz.run")) {
        let mut out = Vec::new();
        if write_run_to(&mut out, &run, "fuzz").is_ok() {
            let again = parse_run(out.as_slice(), Path::new("fuzz.run")).expect("written run parses");
            assert_eq!(again.len(), run.len());
        }
    }
});
