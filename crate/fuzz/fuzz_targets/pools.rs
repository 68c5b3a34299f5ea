#![no_main]

use std::path::Path;

use dmn_rerank::data::parse_pools;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(pools) = parse_pools(data, Path::new("fuzz.pools")) {
        assert_eq!(pools.iter().map(|(_, p)| p.len()).sum::<usize>(), pools.pair_count());
    }
});
