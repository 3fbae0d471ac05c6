#![no_main]

use cycledm::datasets::{read_idx, write_idx};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(a) = read_idx(data) {
        let again = read_idx(&write_idx(&a).expect("parsed IDX writes")).expect("written IDX parses");
        assert_eq!(again, a);
    }
});
