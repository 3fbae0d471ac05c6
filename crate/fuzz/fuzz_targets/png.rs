#![no_main]

use cycledm::datasets::decode_glyph;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(g) = decode_glyph(data, 16) {
        assert_eq!(g.dimensions(), (16, 16));
    }
});
