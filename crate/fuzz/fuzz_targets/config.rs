#![no_main]

use cycledm_cli::RunConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(cfg) = RunConfig::build(Some((text, "fuzz")), &[]) {
            let again = RunConfig::build(Some((&cfg.to_text(), "fuzz")), &[]).expect("rendered config parses");
            assert_eq!(again.hash(), cfg.hash());
        }
    }
});
