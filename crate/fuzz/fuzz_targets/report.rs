#![no_main]

use cycledm::evaluation::{parse_reports, reports_to_json};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(reports) = parse_reports(text) {
            let again = parse_reports(&reports_to_json(&reports)).expect("written reports parse");
            assert_eq!(again.len(), reports.len());
        }
    }
});
