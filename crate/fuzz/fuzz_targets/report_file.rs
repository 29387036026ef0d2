#![no_main]

use icinfl::corpus::DatasetSplits;
use icinfl::persist::{parse_report_str, Selection};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let _ = parse_report_str::<DatasetSplits>(text, "splits");
    let _ = parse_report_str::<Selection>(text, "selection");
});
