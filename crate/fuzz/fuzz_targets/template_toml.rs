#![no_main]

use icinfl::corpus::TaskTemplate;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = TaskTemplate::from_toml_str(text);
    }
});
