#![no_main]

use std::collections::BTreeMap;

use icinfl::corpus::{parse_record, DatasetSchema};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(line) = std::str::from_utf8(data) else {
        return;
    };
    let mut slots = BTreeMap::new();
    slots.insert("goal".to_string(), "goal".to_string());
    // fixed-choice schema
    let fixed = DatasetSchema {
        slots: slots.clone(),
        label_key: "label".into(),
        choices_key: None,
        fixed_choices: Some(vec!["yes".into(), "no".into()]),
    };
    let _ = parse_record(line, &fixed, 0);
    // per-record choices schema
    let per_record = DatasetSchema {
        slots,
        label_key: "label".into(),
        choices_key: Some("choices".into()),
        fixed_choices: None,
    };
    let _ = parse_record(line, &per_record, 0);
});
