#![no_main]

use libfuzzer_sys::fuzz_target;
use noisy_address::llm::parse_output;
use noisy_address::schema::validate_bio;

fuzz_target!(|data: &[u8]| {
    let Ok(raw) = std::str::from_utf8(data) else { return };
    let words = ["Hauptstrasse", "5", "3000", "Bern", "Schweiz"];
    let parsed = parse_output(raw, &words);
    assert_eq!(parsed.labels.len(), words.len());
    let resolved: Vec<_> = parsed.labels.iter().flatten().copied().collect();
    if resolved.len() == words.len() {
        assert!(validate_bio(&resolved).is_empty());
    }
});
