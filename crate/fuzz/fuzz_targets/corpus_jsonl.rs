#![no_main]

use libfuzzer_sys::fuzz_target;
use noisy_address::ingest::{read_corpus, Format, LoadOptions};
use noisy_address::schema::validate_bio;

fuzz_target!(|data: &[u8]| {
    let opts = LoadOptions { default_country: Some("ch".into()) };
    if let Ok(corpus) = read_corpus(data, Format::Jsonl, "fuzz", &opts) {
        for s in &corpus.samples {
            assert_eq!(s.words.len(), s.labels.len());
            assert!(validate_bio(&s.labels).is_empty());
        }
    }
});
