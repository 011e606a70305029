#![no_main]

use libfuzzer_sys::fuzz_target;
use noisy_address::ingest::{read_corpus, Format, LoadOptions};

fuzz_target!(|data: &[u8]| {
    if let Ok(corpus) = read_corpus(data, Format::Tsv, "fuzz", &LoadOptions::default()) {
        for s in &corpus.samples {
            assert_eq!(s.words.len(), s.labels.len());
        }
    }
});
