#![no_main]

use libfuzzer_sys::fuzz_target;
use noisy_address::schema::validate_bio;
use noisy_address::tagger::TaggerModel;

fuzz_target!(|data: &[u8]| {
    // Metadata JSON may be non-canonical, so compare a second encoding.
    if let Ok(model) = TaggerModel::from_bytes(data) {
        let words: Vec<String> = ["Bahnhofstrasse", "12", "8001", "Zürich"].map(String::from).into();
        let labels = model.predict(&words);
        assert_eq!(labels.len(), words.len());
        assert!(validate_bio(&labels).is_empty());
        let bytes = model.to_bytes();
        assert_eq!(TaggerModel::from_bytes(&bytes).unwrap().to_bytes(), bytes);
    }
});
