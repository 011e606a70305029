#![no_main]

use libfuzzer_sys::fuzz_target;
use noisy_address::schema::{BaseTag, BioLabel};

fuzz_target!(|data: &[u8]| {
    let Ok(s) = std::str::from_utf8(data) else { return };
    if let Ok(label) = s.parse::<BioLabel>() {
        assert_eq!(label.to_string().parse::<BioLabel>().unwrap(), label);
    }
    if let Ok(tag) = s.parse::<BaseTag>() {
        assert_eq!(tag.to_string().parse::<BaseTag>().unwrap(), tag);
    }
});
