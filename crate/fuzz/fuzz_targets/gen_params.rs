#![no_main]

use libfuzzer_sys::fuzz_target;
use noisy_address::llm::GenParams;

fuzz_target!(|data: &[u8]| {
    let Ok(s) = std::str::from_utf8(data) else { return };
    if let Ok(p) = s.parse::<GenParams>() {
        assert!(p.validate().is_ok());
        let back: GenParams = p.to_string().parse().unwrap();
        assert_eq!(back.to_string(), p.to_string());
    }
});
