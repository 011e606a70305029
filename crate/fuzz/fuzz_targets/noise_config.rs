#![no_main]

use libfuzzer_sys::fuzz_target;
use noisy_address::augment::NoiseConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(s) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = toml::from_str::<NoiseConfig>(s) {
        let _ = cfg.validate();
    }
    let mut cfg = NoiseConfig::default();
    for line in s.lines() {
        if let Some((k, v)) = line.split_once('=') {
            let _ = cfg.set(k.trim(), v.trim());
        }
    }
});
