#![no_main]

use libfuzzer_sys::fuzz_target;
use noisy_address::augment::read_masks;

fuzz_target!(|data: &[u8]| {
    let _ = read_masks(data, "fuzz");
});
