#![no_main]

use libfuzzer_sys::fuzz_target;
use noisy_address::eval::read_predictions;
use noisy_address::interop::{import_predictions, TagVersion};

fuzz_target!(|data: &[u8]| {
    let _ = read_predictions(data, "fuzz");
    let _ = import_predictions(data, "fuzz", TagVersion::V0V1, None);
    let _ = import_predictions(data, "fuzz", TagVersion::V2, None);
});
