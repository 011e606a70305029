#![no_main]

use libfuzzer_sys::fuzz_target;
use noisy_address::align::read_training_file;

fuzz_target!(|data: &[u8]| {
    if let Ok((header, records)) = read_training_file(data, "fuzz") {
        assert_eq!(header.sequences, records.len());
        for (_, seq) in &records {
            assert!(seq.recover(&header.marker).is_ok());
        }
    }
});
