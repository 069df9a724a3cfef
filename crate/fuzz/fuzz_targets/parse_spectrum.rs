#![no_main]

use libfuzzer_sys::fuzz_target;
use radscan::io::{parse_spectrum, write_spectrum};

fuzz_target!(|data: &[u8]| {
    if let Ok(hist) = parse_spectrum(data) {
        let mut buf = Vec::new();
        write_spectrum(&hist, &mut buf).unwrap();
        assert_eq!(parse_spectrum(&buf).unwrap(), hist);
    }
});
