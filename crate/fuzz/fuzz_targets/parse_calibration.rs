#![no_main]

use libfuzzer_sys::fuzz_target;
use radscan::io::{parse_calibration, write_calibration};

fuzz_target!(|data: &[u8]| {
    if let Ok(calib) = parse_calibration(data) {
        let mut buf = Vec::new();
        write_calibration(&calib, &mut buf).unwrap();
        assert_eq!(parse_calibration(&buf).unwrap(), calib);
    }
});
