#![no_main]

use libfuzzer_sys::fuzz_target;
use radscan::io::{parse_scores, write_scores};

fuzz_target!(|data: &[u8]| {
    if let Ok(scores) = parse_scores(data) {
        let mut buf = Vec::new();
        write_scores(&scores, &mut buf).unwrap();
        assert_eq!(parse_scores(&buf).unwrap(), scores);
    }
});
