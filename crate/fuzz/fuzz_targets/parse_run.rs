#![no_main]

use libfuzzer_sys::fuzz_target;
use radscan::io::{parse_run, write_run, TimeFormat};

fuzz_target!(|data: &[u8]| {
    // First byte picks the time encoding.
    let Some((&mode, body)) = data.split_first() else {
        return;
    };
    let format = if mode & 1 == 0 { TimeFormat::Seconds } else { TimeFormat::DeltaMicros };
    if let Ok(run) = parse_run("fuzz", body, format) {
        assert!(run.times().windows(2).all(|w| w[0] <= w[1]));
        if format == TimeFormat::Seconds {
            let mut buf = Vec::new();
            write_run(&run, format, &mut buf).unwrap();
            assert_eq!(parse_run("fuzz", &buf, format).unwrap(), run);
        }
    }
});
