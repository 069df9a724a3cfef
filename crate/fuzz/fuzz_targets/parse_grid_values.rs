#![no_main]

use libfuzzer_sys::fuzz_target;
use radscan::io::{parse_grid_values, parse_pmf};

fuzz_target!(|data: &[u8]| {
    if let Ok((grid, values)) = parse_grid_values(data) {
        assert_eq!(grid.n_bins(), values.len());
    }
    if let Ok(pmf) = parse_pmf(data) {
        assert!((pmf.total() - 1.0).abs() <= 1e-9);
    }
});
