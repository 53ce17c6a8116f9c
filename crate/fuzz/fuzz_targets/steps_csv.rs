#![no_main]

use libfuzzer_sys::fuzz_target;
use stepleak::cohort::parse_steps;

fuzz_target!(|data: &[u8]| {
    let _ = parse_steps(data);
});
