#![no_main]

use libfuzzer_sys::fuzz_target;
use stepleak::cohort::parse_attributes;

fuzz_target!(|data: &[u8]| {
    let _ = parse_attributes(data);
});
