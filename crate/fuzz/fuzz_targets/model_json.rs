#![no_main]

use libfuzzer_sys::fuzz_target;
use stepleak::learners::TrainedModel;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(model) = TrainedModel::from_json(text) {
            let back = model.to_json().expect("loaded models serialize");
            assert_eq!(TrainedModel::from_json(&back).expect("roundtrip"), model);
        }
    }
});
