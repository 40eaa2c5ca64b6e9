#![no_main]
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &str| {
    // Malformed files must come back as errors, never panics or huge allocations.
    if let Ok(model) = ftn_core::harness::parse_model(data) {
        let text = ftn_core::harness::model_to_string(&model);
        let again = ftn_core::harness::parse_model(&text).expect("re-parse of serialized model");
        assert_eq!(ftn_core::harness::model_to_string(&again), text);
    }
});
