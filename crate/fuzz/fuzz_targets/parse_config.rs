#![no_main]
use ftn_core::harness::ExperimentConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &str| {
    if let Ok(cfg) = ExperimentConfig::parse(data) {
        let again = ExperimentConfig::parse(&cfg.to_text()).expect("re-parse of rendered config");
        assert_eq!(again, cfg);
    }
});
