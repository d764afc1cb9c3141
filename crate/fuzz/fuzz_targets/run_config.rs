#![no_main]

use gitvl::run::RunConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = RunConfig::from_toml(text) {
        let _ = cfg.validate();
        // Compared as text so that NaN fields still count as equal.
        let text = cfg.to_toml();
        assert_eq!(RunConfig::from_toml(&text).unwrap().to_toml(), text);
    }
});
