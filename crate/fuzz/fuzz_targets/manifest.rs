#![no_main]

use gitvl::data::{epoch_plan, LoaderConfig, TrunkManifest};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(m) = TrunkManifest::from_toml(text) {
        if m.shard().len() <= 1 << 16 {
            let _ = epoch_plan(&m, &LoaderConfig::new(3, 0));
        }
    }
});
