#![no_main]

use gitvl::{TokenizerMode, Vocabulary};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    for mode in [TokenizerMode::Word, TokenizerMode::Char] {
        if let Ok(v) = Vocabulary::parse(text, mode) {
            let again = Vocabulary::parse(&v.to_text(), mode).unwrap();
            assert_eq!(again.len(), v.len());
            let _ = v.decode(&v.encode(text));
        }
    }
});
