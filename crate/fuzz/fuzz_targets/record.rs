#![no_main]

use gitvl::data::Record;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(line) = std::str::from_utf8(data) else { return };
    if let Ok((id, sample)) = Record::parse_line(line) {
        let again = Record::parse_line(&Record::from_sample(id, &sample).to_json_line()).unwrap();
        assert_eq!(again.0, id);
    }
});
