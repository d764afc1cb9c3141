#![no_main]

use gitvl::checkpoint;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(store) = checkpoint::decode::<f32>(data) {
        // Anything that decodes must survive a round trip unchanged.
        let again = checkpoint::decode::<f32>(&checkpoint::encode(&store)).unwrap();
        assert_eq!(checkpoint::encode(&again), checkpoint::encode(&store));
    }
    let _ = checkpoint::decode::<f64>(data);
});
