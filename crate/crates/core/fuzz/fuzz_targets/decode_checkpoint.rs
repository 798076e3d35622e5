#![no_main]

use libfuzzer_sys::fuzz_target;
use satswarm::runtime::Checkpoint;

fuzz_target!(|data: &[u8]| {
    if let Ok(ck) = Checkpoint::decode(data) {
        // Decoding is exact, so re-encoding reproduces the input.
        assert_eq!(ck.encode(), data);
    }
});
