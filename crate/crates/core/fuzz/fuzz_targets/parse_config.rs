#![no_main]

use libfuzzer_sys::fuzz_target;
use satswarm::runtime::RunConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = RunConfig::parse(text) {
        // Anything accepted must survive a round trip.
        let back = RunConfig::parse(&cfg.to_toml()).expect("serialized config parses");
        assert_eq!(back.to_toml(), cfg.to_toml());
    }
});
