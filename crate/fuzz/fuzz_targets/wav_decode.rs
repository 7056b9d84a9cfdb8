#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(w) = mcse::wav::decode_wav(data) {
        assert!(w.num_channels() >= 1);
        assert!(w.channels().iter().flatten().all(|v| v.is_finite()));
    }
});
