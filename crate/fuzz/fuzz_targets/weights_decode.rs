#![no_main]

use libfuzzer_sys::fuzz_target;
use mcse::net::WeightStore;

fuzz_target!(|data: &[u8]| {
    if let Ok(store) = WeightStore::from_bytes(data) {
        let again = WeightStore::from_bytes(&store.to_bytes()).expect("re-encoded store decodes");
        assert_eq!(store.manifest(), again.manifest());
    }
});
