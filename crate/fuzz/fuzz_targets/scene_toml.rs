#![no_main]

use libfuzzer_sys::fuzz_target;
use mcse::simulate::RoomScene;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(scene) = RoomScene::from_toml(text) {
        let again = RoomScene::from_toml(&scene.to_toml()).expect("serialized scene parses");
        assert_eq!(scene, again);
    }
});
