#![no_main]

use libfuzzer_sys::fuzz_target;
use trapxray::grid::GridField;

fuzz_target!(|data: &[u8]| {
    if let Ok(f) = GridField::decode(data) {
        let bytes = f.encode();
        let g = GridField::decode(&bytes).unwrap();
        assert_eq!(g.values.len(), f.values.len());
    }
});
