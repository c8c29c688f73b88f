#![no_main]

use libfuzzer_sys::fuzz_target;
use trapxray::xray::FanBeamData;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(d) = FanBeamData::parse_csv(text) {
            let again = FanBeamData::parse_csv(&d.to_csv_string()).unwrap();
            assert_eq!(again.values.len(), d.values.len());
        }
    }
});
