#![no_main]

use libfuzzer_sys::fuzz_target;
use mixlab::config::ShapeSpec;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(spec) = text.parse::<ShapeSpec>() {
        let again: ShapeSpec = spec.to_string().parse().expect("printed shape parses");
        assert_eq!(again, spec);
    }
});
