#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(w) = bilu::io::parse_wells(text) {
            let again = bilu::io::parse_wells(&bilu::io::format_wells(&w)).unwrap();
            assert_eq!(again, w);
        }
    }
});
