#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(m) = bilu::io::parse_matrix_market(text) {
            let again = bilu::io::parse_matrix_market(&bilu::io::format_matrix_market(&m)).unwrap();
            assert_eq!(again, m);
        }
    }
});
