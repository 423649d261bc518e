#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Some((&b, rest)) = data.split_first() else {
        return;
    };
    let block_size = usize::from(b % 4) + 1;
    if let Ok(text) = std::str::from_utf8(rest) {
        if let Ok(v) = bilu::io::parse_rhs(text, block_size) {
            let again = bilu::io::parse_rhs(&bilu::io::format_rhs(&v), block_size).unwrap();
            assert_eq!(again.as_slice(), v.as_slice());
        }
    }
});
