#![no_main]

use libfuzzer_sys::fuzz_target;
use treat_core::data::{Dataset, Split};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(ds) = Dataset::parse(text) else {
        return;
    };
    // Anything accepted must survive a write/parse cycle unchanged.
    let mut out = Vec::new();
    ds.write_to(&mut out).unwrap();
    let again = Dataset::parse(std::str::from_utf8(&out).unwrap()).unwrap();
    assert_eq!(again, ds);
    for split in [Split::Train, Split::Test] {
        let _ = ds.samples(split, 2);
    }
});
