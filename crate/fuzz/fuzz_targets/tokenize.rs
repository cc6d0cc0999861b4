#![no_main]

use factweave::markup::tokenize;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    for t in tokenize(text) {
        assert!(!t.is_empty());
        assert!(!t.chars().any(char::is_whitespace));
    }
});
