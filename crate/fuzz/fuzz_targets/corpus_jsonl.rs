#![no_main]

use factweave::corpus::{read_documents, read_records};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    if read_records(text).is_ok() {
        let _ = read_documents(text);
    }
});
