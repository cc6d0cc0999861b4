#![no_main]

use factweave::markup::{inline_to_tokenform, parse_inline};
use factweave::Format;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    let _ = inline_to_tokenform(text);
    if let Ok(doc) = parse_inline(text) {
        let again = parse_inline(&doc.serialize(Format::Inline)).expect("serialized form parses");
        assert_eq!(again, doc);
    }
});
