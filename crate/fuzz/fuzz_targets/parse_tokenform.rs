#![no_main]

use factweave::markup::{parse_tokenform, parse_tokenform_with, ParseMode};
use factweave::Format;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    let strict = parse_tokenform(text);
    let lenient = parse_tokenform_with(text, ParseMode::Lenient);
    if let Ok(doc) = strict {
        assert_eq!(doc.loss_mask().len(), doc.tokens().len());
        let again = parse_tokenform(&doc.serialize(Format::TokenForm)).expect("serialized form parses");
        assert_eq!(again, doc);
        assert!(lenient.is_ok());
    }
});
