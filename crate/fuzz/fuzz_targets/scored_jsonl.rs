#![no_main]

use factweave::accounting::{ScoreMode, ScoredSequence};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    let _ = ScoredSequence::from_jsonl(text, ScoreMode::Static);
    let _ = ScoredSequence::from_jsonl(text, ScoreMode::Dynamic);
});
