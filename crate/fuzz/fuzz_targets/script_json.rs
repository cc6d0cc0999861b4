#![no_main]

use factweave::harness::{LmProvider, ScriptedLm};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    if let Ok(lm) = ScriptedLm::from_json(text) {
        assert!(lm.vocab().len() >= 4);
        let _ = lm.score(&[]);
    }
});
