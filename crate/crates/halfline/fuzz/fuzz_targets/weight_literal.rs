#![no_main]

use halfline::cli::{parse_weight_literal, spans_of};
use libfuzzer_sys::fuzz_target;

// Accepted weight literals round-trip through spans_of: rendering the parsed
// weight back to spans and reparsing must reproduce the same weight.
fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(weight) = parse_weight_literal(text) else { return };
    let spans = spans_of(&weight);
    let frozen = serde_json::to_string(&spans).expect("spans serialize");
    let back = parse_weight_literal(&frozen).expect("frozen spans reparse");
    assert_eq!(spans_of(&back), spans);
});
