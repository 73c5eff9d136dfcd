#![no_main]

use halfline::cli::parse_instance_file;
use libfuzzer_sys::fuzz_target;

// Accepted instance files survive a freeze/reload cycle: validation leaves
// no NaN behind, so equality on the reparsed declarations is exact.
fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(decls) = parse_instance_file(text) else { return };
    let frozen = serde_json::to_string(&decls).expect("declarations serialize");
    let back = parse_instance_file(&frozen).expect("frozen declarations reparse");
    assert_eq!(back, decls);
});
