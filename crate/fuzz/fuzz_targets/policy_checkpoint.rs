#![no_main]

use hawkes_dividend::rl::PolicyCheckpoint;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(s) = std::str::from_utf8(data) {
        if let Ok((ck, actor, critic)) = PolicyCheckpoint::from_json(s) {
            assert!(actor.is_finite());
            assert!(critic.as_ref().is_none_or(|c| c.is_finite()));
            let _ = actor.forward(&[2.0]).expect("actor takes the intensity");
            let (back, _, _) = PolicyCheckpoint::from_json(&ck.to_json()).expect("re-parse");
            assert_eq!(back, ck);
        }
    }
});
