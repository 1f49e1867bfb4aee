#![no_main]

use hawkes_dividend::neural::Mlp;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(s) = std::str::from_utf8(data) {
        if let Ok(net) = Mlp::from_json(s) {
            let input = vec![0.5; net.input_dim()];
            let out = net.forward(&input).expect("declared input width");
            assert_eq!(out.len(), net.output_dim());
            assert_eq!(Mlp::from_json(&net.to_json()).expect("re-parse"), net);
        }
    }
});
