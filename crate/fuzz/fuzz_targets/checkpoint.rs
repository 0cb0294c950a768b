#![no_main]

use libfuzzer_sys::fuzz_target;
use treat_core::model::Checkpoint;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(ckpt) = Checkpoint::parse(text) else {
        return;
    };
    let json = ckpt.to_json();
    if let Ok(model) = ckpt.into_model() {
        assert!(model.params.is_finite());
        let back = Checkpoint::parse(&json).unwrap().into_model().unwrap();
        assert_eq!(back.params.tensors, model.params.tensors);
    }
});
