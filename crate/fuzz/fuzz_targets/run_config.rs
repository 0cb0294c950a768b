#![no_main]

use libfuzzer_sys::fuzz_target;
use treat_cli::config::{parse, EvalRun, SimulateRun, TrainRun, VerifyRun};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(run) = parse::<SimulateRun>(text) {
        let _ = run.dataset.validate();
    }
    if let Ok(run) = parse::<TrainRun>(text) {
        let _ = run.training.validate();
        let _ = run.training.resolved_model(4).validate();
    }
    let _ = parse::<EvalRun>(text);
    let _ = parse::<VerifyRun>(text);
});
