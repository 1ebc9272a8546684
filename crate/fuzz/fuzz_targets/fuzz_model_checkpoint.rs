#![no_main]
//! Model checkpoints are parsed with full shape/finiteness validation;
//! anything accepted must predict without panicking.

use libfuzzer_sys::fuzz_target;
use puflab::ml::mlp::MlpModel;

fuzz_target!(|data: &[u8]| {
    if let Ok(model) = MlpModel::from_json(data) {
        let m = model.config.input_width;
        if m <= 4096 && model.config.hidden <= 4096 && model.config.layers <= 64 {
            let x = ndarray::Array2::from_elem((2, m), 1.0);
            let p = model.predict_proba(&x.view()).expect("predict");
            assert_eq!(p.len(), 2);
        }
    }
});
