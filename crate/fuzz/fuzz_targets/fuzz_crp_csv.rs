#![no_main]
//! The CSV reader must reject or accept arbitrary bytes without panicking,
//! and anything it accepts must survive a write/read round trip.

use libfuzzer_sys::fuzz_target;
use puflab::dataset::{read_dataset_csv, write_dataset_csv};

fuzz_target!(|data: &[u8]| {
    if let Ok(ds) = read_dataset_csv(data) {
        let mut buf = Vec::new();
        write_dataset_csv(&ds, &mut buf).expect("write of parsed dataset");
        let back = read_dataset_csv(&buf[..]).expect("reparse of written dataset");
        assert_eq!(back, ds, "CSV round trip changed the dataset");
    }
});
