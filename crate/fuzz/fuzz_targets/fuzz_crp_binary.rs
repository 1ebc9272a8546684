#![no_main]
//! The packed binary decoder handles arbitrary bytes (truncation, huge
//! length fields, dirty padding) without panicking or overallocating.

use libfuzzer_sys::fuzz_target;
use puflab::dataset::{read_dataset_binary, write_dataset_binary};

fuzz_target!(|data: &[u8]| {
    if let Ok(ds) = read_dataset_binary(data) {
        let mut buf = Vec::new();
        write_dataset_binary(&ds, &mut buf).expect("write of parsed dataset");
        let back = read_dataset_binary(&buf).expect("reparse of written dataset");
        assert_eq!(back, ds, "binary round trip changed the dataset");
    }
});
