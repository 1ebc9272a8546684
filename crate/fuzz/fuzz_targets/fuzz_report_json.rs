#![no_main]
//! Report re-rendering (the `report` subcommand path) parses untrusted
//! JSON; accepted reports must render in every format.

use libfuzzer_sys::fuzz_target;
use puflab::experiment::config::ReportFormat;
use puflab::experiment::ExperimentReport;

fuzz_target!(|data: &[u8]| {
    if let Ok(report) = ExperimentReport::from_json(data) {
        for format in [ReportFormat::Json, ReportFormat::Table, ReportFormat::Csv] {
            let _ = report.render(format).expect("render accepted report");
        }
    }
});
