#![allow(dead_code)]

use std::io::Write;
use std::path::PathBuf;

use rmpc_icl::harness::Scenario;

pub fn scenario_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/double_integrator.json")
}

pub fn scenario() -> Scenario {
    Scenario::load(&scenario_path()).expect("shipped scenario loads")
}

/// Writes straight to stderr so the line shows even when output is captured.
pub fn report(criterion: u32, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let mut err = std::io::stderr().lock();
    let _ = writeln!(err, "criterion {criterion}: {verdict} {detail}");
}
