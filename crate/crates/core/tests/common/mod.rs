#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use tapeloop_core::metrics::{compute_run_metrics, RunMetrics};
use tapeloop_core::model::{RunConfig, RunId};
use tapeloop_core::tooling::{parse_scenario, Scenario};
use tapeloop_core::workflow::{run_local, LocalRun};

pub mod checks;
pub mod props;

pub const DESIGNS: [&str; 5] = ["crc", "ecc", "fifo", "lemming", "timer"];

pub fn repo_root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

/// Parses a shipped scenario without the totality dry run.
pub fn scenario(design: &str) -> Scenario {
    let dir = repo_root().join("scenarios");
    let text = std::fs::read_to_string(dir.join(format!("{design}.json"))).unwrap();
    parse_scenario(&text, &dir).unwrap()
}

/// All shipped scenarios, parsed once per test binary.
pub fn scenarios() -> &'static [Scenario] {
    static ALL: OnceLock<Vec<Scenario>> = OnceLock::new();
    ALL.get_or_init(|| DESIGNS.iter().map(|d| scenario(d)).collect())
}

pub fn run(scenario: &Scenario, temperature: f64) -> LocalRun {
    let config = RunConfig::new(scenario.design_id.clone(), "mock", temperature);
    let id = RunId::new(format!("{}-t{temperature}", scenario.design_id));
    run_local(scenario, config, id, None).unwrap()
}

/// Like [`run`], writing the log under `data_dir`.
pub fn run_in(scenario: &Scenario, temperature: f64, data_dir: &Path) -> LocalRun {
    let config = RunConfig::new(scenario.design_id.clone(), "mock", temperature);
    let id = RunId::new(format!("{}-t{temperature}", scenario.design_id));
    run_local(scenario, config, id, Some(data_dir)).unwrap()
}

pub fn metrics(run: &LocalRun) -> RunMetrics {
    compute_run_metrics(&run.records).unwrap()
}

/// Every column that differs from the scenario's expected row.
pub fn mismatches(scenario: &Scenario, m: &RunMetrics) -> Vec<String> {
    let exp = scenario.expected.as_ref().expect("scenario has an expected row");
    let row = exp
        .for_temperature(m.temperature)
        .expect("expected row for temperature");
    let mut out = Vec::new();
    let mut check = |name: &str, got: String, want: String| {
        if got != want {
            out.push(format!(
                "{} t={} {name}: got {got}, want {want}",
                m.design_id, m.temperature
            ));
        }
    };
    check(
        "lint_errors_mas",
        m.lint_errors_mas.to_string(),
        row.lint_errors_mas.to_string(),
    );
    check(
        "lint_fatal_mas",
        m.lint_fatal_mas.to_string(),
        row.lint_fatal_mas.to_string(),
    );
    check(
        "lint_errors_hitl",
        m.lint_errors_hitl.to_string(),
        row.lint_errors_hitl.to_string(),
    );
    check(
        "accuracy_mas",
        format!("{:?}", m.accuracy_mas),
        format!("{:?}", row.accuracy_mas),
    );
    check(
        "accuracy_hitl",
        format!("{:?}", m.accuracy_hitl),
        format!("{:?}", row.accuracy_hitl),
    );
    check(
        "properties_mas",
        m.properties_mas.to_string(),
        exp.properties_mas.to_string(),
    );
    check(
        "properties_hitl",
        m.properties_hitl.to_string(),
        exp.properties_hitl.to_string(),
    );
    check(
        "coverage_mas_pct",
        format!("{:.2}", m.coverage_mas_pct),
        format!("{:.2}", exp.coverage_mas_pct),
    );
    check(
        "coverage_hitl_pct",
        format!("{:.2}", m.coverage_hitl_pct),
        format!("{:.2}", exp.coverage_hitl_pct),
    );
    check("cex_mas", m.cex_mas.to_string(), exp.cex_mas.to_string());
    check("cex_hitl", m.cex_hitl.to_string(), exp.cex_hitl.to_string());
    check(
        "hitl_rtl_minutes",
        m.hitl_rtl_minutes.to_string(),
        exp.hitl_rtl_minutes.to_string(),
    );
    check(
        "hitl_formal_minutes",
        m.hitl_formal_minutes.to_string(),
        exp.hitl_formal_minutes.to_string(),
    );
    check(
        "rtl_iterations",
        m.rtl_iterations.to_string(),
        exp.rtl_iterations.to_string(),
    );
    out
}
