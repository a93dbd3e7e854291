//! Replay determinism, the sign-off gate under mutation, benchmark
//! aggregation and the report parsers.

mod common;

use std::sync::OnceLock;

use proptest::prelude::*;

use tapeloop_core::bus::{read_log, replay_log, ReplayError};
use tapeloop_core::model::{LintCategory, Severity};
use tapeloop_core::tooling::{
    category_for_rule, parse_coverage_report, parse_formal_report, parse_lint_report, render_lint_report,
};
use tapeloop_core::workflow::LocalRun;

use common::checks::{self, Mutation};
use common::{metrics, run_in, scenarios};

/// Every shipped scenario at every temperature, logged to one temp dir.
fn runs() -> &'static [LocalRun] {
    static RUNS: OnceLock<(tempfile::TempDir, Vec<LocalRun>)> = OnceLock::new();
    &RUNS
        .get_or_init(|| {
            let dir = tempfile::tempdir().unwrap();
            let runs = scenarios()
                .iter()
                .flat_map(|s| {
                    s.temperatures
                        .iter()
                        .map(|t| run_in(s, *t, dir.path()))
                        .collect::<Vec<_>>()
                })
                .collect();
            (dir, runs)
        })
        .1
}

#[test]
fn replay_reproduces_final_hash() {
    assert_eq!(runs().len(), 15);
    for run in runs() {
        checks::check_replay(run).unwrap();
    }
}

#[test]
fn tampered_logs_fail_replay() {
    let run = &runs()[0];
    let records = read_log(run.dir.as_ref().unwrap().join("events.jsonl")).unwrap();

    let mut bad_hash = records.clone();
    let mid = bad_hash.len() / 2;
    bad_hash[mid].state_hash_after = bad_hash[mid - 1].state_hash_after.clone();
    assert_eq!(
        replay_log(&bad_hash).unwrap_err(),
        ReplayError::HashMismatch(bad_hash[mid].seq)
    );

    let mut gap = records.clone();
    gap.remove(mid);
    assert!(replay_log(&gap).is_err());

    let mut swapped = records;
    swapped.swap(mid, mid + 1);
    assert!(replay_log(&swapped).is_err());
}

#[test]
fn every_mutation_closes_the_gate() {
    for run in runs() {
        for m in Mutation::ALL {
            checks::check_mutation(run, m, 0, 1.0).unwrap();
        }
    }
}

#[test]
fn ecc_signs_off_below_target_only_through_waivers() {
    for run in runs().iter().filter(|r| r.state.design_id() == "ecc") {
        checks::check_waived_signoff(run, 95.90).unwrap();
    }
}

// Per-design initial and final coverage of the five benchmark rows; the
// means below are worked out by hand from them.
const INITIAL: [f64; 5] = [73.08, 93.88, 91.67, 96.15, 83.95];
const FINAL: [f64; 5] = [100.0, 95.90, 97.29, 96.77, 96.39];

#[test]
fn coverage_means_match_hand_computed_values() {
    assert!((INITIAL.iter().sum::<f64>() - 438.73).abs() < 1e-9);
    assert!((FINAL.iter().sum::<f64>() - 486.35).abs() < 1e-9);

    let one_per_design: Vec<_> = runs()
        .iter()
        .filter(|r| r.state.config.as_ref().unwrap().temperature == 0.2)
        .map(metrics)
        .collect();
    assert_eq!(one_per_design.len(), 5);
    for (m, (i, f)) in one_per_design.iter().zip(INITIAL.iter().zip(FINAL)) {
        assert!(
            (m.coverage_mas_pct - i).abs() < 1e-9,
            "{} initial {}",
            m.design_id,
            m.coverage_mas_pct
        );
        assert!(
            (m.coverage_hitl_pct - f).abs() < 1e-9,
            "{} final {}",
            m.design_id,
            m.coverage_hitl_pct
        );
    }

    for rows in [one_per_design, runs().iter().map(metrics).collect()] {
        let means = checks::means(rows).unwrap();
        assert!((means.initial - 87.746).abs() < 1e-3, "{}", means.initial);
        assert!((means.final_ - 97.270).abs() < 1e-3, "{}", means.final_);
        assert!(
            (means.zero_shot_delta - 17.896).abs() < 1e-3,
            "{}",
            means.zero_shot_delta
        );
    }
}

#[test]
fn report_fixtures_round_trip() {
    assert!(checks::check_report_corpus().unwrap() >= 9);
}

fn finding_line() -> impl Strategy<Value = String> {
    (
        prop_oneof![Just("FATAL"), Just("ERROR"), Just("WARNING")],
        "[A-Za-z0-9_.-]{1,16}",
        "[a-z_][a-z0-9_]{0,12}",
        1u32..5000,
        "[ -~]{0,40}",
    )
        .prop_map(|(sev, rule, module, line, msg)| format!("{sev} [{rule}] {module}:{line} {msg}"))
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 48, ..ProptestConfig::default() })]

    #[test]
    fn any_mutation_of_any_run_closes_the_gate(
        run in 0usize..15,
        m in prop::sample::select(Mutation::ALL.to_vec()),
        pick in any::<usize>(),
        shortfall in 0.001f64..=1.0,
    ) {
        checks::check_mutation(&runs()[run], m, pick, shortfall).map_err(TestCaseError::fail)?;
    }
}

proptest! {
    #[test]
    fn category_is_total(rule in "\\PC{0,24}") {
        let _ = category_for_rule(&rule);
    }

    #[test]
    fn parsers_never_panic(text in "\\PC{0,200}") {
        let _ = parse_lint_report(&text);
        let _ = parse_formal_report(&text);
        let _ = parse_coverage_report(&text);
    }

    #[test]
    fn lint_lines_round_trip(lines in prop::collection::vec(finding_line(), 0..12)) {
        let text = lines.join("\n");
        let parsed = parse_lint_report(&text).map_err(|e| TestCaseError::fail(e.to_string()))?;
        prop_assert_eq!(parsed.len(), lines.len());
        let again = parse_lint_report(&render_lint_report(&parsed)).map_err(|e| TestCaseError::fail(e.to_string()))?;
        prop_assert_eq!(&again, &parsed);
        prop_assert_eq!(render_lint_report(&again), render_lint_report(&parsed));
    }

    #[test]
    fn unknown_rule_codes_land_in_other(rule in "[QXYZ][A-Za-z0-9_-]{0,10}", line in 1u32..100) {
        let f = parse_lint_report(&format!("ERROR [{rule}] m:{line} vendor rule")).unwrap();
        prop_assert_eq!(f[0].category, LintCategory::Other);
        prop_assert_eq!(f[0].severity, Severity::Error);
    }
}
