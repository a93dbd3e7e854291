//! Acceptance checks. Each test prints one `PASS`/`FAIL` line straight to
//! stdout (bypassing the harness capture) and then asserts.

mod common;

use std::cell::Cell;
use std::io::Write;
use std::time::{Duration, Instant};

use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestRng, TestRunner};

use tapeloop_core::model::LintCategory;
use tapeloop_core::tooling::{category_for_rule, parse_lint_report};

use common::checks::{self, Mutation};
use common::props::{self, Fuzz};
use common::{metrics, mismatches, run, run_in, scenarios};

fn report(n: u32, name: &str, outcome: Result<String, String>) {
    let line = match &outcome {
        Ok(detail) => format!("acceptance {n}/8 {name}: PASS ({detail})"),
        Err(detail) => format!("acceptance {n}/8 {name}: FAIL ({detail})"),
    };
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{line}");
    let _ = out.flush();
    if let Err(detail) = outcome {
        panic!("{name}: {detail}");
    }
}

fn runner(cases: u32) -> TestRunner {
    let config = Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    };
    TestRunner::new_with_rng(config, TestRng::deterministic_rng(RngAlgorithm::ChaCha))
}

fn secs(d: Duration) -> String {
    format!("{:.2} s", d.as_secs_f64())
}

#[test]
fn c1_benchmark_rows_replay() {
    let outcome = (|| {
        let mut slowest = Duration::ZERO;
        let mut rows = 0;
        for s in scenarios() {
            let start = Instant::now();
            for t in &s.temperatures {
                let r = run(s, *t);
                if !r.signed_off() || !r.hitl_misses.is_empty() {
                    return Err(format!(
                        "{} t={t}: {} misses {:?}",
                        s.design_id, r.outcome.phase, r.hitl_misses
                    ));
                }
                let diff = mismatches(s, &metrics(&r));
                if !diff.is_empty() {
                    return Err(diff.join("; "));
                }
                rows += 1;
            }
            let took = start.elapsed();
            if took >= Duration::from_secs(5) {
                return Err(format!("{} took {}", s.design_id, secs(took)));
            }
            slowest = slowest.max(took);
        }
        Ok(format!(
            "{} scenarios, {rows} rows exact, slowest {}",
            scenarios().len(),
            secs(slowest)
        ))
    })();
    report(1, "benchmark rows replay", outcome);
}

#[test]
fn c2_escalation_threshold() {
    let crc = &scenarios()[0];
    let outcome = (0..=10)
        .try_for_each(|n| props::check_escalation(crc, 0.2, 5, n))
        .map(|_| "rejection counts 0..=10 at threshold 5".to_string());
    report(2, "escalation threshold", outcome);
}

#[test]
fn c3_turn_taking_fuzz() {
    let cases = 128;
    let chats = Cell::new(0usize);
    let result = runner(cases).run(&props::fuzz(), |f: Fuzz| {
        let (s, config) = props::fuzzed(scenarios(), &f);
        let r = props::execute(&s, config);
        let n = props::check_turn_taking(&r.records).map_err(TestCaseError::fail)?;
        prop_assert!(n > 0, "no chat at all");
        chats.set(chats.get() + n);
        Ok(())
    });
    let outcome = result
        .map(|_| format!("{cases} fuzzed runs, {} turns checked", chats.get()))
        .map_err(|e| e.to_string());
    report(3, "turn-taking fuzz", outcome);
}

#[test]
fn c4_termination() {
    let start = Instant::now();
    let fifo = &scenarios()[2];
    let outcome = (|| {
        for t in 1..=8 {
            props::zero_progress(fifo, t)?;
        }
        let cases = 64;
        let strategy = (props::fuzz(), prop_oneof![Just(10_000u64), 32u64..2_000], any::<bool>());
        runner(cases)
            .run(&strategy, |(mut f, budget, always_revise)| {
                f.step_budget = Some(budget);
                f.always_revise = always_revise;
                let (s, config) = props::fuzzed(scenarios(), &f);
                let r = props::execute(&s, config);
                props::check_budget(&r, budget).map_err(TestCaseError::fail)?;
                Ok(())
            })
            .map_err(|e| e.to_string())?;
        let took = start.elapsed();
        if took >= Duration::from_secs(60) {
            return Err(format!("suite took {}", secs(took)));
        }
        Ok(format!(
            "zero-progress thresholds 1..=8, {cases} adversarial runs in budget, {}",
            secs(took)
        ))
    })();
    report(4, "termination", outcome);
}

#[test]
fn c5_replay_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let outcome = (|| {
        let mut n = 0;
        for s in scenarios() {
            for t in &s.temperatures {
                checks::check_replay(&run_in(s, *t, dir.path()))?;
                n += 1;
            }
        }
        Ok(format!("{n} logs replay to their recorded hash"))
    })();
    report(5, "replay determinism", outcome);
}

#[test]
fn c6_aggregation() {
    let outcome = (|| {
        let rows = scenarios()
            .iter()
            .map(|s| metrics(&run(s, s.temperatures[0])))
            .collect();
        let m = checks::means(rows)?;
        let detail = format!(
            "initial {:.3}, final {:.3}, zero-shot delta {:+.3}",
            m.initial, m.final_, m.zero_shot_delta
        );
        let close = |got: f64, want: f64| (got - want).abs() <= 1e-3;
        if close(m.initial, 87.746) && close(m.final_, 97.270) && close(m.zero_shot_delta, 17.896) {
            Ok(detail)
        } else {
            Err(detail)
        }
    })();
    report(6, "aggregation", outcome);
}

#[test]
fn c7_signoff_soundness() {
    let outcome = (|| {
        let mut checked = 0;
        for s in scenarios() {
            for t in &s.temperatures {
                let r = run(s, *t);
                for m in Mutation::ALL {
                    checks::check_mutation(&r, m, 0, 1.0)?;
                    checked += 1;
                }
                if s.design_id == "ecc" {
                    checks::check_waived_signoff(&r, 95.90)?;
                }
            }
        }
        Ok(format!("{checked} mutations rejected, ecc at 95.90 needs its waivers"))
    })();
    report(7, "sign-off soundness", outcome);
}

#[test]
fn c8_parser_corpus() {
    let outcome = (|| {
        let files = checks::check_report_corpus()?;
        let cases = 256;
        runner(cases)
            .run(&("\\PC{1,24}", 1u32..1000), |(rule, line)| {
                let _ = category_for_rule(&rule);
                if let Ok(f) = parse_lint_report(&format!("WARNING [{rule}] m:{line} x")) {
                    prop_assert_eq!(f[0].category, category_for_rule(&f[0].rule_code));
                }
                let vendor = format!(
                    "Q{}",
                    rule.chars().filter(char::is_ascii_alphanumeric).collect::<String>()
                );
                prop_assert_eq!(category_for_rule(&vendor), LintCategory::Other);
                Ok(())
            })
            .map_err(|e| e.to_string())?;
        Ok(format!(
            "{files} fixtures round-trip, {cases} arbitrary rule codes categorized"
        ))
    })();
    report(8, "parser corpus", outcome);
}
