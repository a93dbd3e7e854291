//! Replay, sign-off gate, aggregation and report corpus checks shared by the
//! invariant tests and the acceptance target. Each returns `Err(detail)`.

use std::path::Path;

use tapeloop_core::bus::{read_log, replay_log};
use tapeloop_core::metrics::{aggregate_table, compare_zero_shot, mas_coverage, CoverageRows, RunMetrics};
use tapeloop_core::model::{
    canonical_hash, CexRecord, CoverageSnapshot, LintCategory, LintFinding, PropertyStatus, Severity, SourceLocation,
};
use tapeloop_core::tooling::{
    parse_coverage_report, parse_formal_report, parse_lint_report, render_coverage_report, render_formal_report,
    render_lint_report,
};
use tapeloop_core::workflow::{gate_failures, sign_off, LocalRun, RunEvent, RunState};

use super::repo_root;

/// Reads the run's log back from disk and replays it from scratch.
pub fn check_replay(run: &LocalRun) -> Result<(), String> {
    let dir = run.dir.as_ref().ok_or("run has no data dir")?;
    let records = read_log(dir.join("events.jsonl")).map_err(|e| e.to_string())?;
    if records != run.records {
        return Err(format!("{}: log on disk differs from the run's records", run.run_id));
    }
    let state = replay_log(&records).map_err(|e| format!("{}: {e}", run.run_id))?;
    let replayed = canonical_hash(&state);
    let recorded = run.final_hash.clone().ok_or("no final hash")?;
    if replayed != recorded || records.last().map(|r| &r.state_hash_after) != Some(&recorded) {
        return Err(format!(
            "{}: replayed {} recorded {}",
            run.run_id,
            replayed.as_str(),
            recorded.as_str()
        ));
    }
    Ok(())
}

/// State just before the sign-off record, where the gate passes.
pub fn pre_signoff(run: &LocalRun) -> Result<RunState, String> {
    let at = run
        .records
        .iter()
        .position(|r| matches!(r.payload, RunEvent::SignedOff { .. }))
        .ok_or_else(|| format!("{} never signed off", run.run_id))?;
    let mut state = RunState::default();
    for r in &run.records[..at] {
        state.apply(&r.payload).map_err(|e| e.to_string())?;
    }
    sign_off(&state).map_err(|e| format!("{}: gate fails before mutation: {:?}", run.run_id, e.codes()))?;
    Ok(state)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mutation {
    OpenCex,
    FatalLint,
    CoverageBelowTarget,
}

impl Mutation {
    pub const ALL: [Mutation; 3] = [Mutation::OpenCex, Mutation::FatalLint, Mutation::CoverageBelowTarget];

    fn code(self) -> &'static str {
        match self {
            Mutation::OpenCex => "open-cex",
            Mutation::FatalLint => "blocking-lint",
            Mutation::CoverageBelowTarget => "coverage-below-target",
        }
    }
}

/// Applies one mutation; `pick` selects the property or module and
/// `shortfall` how far under target coverage lands.
pub fn mutate(state: &mut RunState, m: Mutation, pick: usize, shortfall: f64) {
    match m {
        Mutation::OpenCex => {
            let i = pick % state.properties.len();
            let p = &mut state.properties[i];
            p.status = PropertyStatus::Cex;
            state.cex.insert(
                p.property_id.clone(),
                CexRecord {
                    property_id: p.property_id.clone(),
                    trace_summary: "cycle0:rst=1".into(),
                    depth: 1,
                    failing_signals: vec!["out".into()],
                },
            );
        }
        Mutation::FatalLint => {
            let module = state.modules[pick % state.modules.len()].clone();
            let lint = state.lint.get_mut(&module).expect("module was linted");
            lint.findings.push(LintFinding {
                severity: Severity::Fatal,
                rule_code: "STX-001".into(),
                message: "unexpected token".into(),
                location: SourceLocation { module, line: 1 },
                category: LintCategory::Syntax,
            });
        }
        Mutation::CoverageBelowTarget => {
            let pct = state.coverage_target() - shortfall;
            let module = state.modules[0].clone();
            state.coverage = Some(CoverageSnapshot::new(pct, pct, pct, vec![format!("{module}:1")]));
        }
    }
}

/// The mutated state fails the gate with exactly the mutation's code.
pub fn check_mutation(run: &LocalRun, m: Mutation, pick: usize, shortfall: f64) -> Result<(), String> {
    let mut state = pre_signoff(run)?;
    mutate(&mut state, m, pick, shortfall);
    match sign_off(&state) {
        Ok(_) => Err(format!("{}: {m:?} still signs off", run.run_id)),
        Err(e) if e.codes() == vec![m.code()] => Ok(()),
        Err(e) => Err(format!("{}: {m:?} failed with {:?}", run.run_id, e.codes())),
    }
}

/// Signs off below target, and only because every uncovered location was
/// waived: dropping the waivers closes the gate.
pub fn check_waived_signoff(run: &LocalRun, consolidated: f64) -> Result<(), String> {
    if run.state.signoff.is_none() {
        return Err("not signed off".into());
    }
    let cov = run.state.coverage.as_ref().ok_or("no coverage")?;
    let target = run.state.coverage_target();
    if (cov.consolidated_pct - consolidated).abs() > 1e-9 || cov.meets(target) {
        return Err(format!("consolidated {} against target {target}", cov.consolidated_pct));
    }
    if cov.unreachable_waived.is_empty() || !cov.gap_fully_waived() {
        return Err(format!("waived {:?} of {:?}", cov.unreachable_waived, cov.uncovered));
    }
    let mut state = pre_signoff(run)?;
    if let Some(c) = state.coverage.as_mut() {
        c.unreachable_waived.clear();
    }
    let codes: Vec<&str> = gate_failures(&state).iter().map(|f| f.code()).collect();
    if codes != ["coverage-below-target"] {
        return Err(format!("without waivers the gate reports {codes:?}"));
    }
    Ok(())
}

pub struct Means {
    pub initial: f64,
    pub final_: f64,
    pub zero_shot_delta: f64,
}

pub fn means(rows: Vec<RunMetrics>) -> Result<Means, String> {
    let text = std::fs::read_to_string(repo_root().join("data/zero_shot.json")).map_err(|e| e.to_string())?;
    let zero: CoverageRows = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    let cmp = compare_zero_shot(&mas_coverage(&rows), &zero.rows).map_err(|e| e.to_string())?;
    let table = aggregate_table(rows).map_err(|e| e.to_string())?;
    Ok(Means {
        initial: table.aggregates.coverage_mas_pct,
        final_: table.aggregates.coverage_hitl_pct,
        zero_shot_delta: cmp.mean_delta,
    })
}

/// Every fixture under `fixtures/reports/<kind>/` survives parse, render,
/// parse unchanged. Returns how many files were checked.
pub fn check_report_corpus() -> Result<usize, String> {
    let root = repo_root().join("fixtures/reports");
    let mut checked = 0;
    for kind in ["lint", "formal", "coverage"] {
        let mut files: Vec<_> = std::fs::read_dir(root.join(kind))
            .map_err(|e| e.to_string())?
            .map(|e| e.unwrap().path())
            .collect();
        files.sort();
        for path in files {
            roundtrip(kind, &path)?;
            checked += 1;
        }
    }
    Ok(checked)
}

fn roundtrip(kind: &str, path: &Path) -> Result<(), String> {
    let text = std::fs::read_to_string(path).map_err(|e| e.to_string())?;
    let name = path.display();
    let same = match kind {
        "lint" => {
            let a = parse_lint_report(&text).map_err(|e| format!("{name}: {e}"))?;
            a == parse_lint_report(&render_lint_report(&a)).map_err(|e| format!("{name}: {e}"))?
        }
        "formal" => {
            let a = parse_formal_report(&text).map_err(|e| format!("{name}: {e}"))?;
            a == parse_formal_report(&render_formal_report(&a)).map_err(|e| format!("{name}: {e}"))?
        }
        _ => {
            let a = parse_coverage_report(&text).map_err(|e| format!("{name}: {e}"))?;
            a == parse_coverage_report(&render_coverage_report(&a)).map_err(|e| format!("{name}: {e}"))?
        }
    };
    if !same {
        return Err(format!("{name}: round trip changed the report"));
    }
    Ok(())
}
