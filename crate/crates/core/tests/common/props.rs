//! Scenario mutations and the checks the property suites and the
//! acceptance target share. Checks return `Err(detail)` on a violation.

use std::collections::BTreeMap;

use proptest::prelude::*;
use serde_json::json;

use tapeloop_core::agents::DeliberationResult;
use tapeloop_core::bus::{select_next_speaker, EventRecord, SpeakerPolicy};
use tapeloop_core::hitl::{ResolutionBody, ResolutionKind, Trigger};
use tapeloop_core::llm::{IterationRange, ScriptEntry};
use tapeloop_core::model::{Phase, RunConfig, RunId};
use tapeloop_core::tooling::{HitlScript, Scenario};
use tapeloop_core::workflow::{run_local, LocalRun, RunEvent, RunState};

pub const REVISE_SPEC: &str =
    "```critique\n{\"verdict\": \"revise\", \"issues\": [{\"kind\": \"spec-mismatch\", \"detail\": \"behavior still differs from the requirements\"}]}\n```";

pub fn entry(role: &str, task: &str, iterations: IterationRange, response: &str) -> ScriptEntry {
    ScriptEntry {
        role: role.into(),
        task: task.into(),
        design: None,
        phase: None,
        iterations,
        bucket: None,
        response: response.into(),
    }
}

/// Critic rejects every design check `n` times, then accepts. Each check
/// escalation gets its own hand patch so repeated escalations stay total.
pub fn with_check_rejections(base: &Scenario, n: u32) -> Scenario {
    let mut s = base.clone();
    s.scripts.retain(|e| !(e.role == "critic" && e.task == "check:*"));
    if n > 0 {
        s.scripts
            .insert(0, entry("critic", "check:*", IterationRange(1, Some(n)), REVISE_SPEC));
    }
    let patches: Vec<HitlScript> = s
        .hitl
        .iter()
        .filter(|h| h.source.starts_with("check:") && h.replacement().is_some())
        .cloned()
        .collect();
    s.hitl
        .retain(|h| !(h.source.starts_with("check:") && h.replacement().is_some()));
    for p in patches {
        let replacement = p.replacement().unwrap().to_string();
        for k in 1..=n.max(1) {
            let mut h = p.clone();
            h.occurrence = Some(k);
            h.resolution.payload["replacement"] =
                json!(replacement.replace("endmodule", &format!("  // hand patch {k}\nendmodule")));
            s.hitl.push(h);
        }
    }
    s
}

/// Drops the critic's scripted block rejections so only the loop under
/// test can escalate, whatever the threshold.
pub fn calm(base: &Scenario) -> Scenario {
    let mut s = base.clone();
    s.scripts
        .retain(|e| !(e.role == "critic" && e.task.starts_with("review:block:")));
    s
}

pub fn run_config(s: &Scenario, temperature: f64, threshold: u32) -> RunConfig {
    let mut config = RunConfig::new(s.design_id.clone(), "mock", temperature);
    config.iteration_threshold = threshold;
    config
}

pub fn execute(s: &Scenario, config: RunConfig) -> LocalRun {
    let id = RunId::new(format!("{}-prop", s.design_id));
    run_local(s, config, id, None).expect("run starts")
}

/// `(result, iterations)` of every deliberation on `source`, with the number
/// of tickets for that source opened since the previous outcome.
pub fn outcomes(records: &[EventRecord], source: &str) -> Vec<(DeliberationResult, u32, usize)> {
    let mut out = Vec::new();
    let mut tickets = 0;
    for r in records {
        match &r.payload {
            RunEvent::TicketOpened { ticket } if ticket.source == source => tickets += 1,
            RunEvent::DeliberationConcluded {
                source: s,
                result,
                iterations,
            } if s == source => {
                out.push((*result, *iterations, tickets));
                tickets = 0;
            }
            _ => {}
        }
    }
    out
}

/// A design check rejected `n` times under threshold `t`: `n / t` escalated
/// rounds of `t` iterations with one ticket each, then acceptance at
/// iteration `n % t + 1` of the last round, with no ticket.
pub fn check_escalation(base: &Scenario, temperature: f64, threshold: u32, n: u32) -> Result<(), String> {
    let s = with_check_rejections(&calm(base), n);
    let run = execute(&s, run_config(&s, temperature, threshold));
    if !run.signed_off() {
        return Err(format!(
            "n={n} t={threshold}: ended in {} ({:?})",
            run.outcome.phase, run.outcome.error
        ));
    }
    for module in run.state.modules.clone() {
        let got = outcomes(&run.records, &format!("check:{module}"));
        let mut want = vec![(DeliberationResult::Escalated, threshold, 1); (n / threshold) as usize];
        want.push((DeliberationResult::Accepted, n % threshold + 1, 0));
        if got != want {
            return Err(format!("n={n} t={threshold} {module}: got {got:?}, want {want:?}"));
        }
    }
    for t in &run.state.tickets {
        if t.transcript_span.0 > t.transcript_span.1 || t.transcript_span.0 == 0 {
            return Err(format!("ticket {} has span {:?}", t.ticket_id, t.transcript_span));
        }
    }
    Ok(())
}

/// Knobs for a fuzzed run. Every combination is a valid configuration;
/// scripts may run out, which ends the run early but still leaves a
/// transcript to check.
#[derive(Debug, Clone)]
pub struct Fuzz {
    pub design: usize,
    pub temperature: usize,
    pub critics: u32,
    pub lrm_expert: bool,
    pub threshold: u32,
    pub check_rejections: u32,
    pub step_budget: Option<u64>,
    pub always_revise: bool,
}

/// Valid run knobs over every design and temperature.
pub fn fuzz() -> impl Strategy<Value = Fuzz> {
    (0usize..5, 0usize..3, 1u32..=3, any::<bool>(), 1u32..=7, 0u32..=9).prop_map(
        |(design, temperature, critics, lrm_expert, threshold, check_rejections)| Fuzz {
            design,
            temperature,
            critics,
            lrm_expert,
            threshold,
            check_rejections,
            step_budget: None,
            always_revise: false,
        },
    )
}

pub fn fuzzed(designs: &[Scenario], f: &Fuzz) -> (Scenario, RunConfig) {
    let base = &designs[f.design % designs.len()];
    let mut s = with_check_rejections(base, f.check_rejections);
    if f.always_revise {
        s.scripts
            .insert(0, entry("critic", "*", IterationRange::ALL, REVISE_SPEC));
    }
    let temperature = s.temperatures[f.temperature % s.temperatures.len()];
    let mut config = run_config(&s, temperature, f.threshold);
    config.critic_count = f.critics;
    config.lrm_expert = f.lrm_expert;
    if let Some(b) = f.step_budget {
        config.step_budget = b;
    }
    (s, config)
}

/// Every chat sender is the speaker selected for its prefix, floors never
/// overlap, and inside a floor only its participants speak.
pub fn check_turn_taking(records: &[EventRecord]) -> Result<usize, String> {
    let policy = SpeakerPolicy::default();
    let mut state = RunState::default();
    let mut floor: Option<Vec<_>> = None;
    let mut chats = 0;
    for (i, r) in records.iter().enumerate() {
        if r.seq != i as u64 + 1 {
            return Err(format!("seq {} at position {i}", r.seq));
        }
        match &r.payload {
            RunEvent::FloorOpened { participants } => {
                if floor.is_some() {
                    return Err(format!("seq {}: floor opened while another is open", r.seq));
                }
                floor = Some(participants.clone());
            }
            RunEvent::FloorClosed => {
                if floor.take().is_none() {
                    return Err(format!("seq {}: floor closed twice", r.seq));
                }
            }
            RunEvent::Chat(msg) => {
                chats += 1;
                let expected = select_next_speaker(&records[..i], state.phase, &policy)
                    .map_err(|e| format!("seq {}: {e}", r.seq))?;
                if msg.sender != expected || r.sender != msg.sender {
                    return Err(format!(
                        "seq {}: {} spoke, {} held the turn",
                        r.seq, msg.sender, expected
                    ));
                }
                if floor.as_ref().is_some_and(|f| !f.contains(&msg.sender)) {
                    return Err(format!("seq {}: {} is not on the floor", r.seq, msg.sender));
                }
            }
            _ => {}
        }
        state.apply(&r.payload).map_err(|e| format!("seq {}: {e}", r.seq))?;
    }
    Ok(chats)
}

/// The run stopped within its step budget; a run that hit the budget
/// raised a step-budget ticket and aborted.
pub fn check_budget(run: &LocalRun, budget: u64) -> Result<(), String> {
    let n = run.records.len() as u64;
    if n > budget {
        return Err(format!("{n} events over a budget of {budget}"));
    }
    if !run.outcome.phase.is_terminal() {
        return Err(format!("run stopped in {}", run.outcome.phase));
    }
    let hit = run.state.tickets.iter().any(|t| t.trigger == Trigger::StepBudget);
    if hit && run.outcome.phase != Phase::Aborted {
        return Err("step budget ticket without abort".into());
    }
    Ok(())
}

/// Clean design checks and a closure agent that never proposes anything:
/// the closure loop's only way out is the zero-progress ticket.
pub fn zero_progress(base: &Scenario, threshold: u32) -> Result<(), String> {
    let mut s = with_check_rejections(&calm(base), 0);
    s.scripts.retain(|e| !(e.role == "critic" && e.task == "cex:*"));
    let run = execute(&s, run_config(&s, s.temperatures[0], threshold));
    let mut rounds = Vec::new();
    let mut opened_after = None;
    for r in &run.records {
        match &r.payload {
            RunEvent::LoopRound { name, round, fruitless } if name == "closure" => rounds.push((*round, *fruitless)),
            RunEvent::TicketOpened { ticket } if ticket.trigger == Trigger::ZeroProgressCoverage => {
                opened_after.get_or_insert(rounds.len());
            }
            _ => {}
        }
    }
    let Some(opened_after) = opened_after else {
        return Err(format!(
            "t={threshold}: no zero-progress ticket ({:?})",
            run.outcome.error
        ));
    };
    let want: Vec<(u32, bool)> = (1..=threshold).map(|r| (r, true)).collect();
    if opened_after != threshold as usize || rounds[..opened_after] != want[..] {
        return Err(format!("t={threshold}: ticket after {opened_after} rounds {rounds:?}"));
    }
    if !run.signed_off() {
        return Err(format!("t={threshold}: ended in {}", run.outcome.phase));
    }
    Ok(())
}

/// Body used to resolve a ticket in mutation tests.
pub fn body(kind: ResolutionKind, payload: serde_json::Value) -> ResolutionBody {
    ResolutionBody {
        kind,
        payload,
        effort_minutes: 1,
        reviewer_id: "prop".into(),
    }
}

pub fn count_by<K: Ord, T>(items: impl IntoIterator<Item = T>, key: impl Fn(&T) -> K) -> BTreeMap<K, usize> {
    let mut out = BTreeMap::new();
    for i in items {
        *out.entry(key(&i)).or_default() += 1;
    }
    out
}
