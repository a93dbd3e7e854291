//! Propose, critique, revise, bounded by the iteration threshold.

use serde::{Deserialize, Serialize};

use super::CritiqueResult;
use crate::hitl::Trigger;
use crate::model::{AgentId, TicketId};

/// What a deliberation needs from the run it happens in.
pub trait Session {
    type Error;

    /// Opens a floor; the turn cycles through `participants` in order.
    fn open_floor(&mut self, participants: &[AgentId]) -> Result<(), Self::Error>;
    fn close_floor(&mut self) -> Result<(), Self::Error>;
    fn current_seq(&self) -> u64;
    /// Posts an earlier critique again without consulting a backend.
    fn repost_critique(&mut self, reviewer: &AgentId, critique: &CritiqueResult) -> Result<(), Self::Error>;
    fn open_ticket(&mut self, trigger: Trigger, source: &str, span: (u64, u64)) -> Result<TicketId, Self::Error>;
}

/// The work being deliberated. Implementations post their own messages;
/// `Ok(None)` from `propose` or `revise` means the response did not parse.
pub trait DeliberationTask<S: Session + ?Sized> {
    type Payload: Clone + PartialEq;

    /// Source name used for escalation tickets.
    fn source(&self) -> String;

    fn propose(&mut self, s: &mut S, iteration: u32) -> Result<Option<Self::Payload>, S::Error>;

    /// Revises `previous` to address every issue in `critiques`.
    fn revise(
        &mut self,
        s: &mut S,
        previous: Option<&Self::Payload>,
        critiques: &[CritiqueResult],
        iteration: u32,
    ) -> Result<Option<Self::Payload>, S::Error>;

    fn review(
        &mut self,
        s: &mut S,
        reviewer: &AgentId,
        payload: Option<&Self::Payload>,
        iteration: u32,
    ) -> Result<CritiqueResult, S::Error>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DeliberationResult {
    Accepted,
    Escalated,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeliberationOutcome<P> {
    pub result: DeliberationResult,
    pub iterations_used: u32,
    /// The accepted payload, or the last parseable proposal when escalated.
    pub final_payload: Option<P>,
    pub ticket: Option<TicketId>,
    pub span: (u64, u64),
    pub last_critiques: Vec<CritiqueResult>,
}

impl<P> DeliberationOutcome<P> {
    pub fn accepted(&self) -> bool {
        self.result == DeliberationResult::Accepted
    }
}

pub fn run_deliberation<S, T>(
    s: &mut S,
    task: &mut T,
    proposer: &AgentId,
    reviewers: &[AgentId],
    threshold: u32,
) -> Result<DeliberationOutcome<T::Payload>, S::Error>
where
    S: Session + ?Sized,
    T: DeliberationTask<S>,
{
    debug_assert!(threshold >= 1 && !reviewers.is_empty());
    let threshold = threshold.max(1);
    let span_start = s.current_seq() + 1;
    let mut floor = vec![proposer.clone()];
    floor.extend(reviewers.iter().cloned());
    s.open_floor(&floor)?;

    let mut previous: Option<T::Payload> = None;
    let mut last_good: Option<T::Payload> = None;
    let mut critiques: Vec<CritiqueResult> = Vec::new();

    for iteration in 1..=threshold {
        let proposal = if iteration == 1 {
            task.propose(s, iteration)?
        } else {
            task.revise(s, last_good.as_ref(), &critiques, iteration)?
        };

        let stagnant = iteration > 1 && proposal.is_some() && proposal == previous;
        if stagnant {
            for (reviewer, critique) in reviewers.iter().zip(&critiques) {
                s.repost_critique(reviewer, critique)?;
            }
        } else {
            critiques = Vec::with_capacity(reviewers.len());
            for reviewer in reviewers {
                critiques.push(task.review(s, reviewer, proposal.as_ref(), iteration)?);
            }
        }

        if proposal.is_some() {
            last_good = proposal.clone();
        }
        let accepted = !stagnant && proposal.is_some() && critiques.iter().all(CritiqueResult::is_accept);
        if accepted {
            s.close_floor()?;
            return Ok(DeliberationOutcome {
                result: DeliberationResult::Accepted,
                iterations_used: iteration,
                final_payload: proposal,
                ticket: None,
                span: (span_start, s.current_seq()),
                last_critiques: critiques,
            });
        }
        previous = proposal;
    }

    s.close_floor()?;
    let span = (span_start, s.current_seq());
    let ticket = s.open_ticket(Trigger::DeliberationExhausted, &task.source(), span)?;
    Ok(DeliberationOutcome {
        result: DeliberationResult::Escalated,
        iterations_used: threshold,
        final_payload: last_good,
        ticket: Some(ticket),
        span,
        last_critiques: critiques,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::{Issue, IssueKind};

    #[derive(Default)]
    struct Recorder {
        seq: u64,
        transcript: Vec<String>,
        tickets: Vec<(Trigger, String, (u64, u64))>,
        floor_open: bool,
    }

    impl Recorder {
        fn log(&mut self, line: String) {
            self.seq += 1;
            self.transcript.push(line);
        }
    }

    impl Session for Recorder {
        type Error = ();
        fn open_floor(&mut self, p: &[AgentId]) -> Result<(), ()> {
            self.floor_open = true;
            self.log(format!("open {}", p.len()));
            Ok(())
        }
        fn close_floor(&mut self) -> Result<(), ()> {
            self.floor_open = false;
            self.log("close".into());
            Ok(())
        }
        fn current_seq(&self) -> u64 {
            self.seq
        }
        fn repost_critique(&mut self, r: &AgentId, _: &CritiqueResult) -> Result<(), ()> {
            self.log(format!("repost {r}"));
            Ok(())
        }
        fn open_ticket(&mut self, t: Trigger, src: &str, span: (u64, u64)) -> Result<TicketId, ()> {
            assert!(!self.floor_open);
            self.tickets.push((t, src.to_string(), span));
            self.log("ticket".into());
            Ok(TicketId::from("t1"))
        }
    }

    /// Reviewer rejects the first `rejections` distinct proposals.
    struct Scripted {
        rejections: u32,
        reviews: u32,
        stagnate_at: Option<u32>,
        unparseable_at: Option<u32>,
    }

    impl DeliberationTask<Recorder> for Scripted {
        type Payload = u32;
        fn source(&self) -> String {
            "block:crc_core".into()
        }
        fn propose(&mut self, s: &mut Recorder, i: u32) -> Result<Option<u32>, ()> {
            s.log(format!("propose {i}"));
            Ok((self.unparseable_at != Some(i)).then_some(i))
        }
        fn revise(
            &mut self,
            s: &mut Recorder,
            prev: Option<&u32>,
            c: &[CritiqueResult],
            i: u32,
        ) -> Result<Option<u32>, ()> {
            assert!(c.iter().any(|c| !c.is_accept()));
            s.log(format!("revise {i}"));
            if self.stagnate_at == Some(i) {
                return Ok(prev.copied());
            }
            Ok((self.unparseable_at != Some(i)).then_some(i))
        }
        fn review(&mut self, s: &mut Recorder, r: &AgentId, p: Option<&u32>, _: u32) -> Result<CritiqueResult, ()> {
            s.log(format!("review {r}"));
            if p.is_none() {
                return Ok(CritiqueResult::from_issues(vec![Issue::new(
                    IssueKind::SyntaxError,
                    "unparseable",
                    None,
                )]));
            }
            self.reviews += 1;
            if self.reviews <= self.rejections {
                Ok(CritiqueResult::from_issues(vec![Issue::new(
                    IssueKind::MissingLogic,
                    "more",
                    None,
                )]))
            } else {
                Ok(CritiqueResult::accept())
            }
        }
    }

    fn run(task: &mut Scripted, threshold: u32) -> (DeliberationOutcome<u32>, Recorder) {
        let mut s = Recorder::default();
        let out = run_deliberation(
            &mut s,
            task,
            &AgentId::from("rtl-agent"),
            &[AgentId::from("critic")],
            threshold,
        )
        .unwrap();
        (out, s)
    }

    fn scripted(rejections: u32) -> Scripted {
        Scripted {
            rejections,
            reviews: 0,
            stagnate_at: None,
            unparseable_at: None,
        }
    }

    #[test]
    fn accepts_after_one_rejection() {
        let (out, s) = run(&mut scripted(1), 5);
        assert!(out.accepted());
        assert_eq!(out.iterations_used, 2);
        assert_eq!(out.final_payload, Some(2));
        assert!(s.tickets.is_empty());
    }

    #[test]
    fn five_rejections_escalate_once() {
        let (out, s) = run(&mut scripted(5), 5);
        assert_eq!(out.result, DeliberationResult::Escalated);
        assert_eq!(out.iterations_used, 5);
        assert_eq!(s.tickets.len(), 1);
        assert_eq!(s.tickets[0].0, Trigger::DeliberationExhausted);
        assert_eq!(s.tickets[0].2, (1, s.seq - 1));
    }

    #[test]
    fn stagnant_revision_is_a_failed_iteration() {
        let mut task = scripted(1);
        task.stagnate_at = Some(2);
        let (out, s) = run(&mut task, 5);
        assert_eq!(out.iterations_used, 3);
        assert!(s.transcript.contains(&"repost critic".to_string()));
        assert_eq!(task.reviews, 2);
    }

    #[test]
    fn unparseable_proposal_counts_as_revise() {
        let mut task = scripted(0);
        task.unparseable_at = Some(1);
        let (out, _) = run(&mut task, 5);
        assert!(out.accepted());
        assert_eq!(out.iterations_used, 2);
    }

    #[test]
    fn threshold_one() {
        let (out, s) = run(&mut scripted(1), 1);
        assert_eq!(out.iterations_used, 1);
        assert_eq!(s.tickets.len(), 1);
    }
}
