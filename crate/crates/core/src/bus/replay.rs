use super::EventRecord;
use crate::model::canonical_hash;
use crate::workflow::RunState;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ReplayError {
    #[error("corrupt log at seq {0}")]
    CorruptLog(u64),
    #[error("state hash mismatch at seq {0}")]
    HashMismatch(u64),
}

/// Folds a log into the state it describes, checking every recorded hash.
pub fn replay_log(records: &[EventRecord]) -> Result<RunState, ReplayError> {
    let mut state = RunState::default();
    for (idx, record) in records.iter().enumerate() {
        if record.seq != idx as u64 + 1 || record.granularity != record.payload.granularity() {
            return Err(ReplayError::CorruptLog(record.seq));
        }
        state
            .apply(&record.payload)
            .map_err(|_| ReplayError::CorruptLog(record.seq))?;
        if canonical_hash(&state) != record.state_hash_after {
            return Err(ReplayError::HashMismatch(record.seq));
        }
    }
    Ok(state)
}
