//! Planning the attack: which neuron to infect and which output pattern
//! wakes the Trojan.

mod campaign;
mod pattern;

pub use campaign::{fault_campaign, pick_trojan, FaultEntry, FaultReport};
pub use pattern::{
    check_pattern, record_outputs, select_pattern, select_pattern_for, DriveBound, PatternCheck, PatternFile, RecordedOutputs, TriggerPattern,
    DEFAULT_CANDIDATE_BUDGET, MAX_PATTERN_LEN,
};

pub(crate) use pattern::count_occurrences;
