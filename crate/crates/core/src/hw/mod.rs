//! Behavioral model of a digital AER accelerator whose infected core carries
//! a spike-pattern checker and a fake-spike payload.

mod attack;
mod checker;
mod diff;
mod fsm;
mod system;
mod trace;

pub use attack::{
    attack_dataset, exhaustive_test_count, exhaustive_test_count_for, run_attack_sequence, AttackConfig,
    AttackOutcome, AttackSummary, SampleAttack,
};
pub use checker::TriggerChecker;
pub use diff::{diff_layers, diff_traces, SpikeDiff};
pub use fsm::{step_fsm, FsmInputs, FsmState, Sel};
pub use system::{build_system, AddressMap, CoreConfig, HtConfig, RunOutput, System, SystemStats};
pub use trace::{HwTrace, Source, TraceEvent, TraceKind};
