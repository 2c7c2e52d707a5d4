//! Payload controller of the infected core.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `A`: dormant. `B`: armed, waiting for a timestep. `C`: processing the
/// timestep's true spikes. `D`: masking the Trojan neuron and requesting a
/// fake spike. `E`: waiting for the fake spike to be acknowledged.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FsmState {
    A,
    B,
    C,
    D,
    E,
}

/// Output multiplexer select.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sel {
    Pass,
    Msk,
}

impl FsmState {
    pub fn sel(self) -> Sel {
        if self == FsmState::D {
            Sel::Msk
        } else {
            Sel::Pass
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct FsmInputs {
    /// The checker latch is set.
    pub matched: bool,
    /// Some spike arriving this timestep targets a non-Trojan neuron of the
    /// core.
    pub true_spikes_pending: bool,
    /// The core finished this timestep's true-spike processing.
    pub processing_done: bool,
    /// The fake spike request was acknowledged.
    pub fake_done: bool,
    /// A new timestep starts.
    pub timestep_boundary: bool,
}

/// One controller transition. Input combinations that cannot occur in a
/// well-formed core are rejected.
pub fn step_fsm(state: FsmState, x: FsmInputs) -> Result<FsmState> {
    use FsmState::*;
    let bad = |why: &str| Err(Error::Simulator(format!("FSM in state {state:?}: {why} ({x:?})")));
    if x.true_spikes_pending && x.processing_done {
        return bad("processing reported done while spikes are pending");
    }
    if x.fake_done && state != E {
        return bad("fake spike acknowledged but none was requested");
    }
    match state {
        A => Ok(if x.matched { B } else { A }),
        B if x.timestep_boundary => Ok(if x.true_spikes_pending { C } else { D }),
        B => Ok(B),
        C if x.timestep_boundary => bad("new timestep before the true spikes were processed"),
        C => Ok(if x.processing_done { D } else { C }),
        D if x.timestep_boundary => bad("new timestep before the fake spike was issued"),
        D => Ok(E),
        E if x.timestep_boundary => bad("new timestep before the fake spike completed"),
        E => Ok(if x.fake_done { B } else { E }),
    }
}
