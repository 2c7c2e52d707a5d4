//! The single LIF update used by every driver (tensor inference, the
//! gradient tape and the accelerator model). Keeping one routine is what
//! makes their spike trains bit-identical.

use super::NeuronParams;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NeuronState {
    pub v: f64,
    pub refractory: u32,
}

impl NeuronState {
    pub fn rest(p: &NeuronParams) -> Self {
        NeuronState {
            v: p.v_reset,
            refractory: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StepOutcome {
    /// Neuron was refractory: no integration, no spike.
    Refractory,
    /// `u` is the pre-reset potential `alpha * v + input`.
    Integrated { u: f64, fired: bool },
}

impl StepOutcome {
    #[inline]
    pub fn fired(&self) -> bool {
        matches!(self, StepOutcome::Integrated { fired: true, .. })
    }
}

/// Advances one neuron by one step. `input` is the weighted sum of this
/// step's presynaptic spikes, accumulated from `0.0` in ascending source
/// order.
#[inline]
pub fn lif_step(p: &NeuronParams, st: &mut NeuronState, input: f64) -> StepOutcome {
    if st.refractory > 0 {
        st.refractory -= 1;
        return StepOutcome::Refractory;
    }
    let u = p.alpha * st.v + input;
    if u >= p.theta {
        st.v = p.v_reset;
        st.refractory = p.tau_ref;
        StepOutcome::Integrated { u, fired: true }
    } else {
        st.v = u;
        StepOutcome::Integrated { u, fired: false }
    }
}
