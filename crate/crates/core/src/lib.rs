//! Input-triggered hardware Trojan laboratory for spiking neural networks.
//!
//! The crate covers the whole attack chain at desk scale:
//!
//! * [`data`]: spike tensors, AER event lists and labeled datasets.
//! * [`snn`]: discrete-time LIF inference with dead/saturated fault overrides.
//! * [`grad`]: surrogate gradients, Gumbel-Softmax relaxation, STE, Adam and a
//!   small trainer.
//! * [`attack`]: fault-injection campaign and spike-pattern trigger selection.
//! * [`trigger`]: gradient-based synthesis of the spiking input trigger.
//! * [`hw`]: behavioral model of a digital AER accelerator carrying the
//!   trigger checker and the payload FSM.

pub mod attack;
pub mod data;
pub mod error;
pub mod grad;
pub mod hw;
pub mod seed;
pub mod snn;
pub mod svg;
pub mod trigger;

pub use error::{Error, Result};
