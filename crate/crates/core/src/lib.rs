//! Analytical model and deterministic discrete-event simulator for the
//! RIS-DCF medium-access protocol in reflective-surface-assisted multi-hop
//! relay wireless networks.
//!
//! The crate splits into five parts:
//!
//! - [`channel`]: path loss, Nakagami-m fading, conventional and
//!   reflective-link SNR, Monte-Carlo ergodic rates and the reflective-link
//!   utilization efficiency.
//! - [`mac`]: closed-form dual-hop and m-hop saturation throughput, timing
//!   aggregates, contention probabilities and the backoff-window-to-
//!   transmission-probability fixed point.
//! - [`frame`]: bit-exact frame layouts with CRC-32 integrity and the
//!   virtual-carrier-sensing duration table.
//! - [`fsm`]: deterministic per-node protocol state machines for sending and
//!   receiving nodes, including the relay's reflective-link lifecycle.
//! - [`sim`]: event-queue simulator with a slotted contention engine that
//!   cross-validates the closed forms, and a full-protocol engine that drives
//!   the state machines over a shared medium.

pub mod channel;
pub mod error;
pub mod frame;
pub mod fsm;
pub mod mac;

pub use channel::{ChannelParams, ChannelRealization, RateMode};
pub use error::{Error, Result};
pub use frame::{Addr, Frame};
pub use mac::{
    ContentionConfig, ContentionProbabilities, LinkMode, MacTimings, ThroughputResult, TimingSet,
};
