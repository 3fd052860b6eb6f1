//! Leaderless swarm consensus by min-plus awareness gossip.
//!
//! Every gnome tracks an awareness radius `α`: how far around it the current
//! proposal is known to have spread. Each turn it takes one plus the minimum
//! over its neighborhood. On a graph of diameter at most `d`, every gnome
//! reaches `α = d` on the same turn, no later than `2d`.
//!
//! The crate is `no_std` (with `alloc`) and contains the graph model, the
//! per-gnome state machine, a lockstep engine, a discrete-event engine with
//! bounded message delays, and adversarial scripts.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod adversary;
pub mod async_sim;
pub mod protocol;
pub mod sync;
pub mod topology;

pub use adversary::{
    ChurnEvent, ChurnKind, ChurnScript, JokerScript, SanityMode, ScriptError, Strategy,
    ViolationEvent,
};
pub use async_sim::{run_async, AsyncError, AsyncScenario, AsyncTrace, DelayKind, DelayModel};
pub use protocol::{
    alpha_step, clock_step, consensus_reached, phase_of, Awareness, ConflictMode, GnomeState,
    Phase, Proposal, ProposalId, Rule,
};
pub use sync::{oracle_alpha, run, RunResult, Scenario, SimError, TurnTrace};
pub use topology::{generate, GnomeId, GraphKind, Topology, TopologyError};
