//! Permissioned ledger simulator with a deterministic contract engine.

pub mod codec;
pub mod crypto;
pub mod engine;
pub mod fixed;
pub mod ledger;
pub mod policy;
pub mod state;
pub mod gov;
pub mod oracle;
pub mod energy;
pub mod forecast;
pub mod health;
pub mod swarm;
pub mod net;
pub mod scenario;
pub mod cli;
