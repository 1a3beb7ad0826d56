//! Checkpointing a proof-of-stake chain onto a simulated proof-of-work
//! ledger with threshold Schnorr signatures over Taproot-style outputs.

pub mod adversary;
pub mod bench;
pub mod codec;
pub mod crypto;
pub mod dkg;
pub mod net;
pub mod orchestrator;
pub mod pos;
pub mod scenario;
pub mod sim;
pub mod frost;
pub mod ledger;
pub mod taproot;
pub mod verifier;
