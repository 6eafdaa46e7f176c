//! Analysis toolkit for synchronous multiparty message-passing networks.
//!
//! A network is a parallel composition of located threads that talk to each
//! other by synchronous handshakes. This crate parses a small textual notation
//! for such networks and for global session types, builds labelled transition
//! systems under two operational semantics, decides liveness under a range of
//! fairness assumptions, checks networks against global types, and synthesises
//! a candidate global type from a network.

pub mod fairness;
pub mod generate;
pub mod semantics;
pub mod syntax;
pub mod synthesis;
pub mod types;
