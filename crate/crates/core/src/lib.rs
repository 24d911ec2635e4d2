//! Streaming graph query engine.
//!
//! Persistent regular queries over timestamped edge streams under sliding
//! windows. Queries compile to an algebra of five operators (window scan,
//! filter, union, pattern, path); plans execute incrementally and their
//! output snapshots agree with one-time evaluation of the query on the
//! window content at every instant.

pub mod algebra;
pub mod api;
pub mod automaton;
pub mod executor;
pub mod io;
pub mod intern;
pub mod model;
pub mod oracle;
pub mod physical;
pub mod query;
pub mod regex;
pub mod rewrite;

pub use automaton::{build_dfa, Dfa, StateId};
pub use model::*;
pub use regex::{parse_regex, Regex, RegexError};
