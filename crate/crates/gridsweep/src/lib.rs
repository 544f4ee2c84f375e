//! Toolkit for running parameter-sweep experiments over a pool of priced
//! compute resources, with molecule records served out of indexed databases.
//!
//! The pieces, in pipeline order:
//!
//! - [`plan`] — the declarative plan language: parameter declarations plus
//!   `nodestart`/`main` task scripts, with `$name` placemaker substitution.
//! - [`rungen`] — expands a plan and value selections into a run file, one
//!   job per point of the parameter cross product.
//! - [`cdb`] — byte-offset indexes over multi-record MOL2 databases, a
//!   concurrent TCP record server, the matching client, and replica
//!   selection over a catalogue of servers.
//! - [`broker`] — deadline/budget-constrained job allocation (optimize for
//!   time or for cost), grid-dollar accounting, and the final report.
//! - [`fabric`] — where jobs actually run: a deterministic discrete-event
//!   simulator and a local process backend driving the mock dock kernel.
//! - [`cli`] — the `gridsweep` command-line entry point tying it together.

pub mod broker;
pub mod cdb;
pub mod cli;
pub mod fabric;
pub mod plan;
pub mod rungen;
