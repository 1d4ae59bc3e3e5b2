//! Library surface of the command-line driver: the sweep harness, CSV/SVG
//! emission, deterministic JSON reports, and the invariant-check suite. The
//! `elfatt` binary is a thin clap wrapper over these.

pub mod bench;
pub mod check;
pub mod emit;
pub mod report;
