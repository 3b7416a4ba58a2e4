//! Subcommand implementations. Each takes its validated config and the
//! output directory and returns whether every requested check passed.

pub mod attack;
pub mod distill;
pub mod eval;
pub mod gen_data;
pub mod pipeline;
pub mod theory;
pub mod train;
pub mod transfer;
