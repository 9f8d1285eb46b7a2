//! satbox: a desk-scale verifier for imperative heap programs.
//!
//! Stage 1 is a saturation-based proof engine: derived facts, term
//! occurrences and ordering constraints live in a score-ordered queue,
//! matching is performed up to known ground equalities (E-matching), and
//! case analysis is tracked in a tree of boxes. Stage 2 is a forward
//! symbolic executor for separation logic with frame inference, driven by
//! proof scripts. Every claim the engine makes can be cross-checked by
//! independent brute-force oracles at small scale.

pub mod engine;
pub mod heap_lang;
pub mod nat_arith;
pub mod oracle;
pub mod rule_steps;
pub mod scripts;
pub mod sep_logic;
pub mod tables;
pub mod term;
pub mod theory_io;
