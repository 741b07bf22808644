//! Translation of temporal specifications over linear integer arithmetic
//! into finite symbolic monitors, and products of those monitors with
//! parity games derived from deterministic automata.

pub mod expansion;
pub mod fixpoint;
pub mod fol;
pub mod game;
pub mod ltl;
pub mod monitor;
pub mod rules;
pub mod solver;
