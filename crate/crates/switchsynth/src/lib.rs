//! Synthesis of switching controllers for reach-while-stay specifications
//! on nonlinear switched systems.
//!
//! The pipeline discovers control Lyapunov-like certificates (optionally
//! combined with composite barrier functions) by counterexample-guided
//! inductive synthesis: candidate coefficients come from a linear-arithmetic
//! feasibility solver, counterexample states from a delta-complete interval
//! solver. From a certificate the crate extracts a hysteresis switching law
//! with a provable minimum dwell time, simulates the closed loop, and
//! composes reach-to-facet subproblems into controllers for richer safe
//! sets via a finite reachability game.

pub mod abstraction;
pub mod cegis;
pub mod cli;
pub mod icp;
pub mod lra;
pub mod model;
pub mod modelfile;
pub mod runtime;
pub mod symexpr;

pub use symexpr::{Expr, Interval, IntervalBox, VarContext};
