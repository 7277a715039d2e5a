//! Desk-scale demonstration stack: synthetic world, corruption protocols,
//! a toy flow-matching policy, the full weighted training loop, closed-loop
//! evaluation, and paired weighted-vs-uniform comparisons.

pub mod compare;
pub mod corrupt;
pub mod data;
pub mod eval;
pub mod policy;
pub mod train;
pub mod world;
