//! Numerical toolkit for `SL(2,R)` cocycles over irrational circle rotations.

pub mod cli;
pub mod collisions;
pub mod dynamics;
pub mod linalg;
pub mod model;
pub mod resonance;
pub mod rotation;
