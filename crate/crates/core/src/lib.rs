//! Physics simulators, a graph neural ODE trained with a time-reversal
//! penalty, and a numerical harness that checks the reversal and
//! error-scaling properties the method relies on.

pub mod data;
pub mod dynamics;
pub mod graph;
pub mod model;
pub mod physics;
pub mod training;
pub mod verify;
