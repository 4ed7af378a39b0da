//! Upper-level planners running at the planning rate.

pub mod linear;
pub mod mpc;
