// `!(x > 0.0)` guards are meant to reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod client;
pub mod env;
pub mod feedback;
pub mod golden;
pub mod harness;
pub mod kitchen;
pub mod monologue;
pub mod planner;
pub mod tabletop;
