// NaN-rejecting range checks read as !(x > 0.0)
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channel;
pub mod cli;
pub mod dynamics;
pub mod locking;
pub mod protocol;
