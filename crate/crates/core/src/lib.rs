//! Interactive drum accompaniment: a temporal convolutional drummer that
//! trades measures with a live melodist, conditioned on skin conductance.

// `!(x > 0.0)` is how NaN gets rejected along with the out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod biometric;
pub mod corpus;
pub mod improviser;
pub mod model;
pub mod netio;
