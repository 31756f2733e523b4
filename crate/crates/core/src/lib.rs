//! Weight decay on scale-invariant objectives and its exponential learning-rate
//! counterpart.
//!
//! The crate is organised around the pieces needed to state and check the
//! equivalence numerically:
//!
//! * [`lrsched`] solves the characteristic quadratic and translates step-decay,
//!   cosine and explicit schedules into weight-decay-free exponential schedules.
//! * [`statealg`] is the algebra of state maps (parameter/LR scalings, GD steps,
//!   canonicalization) together with a randomized harness for its identities.
//! * [`scaleinv`] provides scale-invariant objectives with analytic gradients.
//! * [`trainer`] runs SGD with momentum and weight decay, its exponential-LR
//!   twin, and compares the two in function space.
//! * [`dynamics`] checks norm identities and equilibrium behaviour of runs.
//! * [`toymodel`] simulates the last-layer logistic model with and without
//!   normalization and weight decay.
//! * [`graphhom`] decides scale invariance of architectures encoded as DAGs.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dynamics;
pub mod graphhom;
pub mod lrsched;
pub mod rng;
pub mod scaleinv;
pub mod statealg;
pub mod toymodel;
pub mod trainer;
pub mod vecops;
