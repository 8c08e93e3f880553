//! Simulation and statistical verification of the objects in the CLE / LQG / mating-of-trees
//! correspondence: radial Loewner chains driven by SLE_{kappa'}(kappa'-6), uniform CLE_4
//! explorations, Liouville quantum gravity disks, Brownian cone excursions and the
//! hamburger-cheeseburger model.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod batch;
pub mod burgers;
pub mod cli;
pub mod error;
pub mod exploration;
pub mod loewner;
pub mod lqg;
pub mod mating;
pub mod radial_sle;
pub mod stats;
pub mod verify;

pub use error::{Result, SimError};
