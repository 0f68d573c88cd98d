//! Partial identification of principal-strata effects when units can take up
//! a program or one of two alternatives of differing quality.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod bootstrap;
pub mod bounds;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod estimators;
pub mod simulation;
pub mod slicing;

pub use data::{Arm, Category, Dataset, ObservedGroup, PerGroup, PerStratum, Stratum, UnitRecord};
pub use error::{Error, Result};
