//! Brute-force references shared by the core tests and the acceptance suite.
#![allow(dead_code)]

pub mod gradients;
pub mod losses;
pub mod selection;
