#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod math;
pub mod policy;
pub mod psf;
pub mod qp;
pub mod disturbance;
pub mod env;
pub mod sensing;
pub mod terminal;
pub mod vessel;
