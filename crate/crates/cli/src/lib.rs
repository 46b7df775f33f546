//! Support code for the `midbf` binary.

pub mod io;
