//! Shared test oracles, kept independent of the library's implementation
//! paths.

#![allow(dead_code)]

pub mod oracle;
