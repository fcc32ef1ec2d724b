// SPDX-License-Identifier: MIT OR Apache-2.0

pub mod changepoint;
pub mod cli;
pub mod did;
pub mod error;
pub mod paneldata;
pub mod persona;
pub mod simgen;
pub mod synth;

pub use error::{Error, ErrorClass, Result};
