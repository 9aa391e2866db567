//! Std companion of `fplab-core`: scenario files, CSV and manifest output,
//! and the study runner behind the `fplab` binary.

pub mod csvout;
pub mod manifest;
pub mod scenario;
pub mod studies;
