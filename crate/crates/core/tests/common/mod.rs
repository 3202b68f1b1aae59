#![allow(dead_code)]

pub mod gradcheck;
pub mod imaging_suite;
pub mod preprocess_suite;
#[cfg(feature = "net")]
pub mod wsclient;
