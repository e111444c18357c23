pub mod cgm;
pub mod data;
pub mod error;
pub mod exec;
pub mod gim;
pub mod harness;
pub mod masking;
pub mod model;
pub mod numcore;
