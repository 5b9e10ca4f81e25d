pub mod config;
pub mod stages;
