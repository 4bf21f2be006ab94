pub mod config;
pub mod data;
pub mod gateway;
pub mod memory;
pub mod optimizer;
pub mod pipeline;
pub mod metrics;
pub mod sandbox;
pub mod task;
pub mod roles;
pub mod toolreg;
