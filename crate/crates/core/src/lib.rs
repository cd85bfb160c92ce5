pub mod bundle;
pub mod commands;
pub mod ecg;
pub mod experiments;
pub mod grid;
pub mod hybrid;
pub mod policy;
pub mod resource;
pub mod sim;
pub mod workflow;
