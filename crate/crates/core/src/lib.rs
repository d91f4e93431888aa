pub mod controller;
pub mod mlp;
pub mod rulebase;
pub mod simulator;
pub mod telemetry;
