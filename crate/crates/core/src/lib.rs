pub mod cmdp;
pub mod config;
pub mod dsl;
pub mod ecf;
pub mod env;
pub mod evolution;
pub mod fpe;
pub mod llm;
pub mod nn;
pub mod ppo;
pub mod report;
pub mod rundir;
pub mod runner;
pub mod service;
