pub mod checkpoint;
pub mod cli;
pub mod contact;
pub mod dataset;
pub mod metrics;
pub mod model;
pub mod pdb;
pub mod synthetic;
pub mod train;
