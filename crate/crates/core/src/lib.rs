pub mod bridge;
pub mod envs;
pub mod es;
pub mod experiment;
pub mod features;
pub mod nn;
pub mod seed;
pub mod stats;
