pub mod rotmath;
pub mod mesh;
pub mod nn;
pub mod encoder;
pub mod env;
pub mod replay;
pub mod agent;
pub mod harness;
pub mod cli;
