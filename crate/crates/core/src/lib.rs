pub mod baselines;
pub mod context;
pub mod descriptor;
pub mod dynamics;
pub mod fmm;
pub mod harness;
pub mod mesh;
pub mod objectives;
pub mod planner;
pub mod residual;
pub mod spatial;
pub mod world;
