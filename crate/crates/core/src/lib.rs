//! Sequential organ-offer model: social learning along a waitlist, priority
//! policies, counterfactual simulation, structural estimation and
//! reduced-form regressions.

pub mod beliefs;
pub mod data_io;
pub mod econometrics;
pub mod estimator;
pub mod model;
pub mod policies;
pub mod simulator;
