pub mod baselines;
pub mod classes;
pub mod error;
pub mod estimators;
pub mod model;
pub mod optimize;
pub mod reduce;
pub mod rng;
pub mod sim;
pub mod specfun;
