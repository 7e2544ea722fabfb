pub mod dataset;
pub mod error;
pub mod evaluate;
pub mod generative;
pub mod heads;
pub mod kernel;
pub mod metrics;
pub mod model;
pub mod posterior;
pub mod predictor;
pub mod rng;
pub mod synthetic;
pub mod trainer;
