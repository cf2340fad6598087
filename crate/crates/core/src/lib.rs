//! Multi-objective basket recommendation: nutrition, cost and environmental
//! impact traded off against a consumer's habitual purchases.

pub mod autodiff;
pub mod dataset;
pub mod domain;
pub mod error;
pub mod evo;
pub mod experiments;
pub mod g3a;
pub mod methods;
pub mod mones;
pub mod pareto;
pub mod solution;

pub use domain::{Anchor, Basket, Catalog, Feature, ObjectiveVector, Product, Unit, NUM_FEATURES, NUM_OBJECTIVES};
pub use error::{Error, Result};
pub use solution::Solution;
