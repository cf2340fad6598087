//! One entry point over the three optimizers.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::domain::{Anchor, Basket, Catalog, ObjectiveVector, NUM_FEATURES, NUM_OBJECTIVES};
use crate::error::{Error, Result};
use crate::evo::{run_rnsga2, GaConfig};
use crate::g3a::{run_g3a, G3aConfig};
use crate::mones::{run_mones, NesConfig};
use crate::pareto::FilterConfig;
use crate::solution::Solution;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    G3a,
    Mones,
    Rnsga2,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::G3a, Method::Mones, Method::Rnsga2];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::G3a => "g3a",
            Method::Mones => "mones",
            Method::Rnsga2 => "rnsga2",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "g3a" => Ok(Method::G3a),
            "mones" => Ok(Method::Mones),
            "rnsga2" | "rnsgaii" => Ok(Method::Rnsga2),
            _ => Err(Error::Config(format!("unknown method {s:?}"))),
        }
    }
}

/// Settings for every method; each run overrides the seed.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MethodConfigs {
    pub g3a: G3aConfig,
    pub mones: NesConfig,
    pub rnsga2: GaConfig,
    pub filter: FilterConfig,
}

impl MethodConfigs {
    /// Same objective weights for every method.
    pub fn with_weights(mut self, weights: [f64; NUM_OBJECTIVES]) -> Self {
        self.g3a.weights = weights;
        self.mones.weights = weights;
        self.rnsga2.weights = weights;
        self
    }

    /// Same generation budget for every method.
    pub fn with_generations(mut self, generations: usize) -> Self {
        self.g3a.generations = generations;
        self.mones.generations = generations;
        self.rnsga2.generations = generations;
        self
    }
}

/// A candidate basket with everything a consumer is shown.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub basket: Basket,
    pub objectives: ObjectiveVector,
    pub ratios: [f64; NUM_FEATURES],
    pub cosine: f64,
    pub passed_filter: bool,
}

impl Recommendation {
    pub fn assess(catalog: &Catalog, anchor: &Anchor, basket: Basket, filter: &FilterConfig) -> Result<Self> {
        let a = anchor.assess(catalog, &basket)?;
        Ok(Self {
            passed_filter: filter.accepts(&a.objectives),
            basket,
            objectives: a.objectives,
            ratios: a.ratios,
            cosine: a.cosine,
        })
    }
}

/// Mutually non-dominated baskets from `method`, unfiltered.
pub fn optimize(method: Method, catalog: &Catalog, x_star: &Basket, configs: &MethodConfigs, seed: u64) -> Result<Vec<Solution>> {
    match method {
        Method::G3a => run_g3a(catalog, x_star, &G3aConfig { seed, ..configs.g3a.clone() }).map(|r| r.solutions),
        Method::Mones => run_mones(catalog, x_star, &NesConfig { seed, ..configs.mones.clone() }).map(|r| r.solutions),
        Method::Rnsga2 => run_rnsga2(catalog, x_star, &GaConfig { seed, ..configs.rnsga2.clone() }).map(|r| r.solutions),
    }
}

/// Every solution of `method` with its ratios and filter verdict.
pub fn recommend(method: Method, catalog: &Catalog, x_star: &Basket, configs: &MethodConfigs, seed: u64) -> Result<Vec<Recommendation>> {
    let anchor = Anchor::new(catalog, x_star)?;
    optimize(method, catalog, x_star, configs, seed)?
        .into_iter()
        .map(|s| Recommendation::assess(catalog, &anchor, s.basket, &configs.filter))
        .collect()
}

/// Seed of one `(household, week)` run, independent across baskets.
pub fn basket_seed(seed: u64, household_id: u32, week: u32) -> u64 {
    crate::evo::splitmix64(seed ^ crate::evo::splitmix64((u64::from(household_id) << 32) | u64::from(week)))
}
