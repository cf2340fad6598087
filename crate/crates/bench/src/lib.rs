//! Shared inputs for the benchmarks.

use ecobasket::dataset::{synth_generate, SynthConfig};
use ecobasket::{Basket, Catalog};

/// Synthetic 132-product catalog and its first intended basket.
pub fn fixture() -> (Catalog, Basket) {
    let (catalog, corpus) = synth_generate(&SynthConfig {
        n_households: 2,
        n_weeks: 2,
        ..Default::default()
    })
    .expect("synthetic corpus");
    let basket = corpus.intended_baskets(&catalog).expect("baskets").remove(0).basket;
    (catalog, basket)
}
