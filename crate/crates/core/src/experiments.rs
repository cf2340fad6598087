//! Evaluation protocol: pooled dominance, filtered ratio means, counterfactual
//! impact and timing.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::IntendedBasket;
use crate::domain::{feature_totals, Basket, Catalog, FeatureTotals, ObjectiveVector, NUM_FEATURES};
use crate::error::{Error, Result};
use crate::methods::{basket_seed, recommend, Method, MethodConfigs, Recommendation};
use crate::pareto::pooled_dominance_ratio;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BasketKey {
    pub household_id: u32,
    pub week: u32,
}

impl From<&IntendedBasket> for BasketKey {
    fn from(b: &IntendedBasket) -> Self {
        Self {
            household_id: b.household_id,
            week: b.week,
        }
    }
}

/// Recommendations of one method for each intended basket.
pub type RecommendationSet = BTreeMap<BasketKey, Vec<Recommendation>>;

/// Recommendations of `method` for every basket, seeded per basket so the
/// result does not depend on scheduling.
pub fn recommend_corpus(
    method: Method,
    catalog: &Catalog,
    baskets: &[IntendedBasket],
    configs: &MethodConfigs,
    seed: u64,
) -> Result<RecommendationSet> {
    baskets
        .par_iter()
        .map(|b| {
            let recs = recommend(method, catalog, &b.basket, configs, basket_seed(seed, b.household_id, b.week))?;
            Ok((BasketKey::from(b), recs))
        })
        .collect()
}

/// Reverse (basic) bootstrap interval `(2θ̂ - q_{1-α/2}, 2θ̂ - q_{α/2})`.
pub fn reverse_bootstrap_ci<R: Rng + ?Sized>(
    values: &[f64],
    statistic: impl Fn(&[f64]) -> f64,
    resamples: usize,
    alpha: f64,
    rng: &mut R,
) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::InsufficientSamples { needed: 1, got: 0 });
    }
    let theta = statistic(values);
    let mut buf = vec![0.0; values.len()];
    let mut stats: Vec<f64> = (0..resamples)
        .map(|_| {
            for b in buf.iter_mut() {
                *b = values[rng.random_range(0..values.len())];
            }
            statistic(&buf)
        })
        .collect();
    stats.sort_by(f64::total_cmp);
    let lo = quantile_sorted(&stats, alpha / 2.0);
    let hi = quantile_sorted(&stats, 1.0 - alpha / 2.0);
    Ok((2.0 * theta - hi, 2.0 * theta - lo))
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    quantile_sorted(&v, 0.5)
}

/// Sample standard deviation; zero for fewer than two values.
pub fn std_dev(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let m = mean(values);
    (values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (values.len() - 1) as f64).sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub resamples: usize,
    pub alpha: f64,
    pub seed: u64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            resamples: 10_000,
            alpha: 0.05,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DominanceRow {
    pub method: String,
    pub baskets: usize,
    pub mean: f64,
    pub mean_ci: (f64, f64),
    pub median: f64,
    pub median_ci: (f64, f64),
}

/// Per-basket pooled dominance ratios, keyed like the inputs.
pub fn dominance_ratios(methods: &[(String, &RecommendationSet)]) -> Result<BTreeMap<BasketKey, Vec<f64>>> {
    if methods.len() < 2 {
        return Err(Error::Config("dominance comparison needs at least two methods".into()));
    }
    let keys: Vec<&BasketKey> = methods[0].1.keys().collect();
    for (name, set) in &methods[1..] {
        if set.len() != keys.len() || !set.keys().zip(&keys).all(|(a, b)| a == *b) {
            return Err(Error::Join(format!("{name} covers different baskets than {}", methods[0].0)));
        }
    }
    let mut out = BTreeMap::new();
    for key in keys {
        let per: Vec<Vec<ObjectiveVector>> = methods
            .iter()
            .map(|(_, set)| set[key].iter().map(|r| r.objectives).collect())
            .collect();
        out.insert(*key, pooled_dominance_ratio(&per)?);
    }
    Ok(out)
}

pub fn compare_dominance(methods: &[(String, &RecommendationSet)], bootstrap: &BootstrapConfig) -> Result<Vec<DominanceRow>> {
    let ratios = dominance_ratios(methods)?;
    let mut rng = ChaCha8Rng::seed_from_u64(bootstrap.seed);
    methods
        .iter()
        .enumerate()
        .map(|(k, (name, _))| {
            let column: Vec<f64> = ratios.values().map(|r| r[k]).collect();
            let mean_ci = reverse_bootstrap_ci(&column, mean, bootstrap.resamples, bootstrap.alpha, &mut rng)?;
            let median_ci = reverse_bootstrap_ci(&column, median, bootstrap.resamples, bootstrap.alpha, &mut rng)?;
            Ok(DominanceRow {
                method: name.clone(),
                baskets: column.len(),
                mean: mean(&column),
                mean_ci,
                median: median(&column),
                median_ci,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatioRow {
    pub method: String,
    pub survivors: usize,
    /// Absent when no recommendation survived the filter.
    pub cosine: Option<f64>,
    pub ratios: Option<[f64; NUM_FEATURES]>,
}

/// Mean cosine and ratios over each method's filter survivors.
pub fn ratio_report(methods: &[(String, &RecommendationSet)]) -> Vec<RatioRow> {
    methods
        .iter()
        .map(|(name, set)| {
            let survivors: Vec<&Recommendation> = set.values().flatten().filter(|r| r.passed_filter).collect();
            let n = survivors.len();
            let (cosine, ratios) = if n == 0 {
                (None, None)
            } else {
                let mut ratios = [0.0; NUM_FEATURES];
                for r in &survivors {
                    for (acc, v) in ratios.iter_mut().zip(&r.ratios) {
                        *acc += v;
                    }
                }
                for v in ratios.iter_mut() {
                    *v /= n as f64;
                }
                (Some(survivors.iter().map(|r| r.cosine).sum::<f64>() / n as f64), Some(ratios))
            };
            RatioRow {
                method: name.clone(),
                survivors: n,
                cosine,
                ratios,
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub household_id: u32,
    pub week: u32,
    pub replacement: Option<Basket>,
}

/// One resampled purchase history.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryLedger {
    pub entries: Vec<LedgerEntry>,
    pub baseline: FeatureTotals,
    pub counterfactual: FeatureTotals,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CounterfactualConfig {
    pub acceptance_rate: f64,
    pub trajectories: usize,
    pub seed: u64,
}

impl Default for CounterfactualConfig {
    fn default() -> Self {
        Self {
            acceptance_rate: 0.25,
            trajectories: 5000,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImpactReport {
    pub trajectories: usize,
    pub baskets: usize,
    /// Baskets picked for replacement per trajectory.
    pub selected_per_trajectory: usize,
    /// Mean number of picked baskets left intended for lack of recommendations.
    pub mean_unreplaced: f64,
    /// Mean `baseline - counterfactual` total per feature.
    pub reduction: [f64; NUM_FEATURES],
    /// 2.5% and 97.5% trajectory quantiles of the reduction.
    pub reduction_interval: [(f64, f64); NUM_FEATURES],
    pub baseline_per_basket: [f64; NUM_FEATURES],
    pub counterfactual_per_basket: [f64; NUM_FEATURES],
    /// Over replaced baskets only.
    pub mean_added_units: f64,
    pub mean_removed_units: f64,
}

struct Outcome {
    reduction: [f64; NUM_FEATURES],
    replaced: usize,
    unreplaced: usize,
    added: u64,
    removed: u64,
}

/// Replacement chosen for each picked basket of trajectory `index`, as
/// `(basket position, recommendation position)`; `None` where the basket
/// has no filtered recommendation.
fn trajectory_choices(
    baskets: &[IntendedBasket],
    filtered: &[Vec<&Recommendation>],
    config: &CounterfactualConfig,
    index: usize,
) -> Vec<(usize, Option<usize>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(index as u64);
    let k = ((config.acceptance_rate * baskets.len() as f64).floor() as usize).min(baskets.len());
    let mut picked: Vec<usize> = sample(&mut rng, baskets.len(), k).into_vec();
    picked.sort_unstable();
    picked
        .into_iter()
        .map(|i| {
            let recs = &filtered[i];
            let choice = if recs.is_empty() { None } else { Some(rng.random_range(0..recs.len())) };
            (i, choice)
        })
        .collect()
}

fn prepare<'a>(baskets: &[IntendedBasket], recommendations: &'a RecommendationSet) -> Vec<Vec<&'a Recommendation>> {
    baskets
        .iter()
        .map(|b| {
            recommendations
                .get(&BasketKey::from(b))
                .map(|v| v.iter().filter(|r| r.passed_filter).collect())
                .unwrap_or_default()
        })
        .collect()
}

fn validate(config: &CounterfactualConfig, baskets: &[IntendedBasket]) -> Result<()> {
    if !(0.0..=1.0).contains(&config.acceptance_rate) {
        return Err(Error::Config("acceptance rate must be in [0, 1]".into()));
    }
    if baskets.is_empty() {
        return Err(Error::Empty("intended baskets"));
    }
    Ok(())
}

/// Full ledger of trajectory `index`, replaying the same draws as
/// [`counterfactual_simulate`].
pub fn trajectory_ledger(
    catalog: &Catalog,
    baskets: &[IntendedBasket],
    recommendations: &RecommendationSet,
    config: &CounterfactualConfig,
    index: usize,
) -> Result<TrajectoryLedger> {
    validate(config, baskets)?;
    let filtered = prepare(baskets, recommendations);
    let choices: BTreeMap<usize, Option<usize>> = trajectory_choices(baskets, &filtered, config, index).into_iter().collect();
    let mut order: Vec<usize> = (0..baskets.len()).collect();
    order.sort_by_key(|&i| (baskets[i].household_id, baskets[i].week));
    let mut baseline = FeatureTotals::default();
    let mut counterfactual = FeatureTotals::default();
    let mut entries = Vec::with_capacity(baskets.len());
    for i in order {
        let b = &baskets[i];
        let replacement = choices.get(&i).copied().flatten().map(|c| filtered[i][c].basket.clone());
        let base = feature_totals(catalog, &b.basket)?;
        baseline.add_assign(&base);
        match &replacement {
            Some(r) => counterfactual.add_assign(&feature_totals(catalog, r)?),
            None => counterfactual.add_assign(&base),
        }
        entries.push(LedgerEntry {
            household_id: b.household_id,
            week: b.week,
            replacement,
        });
    }
    Ok(TrajectoryLedger {
        entries,
        baseline,
        counterfactual,
    })
}

/// Replaces `⌊rate · n⌋` uniformly chosen intended baskets per trajectory
/// with a uniformly chosen filtered recommendation and reports the impact.
pub fn counterfactual_simulate(
    catalog: &Catalog,
    baskets: &[IntendedBasket],
    recommendations: &RecommendationSet,
    config: &CounterfactualConfig,
) -> Result<ImpactReport> {
    validate(config, baskets)?;
    if config.trajectories == 0 {
        return Err(Error::Config("at least one trajectory is required".into()));
    }
    let filtered = prepare(baskets, recommendations);
    let base_totals: Vec<FeatureTotals> = baskets.iter().map(|b| feature_totals(catalog, &b.basket)).collect::<Result<_>>()?;
    let rec_totals: Vec<Vec<FeatureTotals>> = filtered
        .iter()
        .map(|recs| recs.iter().map(|r| feature_totals(catalog, &r.basket)).collect::<Result<_>>())
        .collect::<Result<_>>()?;
    let mut baseline = FeatureTotals::default();
    for t in &base_totals {
        baseline.add_assign(t);
    }

    let outcomes: Vec<Outcome> = (0..config.trajectories)
        .into_par_iter()
        .map(|index| {
            let mut out = Outcome {
                reduction: [0.0; NUM_FEATURES],
                replaced: 0,
                unreplaced: 0,
                added: 0,
                removed: 0,
            };
            for (i, choice) in trajectory_choices(baskets, &filtered, config, index) {
                let Some(c) = choice else {
                    out.unreplaced += 1;
                    continue;
                };
                let diff = base_totals[i].sub(&rec_totals[i][c]);
                for (r, d) in out.reduction.iter_mut().zip(diff.values()) {
                    *r += d;
                }
                let (added, removed) = filtered[i][c].basket.diff_units(&baskets[i].basket);
                out.added += added;
                out.removed += removed;
                out.replaced += 1;
            }
            out
        })
        .collect();

    let n = outcomes.len() as f64;
    let nb = baskets.len() as f64;
    let mut reduction = [0.0; NUM_FEATURES];
    let mut reduction_interval = [(0.0, 0.0); NUM_FEATURES];
    for j in 0..NUM_FEATURES {
        let mut col: Vec<f64> = outcomes.iter().map(|o| o.reduction[j]).collect();
        reduction[j] = mean(&col);
        col.sort_by(f64::total_cmp);
        reduction_interval[j] = (quantile_sorted(&col, 0.025), quantile_sorted(&col, 0.975));
    }
    let replaced: usize = outcomes.iter().map(|o| o.replaced).sum();
    let per_replaced = |x: u64| if replaced == 0 { 0.0 } else { x as f64 / replaced as f64 };
    let baseline_per_basket: [f64; NUM_FEATURES] = std::array::from_fn(|j| baseline.0[j] / nb);
    Ok(ImpactReport {
        trajectories: outcomes.len(),
        baskets: baskets.len(),
        selected_per_trajectory: ((config.acceptance_rate * nb).floor() as usize).min(baskets.len()),
        mean_unreplaced: outcomes.iter().map(|o| o.unreplaced as f64).sum::<f64>() / n,
        reduction,
        reduction_interval,
        baseline_per_basket,
        counterfactual_per_basket: std::array::from_fn(|j| (baseline.0[j] - reduction[j]) / nb),
        mean_added_units: per_replaced(outcomes.iter().map(|o| o.added).sum()),
        mean_removed_units: per_replaced(outcomes.iter().map(|o| o.removed).sum()),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub method: String,
    pub runs: usize,
    pub mean_seconds: f64,
    pub std_seconds: f64,
    pub keys: Vec<BasketKey>,
}

/// Wall-clock seconds of each method over the same sample of baskets.
pub fn timing_report<F>(methods: &[(String, F)], sample: &[IntendedBasket]) -> Result<Vec<TimingRow>>
where
    F: Fn(&IntendedBasket) -> Result<()>,
{
    methods
        .iter()
        .map(|(name, run)| {
            let mut secs = Vec::with_capacity(sample.len());
            for b in sample {
                let t = Instant::now();
                run(b)?;
                secs.push(t.elapsed().as_secs_f64());
            }
            Ok(TimingRow {
                method: name.clone(),
                runs: secs.len(),
                mean_seconds: if secs.is_empty() { 0.0 } else { mean(&secs) },
                std_seconds: std_dev(&secs),
                keys: sample.iter().map(BasketKey::from).collect(),
            })
        })
        .collect()
}
