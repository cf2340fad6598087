//! Multi-objective natural evolution strategies with rounded, clipped
//! evaluation.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::domain::{Anchor, Basket, Catalog, ObjectiveVector, NUM_OBJECTIVES};
use crate::error::{check_len, Error, Result};
use crate::evo::splitmix64;
use crate::pareto::{box_volume_rank_weighted, non_dominated_sort, zscore_normalize};
use crate::solution::{non_dominated_solutions, Solution};

/// Step-size and shape learning rates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NesRates {
    pub sigma_up: f64,
    pub sigma_down: f64,
    pub shape: f64,
}

impl Default for NesRates {
    fn default() -> Self {
        Self {
            sigma_up: 0.01,
            sigma_down: 0.01 / 5.0,
            shape: 0.01 / 4.0,
        }
    }
}

/// Search distribution of one lineage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NesState {
    pub x: Vec<f64>,
    pub sigma: f64,
    /// Row-major `N × N` shape matrix.
    pub a: Vec<f64>,
}

impl NesState {
    pub fn new(x: Vec<f64>, sigma: f64, a: Vec<f64>) -> Result<Self> {
        let n = x.len();
        check_len(n * n, a.len())?;
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::Config("sigma must be positive".into()));
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("shape matrix must be finite".into()));
        }
        Ok(Self { x, sigma, a })
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }

    /// `A v`.
    pub fn shape_apply(&self, v: &[f64]) -> Vec<f64> {
        let n = self.dim();
        (0..n)
            .map(|r| self.a[r * n..(r + 1) * n].iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }
}

/// Offspring `x + σ A z` with its standard-normal draw `z`.
#[derive(Clone, Debug, PartialEq)]
pub struct Offspring {
    pub x: Vec<f64>,
    pub z: Vec<f64>,
}

pub fn sample_offspring<R: Rng + ?Sized>(state: &NesState, rng: &mut R) -> Offspring {
    let z: Vec<f64> = (0..state.dim()).map(|_| StandardNormal.sample(rng)).collect();
    offspring_from(state, z)
}

/// Deterministic offspring for a given draw.
pub fn offspring_from(state: &NesState, z: Vec<f64>) -> Offspring {
    let step = state.shape_apply(&z);
    let x = state
        .x
        .iter()
        .zip(&step)
        .map(|(x, s)| x + state.sigma * s)
        .collect();
    Offspring { x, z }
}

/// Rounds half away from zero, then clips at zero.
pub fn round_clip(x: &[f64]) -> Basket {
    Basket::new(
        x.iter()
            .map(|v| {
                let r = v.round();
                if r > 0.0 {
                    r.min(f64::from(u32::MAX)) as u32
                } else {
                    0
                }
            })
            .collect(),
    )
}

/// Front index and within-front box rank of a pooled solution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NesRank {
    pub alpha: usize,
    pub beta: usize,
}

/// Fronts from the raw losses; box ranks within each front from the
/// pool-wide z-scores, with axis `j` raised to `weights[j]`.
pub fn mones_rank<R: AsRef<[f64]>>(rows: &[R], weights: Option<&[f64]>) -> Result<Vec<NesRank>> {
    if rows.is_empty() {
        return Ok(Vec::new());
    }
    let fronts = non_dominated_sort(rows)?;
    let normed: Vec<Vec<f64>> = if rows.len() >= 2 {
        zscore_normalize(rows)?
    } else {
        rows.iter().map(|r| r.as_ref().to_vec()).collect()
    };
    let mut out = vec![NesRank { alpha: 0, beta: 0 }; rows.len()];
    for (f, front) in fronts.fronts.iter().enumerate() {
        let sub: Vec<&[f64]> = front.iter().map(|&i| normed[i].as_slice()).collect();
        let ranks = box_volume_rank_weighted(&sub, weights)?;
        for (&i, r) in front.iter().zip(ranks) {
            out[i] = NesRank {
                alpha: f + 1,
                beta: r.beta,
            };
        }
    }
    Ok(out)
}

/// Success moves the parent to the offspring, widens the step and stretches
/// the shape along `z`; failure narrows the step.
pub fn mones_update(state: &NesState, offspring: &Offspring, success: bool, rates: &NesRates) -> NesState {
    if !success {
        return NesState {
            x: state.x.clone(),
            sigma: state.sigma * (-rates.sigma_down).exp(),
            a: state.a.clone(),
        };
    }
    // A (I + c (z zᵀ - I)) = (1 - c) A + c (A z) zᵀ
    let n = state.dim();
    let c = rates.shape / 2.0;
    let az = state.shape_apply(&offspring.z);
    let mut a = state.a.clone();
    for r in 0..n {
        for k in 0..n {
            a[r * n + k] = (1.0 - c) * a[r * n + k] + c * az[r] * offspring.z[k];
        }
    }
    NesState {
        x: offspring.x.clone(),
        sigma: state.sigma * rates.sigma_up.exp(),
        a,
    }
}

/// Where the initial parents are placed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NesInit {
    /// Parents `ReLU(N(0, s))` and `A` uniform in `[0, a_max]`.
    Origin,
    /// Parents `x* + ReLU(N(0, s))` and `A = D + U[0, a_max]` where `D` is the
    /// diagonal indicator of the purchased products.
    Anchored,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NesConfig {
    pub population: usize,
    pub generations: usize,
    pub sigma0: f64,
    pub init_std: f64,
    pub shape_init_max: f64,
    pub init: NesInit,
    pub rates: NesRates,
    /// Per-objective consumer weights used as box-volume exponents.
    pub weights: [f64; NUM_OBJECTIVES],
    pub seed: u64,
}

impl Default for NesConfig {
    fn default() -> Self {
        Self {
            population: 10,
            generations: 40,
            sigma0: 1.0 / 3.0,
            init_std: 0.2,
            shape_init_max: 0.001,
            init: NesInit::Anchored,
            rates: NesRates::default(),
            weights: [1.0; NUM_OBJECTIVES],
            seed: 0,
        }
    }
}

impl NesConfig {
    pub fn validate(&self) -> Result<()> {
        if self.population == 0 {
            return Err(Error::Config("population must be at least 1".into()));
        }
        if !(self.sigma0 > 0.0 && self.sigma0.is_finite()) {
            return Err(Error::Config("sigma0 must be positive".into()));
        }
        if !(self.init_std >= 0.0 && self.shape_init_max >= 0.0) {
            return Err(Error::Config("initial spreads must be non-negative".into()));
        }
        if self.weights.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
            return Err(Error::Config("weights must be positive".into()));
        }
        Ok(())
    }
}

pub fn init_states<R: Rng + ?Sized>(x_star: &Basket, config: &NesConfig, rng: &mut R) -> Result<Vec<NesState>> {
    let n = x_star.len();
    let normal = Normal::new(0.0, config.init_std).map_err(|e| Error::Config(e.to_string()))?;
    let mut states = Vec::with_capacity(config.population);
    for _ in 0..config.population {
        let x: Vec<f64> = x_star
            .quantities()
            .iter()
            .map(|&q| {
                let d = normal.sample(&mut *rng).max(0.0);
                match config.init {
                    NesInit::Origin => d,
                    NesInit::Anchored => f64::from(q) + d,
                }
            })
            .collect();
        let mut a: Vec<f64> = (0..n * n).map(|_| rng.random::<f64>() * config.shape_init_max).collect();
        if config.init == NesInit::Anchored {
            for (i, &q) in x_star.quantities().iter().enumerate() {
                if q > 0 {
                    a[i * n + i] += 1.0;
                }
            }
        }
        states.push(NesState::new(x, config.sigma0, a)?);
    }
    Ok(states)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NesRun {
    pub solutions: Vec<Solution>,
    /// Step sizes of the surviving lineages after every generation.
    pub sigma_history: Vec<Vec<f64>>,
}

struct Member {
    state: NesState,
    basket: Basket,
    objectives: ObjectiveVector,
}

pub fn run_mones(catalog: &Catalog, x_star: &Basket, config: &NesConfig) -> Result<NesRun> {
    config.validate()?;
    let anchor = Anchor::new(catalog, x_star)?;
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(config.seed ^ 0x6e65_73));
    let evaluate = |state: NesState| -> Result<Member> {
        let basket = round_clip(&state.x);
        let objectives = anchor.evaluate(catalog, &basket)?;
        Ok(Member {
            state,
            basket,
            objectives,
        })
    };
    let mut population: Vec<Member> = init_states(x_star, config, &mut rng)?
        .into_iter()
        .map(evaluate)
        .collect::<Result<_>>()?;
    let mut sigma_history = Vec::with_capacity(config.generations);

    for _ in 0..config.generations {
        let b = population.len();
        let children: Vec<Offspring> = population.iter().map(|m| sample_offspring(&m.state, &mut rng)).collect();
        // pool layout: parents 0..b, child of parent p at b + p
        let mut pool_objs: Vec<ObjectiveVector> = population.iter().map(|m| m.objectives).collect();
        let mut child_members = Vec::with_capacity(b);
        for child in &children {
            let basket = round_clip(&child.x);
            let objectives = anchor.evaluate(catalog, &basket)?;
            pool_objs.push(objectives);
            child_members.push((basket, objectives));
        }

        let ranks = mones_rank(&pool_objs, Some(&config.weights))?;
        let mut seen = HashSet::new();
        let mut order: Vec<usize> = (0..pool_objs.len()).collect();
        order.sort_by_key(|&i| (ranks[i].alpha, ranks[i].beta, i));
        let mut retained = Vec::with_capacity(b);
        for i in order {
            let basket = if i < b { &population[i].basket } else { &child_members[i - b].0 };
            if seen.insert(basket.clone()) {
                retained.push(i);
            }
            if retained.len() == config.population {
                break;
            }
        }
        let kept: HashSet<usize> = retained.iter().copied().collect();

        let mut next = Vec::with_capacity(retained.len());
        for &i in &retained {
            if i < b {
                let child_kept = kept.contains(&(i + b));
                let state = if child_kept {
                    let s = &population[i].state;
                    NesState {
                        x: s.x.clone(),
                        sigma: s.sigma * config.rates.sigma_up.exp(),
                        a: s.a.clone(),
                    }
                } else {
                    mones_update(&population[i].state, &children[i], false, &config.rates)
                };
                next.push(Member {
                    state,
                    basket: population[i].basket.clone(),
                    objectives: population[i].objectives,
                });
            } else {
                let p = i - b;
                let state = mones_update(&population[p].state, &children[p], true, &config.rates);
                let (basket, objectives) = child_members[p].clone();
                next.push(Member {
                    state,
                    basket,
                    objectives,
                });
            }
        }
        population = next;
        sigma_history.push(population.iter().map(|m| m.state.sigma).collect());
    }

    let solutions = non_dominated_solutions(catalog, &anchor, population.into_iter().map(|m| m.basket))?;
    Ok(NesRun {
        solutions,
        sigma_history,
    })
}
