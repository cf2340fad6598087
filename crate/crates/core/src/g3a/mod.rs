//! Gradient guided genetic algorithm: crossover and mutation are neural
//! operators trained by back-propagating the mean first-front losses through
//! the evolution itself.

mod nets;
mod objectives;

pub use nets::{
    aligned_steps, blend, discretize, neural_crossover, neural_mutation, CrossoverNet, CrossoverShape, MutationNet,
    MutationOutput,
};
pub use objectives::ObjectiveConstants;

use std::collections::HashSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::nn::Mode;
use crate::autodiff::{Graph, RmsProp, Tensor, Var};
use crate::domain::{is_health_objective, Anchor, Basket, Catalog, ObjectiveVector, NUM_OBJECTIVES};
use crate::error::{Error, Result};
use crate::evo::splitmix64;
use crate::mones::mones_rank;
use crate::pareto::non_dominated_sort;
use crate::solution::{non_dominated_solutions, Solution};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct G3aConfig {
    pub population: usize,
    pub generations: usize,
    /// Length of the mutation time window.
    pub t_end: f64,
    /// Minimum number of solver steps per window.
    pub ode_steps: usize,
    /// States recorded along each mutation trajectory.
    pub mutation_samples: usize,
    /// Gradient-time multiplier on the three health losses.
    pub health_scale: f64,
    pub weights: [f64; NUM_OBJECTIVES],
    pub lr_crossover: f64,
    pub lr_mutation: f64,
    /// Model width of the crossover net; `None` uses the catalog size.
    pub width: Option<usize>,
    pub heads: usize,
    pub ff_hidden: usize,
    pub dropout: f64,
    pub mutation_hidden: usize,
    pub mutation_output: MutationOutput,
    /// Initialization gain of the dynamics output layer.
    pub mutation_gain: f64,
    pub seed: u64,
}

impl Default for G3aConfig {
    fn default() -> Self {
        Self {
            population: 8,
            generations: 30,
            t_end: 1.0,
            ode_steps: 8,
            mutation_samples: 4,
            health_scale: 7.0,
            weights: [1.0; NUM_OBJECTIVES],
            lr_crossover: RmsProp::DEFAULT_LR,
            lr_mutation: RmsProp::DEFAULT_LR,
            width: None,
            heads: 11,
            ff_hidden: 2048,
            dropout: 0.1,
            mutation_hidden: 256,
            mutation_output: MutationOutput::Linear,
            mutation_gain: 0.5,
            seed: 0,
        }
    }
}

impl G3aConfig {
    pub fn validate(&self, genes: usize) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.population < 2 {
            return bad("population must be at least 2");
        }
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return bad("time window must be positive");
        }
        if self.mutation_samples == 0 || self.ode_steps == 0 {
            return bad("mutation needs at least one sample and one step");
        }
        if !(self.health_scale > 0.0 && self.health_scale.is_finite()) {
            return bad("health scale must be positive");
        }
        if self.weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return bad("weights must be non-negative");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must be in [0, 1)");
        }
        let width = self.width.unwrap_or(genes);
        if self.heads == 0 || width % self.heads != 0 {
            return Err(Error::Config(format!("width {width} is not divisible by {} heads", self.heads)));
        }
        Ok(())
    }

    /// Weight of objective `j` in the training loss.
    pub fn loss_weight(&self, j: usize) -> f64 {
        if is_health_objective(j) {
            self.weights[j] * self.health_scale
        } else {
            self.weights[j]
        }
    }

    pub fn crossover_shape(&self, genes: usize) -> CrossoverShape {
        CrossoverShape {
            genes,
            width: self.width.unwrap_or(genes),
            heads: self.heads,
            hidden: self.ff_hidden,
        }
    }
}

fn to_matrix(baskets: &[Basket]) -> Result<Tensor> {
    let n = baskets.first().map(Basket::len).ok_or(Error::Empty("population"))?;
    let mut data = Vec::with_capacity(baskets.len() * n);
    for b in baskets {
        crate::error::check_len(n, b.len())?;
        data.extend(b.quantities().iter().map(|&q| f64::from(q)));
    }
    Tensor::new(baskets.len(), n, data)
}

fn to_baskets(t: &Tensor) -> Vec<Basket> {
    (0..t.rows())
        .map(|r| Basket::new(t.row_slice(r).iter().map(|&v| v.max(0.0).round() as u32).collect()))
        .collect()
}

/// Samples the untrained mutation trajectory from `x*` at `k T / B`,
/// `k = 1..=B`, and discretizes each state.
pub fn init_population(x_star: &Basket, net: &MutationNet, config: &G3aConfig) -> Result<Vec<Basket>> {
    if config.population == 0 {
        return Err(Error::Config("population must be at least 1".into()));
    }
    let mut g = Graph::new();
    let p = net.store.bind(&mut g);
    let x0 = g.constant(to_matrix(std::slice::from_ref(x_star))?);
    let states = neural_mutation(&mut g, |g, x| net.dynamics(g, &p, x), x0, config.population, config.t_end, config.ode_steps)?;
    let stacked = g.concat_rows(&states)?;
    let d = discretize(&mut g, stacked)?;
    Ok(to_baskets(g.value(d)))
}

/// Losses of one generation and the discretized samples they came from.
#[derive(Debug)]
pub struct SelectLoss {
    /// Weighted training loss, a `1 × 1` graph node.
    pub loss: Var,
    /// `ζ̄_j` over the first front of the samples, before weighting.
    pub mean_front: [f64; NUM_OBJECTIVES],
    pub samples: Vec<Basket>,
    pub objectives: Vec<ObjectiveVector>,
    pub first_front: Vec<usize>,
}

/// Discretizes `states`, evaluates them on the graph, and averages the first
/// front's losses. Fronts are computed on the exact evaluation.
pub fn g3a_select_loss(
    g: &mut Graph,
    catalog: &Catalog,
    anchor: &Anchor,
    constants: &ObjectiveConstants,
    states: &[Var],
    loss_weights: &[f64; NUM_OBJECTIVES],
) -> Result<SelectLoss> {
    if states.is_empty() {
        return Err(Error::Empty("sampled states"));
    }
    let stacked = g.concat_rows(states)?;
    let x = discretize(g, stacked)?;
    let z = constants.objectives(g, x)?;
    let samples = to_baskets(g.value(x));
    let objectives: Vec<ObjectiveVector> = samples
        .iter()
        .map(|b| anchor.evaluate(catalog, b))
        .collect::<Result<_>>()?;
    let fronts = non_dominated_sort(&objectives)?;
    let first_front = fronts.first().to_vec();
    let front_rows = g.select_rows(z, &first_front)?;
    let mean = g.mean_rows(front_rows);
    let mut mean_front = [0.0; NUM_OBJECTIVES];
    mean_front.copy_from_slice(g.value(mean).data());
    let w = g.constant(Tensor::row(loss_weights.to_vec()));
    let weighted = g.mul(mean, w)?;
    let loss = g.sum(weighted);
    Ok(SelectLoss {
        loss,
        mean_front,
        samples,
        objectives,
        first_front,
    })
}

/// Per-generation summary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationMetrics {
    pub generation: usize,
    /// Mean objectives over the population's first front.
    pub mean_front: [f64; NUM_OBJECTIVES],
    /// `Σ_j w_j ζ̄_j` of `mean_front`, without the health scale.
    pub weighted_loss: f64,
    pub front_size: usize,
    /// Training loss of the generation's samples; absent for generation 0.
    pub train_loss: Option<f64>,
}

fn population_metrics(
    generation: usize,
    objectives: &[ObjectiveVector],
    weights: &[f64; NUM_OBJECTIVES],
    train_loss: Option<f64>,
) -> Result<GenerationMetrics> {
    let fronts = non_dominated_sort(objectives)?;
    let first = fronts.first();
    let mut mean_front = [0.0; NUM_OBJECTIVES];
    for &i in first {
        for (m, v) in mean_front.iter_mut().zip(&objectives[i].0) {
            *m += v / first.len() as f64;
        }
    }
    Ok(GenerationMetrics {
        generation,
        mean_front,
        weighted_loss: mean_front.iter().zip(weights).map(|(m, w)| m * w).sum(),
        front_size: first.len(),
        train_loss,
    })
}

/// Best `keep` distinct baskets by front, then within-front box rank.
pub fn select_population(
    baskets: &[Basket],
    objectives: &[ObjectiveVector],
    keep: usize,
) -> Result<Vec<usize>> {
    let ranks = mones_rank(objectives, None)?;
    let mut order: Vec<usize> = (0..baskets.len()).collect();
    order.sort_by_key(|&i| (ranks[i].alpha, ranks[i].beta, i));
    let mut seen = HashSet::new();
    let mut chosen = Vec::with_capacity(keep);
    for i in order {
        if chosen.len() == keep {
            break;
        }
        if seen.insert(&baskets[i]) {
            chosen.push(i);
        }
    }
    Ok(chosen)
}

/// Operator networks with their optimizers.
#[derive(Clone, Debug)]
pub struct Operators {
    pub crossover: CrossoverNet,
    pub mutation: MutationNet,
    pub crossover_opt: RmsProp,
    pub mutation_opt: RmsProp,
}

impl Operators {
    pub fn new(genes: usize, config: &G3aConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        let crossover = CrossoverNet::new(config.crossover_shape(genes), rng)?;
        let mutation = MutationNet::new(genes, config.mutation_hidden, config.mutation_output, config.mutation_gain, rng);
        let crossover_opt = RmsProp::new(&crossover.store, config.lr_crossover);
        let mutation_opt = RmsProp::new(&mutation.store, config.lr_mutation);
        Ok(Self {
            crossover,
            mutation,
            crossover_opt,
            mutation_opt,
        })
    }
}

/// One generation's forward pass, ready for back-propagation.
pub struct Forward {
    pub graph: Graph,
    pub crossover_params: crate::autodiff::Bound,
    pub mutation_params: crate::autodiff::Bound,
    pub select: SelectLoss,
}

/// Crossover, mutation and loss on a fresh graph.
pub fn forward_generation(
    catalog: &Catalog,
    anchor: &Anchor,
    constants: &ObjectiveConstants,
    ops: &Operators,
    population: &[Basket],
    config: &G3aConfig,
    train: bool,
    rng: &mut ChaCha8Rng,
) -> Result<Forward> {
    let mut g = Graph::new();
    let pc = ops.crossover.store.bind(&mut g);
    let pm = ops.mutation.store.bind(&mut g);
    let x = g.constant(to_matrix(population)?);
    let mut mode = Mode {
        train,
        dropout: config.dropout,
        rng,
    };
    let offspring = neural_crossover(&mut g, &ops.crossover, &pc, x, &mut mode)?;
    let states = neural_mutation(
        &mut g,
        |g, s| ops.mutation.dynamics(g, &pm, s),
        offspring,
        config.mutation_samples,
        config.t_end,
        config.ode_steps,
    )?;
    let weights: [f64; NUM_OBJECTIVES] = std::array::from_fn(|j| config.loss_weight(j));
    let select = g3a_select_loss(&mut g, catalog, anchor, constants, &states, &weights)?;
    Ok(Forward {
        graph: g,
        crossover_params: pc,
        mutation_params: pm,
        select,
    })
}

/// One back-propagation of the weighted loss and one optimizer step per network.
pub fn backprop_update(forward: &Forward, ops: &mut Operators) -> Result<()> {
    let grads = forward.graph.backward(forward.select.loss)?;
    let gc = ops.crossover.store.collect_grads(&forward.crossover_params, &grads);
    let gm = ops.mutation.store.collect_grads(&forward.mutation_params, &grads);
    ops.crossover_opt.step(&mut ops.crossover.store, &gc)?;
    ops.mutation_opt.step(&mut ops.mutation.store, &gm)?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct G3aRun {
    pub solutions: Vec<Solution>,
    /// Generation 0 is the initial population.
    pub history: Vec<GenerationMetrics>,
}

pub fn run_g3a(catalog: &Catalog, x_star: &Basket, config: &G3aConfig) -> Result<G3aRun> {
    run_g3a_with(catalog, x_star, config).map(|(run, _)| run)
}

/// As [`run_g3a`], also returning the trained operators.
pub fn run_g3a_with(catalog: &Catalog, x_star: &Basket, config: &G3aConfig) -> Result<(G3aRun, Operators)> {
    config.validate(catalog.len())?;
    let anchor = Anchor::new(catalog, x_star)?;
    let constants = ObjectiveConstants::new(catalog, &anchor)?;
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(config.seed ^ 0x6733_61));
    let mut ops = Operators::new(catalog.len(), config, &mut rng)?;

    let mut population = init_population(x_star, &ops.mutation, config)?;
    let mut objectives: Vec<ObjectiveVector> = population
        .iter()
        .map(|b| anchor.evaluate(catalog, b))
        .collect::<Result<_>>()?;
    let mut history = vec![population_metrics(0, &objectives, &config.weights, None)?];

    for generation in 1..=config.generations {
        let forward = forward_generation(catalog, &anchor, &constants, &ops, &population, config, true, &mut rng)?;
        backprop_update(&forward, &mut ops)?;
        let train_loss = forward.graph.value(forward.select.loss).item()?;
        let SelectLoss {
            samples,
            objectives: sample_objs,
            ..
        } = forward.select;

        let mut pool = population;
        pool.extend(samples);
        let mut pool_objs = objectives;
        pool_objs.extend(sample_objs);
        let keep = select_population(&pool, &pool_objs, config.population)?;
        population = keep.iter().map(|&i| pool[i].clone()).collect();
        objectives = keep.iter().map(|&i| pool_objs[i]).collect();
        history.push(population_metrics(generation, &objectives, &config.weights, Some(train_loss))?);
    }

    let solutions = non_dominated_solutions(catalog, &anchor, population)?;
    Ok((G3aRun { solutions, history }, ops))
}

#[cfg(test)]
mod tests;
