//! Reference-point NSGA-II over integer baskets.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{Anchor, Basket, Catalog, ObjectiveVector, NUM_OBJECTIVES};
use crate::error::{check_len, Error, Result};
use crate::pareto::non_dominated_sort;
use crate::solution::{non_dominated_solutions, Solution};

/// Target vectors in objective space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferencePointSet {
    pub points: Vec<[f64; NUM_OBJECTIVES]>,
}

impl ReferencePointSet {
    /// Infeasible optimum, personal optimum and environmental optimum.
    pub fn standard() -> Self {
        let zeros = [0.0; NUM_OBJECTIVES];
        let mut personal = [1.0; NUM_OBJECTIVES];
        personal[..5].fill(0.0);
        let mut environmental = [1.0; NUM_OBJECTIVES];
        environmental[5..].fill(0.0);
        Self {
            points: vec![zeros, personal, environmental],
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

impl Default for ReferencePointSet {
    fn default() -> Self {
        Self::standard()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GaConfig {
    pub population: usize,
    pub generations: usize,
    /// Continuation probability of the exponential crossover run.
    pub crossover_continuation: f64,
    /// Polynomial mutation distribution index.
    pub eta_m: f64,
    /// Per-gene mutation probability; `None` means `1 / N`.
    pub mutation_prob: Option<f64>,
    /// Clustering radius in normalized objective space.
    pub epsilon: f64,
    /// Lower bound of the gene upper bound `max(2 · max(x*), floor)`.
    pub upper_bound_floor: u32,
    pub reference_points: ReferencePointSet,
    /// Per-objective consumer weights scaling reference-point distances.
    pub weights: [f64; NUM_OBJECTIVES],
    pub seed: u64,
}

impl Default for GaConfig {
    fn default() -> Self {
        Self {
            population: 10,
            generations: 40,
            crossover_continuation: 0.9,
            eta_m: 20.0,
            mutation_prob: None,
            epsilon: 0.001,
            upper_bound_floor: 10,
            reference_points: ReferencePointSet::standard(),
            weights: [1.0; NUM_OBJECTIVES],
            seed: 0,
        }
    }
}

impl GaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.population < 2 {
            return Err(Error::Config("population must be at least 2".into()));
        }
        if !(0.0..=1.0).contains(&self.crossover_continuation) {
            return Err(Error::Config("crossover continuation must be in [0, 1]".into()));
        }
        if let Some(p) = self.mutation_prob {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config("mutation probability must be in [0, 1]".into()));
            }
        }
        if self.reference_points.is_empty() {
            return Err(Error::Config("at least one reference point is required".into()));
        }
        if self.weights.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
            return Err(Error::Config("weights must be positive".into()));
        }
        Ok(())
    }
}

pub(crate) fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Starting value of the logistic map for coordinate `i`, inside (0.05, 0.95)
/// and away from the points that collapse onto fixed points.
fn logistic_seed(seed: u64, i: usize) -> f64 {
    let bits = splitmix64(seed ^ splitmix64(i as u64 + 1));
    let u = (bits >> 11) as f64 / (1u64 << 53) as f64;
    let mut z = 0.05 + 0.9 * u;
    for p in [0.25, 0.5, 0.75] {
        if (z - p).abs() < 1e-3 {
            z += 0.01;
        }
    }
    z
}

/// Population seeded around `x*` with logistic-map iterates.
///
/// Solution `b` scales each purchased quantity by `0.5 + z_b`, where
/// `z_{n+1} = 4 z_n (1 - z_n)` runs independently per coordinate. Solution 0
/// is `x*` itself. Each other solution adds one unit of an unpurchased
/// product with probability 0.1.
pub fn logistic_init(x_star: &Basket, population: usize, seed: u64) -> Result<Vec<Basket>> {
    if x_star.is_zero() {
        return Err(Error::InvalidAnchor);
    }
    let q = x_star.quantities();
    let mut chaos: Vec<f64> = (0..q.len()).map(|i| logistic_seed(seed, i)).collect();
    let zeros: Vec<usize> = (0..q.len()).filter(|&i| q[i] == 0).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ 0x6c6f_6769_7374_6963));
    let mut out = Vec::with_capacity(population);
    if population > 0 {
        out.push(x_star.clone());
    }
    for _ in 1..population {
        for z in chaos.iter_mut() {
            *z = 4.0 * *z * (1.0 - *z);
        }
        let mut x: Vec<u32> = q
            .iter()
            .zip(&chaos)
            .map(|(&qi, &z)| {
                if qi == 0 {
                    0
                } else {
                    (f64::from(qi) * (0.5 + z)).round().max(0.0) as u32
                }
            })
            .collect();
        if !zeros.is_empty() && rng.random::<f64>() < 0.1 {
            x[zeros[rng.random_range(0..zeros.len())]] = 1;
        }
        out.push(Basket::new(x));
    }
    Ok(out)
}

/// Copies a contiguous wrap-around run of genes from `donor` into `x`.
///
/// The run starts at a uniform index and extends while a uniform draw stays
/// below `p`, so its length is geometric.
pub fn int_exp_crossover<R: Rng + ?Sized>(x: &[u32], donor: &[u32], p: f64, rng: &mut R) -> Result<Vec<u32>> {
    check_len(x.len(), donor.len())?;
    let n = x.len();
    let mut child = x.to_vec();
    if n == 0 {
        return Ok(child);
    }
    let mut i = rng.random_range(0..n);
    let mut copied = 0;
    loop {
        child[i] = donor[i];
        copied += 1;
        i = (i + 1) % n;
        if copied == n || rng.random::<f64>() >= p {
            break;
        }
    }
    Ok(child)
}

/// Bounded polynomial mutation on `[0, upper_bound]`, rounded back to integers.
pub fn poly_mutation<R: Rng + ?Sized>(
    x: &[u32],
    eta_m: f64,
    mutation_prob: f64,
    upper_bound: u32,
    rng: &mut R,
) -> Vec<u32> {
    let ub = f64::from(upper_bound);
    x.iter()
        .map(|&gene| {
            if upper_bound == 0 || rng.random::<f64>() >= mutation_prob {
                return gene.min(upper_bound);
            }
            let y = f64::from(gene).min(ub);
            let delta1 = y / ub;
            let delta2 = (ub - y) / ub;
            let power = 1.0 / (eta_m + 1.0);
            let r: f64 = rng.random();
            let deltaq = if r < 0.5 {
                let v = 2.0 * r + (1.0 - 2.0 * r) * (1.0 - delta1).powf(eta_m + 1.0);
                v.powf(power) - 1.0
            } else {
                let v = 2.0 * (1.0 - r) + 2.0 * (r - 0.5) * (1.0 - delta2).powf(eta_m + 1.0);
                1.0 - v.powf(power)
            };
            (y + deltaq * ub).clamp(0.0, ub).round() as u32
        })
        .collect()
}

/// Survival order: non-dominated front first, then closeness to the
/// reference points, with near-duplicates pushed to the back of their front.
pub fn rnsga2_rank<R: AsRef<[f64]>>(
    rows: &[R],
    reference_points: &ReferencePointSet,
    epsilon: f64,
    weights: &[f64],
) -> Result<Vec<usize>> {
    if reference_points.is_empty() {
        return Err(Error::Config("at least one reference point is required".into()));
    }
    if rows.is_empty() {
        return Ok(Vec::new());
    }
    let m = rows[0].as_ref().len();
    check_len(m, weights.len())?;
    for p in &reference_points.points {
        check_len(m, p.len())?;
    }
    let fronts = non_dominated_sort(rows)?;

    let mut ideal = vec![f64::INFINITY; m];
    let mut nadir = vec![f64::NEG_INFINITY; m];
    for r in rows {
        for (j, &v) in r.as_ref().iter().enumerate() {
            if v.is_finite() {
                ideal[j] = ideal[j].min(v);
                nadir[j] = nadir[j].max(v);
            }
        }
    }
    let scale: Vec<(f64, f64)> = ideal
        .iter()
        .zip(&nadir)
        .map(|(&lo, &hi)| {
            if !lo.is_finite() {
                (0.0, 1.0)
            } else if hi - lo > 1e-12 {
                (lo, hi - lo)
            } else {
                (lo, 1.0)
            }
        })
        .collect();
    let normalize = |v: &[f64]| -> Vec<f64> {
        v.iter()
            .zip(&scale)
            .map(|(&x, &(lo, span))| if x.is_finite() { (x - lo) / span } else { 1e6 })
            .collect()
    };
    let wsum: f64 = weights.iter().sum();
    let w: Vec<f64> = weights.iter().map(|x| x / wsum).collect();
    let distance = |a: &[f64], b: &[f64]| -> f64 {
        a.iter()
            .zip(b)
            .zip(&w)
            .map(|((x, y), wj)| wj * (x - y).powi(2))
            .sum::<f64>()
            .sqrt()
    };
    let normed: Vec<Vec<f64>> = rows.iter().map(|r| normalize(r.as_ref())).collect();
    let refs: Vec<Vec<f64>> = reference_points.points.iter().map(|p| normalize(p)).collect();

    let mut order = Vec::with_capacity(rows.len());
    for front in &fronts.fronts {
        let mut best_rank = vec![usize::MAX; front.len()];
        let mut best_dist = vec![f64::INFINITY; front.len()];
        for r in &refs {
            let d: Vec<f64> = front.iter().map(|&i| distance(&normed[i], r)).collect();
            let mut by_d: Vec<usize> = (0..front.len()).collect();
            by_d.sort_by(|&a, &b| d[a].total_cmp(&d[b]).then(front[a].cmp(&front[b])));
            for (pos, &k) in by_d.iter().enumerate() {
                best_rank[k] = best_rank[k].min(pos);
                best_dist[k] = best_dist[k].min(d[k]);
            }
        }
        let mut local: Vec<usize> = (0..front.len()).collect();
        local.sort_by(|&a, &b| {
            best_rank[a]
                .cmp(&best_rank[b])
                .then(best_dist[a].total_cmp(&best_dist[b]))
                .then(front[a].cmp(&front[b]))
        });
        let mut kept: Vec<usize> = Vec::new();
        let mut crowded = Vec::new();
        for k in local {
            let i = front[k];
            if kept.iter().any(|&t| distance(&normed[i], &normed[t]) < epsilon) {
                crowded.push(i);
            } else {
                kept.push(i);
            }
        }
        order.extend(kept);
        order.extend(crowded);
    }
    Ok(order)
}

/// Outcome of one RNSGA-II run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rnsga2Run {
    pub solutions: Vec<Solution>,
    /// Per-generation minimum of each objective over the population, starting
    /// with the initial population.
    pub best_per_generation: Vec<[f64; NUM_OBJECTIVES]>,
}

/// For each objective, one non-dominated minimizer; reuses already chosen ones.
fn extreme_members(objs: &[ObjectiveVector], first_front: &[usize]) -> Vec<usize> {
    let mut chosen: Vec<usize> = Vec::new();
    for j in 0..NUM_OBJECTIVES {
        let best = first_front
            .iter()
            .map(|&i| objs[i].0[j])
            .fold(f64::INFINITY, f64::min);
        let minimizers: Vec<usize> = first_front.iter().copied().filter(|&i| objs[i].0[j] == best).collect();
        if minimizers.iter().any(|i| chosen.contains(i)) {
            continue;
        }
        if let Some(&i) = minimizers.first() {
            chosen.push(i);
        }
    }
    chosen
}

fn population_best(objs: &[ObjectiveVector]) -> [f64; NUM_OBJECTIVES] {
    let mut best = [f64::INFINITY; NUM_OBJECTIVES];
    for z in objs {
        for (b, v) in best.iter_mut().zip(&z.0) {
            *b = b.min(*v);
        }
    }
    best
}

pub fn run_rnsga2(catalog: &Catalog, x_star: &Basket, config: &GaConfig) -> Result<Rnsga2Run> {
    config.validate()?;
    let anchor = Anchor::new(catalog, x_star)?;
    let n = catalog.len();
    let b = config.population;
    let max_q = x_star.quantities().iter().copied().max().unwrap_or(0);
    let upper_bound = (2 * max_q).max(config.upper_bound_floor);
    let mutation_prob = config.mutation_prob.unwrap_or(1.0 / n as f64);
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(config.seed));

    let mut population = Vec::with_capacity(b);
    let mut seen = HashSet::new();
    for basket in logistic_init(x_star, b, config.seed)? {
        if seen.insert(basket.clone()) {
            population.push(basket);
        }
    }
    let mut objectives: Vec<ObjectiveVector> = population
        .iter()
        .map(|x| anchor.evaluate(catalog, x))
        .collect::<Result<_>>()?;
    let order = rnsga2_rank(&objectives, &config.reference_points, config.epsilon, &config.weights)?;
    population = order.iter().map(|&i| population[i].clone()).collect();
    objectives = order.iter().map(|&i| objectives[i]).collect();
    let mut history = vec![population_best(&objectives)];

    for _ in 0..config.generations {
        let mut pool = population.clone();
        let mut pool_objs = objectives.clone();
        let mut members: HashSet<Basket> = pool.iter().cloned().collect();
        let tournament = |rng: &mut ChaCha8Rng, len: usize| {
            let a = rng.random_range(0..len);
            let c = rng.random_range(0..len);
            a.min(c)
        };
        for _ in 0..b {
            let p1 = tournament(&mut rng, population.len());
            let p2 = tournament(&mut rng, population.len());
            let child = int_exp_crossover(
                population[p1].quantities(),
                population[p2].quantities(),
                config.crossover_continuation,
                &mut rng,
            )?;
            let child = Basket::new(poly_mutation(&child, config.eta_m, mutation_prob, upper_bound, &mut rng));
            if members.insert(child.clone()) {
                pool_objs.push(anchor.evaluate(catalog, &child)?);
                pool.push(child);
            }
        }

        let order = rnsga2_rank(&pool_objs, &config.reference_points, config.epsilon, &config.weights)?;
        let fronts = non_dominated_sort(&pool_objs)?;
        let mut keep: Vec<usize> = extreme_members(&pool_objs, fronts.first());
        keep.truncate(b);
        for &i in &order {
            if keep.len() >= b {
                break;
            }
            if !keep.contains(&i) {
                keep.push(i);
            }
        }
        let position: Vec<usize> = {
            let mut pos = vec![0; pool.len()];
            for (p, &i) in order.iter().enumerate() {
                pos[i] = p;
            }
            pos
        };
        keep.sort_by_key(|&i| position[i]);
        population = keep.iter().map(|&i| pool[i].clone()).collect();
        objectives = keep.iter().map(|&i| pool_objs[i]).collect();
        history.push(population_best(&objectives));
    }

    let solutions = non_dominated_solutions(catalog, &anchor, population)?;
    Ok(Rnsga2Run {
        solutions,
        best_per_generation: history,
    })
}
