use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autodiff::gradcheck::check_gradients;
use crate::dataset::{synth_generate, SynthConfig};
use crate::pareto::dominates;

fn small() -> (Catalog, Basket) {
    let cfg = SynthConfig {
        n_households: 4,
        n_weeks: 3,
        n_products: 22,
        favourites: (6, 10),
        items_per_basket: (3, 7),
        ..Default::default()
    };
    let (cat, corpus) = synth_generate(&cfg).unwrap();
    let x = corpus.intended_baskets(&cat).unwrap().remove(0).basket;
    (cat, x)
}

fn small_config(seed: u64) -> G3aConfig {
    G3aConfig {
        heads: 2,
        ff_hidden: 32,
        mutation_hidden: 16,
        generations: 5,
        seed,
        ..Default::default()
    }
}

fn zero_output(net: &mut MutationNet) {
    let (w, b) = (net.out_weight(), net.out_bias());
    for i in [w, b] {
        let t = net.store.get_mut(i);
        *t = Tensor::zeros(t.rows(), t.cols());
    }
}

#[test]
fn zero_dynamics_initial_population_is_anchor() {
    let (cat, x) = small();
    let cfg = small_config(1);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut ops = Operators::new(cat.len(), &cfg, &mut rng).unwrap();
    zero_output(&mut ops.mutation);
    let pop = init_population(&x, &ops.mutation, &cfg).unwrap();
    assert_eq!(pop, vec![x.clone(); cfg.population]);
}

#[test]
fn initial_population_is_sized_and_integral() {
    let (cat, x) = small();
    for seed in 0..20 {
        let cfg = G3aConfig {
            mutation_gain: 3.0,
            ..small_config(seed)
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ops = Operators::new(cat.len(), &cfg, &mut rng).unwrap();
        let pop = init_population(&x, &ops.mutation, &cfg).unwrap();
        assert_eq!(pop.len(), 8);
        assert!(pop.iter().all(|b| b.len() == cat.len()));
    }
}

#[test]
fn blend_of_identical_parents() {
    let mut g = Graph::new();
    let row = vec![1.0, 0.0, 3.0, 2.0];
    let x = g.constant(Tensor::new(3, 4, row.repeat(3)).unwrap());
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let s = g.constant(Tensor::from_fn(9, 4, |_, _| rng.random_range(-2.0..2.0)));
    let out = blend(&mut g, x, s).unwrap();
    for r in 0..3 {
        for (a, b) in g.value(out).row_slice(r).iter().zip(&row) {
            assert!((a - b).abs() < 1e-15);
        }
    }
}

#[test]
fn blend_with_saturated_self_score_keeps_parent() {
    let mut g = Graph::new();
    let data = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
    let x = g.constant(Tensor::new(2, 3, data.clone()).unwrap());
    // self score 800 on the diagonal rows (b = b'), -800 elsewhere
    let s = g.constant(Tensor::from_fn(4, 3, |r, _| if r == 0 || r == 3 { 800.0 } else { -800.0 }));
    let out = blend(&mut g, x, s).unwrap();
    assert_eq!(g.value(out).data(), data.as_slice());
}

#[test]
fn blend_matches_hand_evaluation() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (b, n) = (3, 4);
    let x = Tensor::from_fn(b, n, |_, _| rng.random_range(0..5) as f64);
    let s = Tensor::from_fn(b * b, n, |_, _| rng.random_range(-3.0..3.0));
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let sv = g.constant(s.clone());
    let out = blend(&mut g, xv, sv).unwrap();
    for p in 0..b {
        for i in 0..n {
            let mut best = 0;
            for q in 0..b {
                if s.get(p * b + q, i) > s.get(p * b + best, i) {
                    best = q;
                }
            }
            let w = 1.0 / (1.0 + (-s.get(p * b + best, i)).exp());
            let expected = w * x.get(p, i) + (1.0 - w) * x.get(best, i);
            assert!((g.value(out).get(p, i) - expected).abs() < 1e-12);
        }
    }
}

#[test]
fn blend_gradient_through_weights() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = Tensor::from_fn(3, 4, |_, _| rng.random_range(0..5) as f64);
    let s = Tensor::from_fn(9, 4, |_, _| rng.random_range(-3.0..3.0));
    let w = Tensor::from_fn(3, 4, |_, _| rng.random_range(-1.0..1.0));
    let check = check_gradients(
        &[s],
        |g, v| {
            let xv = g.constant(x.clone());
            let out = blend(g, xv, v[0])?;
            crate::autodiff::gradcheck::probe(g, out, &w)
        },
        1e-5,
    )
    .unwrap();
    assert!(check.max_rel_error < 1e-6, "{check:?}");
}

#[test]
fn mutation_grid_and_closed_form() {
    let mut g = Graph::new();
    let x0 = g.constant(Tensor::row(vec![1.0, 2.0]));
    let zero = neural_mutation(&mut g, |g, x| Ok(g.scale(x, 0.0)), x0, 4, 1.0, 8).unwrap();
    assert_eq!(zero.len(), 4);
    for v in &zero {
        assert_eq!(g.value(*v).data(), &[1.0, 2.0]);
    }
    let decay = neural_mutation(&mut g, |g, x| Ok(g.scale(x, -0.7)), x0, 4, 1.0, 100).unwrap();
    for (k, v) in decay.iter().enumerate() {
        let t = (k + 1) as f64 / 4.0;
        for (got, init) in g.value(*v).data().iter().zip([1.0, 2.0]) {
            assert!((got - init * (-0.7 * t).exp()).abs() < 1e-6);
        }
    }
    assert_eq!(aligned_steps(4, 8), 8);
    assert_eq!(aligned_steps(3, 8), 9);
    assert_eq!(aligned_steps(8, 1), 8);
}

fn select_for(cat: &Catalog, x: &Basket, rows: &[Basket]) -> (SelectLoss, Graph) {
    let anchor = Anchor::new(cat, x).unwrap();
    let constants = ObjectiveConstants::new(cat, &anchor).unwrap();
    let mut g = Graph::new();
    let states: Vec<Var> = rows
        .iter()
        .map(|b| g.param(to_matrix(std::slice::from_ref(b)).unwrap()))
        .collect();
    let s = g3a_select_loss(&mut g, cat, &anchor, &constants, &states, &[1.0; NUM_OBJECTIVES]).unwrap();
    (s, g)
}

#[test]
fn single_sample_mean_is_its_objectives() {
    let (cat, x) = small();
    let mut q = x.quantities().to_vec();
    q[0] += 2;
    let y = Basket::new(q);
    let (s, _) = select_for(&cat, &x, std::slice::from_ref(&y));
    let expected = Anchor::new(&cat, &x).unwrap().evaluate(&cat, &y).unwrap();
    for j in 0..NUM_OBJECTIVES {
        assert!((s.mean_front[j] - expected.0[j]).abs() < 1e-12);
    }
}

#[test]
fn anchor_front_mean() {
    let (cat, x) = small();
    let (s, _) = select_for(&cat, &x, std::slice::from_ref(&x));
    assert!(s.mean_front[0].abs() < 1e-12);
    assert!((s.mean_front[1] - 1.0).abs() < 1e-12);
}

#[test]
fn front_mean_matches_exact_evaluation() {
    let (cat, x) = small();
    let anchor = Anchor::new(&cat, &x).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..5 {
        let rows: Vec<Basket> = (0..10)
            .map(|_| Basket::new((0..cat.len()).map(|_| rng.random_range(0..4)).collect()))
            .collect();
        let (s, _) = select_for(&cat, &x, &rows);
        let objs: Vec<ObjectiveVector> = rows.iter().map(|b| anchor.evaluate(&cat, b).unwrap()).collect();
        let front = non_dominated_sort(&objs).unwrap();
        assert_eq!(s.first_front, front.first());
        for j in 0..NUM_OBJECTIVES {
            let exact: f64 = front.first().iter().map(|&i| objs[i].0[j]).sum::<f64>() / front.first().len() as f64;
            assert!((s.mean_front[j] - exact).abs() < 1e-10, "objective {j}");
        }
    }
}

#[test]
fn graph_objectives_match_exact_evaluation() {
    let (cat, x) = small();
    let anchor = Anchor::new(&cat, &x).unwrap();
    let constants = ObjectiveConstants::new(&cat, &anchor).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut rows: Vec<Basket> = (0..30)
        .map(|_| Basket::new((0..cat.len()).map(|_| rng.random_range(0..3)).collect()))
        .collect();
    rows.push(Basket::zeros(cat.len()));
    let mut g = Graph::new();
    let xv = g.constant(to_matrix(&rows).unwrap());
    let z = constants.objectives(&mut g, xv).unwrap();
    for (r, b) in rows.iter().enumerate() {
        let exact = anchor.evaluate(&cat, b).unwrap();
        for j in 0..NUM_OBJECTIVES {
            assert!((g.value(z).get(r, j) - exact.0[j]).abs() < 1e-12, "row {r} objective {j}");
        }
    }
}

fn frozen_forward(cfg: &G3aConfig, seed: u64) -> (Forward, Operators) {
    let (cat, x) = small();
    let anchor = Anchor::new(&cat, &x).unwrap();
    let constants = ObjectiveConstants::new(&cat, &anchor).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ops = Operators::new(cat.len(), cfg, &mut rng).unwrap();
    let pop = init_population(&x, &ops.mutation, cfg).unwrap();
    let f = forward_generation(&cat, &anchor, &constants, &ops, &pop, cfg, false, &mut rng).unwrap();
    (f, ops)
}

#[test]
fn zero_weights_leave_parameters_unchanged() {
    let cfg = G3aConfig {
        weights: [0.0; NUM_OBJECTIVES],
        ..small_config(2)
    };
    let (f, mut ops) = frozen_forward(&cfg, 2);
    let before = (ops.crossover.store.clone(), ops.mutation.store.clone());
    backprop_update(&f, &mut ops).unwrap();
    assert_eq!(ops.crossover.store, before.0);
    assert_eq!(ops.mutation.store, before.1);
}

fn grads_for(cfg: &G3aConfig) -> Vec<Tensor> {
    let (f, ops) = frozen_forward(cfg, 3);
    let grads = f.graph.backward(f.select.loss).unwrap();
    let mut all = ops.mutation.store.collect_grads(&f.mutation_params, &grads);
    all.extend(ops.crossover.store.collect_grads(&f.crossover_params, &grads));
    all
}

#[test]
fn health_scale_multiplies_health_gradient() {
    let mut weights = [0.0; NUM_OBJECTIVES];
    weights[2] = 1.0;
    let scaled = grads_for(&G3aConfig {
        weights,
        ..small_config(3)
    });
    let plain = grads_for(&G3aConfig {
        weights,
        health_scale: 1.0,
        ..small_config(3)
    });
    let mut nonzero = 0;
    for (a, b) in scaled.iter().zip(&plain) {
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - 7.0 * y).abs() <= 1e-12 * x.abs().max(1.0));
            if *y != 0.0 {
                nonzero += 1;
            }
        }
    }
    assert!(nonzero > 0);
}

#[test]
fn single_pass_equals_per_objective_accumulation() {
    let total = grads_for(&small_config(3));
    let mut acc: Vec<Tensor> = total.iter().map(|t| Tensor::zeros(t.rows(), t.cols())).collect();
    for j in 0..NUM_OBJECTIVES {
        let mut weights = [0.0; NUM_OBJECTIVES];
        weights[j] = 1.0;
        let part = grads_for(&G3aConfig {
            weights,
            ..small_config(3)
        });
        for (a, p) in acc.iter_mut().zip(&part) {
            a.add_assign(p);
        }
    }
    for (a, t) in acc.iter().zip(&total) {
        for (x, y) in a.data().iter().zip(t.data()) {
            assert!((x - y).abs() <= 1e-10 * y.abs().max(1.0));
        }
    }
}

#[test]
fn update_is_reproducible() {
    let cfg = small_config(4);
    let run = || {
        let (f, mut ops) = frozen_forward(&cfg, 4);
        backprop_update(&f, &mut ops).unwrap();
        (ops.crossover.store, ops.mutation.store)
    };
    assert_eq!(run(), run());
}

#[test]
fn zero_generations_emit_initial_front() {
    let (cat, x) = small();
    let cfg = G3aConfig {
        generations: 0,
        ..small_config(5)
    };
    let run = run_g3a(&cat, &x, &cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(5 ^ 0x6733_61));
    let ops = Operators::new(cat.len(), &cfg, &mut rng).unwrap();
    let pop = init_population(&x, &ops.mutation, &cfg).unwrap();
    let anchor = Anchor::new(&cat, &x).unwrap();
    assert_eq!(run.solutions, non_dominated_solutions(&cat, &anchor, pop).unwrap());
    assert_eq!(run.history.len(), 1);
}

#[test]
fn run_is_reproducible_and_non_dominated() {
    let (cat, x) = small();
    let cfg = small_config(6);
    let a = run_g3a(&cat, &x, &cfg).unwrap();
    assert_eq!(a, run_g3a(&cat, &x, &cfg).unwrap());
    assert!(!a.solutions.is_empty() && a.solutions.len() <= 8);
    assert_eq!(a.history.len(), 6);
    for s in &a.solutions {
        for t in &a.solutions {
            assert!(!dominates(t.objectives.as_slice(), s.objectives.as_slice()).unwrap());
        }
    }
}

#[test]
fn frozen_networks_are_deterministic() {
    let (cat, x) = small();
    let cfg = G3aConfig {
        lr_crossover: 0.0,
        lr_mutation: 0.0,
        ..small_config(7)
    };
    assert_eq!(run_g3a(&cat, &x, &cfg).unwrap(), run_g3a(&cat, &x, &cfg).unwrap());
}

#[test]
fn emitted_solutions_carry_gradient_to_mutation_net() {
    let (cat, x) = small();
    for seed in 0..5 {
        let cfg = small_config(seed);
        let (run, ops) = run_g3a_with(&cat, &x, &cfg).unwrap();
        let anchor = Anchor::new(&cat, &x).unwrap();
        let constants = ObjectiveConstants::new(&cat, &anchor).unwrap();
        for s in &run.solutions {
            let mut g = Graph::new();
            let pm = ops.mutation.store.bind(&mut g);
            let x0 = g.constant(to_matrix(std::slice::from_ref(&s.basket)).unwrap());
            let states = neural_mutation(&mut g, |g, v| ops.mutation.dynamics(g, &pm, v), x0, 1, 1.0, 4).unwrap();
            let sel = g3a_select_loss(&mut g, &cat, &anchor, &constants, &states, &[1.0; NUM_OBJECTIVES]).unwrap();
            let grads = g.backward(sel.loss).unwrap();
            let any = ops
                .mutation
                .store
                .collect_grads(&pm, &grads)
                .iter()
                .any(|t| t.data().iter().any(|&v| v != 0.0));
            assert!(any, "seed {seed}");
        }
    }
}

#[test]
fn config_validation() {
    assert!(G3aConfig::default().validate(132).is_ok());
    assert!(G3aConfig::default().validate(130).is_err());
    assert!(G3aConfig {
        population: 1,
        ..Default::default()
    }
    .validate(132)
    .is_err());
    assert!(G3aConfig {
        health_scale: 0.0,
        ..Default::default()
    }
    .validate(132)
    .is_err());
    assert_eq!(G3aConfig::default().loss_weight(2), 7.0);
    assert_eq!(G3aConfig::default().loss_weight(5), 1.0);
}
