//! Acceptance gate: one PASS/FAIL line per criterion, non-zero exit on any failure.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use ecobasket::autodiff::gradcheck::{check_gradients, probe, STEP};
use ecobasket::autodiff::nn::{DecoderLayer, EncoderLayer, FeedForward, LayerNorm, Linear, Mode, MultiHeadAttention};
use ecobasket::autodiff::{ode_integrate, uniform_sample_times, Bound, Graph, ParamStore, Tensor, Var};
use ecobasket::dataset::{synth_generate, IntendedBasket, SynthConfig};
use ecobasket::domain::feature_totals;
use ecobasket::experiments::{compare_dominance, BasketKey, counterfactual_simulate, recommend_corpus, BootstrapConfig, CounterfactualConfig, RecommendationSet};
use ecobasket::g3a::{run_g3a, G3aConfig};
use ecobasket::methods::{Method, MethodConfigs};
use ecobasket::mones::{mones_update, sample_offspring, NesRates, NesState};
use ecobasket::pareto::{box_volume_rank, dominates, non_dominated_sort};
use ecobasket::{Anchor, Basket, Catalog, Feature, Product, Unit, NUM_FEATURES};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn gate(name: &str, f: impl FnOnce() -> Check) -> bool {
    let start = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into()))
    });
    let secs = start.elapsed().as_secs_f64();
    match outcome {
        Ok(detail) => {
            println!("PASS {name} ({detail}; {secs:.1}s)");
            true
        }
        Err(why) => {
            println!("FAIL {name}: {why} ({secs:.1}s)");
            false
        }
    }
}

// ---------------------------------------------------------------- sorting

/// Fronts by repeated removal of the pairwise non-dominated set.
fn peeling_oracle(rows: &[Vec<f64>]) -> Vec<usize> {
    let dom = |a: &[f64], b: &[f64]| a.iter().zip(b).all(|(x, y)| x <= y) && a.iter().zip(b).any(|(x, y)| x < y);
    let mut front = vec![0; rows.len()];
    let mut left: Vec<usize> = (0..rows.len()).collect();
    let mut k = 1;
    while !left.is_empty() {
        let layer: Vec<usize> = left
            .iter()
            .copied()
            .filter(|&i| !left.iter().any(|&j| j != i && dom(&rows[j], &rows[i])))
            .collect();
        for &i in &layer {
            front[i] = k;
        }
        left.retain(|i| !layer.contains(i));
        k += 1;
    }
    front
}

fn sorting_oracle() -> Check {
    let mut worst = Duration::ZERO;
    for seed in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ties = seed % 2 == 0;
        let rows: Vec<Vec<f64>> = (0..200)
            .map(|_| (0..11).map(|_| if ties { rng.random_range(0..3) as f64 } else { rng.random_range(0.0..1.0) }).collect())
            .collect();
        let t = Instant::now();
        let got = non_dominated_sort(&rows).map_err(|e| e.to_string())?;
        worst = worst.max(t.elapsed());
        ensure!(got.front_of == peeling_oracle(&rows), "front assignment differs from peeling oracle (seed {seed})");
    }
    ensure!(worst < Duration::from_secs(1), "sort took {worst:?}");
    Ok(format!("5 sets of 200 x 11, slowest sort {:.2} ms", worst.as_secs_f64() * 1e3))
}

// ---------------------------------------------------------------- ranking

fn ranking_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for m in 3..=11 {
        let rows: Vec<Vec<f64>> = (0..50).map(|_| (0..m).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
        let reference: Vec<f64> = (0..m).map(|j| rows.iter().map(|r| r[j]).fold(f64::NEG_INFINITY, f64::max) + 1.0).collect();
        let volumes: Vec<f64> = rows
            .iter()
            .map(|r| {
                let mut v = 1.0;
                for j in 0..m {
                    v *= reference[j] - r[j];
                }
                v
            })
            .collect();
        let got = box_volume_rank(&rows).map_err(|e| e.to_string())?;
        for i in 0..50 {
            let beta = 1 + (0..50).filter(|&k| volumes[k] > volumes[i] || (volumes[k] == volumes[i] && k < i)).count();
            ensure!(got[i].volume == volumes[i], "volume of row {i} in R^{m}: {} vs {}", got[i].volume, volumes[i]);
            ensure!(got[i].beta == beta, "rank of row {i} in R^{m}: {} vs {beta}", got[i].beta);
        }
    }
    Ok("50 points in each of R^3..R^11".into())
}

// ---------------------------------------------------------------- gradients

const INSTANCES: u64 = 10;
const GRAD_TOL: f64 = 1e-4;

/// Values bounded away from zero so kinks and poles stay out of reach of the step.
fn away(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
    Tensor::from_fn(r, c, |_, _| {
        let v = rng.random_range(0.2..2.0);
        if rng.random_bool(0.5) { v } else { -v }
    })
}

fn positive(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
    Tensor::from_fn(r, c, |_, _| rng.random_range(0.5..3.0))
}

struct GradCase {
    name: &'static str,
    make: fn(&mut ChaCha8Rng) -> Vec<Tensor>,
    f: fn(&mut Graph, &[Var]) -> ecobasket::Result<Var>,
}

fn shapes_ab(rng: &mut ChaCha8Rng) -> (usize, usize) {
    (rng.random_range(1..5), rng.random_range(1..5))
}

fn elementwise_pair(rng: &mut ChaCha8Rng) -> Vec<Tensor> {
    let (r, c) = shapes_ab(rng);
    let (br, bc) = [(r, c), (1, c), (r, 1), (1, 1)][rng.random_range(0..4)];
    vec![away(rng, r, c), away(rng, br, bc)]
}

fn unary(rng: &mut ChaCha8Rng) -> Vec<Tensor> {
    let (r, c) = shapes_ab(rng);
    vec![away(rng, r, c)]
}

/// Reduces a non-scalar output with weights fixed by its shape.
fn reduce(g: &mut Graph, out: Var) -> ecobasket::Result<Var> {
    let (r, c) = g.shape(out);
    if (r, c) == (1, 1) {
        return Ok(out);
    }
    let mut rng = ChaCha8Rng::seed_from_u64((r * 16 + c) as u64);
    let w = Tensor::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0));
    probe(g, out, &w)
}

fn grad_cases() -> Vec<GradCase> {
    macro_rules! case {
        ($name:expr, $make:expr, |$g:ident, $v:ident| $body:expr) => {
            GradCase {
                name: $name,
                make: $make,
                f: |$g: &mut Graph, $v: &[Var]| {
                    let out: Var = $body;
                    reduce($g, out)
                },
            }
        };
    }
    vec![
        case!("matmul", |rng| {
            let (n, k) = shapes_ab(rng);
            let m = rng.random_range(1..5);
            vec![away(rng, n, k), away(rng, k, m)]
        }, |g, v| g.matmul(v[0], v[1])?),
        case!("matmul_transposed", |rng| {
            let (n, k) = shapes_ab(rng);
            let m = rng.random_range(1..5);
            vec![away(rng, k, n), away(rng, m, k)]
        }, |g, v| {
            let a = g.transpose(v[0]);
            let b = g.transpose(v[1]);
            g.matmul(a, b)?
        }),
        case!("add", elementwise_pair, |g, v| g.add(v[0], v[1])?),
        case!("sub", elementwise_pair, |g, v| g.sub(v[0], v[1])?),
        case!("mul", elementwise_pair, |g, v| g.mul(v[0], v[1])?),
        case!("div_or_zero", elementwise_pair, |g, v| g.div_or_zero(v[0], v[1])?),
        case!("scale", unary, |g, v| g.scale(v[0], -1.7)),
        case!("add_scalar", unary, |g, v| {
            let y = g.add_scalar(v[0], 0.3);
            g.square(y)
        }),
        case!("one_minus", unary, |g, v| g.one_minus(v[0])),
        case!("sum", unary, |g, v| {
            let s = g.square(v[0]);
            g.sum(s)
        }),
        case!("mean", unary, |g, v| {
            let s = g.sin(v[0]);
            g.mean(s)
        }),
        case!("sum_rows", unary, |g, v| g.sum_rows(v[0])),
        case!("mean_rows", unary, |g, v| g.mean_rows(v[0])),
        case!("sum_cols", unary, |g, v| g.sum_cols(v[0])),
        case!("sigmoid", unary, |g, v| g.sigmoid(v[0])),
        case!("relu", unary, |g, v| g.relu(v[0])),
        case!("gelu", unary, |g, v| g.gelu(v[0])),
        case!("sin", unary, |g, v| g.sin(v[0])),
        case!("square", unary, |g, v| g.square(v[0])),
        case!("sqrt", |rng| {
            let (r, c) = shapes_ab(rng);
            vec![positive(rng, r, c)]
        }, |g, v| g.sqrt(v[0])),
        case!("softmax_rows", unary, |g, v| g.softmax_rows(v[0])),
        case!("layer_norm", |rng| {
            let r = rng.random_range(1..4);
            let c = rng.random_range(2..6);
            vec![away(rng, r, c), away(rng, 1, c), away(rng, 1, c)]
        }, |g, v| g.layer_norm(v[0], v[1], v[2], 1e-5)?),
        case!("dropout", unary, |g, v| {
            let mut rng = ChaCha8Rng::seed_from_u64(99);
            g.dropout(v[0], 0.3, true, &mut rng)
        }),
        case!("concat_cols", |rng| {
            let r = rng.random_range(1..4);
            vec![away(rng, r, 2), away(rng, r, 3)]
        }, |g, v| g.concat_cols(&[v[0], v[1]])?),
        case!("concat_rows", |rng| {
            let c = rng.random_range(1..4);
            vec![away(rng, 2, c), away(rng, 1, c)]
        }, |g, v| g.concat_rows(&[v[0], v[1]])?),
        case!("reshape", |rng| vec![away(rng, 2, 6)], |g, v| g.reshape(v[0], 3, 4)?),
        case!("transpose", unary, |g, v| g.transpose(v[0])),
        case!("slice_cols", |rng| vec![away(rng, 3, 5)], |g, v| g.slice_cols(v[0], 1, 3)?),
        case!("select_rows", |rng| vec![away(rng, 4, 3)], |g, v| g.select_rows(v[0], &[2, 0, 2, 3])?),
        case!("gather_cols", |rng| vec![away(rng, 3, 2)], |g, v| g.gather_cols(v[0], 4, &[0, 2, 1, 1, 2, 0, 2, 2])?),
        case!("linear", |rng| {
            let mut store = ParamStore::new();
            Linear::new(&mut store, "l", 3, 4, 1.0, rng);
            let mut v = store.values().to_vec();
            v[1] = away(rng, 1, 4);
            v.push(away(rng, 2, 3));
            v
        }, |g, v| {
            let p = Bound::from_vars(v[..2].to_vec());
            Linear { w: 0, b: 1 }.apply(g, &p, v[2])?
        }),
        case!("layer_norm_module", |rng| vec![away(rng, 1, 4), away(rng, 1, 4), away(rng, 3, 4)], |g, v| {
            let p = Bound::from_vars(v[..2].to_vec());
            LayerNorm { gamma: 0, beta: 1 }.apply(g, &p, v[2])?
        }),
    ]
}

/// Parameters of a freshly initialised block plus its inputs.
fn block_inputs(store: &ParamStore, rng: &mut ChaCha8Rng, inputs: &[(usize, usize)]) -> Vec<Tensor> {
    let mut v: Vec<Tensor> = store
        .values()
        .iter()
        .map(|t| {
            // biases start at zero; perturb them so their gradients are exercised
            let mut t = t.clone();
            t.data_mut().iter_mut().for_each(|x| *x += rng.random_range(-0.3..0.3));
            t
        })
        .collect();
    for &(r, c) in inputs {
        v.push(away(rng, r, c));
    }
    v
}

fn run_block(name: &str, seed: u64, worst: &mut f64, checked: &mut usize) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (width, heads, hidden) = (6, 2, 5);
    let mut store = ParamStore::new();
    let result = match name {
        "attention" => {
            let mha = MultiHeadAttention::new(&mut store, "a", width, heads, &mut rng).map_err(|e| e.to_string())?;
            let n = store.len();
            let inputs = block_inputs(&store, &mut rng, &[(3, width), (4, width)]);
            let w = Tensor::from_fn(3, width, |_, _| rng.random_range(-1.0..1.0));
            check_gradients(
                &inputs,
                |g, v| {
                    let p = Bound::from_vars(v[..n].to_vec());
                    let out = mha.apply(g, &p, v[n], v[n + 1], v[n + 1])?;
                    probe(g, out.output, &w)
                },
                STEP,
            )
        }
        "feed_forward" => {
            let ff = FeedForward::new(&mut store, "f", width, hidden, &mut rng);
            let n = store.len();
            let inputs = block_inputs(&store, &mut rng, &[(3, width)]);
            let w = Tensor::from_fn(3, width, |_, _| rng.random_range(-1.0..1.0));
            check_gradients(
                &inputs,
                |g, v| {
                    let p = Bound::from_vars(v[..n].to_vec());
                    let out = ff.apply(g, &p, v[n])?;
                    probe(g, out, &w)
                },
                STEP,
            )
        }
        "encoder_layer" => {
            let enc = EncoderLayer::new(&mut store, "e", width, heads, hidden, &mut rng).map_err(|e| e.to_string())?;
            let n = store.len();
            let inputs = block_inputs(&store, &mut rng, &[(3, width)]);
            let w = Tensor::from_fn(3, width, |_, _| rng.random_range(-1.0..1.0));
            check_gradients(
                &inputs,
                |g, v| {
                    let p = Bound::from_vars(v[..n].to_vec());
                    let mut r = ChaCha8Rng::seed_from_u64(5);
                    let mut mode = Mode { train: true, dropout: 0.2, rng: &mut r };
                    let out = enc.apply(g, &p, v[n], &mut mode)?;
                    probe(g, out, &w)
                },
                STEP,
            )
        }
        "decoder_layer" => {
            let dec = DecoderLayer::new(&mut store, "d", width, heads, hidden, &mut rng).map_err(|e| e.to_string())?;
            let n = store.len();
            let inputs = block_inputs(&store, &mut rng, &[(2, width), (3, width)]);
            let w = Tensor::from_fn(2, width, |_, _| rng.random_range(-1.0..1.0));
            check_gradients(
                &inputs,
                |g, v| {
                    let p = Bound::from_vars(v[..n].to_vec());
                    let mut r = ChaCha8Rng::seed_from_u64(5);
                    let mut mode = Mode { train: false, dropout: 0.2, rng: &mut r };
                    let out = dec.apply(g, &p, v[n], v[n + 1], &mut mode)?;
                    probe(g, out, &w)
                },
                STEP,
            )
        }
        "ode_integrate" => {
            let inputs = vec![away(&mut rng, 1, 3), Tensor::from_fn(3, 3, |_, _| rng.random_range(-0.8..0.8)), away(&mut rng, 1, 3)];
            let times = uniform_sample_times(1.0, 4);
            let ws: Vec<Tensor> = (0..4).map(|_| Tensor::from_fn(1, 3, |_, _| rng.random_range(-1.0..1.0))).collect();
            check_gradients(
                &inputs,
                |g, v| {
                    let (w1, b) = (v[1], v[2]);
                    let states = ode_integrate(
                        g,
                        |g, x| {
                            let h = g.matmul(x, w1)?;
                            let h = g.add(h, b)?;
                            Ok(g.sin(h))
                        },
                        v[0],
                        1.0,
                        8,
                        &times,
                    )?;
                    let mut parts = Vec::new();
                    for (s, w) in states.iter().zip(&ws) {
                        parts.push(probe(g, *s, w)?);
                    }
                    let all = g.concat_cols(&parts)?;
                    Ok(g.sum(all))
                },
                STEP,
            )
        }
        other => return Err(format!("unknown block {other}")),
    }
    .map_err(|e| format!("{name}: {e}"))?;
    *worst = worst.max(result.max_rel_error);
    *checked += result.checked;
    if result.max_rel_error > GRAD_TOL {
        return Err(format!("{name} instance {seed}: relative error {:.2e}", result.max_rel_error));
    }
    Ok(())
}

/// Rounding forward, identity backward: the analytic gradient must equal
/// the finite-difference gradient of the same map with the offset frozen.
fn fractional_decouple_instance(seed: u64) -> Result<f64, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (r, c) = (rng.random_range(1..4), rng.random_range(1..5));
    // keep clear of half-integers so the frozen offset is exact under ±STEP
    let y = Tensor::from_fn(r, c, |_, _| rng.random_range(-3..4) as f64 + rng.random_range(-0.4..0.4));
    let w = Tensor::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0));
    let offset = y.map(|v| v - v.round());

    let mut g = Graph::new();
    let yv = g.param(y.clone());
    let out = g.fractional_decouple(yv).map_err(|e| e.to_string())?;
    for (a, b) in g.value(out).data().iter().zip(y.data()) {
        if *a != b.round() || a.fract() != 0.0 {
            return Err(format!("forward {a} is not round({b})"));
        }
    }
    let sq = g.square(out);
    let loss = probe(&mut g, sq, &w).map_err(|e| e.to_string())?;
    let grads = g.backward(loss).map_err(|e| e.to_string())?;
    let analytic = grads.get(yv).ok_or("no gradient reached the input")?.clone();

    let mut worst: f64 = 0.0;
    let mut work = y.clone();
    let eval = |t: &Tensor| -> f64 {
        t.data()
            .iter()
            .zip(offset.data())
            .zip(w.data())
            .map(|((v, o), w)| (v - o).powi(2) * w)
            .sum()
    };
    for e in 0..y.len() {
        let orig = y.data()[e];
        work.data_mut()[e] = orig + STEP;
        let up = eval(&work);
        work.data_mut()[e] = orig - STEP;
        let down = eval(&work);
        work.data_mut()[e] = orig;
        let numeric = (up - down) / (2.0 * STEP);
        let a = analytic.data()[e];
        worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6));
    }
    // identity Jacobian: d out / d y = 1 element-wise
    let mut g = Graph::new();
    let yv = g.param(y.clone());
    let out = g.fractional_decouple(yv).map_err(|e| e.to_string())?;
    let total = g.sum(out);
    let ones = g.backward(total).map_err(|e| e.to_string())?;
    if ones.get(yv).map(|t| t.data().iter().all(|&v| v == 1.0)) != Some(true) {
        return Err("gradient is not the identity".into());
    }
    Ok(worst)
}

fn gradient_suite() -> Check {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    let mut names = 0;
    for case in grad_cases() {
        for seed in 0..INSTANCES {
            let mut rng = ChaCha8Rng::seed_from_u64(seed * 31 + 7);
            let inputs = (case.make)(&mut rng);
            let out = check_gradients(&inputs, case.f, STEP).map_err(|e| format!("{}: {e}", case.name))?;
            ensure!(out.max_rel_error <= GRAD_TOL, "{} instance {seed}: relative error {:.2e}", case.name, out.max_rel_error);
            worst = worst.max(out.max_rel_error);
            checked += out.checked;
        }
        names += 1;
    }
    for block in ["attention", "feed_forward", "encoder_layer", "decoder_layer", "ode_integrate"] {
        for seed in 0..INSTANCES {
            run_block(block, seed, &mut worst, &mut checked)?;
        }
        names += 1;
    }
    for seed in 0..INSTANCES {
        let e = fractional_decouple_instance(seed)?;
        ensure!(e <= GRAD_TOL, "fractional_decouple instance {seed}: relative error {e:.2e}");
        worst = worst.max(e);
    }
    names += 1;
    let elapsed = start.elapsed();
    ensure!(elapsed < Duration::from_secs(60), "suite took {elapsed:?}");
    Ok(format!("{names} operations x {INSTANCES} instances, {checked} partials, worst relative error {worst:.1e}"))
}

// ---------------------------------------------------------------- objectives

fn random_catalog(rng: &mut ChaCha8Rng, n: usize) -> Catalog {
    let products = (0..n)
        .map(|i| Product {
            id: format!("q{i}"),
            name: format!("q{i}"),
            unit: Unit::Kg,
        })
        .collect();
    let coeffs = (0..n).map(|_| std::array::from_fn(|_| rng.random_range(0.01..20.0))).collect();
    Catalog::new(products, coeffs).unwrap()
}

fn objective_formulas() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let mut removals = 0;
    for _ in 0..50 {
        let n = rng.random_range(2..40);
        let cat = random_catalog(&mut rng, n);
        let mut q: Vec<u32> = (0..n).map(|_| rng.random_range(0..5)).collect();
        q[rng.random_range(0..n)] += 1;
        let x = Basket::new(q);
        let anchor = Anchor::new(&cat, &x).map_err(|e| e.to_string())?;

        let z = anchor.evaluate(&cat, &x).map_err(|e| e.to_string())?.0;
        ensure!(z[0].abs() <= 1e-12, "anchor similarity loss {}", z[0]);
        ensure!(z[2..5].iter().all(|v| *v == 0.0), "anchor health losses {:?}", &z[2..5]);
        ensure!(z[1] == 1.0 && z[5..].iter().all(|v| *v == 1.0), "anchor ratios {:?}", z);

        let e = anchor.evaluate(&cat, &Basket::zeros(n)).map_err(|e| e.to_string())?.0;
        ensure!(e[0] == 1.0 && e[1] == 0.0, "empty basket taste/cost {:?}", &e[..2]);
        ensure!(e[2..5].iter().all(|v| *v == 1.0) && e[5..].iter().all(|v| *v == 0.0), "empty basket {:?}", e);

        let t = anchor.evaluate(&cat, &x.scaled(3)).map_err(|e| e.to_string())?.0;
        ensure!(t[0].abs() <= 1e-12, "tripled similarity loss {}", t[0]);
        ensure!((t[1] - 3.0).abs() <= 1e-12, "tripled cost ratio {}", t[1]);
        ensure!(t[2..5].iter().all(|v| (v - 4.0).abs() <= 1e-12 * 4.0), "tripled health {:?}", &t[2..5]);
        ensure!(t[5..].iter().all(|v| (v - 3.0).abs() <= 1e-12), "tripled impact {:?}", &t[5..]);

        for i in (0..n).filter(|&i| x.quantities()[i] > 0) {
            let mut fewer = x.quantities().to_vec();
            fewer[i] -= 1;
            let r = anchor.evaluate(&cat, &Basket::new(fewer)).map_err(|e| e.to_string())?.0;
            ensure!(r[1] < 1.0, "removing product {i} did not lower cost");
            ensure!(r[5..].iter().all(|v| *v < 1.0), "removing product {i} did not lower every impact");
            removals += 1;
        }
    }
    Ok(format!("50 random catalogs, {removals} single-unit removals"))
}

// ---------------------------------------------------------------- corpus runs

struct CorpusRuns {
    catalog: Catalog,
    baskets: Vec<IntendedBasket>,
    sets: Vec<(String, RecommendationSet)>,
    elapsed: Duration,
}

fn corpus_runs() -> Result<CorpusRuns, String> {
    let start = Instant::now();
    let (catalog, corpus) = synth_generate(&SynthConfig {
        n_households: 50,
        n_weeks: 10,
        n_products: 132,
        seed: 1,
        ..Default::default()
    })
    .map_err(|e| e.to_string())?;
    let baskets = corpus.intended_baskets(&catalog).map_err(|e| e.to_string())?;
    let configs = MethodConfigs::default();
    let mut sets = Vec::new();
    for m in Method::ALL {
        let t = Instant::now();
        let set = recommend_corpus(m, &catalog, &baskets, &configs, 1).map_err(|e| e.to_string())?;
        println!("     {m}: {} baskets in {:.1}s", baskets.len(), t.elapsed().as_secs_f64());
        sets.push((m.to_string(), set));
    }
    Ok(CorpusRuns {
        catalog,
        baskets,
        sets,
        elapsed: start.elapsed(),
    })
}

fn dominance_property(runs: &CorpusRuns) -> Check {
    for (name, set) in &runs.sets {
        for (key, recs) in set {
            ensure!(!recs.is_empty(), "{name} returned nothing for {key:?}");
            for a in recs {
                for b in recs {
                    ensure!(
                        !dominates(a.objectives.as_slice(), b.objectives.as_slice()).unwrap(),
                        "{name} set for {key:?} contains a dominated basket"
                    );
                }
            }
        }
    }
    let named: Vec<(String, &RecommendationSet)> = runs.sets.iter().map(|(n, s)| (n.clone(), s)).collect();
    let rows = compare_dominance(&named, &BootstrapConfig::default()).map_err(|e| e.to_string())?;
    let summary: Vec<String> = rows.iter().map(|r| format!("{} {:.3}", r.method, r.mean)).collect();
    for r in &rows {
        ensure!(r.mean >= 0.85, "{} pooled mean ratio {:.3} < 0.85 ({})", r.method, r.mean, summary.join(", "));
    }
    ensure!(runs.elapsed < Duration::from_secs(15 * 60), "corpus runs took {:?}", runs.elapsed);
    Ok(format!("{} baskets, means {}", runs.baskets.len(), summary.join(", ")))
}

fn filter_and_impact(runs: &CorpusRuns) -> Check {
    let mut survivors = 0;
    for (name, set) in &runs.sets {
        for b in &runs.baskets {
            let base = feature_totals(&runs.catalog, &b.basket).map_err(|e| e.to_string())?;
            let intended: Vec<u128> = b.basket.quantities().iter().map(|&v| u128::from(v)).collect();
            let norm_b: u128 = intended.iter().map(|v| v * v).sum();
            for r in &set[&BasketKey::from(b)] {
                let t = feature_totals(&runs.catalog, &r.basket).map_err(|e| e.to_string())?;
                let q: Vec<u128> = r.basket.quantities().iter().map(|&v| u128::from(v)).collect();
                let norm: u128 = q.iter().map(|v| v * v).sum();
                let dot: u128 = q.iter().zip(&intended).map(|(a, c)| a * c).sum();
                // cos > 1/2 decided exactly on integers
                let similar = dot > 0 && 4 * dot * dot > norm * norm_b;
                let cosine = if norm == 0 { 0.0 } else { dot as f64 / ((norm as f64).sqrt() * (norm_b as f64).sqrt()) };
                ensure!((cosine - r.cosine).abs() <= 1e-12, "{name}: stored cosine {} vs {cosine}", r.cosine);
                let mut gated = vec![Feature::Cost];
                gated.extend(Feature::ENVIRONMENT);
                let ok = similar && gated.iter().all(|f| t.get(*f) / base.get(*f) < 1.0);
                ensure!(ok == r.passed_filter, "{name}: filter flag disagrees with recomputation for {:?}", r.basket);
                survivors += usize::from(ok);
            }
        }
    }
    let mut lines = Vec::new();
    for (name, set) in &runs.sets {
        let run = |rate: f64, trajectories: usize| {
            counterfactual_simulate(
                &runs.catalog,
                &runs.baskets,
                set,
                &CounterfactualConfig {
                    acceptance_rate: rate,
                    trajectories,
                    seed: 5,
                },
            )
            .map_err(|e| e.to_string())
        };
        let quarter = run(0.25, 200)?;
        let mut gated = vec![Feature::Cost];
        gated.extend(Feature::ENVIRONMENT);
        for f in &gated {
            ensure!(quarter.reduction[f.index()] > 0.0, "{name}: mean {} reduction {} is not positive", f.name(), quarter.reduction[f.index()]);
        }
        let q1000 = run(0.25, 1000)?;
        let h1000 = run(0.5, 1000)?;
        for j in 0..NUM_FEATURES {
            ensure!(h1000.reduction[j] >= q1000.reduction[j], "{name}: reduction of feature {j} not monotone in acceptance rate");
        }
        lines.push(format!("{name} ghg -{:.1} kg", quarter.reduction[Feature::Ghg.index()]));
    }
    Ok(format!("{survivors} survivors verified; {}", lines.join(", ")))
}

// ---------------------------------------------------------------- G3A

fn g3a_progress() -> Check {
    let (catalog, corpus) = synth_generate(&SynthConfig {
        n_households: 5,
        n_weeks: 4,
        seed: 1,
        ..Default::default()
    })
    .map_err(|e| e.to_string())?;
    let baskets = corpus.intended_baskets(&catalog).map_err(|e| e.to_string())?;
    let mut lines = Vec::new();
    for (k, b) in baskets.iter().take(3).enumerate() {
        let t = Instant::now();
        let run = run_g3a(&catalog, &b.basket, &G3aConfig { seed: 100 + k as u64, ..Default::default() }).map_err(|e| e.to_string())?;
        let elapsed = t.elapsed();
        ensure!(run.history.len() == 31, "expected 31 generation records, got {}", run.history.len());
        let first = run.history[0].weighted_loss;
        let last = run.history[30].weighted_loss;
        ensure!(last < first, "basket {k}: weighted front loss {last:.4} not below initial {first:.4}");
        ensure!(!run.solutions.is_empty() && run.solutions.len() <= 8, "basket {k}: {} recommendations", run.solutions.len());
        ensure!(elapsed < Duration::from_secs(180), "basket {k} took {elapsed:?}");
        lines.push(format!("{first:.2}->{last:.2} ({} recs, {:.1}s)", run.solutions.len(), elapsed.as_secs_f64()));
    }
    Ok(lines.join(", "))
}

// ---------------------------------------------------------------- MO-NES

fn mones_closed_forms() -> Check {
    let rates = NesRates::default();
    let sigma0 = 1.0 / 3.0;
    let n = 4;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a: Vec<f64> = (0..n * n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut state = NesState::new(vec![2.0; n], sigma0, a.clone()).map_err(|e| e.to_string())?;
    let mut decay_err: f64 = 0.0;
    for g in 1..=200 {
        let child = sample_offspring(&state, &mut rng);
        state = mones_update(&state, &child, false, &rates);
        let want = sigma0 * (-(g as f64) * rates.sigma_down).exp();
        decay_err = decay_err.max((state.sigma - want).abs());
        ensure!(state.x == vec![2.0; n] && state.a == a, "failure changed the mean or shape");
    }
    ensure!(decay_err <= 1e-12, "sigma decay error {decay_err:.2e}");

    let sigma = 0.7;
    let state = NesState::new(vec![0.0; n], sigma, a.clone()).map_err(|e| e.to_string())?;
    let samples = 100_000;
    let steps: Vec<Vec<f64>> = (0..samples).map(|_| sample_offspring(&state, &mut rng).x).collect();
    let mut worst_z: f64 = 0.0;
    for i in 0..n {
        for j in i..n {
            let want: f64 = (0..n).map(|k| a[i * n + k] * a[j * n + k]).sum::<f64>() * sigma * sigma;
            let prods: Vec<f64> = steps.iter().map(|s| s[i] * s[j]).collect();
            let mean = prods.iter().sum::<f64>() / samples as f64;
            let var = prods.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / (samples - 1) as f64;
            let se = (var / samples as f64).sqrt();
            let z = (mean - want).abs() / se;
            worst_z = worst_z.max(z);
            ensure!(z <= 3.0, "covariance ({i},{j}) = {mean:.5} vs {want:.5}, {z:.2} standard errors");
        }
    }
    Ok(format!("decay error {decay_err:.1e} over 200 failures, worst covariance deviation {worst_z:.2} SE at 1e5 samples"))
}

// ---------------------------------------------------------------- CLI determinism

fn cli_determinism() -> Check {
    let basket = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/basket.csv");
    let mut sizes = Vec::new();
    for m in Method::ALL {
        let mut outputs = Vec::new();
        for _ in 0..2 {
            let out = Command::new(env!("CARGO_BIN_EXE_ecobasket"))
                .env_remove("ECOBASKET_CATALOG")
                .args(["optimize", "--method", m.as_str(), "--basket"])
                .arg(&basket)
                .args(["--seed", "7"])
                .output()
                .map_err(|e| e.to_string())?;
            ensure!(out.status.success(), "{m}: {}", String::from_utf8_lossy(&out.stderr));
            outputs.push(out.stdout);
        }
        ensure!(outputs[0] == outputs[1], "{m}: stdout differs between runs");
        ensure!(outputs[0].iter().filter(|&&b| b == b'\n').count() >= 2, "{m}: no recommendations printed");
        sizes.push(format!("{m} {} B", outputs[0].len()));
    }
    Ok(sizes.join(", "))
}

fn main() {
    // the default test harness passes flags like --nocapture or a filter
    let filter: Option<String> = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let wanted = |name: &str| filter.as_deref().is_none_or(|f| name.contains(f));
    let mut results: Vec<bool> = Vec::new();

    println!("acceptance criteria");
    if wanted("sorting") {
        results.push(gate("sorting matches pairwise peeling oracle", sorting_oracle));
    }
    if wanted("ranking") {
        results.push(gate("ranking matches product-loop box volume oracle", ranking_oracle));
    }
    if wanted("gradient") {
        results.push(gate("gradient suite within 1e-4 of finite differences", gradient_suite));
    }
    if wanted("objective") {
        results.push(gate("objective identities on anchor, empty, tripled and removal baskets", objective_formulas));
    }
    if wanted("dominance") || wanted("impact") {
        match corpus_runs() {
            Ok(runs) => {
                results.push(gate("dominance ratio at least 0.85 per method, sets mutually non-dominated", || dominance_property(&runs)));
                results.push(gate("filter soundness and positive counterfactual reduction", || filter_and_impact(&runs)));
            }
            Err(e) => {
                println!("FAIL dominance ratio at least 0.85 per method, sets mutually non-dominated: {e}");
                println!("FAIL filter soundness and positive counterfactual reduction: {e}");
                results.extend([false, false]);
            }
        }
    }
    if wanted("g3a") {
        results.push(gate("g3a weighted front loss decreases over 30 generations", g3a_progress));
    }
    if wanted("mones") {
        results.push(gate("mones step-size decay and offspring covariance closed forms", mones_closed_forms));
    }
    if wanted("determinism") {
        results.push(gate("optimize CLI output is byte-identical across runs", cli_determinism));
    }
    let failed = results.iter().filter(|ok| !**ok).count();
    println!("{} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
