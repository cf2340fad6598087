//! The two neural operators: attention-guided crossover and learned
//! continuous-time mutation.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::nn::{DecoderLayer, EncoderLayer, Linear, Mode};
use crate::autodiff::{ode_integrate, uniform_sample_times, Bound, Graph, ParamStore, Var};
use crate::error::{Error, Result};

/// Token embedding, one encoder and one decoder layer, then per-gene query and
/// key projections whose products form the score tensor.
#[derive(Clone, Debug)]
pub struct CrossoverNet {
    pub store: ParamStore,
    embed: Linear,
    encoder: EncoderLayer,
    decoder: DecoderLayer,
    query: Linear,
    key: Linear,
    genes: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossoverShape {
    pub genes: usize,
    pub width: usize,
    pub heads: usize,
    pub hidden: usize,
}

impl CrossoverNet {
    pub fn new<R: Rng + ?Sized>(shape: CrossoverShape, rng: &mut R) -> Result<Self> {
        let CrossoverShape {
            genes,
            width,
            heads,
            hidden,
        } = shape;
        if heads == 0 || width % heads != 0 {
            return Err(Error::Config(format!("width {width} is not divisible by {heads} heads")));
        }
        let mut store = ParamStore::new();
        let embed = Linear::new(&mut store, "embed", genes, width, 1.0, rng);
        let encoder = EncoderLayer::new(&mut store, "encoder", width, heads, hidden, rng)?;
        let decoder = DecoderLayer::new(&mut store, "decoder", width, heads, hidden, rng)?;
        let query = Linear::new(&mut store, "query", width, genes, 1.0, rng);
        let key = Linear::new(&mut store, "key", width, genes, 1.0, rng);
        Ok(Self {
            store,
            embed,
            encoder,
            decoder,
            query,
            key,
            genes,
        })
    }

    pub fn genes(&self) -> usize {
        self.genes
    }

    /// Score tensor `g[b, b', i] = q[b, i] · k[b', i]` laid out as a
    /// `B² × N` matrix with row `b · B + b'`.
    pub fn scores<R: Rng + ?Sized>(&self, g: &mut Graph, p: &Bound, x: Var, mode: &mut Mode<'_, R>) -> Result<Var> {
        let (b, n) = g.shape(x);
        if n != self.genes {
            return Err(Error::Dimension {
                expected: self.genes,
                got: n,
            });
        }
        let tokens = self.embed.apply(g, p, x)?;
        let memory = self.encoder.apply(g, p, tokens, mode)?;
        let decoded = self.decoder.apply(g, p, tokens, memory, mode)?;
        let q = self.query.apply(g, p, decoded)?;
        let k = self.key.apply(g, p, decoded)?;
        let rows_q: Vec<usize> = (0..b).flat_map(|i| std::iter::repeat_n(i, b)).collect();
        let rows_k: Vec<usize> = (0..b).flat_map(|_| 0..b).collect();
        let qr = g.select_rows(q, &rows_q)?;
        let kr = g.select_rows(k, &rows_k)?;
        g.mul(qr, kr)
    }
}

/// For each parent `b` and gene `i`, picks `b* = argmax_b' g[b, b', i]` and
/// returns `s x[b, i] + (1 - s) x[b*, i]` with `s = sigmoid(g[b, b*, i])`.
/// The pick itself carries no gradient.
pub fn blend(g: &mut Graph, x: Var, scores: Var) -> Result<Var> {
    let (b, n) = g.shape(x);
    if g.shape(scores) != (b * b, n) {
        return Err(Error::Shape {
            op: "crossover blend",
            lhs: g.shape(x),
            rhs: g.shape(scores),
        });
    }
    let s = g.value(scores);
    let mut own = Vec::with_capacity(b * n);
    let mut mate = Vec::with_capacity(b * n);
    for row in 0..b {
        for i in 0..n {
            let mut best = 0;
            for other in 1..b {
                if s.get(row * b + other, i) > s.get(row * b + best, i) {
                    best = other;
                }
            }
            own.push(row * b + best);
            mate.push(best);
        }
    }
    let picked = g.gather_cols(scores, b, &own)?;
    let weight = g.sigmoid(picked);
    let donor = g.gather_cols(x, b, &mate)?;
    let diff = g.sub(x, donor)?;
    let moved = g.mul(weight, diff)?;
    g.add(donor, moved)
}

pub fn neural_crossover<R: Rng + ?Sized>(
    g: &mut Graph,
    net: &CrossoverNet,
    p: &Bound,
    x: Var,
    mode: &mut Mode<'_, R>,
) -> Result<Var> {
    let scores = net.scores(g, p, x, mode)?;
    blend(g, x, scores)
}

/// Output layer of the dynamics network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MutationOutput {
    /// Signed velocities; quantities can shrink as well as grow.
    Linear,
    /// Non-negative velocities.
    Relu,
}

/// `u(x) = W₂ sin(W₁ x + b₁) + b₂`.
#[derive(Clone, Debug)]
pub struct MutationNet {
    pub store: ParamStore,
    hidden: Linear,
    out: Linear,
    output: MutationOutput,
}

impl MutationNet {
    pub fn new<R: Rng + ?Sized>(genes: usize, hidden: usize, output: MutationOutput, out_gain: f64, rng: &mut R) -> Self {
        let mut store = ParamStore::new();
        let h = Linear::new(&mut store, "hidden", genes, hidden, 1.0, rng);
        let out = Linear::new(&mut store, "out", hidden, genes, out_gain, rng);
        Self {
            store,
            hidden: h,
            out,
            output,
        }
    }

    /// Index of the output weight matrix in the store.
    pub fn out_weight(&self) -> usize {
        self.out.w
    }

    pub fn out_bias(&self) -> usize {
        self.out.b
    }

    pub fn dynamics(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        let h = self.hidden.apply(g, p, x)?;
        let h = g.sin(h);
        let u = self.out.apply(g, p, h)?;
        Ok(match self.output {
            MutationOutput::Linear => u,
            MutationOutput::Relu => g.relu(u),
        })
    }
}

/// Grid with at least `min_steps` steps on which every one of `samples`
/// uniform times falls exactly.
pub fn aligned_steps(samples: usize, min_steps: usize) -> usize {
    let samples = samples.max(1);
    samples * min_steps.div_ceil(samples).max(1)
}

/// States of `ẋ = u(x)` at `n_samples` uniform times in `(0, t_end]`.
pub fn neural_mutation<F>(
    g: &mut Graph,
    dynamics: F,
    x: Var,
    n_samples: usize,
    t_end: f64,
    min_steps: usize,
) -> Result<Vec<Var>>
where
    F: FnMut(&mut Graph, Var) -> Result<Var>,
{
    if n_samples == 0 {
        return Err(Error::Config("at least one sample is required".into()));
    }
    let steps = aligned_steps(n_samples, min_steps);
    ode_integrate(g, dynamics, x, t_end, steps, &uniform_sample_times(t_end, n_samples))
}

/// Forward rounding with identity gradient, then clipping at zero.
pub fn discretize(g: &mut Graph, x: Var) -> Result<Var> {
    let r = g.fractional_decouple(x)?;
    Ok(g.relu(r))
}
