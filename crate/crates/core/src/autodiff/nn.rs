//! Parameter storage and the layers the operator networks are built from.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::graph::{Gradients, Graph, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Named parameter tensors in insertion order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
}

/// Graph leaves for every parameter of a store, in store order.
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    /// Wraps leaves that were created in store order.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Self { vars }
    }

    pub fn var(&self, param: usize) -> Var {
        self.vars[param]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> usize {
        self.names.push(name.into());
        self.values.push(value);
        self.values.len() - 1
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }

    pub fn get(&self, i: usize) -> &Tensor {
        &self.values[i]
    }

    pub fn get_mut(&mut self, i: usize) -> &mut Tensor {
        &mut self.values[i]
    }

    pub fn find(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    pub fn values(&self) -> &[Tensor] {
        &self.values
    }

    pub fn bind(&self, g: &mut Graph) -> Bound {
        Bound {
            vars: self.values.iter().map(|v| g.param(v.clone())).collect(),
        }
    }

    /// Gradients in store order; parameters the root ignores get zeros.
    pub fn collect_grads(&self, bound: &Bound, grads: &Gradients) -> Vec<Tensor> {
        self.values
            .iter()
            .zip(&bound.vars)
            .map(|(v, &var)| match grads.get(var) {
                Some(t) => t.clone(),
                None => Tensor::zeros(v.rows(), v.cols()),
            })
            .collect()
    }

    pub(crate) fn parts(&self) -> (&[String], &[Tensor]) {
        (&self.names, &self.values)
    }

    pub(crate) fn values_mut(&mut self) -> &mut [Tensor] {
        &mut self.values
    }
}

/// Uniform Glorot initialization for a `fan_in × fan_out` matrix.
pub fn glorot<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, gain: f64, rng: &mut R) -> Tensor {
    let a = gain * (6.0 / (fan_in + fan_out) as f64).sqrt();
    Tensor::from_fn(fan_in, fan_out, |_, _| rng.random_range(-a..=a))
}

/// `y = x W + b`.
#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub w: usize,
    pub b: usize,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, gain: f64, rng: &mut R) -> Self {
        let w = store.add(format!("{name}.weight"), glorot(fan_in, fan_out, gain, rng));
        let b = store.add(format!("{name}.bias"), Tensor::zeros(1, fan_out));
        Self { w, b }
    }

    pub fn apply(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        let xw = g.matmul(x, p.var(self.w))?;
        g.add(xw, p.var(self.b))
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LayerNorm {
    pub gamma: usize,
    pub beta: usize,
}

impl LayerNorm {
    pub const EPS: f64 = 1e-5;

    pub fn new(store: &mut ParamStore, name: &str, width: usize) -> Self {
        let gamma = store.add(format!("{name}.gamma"), Tensor::filled(1, width, 1.0));
        let beta = store.add(format!("{name}.beta"), Tensor::zeros(1, width));
        Self { gamma, beta }
    }

    pub fn apply(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        g.layer_norm(x, p.var(self.gamma), p.var(self.beta), Self::EPS)
    }
}

/// Scaled dot-product attention over `heads` equal slices of the model width.
#[derive(Clone, Copy, Debug)]
pub struct MultiHeadAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
    pub width: usize,
}

/// Attention output and the per-head `queries × keys` weight matrices.
#[derive(Clone, Debug)]
pub struct AttentionOutput {
    pub output: Var,
    pub scores: Vec<Var>,
}

impl MultiHeadAttention {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, width: usize, heads: usize, rng: &mut R) -> Result<Self> {
        if heads == 0 || width % heads != 0 {
            return Err(Error::Config(format!("width {width} is not divisible by {heads} heads")));
        }
        Ok(Self {
            q: Linear::new(store, &format!("{name}.q"), width, width, 1.0, rng),
            k: Linear::new(store, &format!("{name}.k"), width, width, 1.0, rng),
            v: Linear::new(store, &format!("{name}.v"), width, width, 1.0, rng),
            o: Linear::new(store, &format!("{name}.o"), width, width, 1.0, rng),
            heads,
            width,
        })
    }

    pub fn apply(&self, g: &mut Graph, p: &Bound, queries: Var, keys: Var, values: Var) -> Result<AttentionOutput> {
        let q = self.q.apply(g, p, queries)?;
        let k = self.k.apply(g, p, keys)?;
        let v = self.v.apply(g, p, values)?;
        let dh = self.width / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut outs = Vec::with_capacity(self.heads);
        let mut scores = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = g.slice_cols(q, h * dh, dh)?;
            let kh = g.slice_cols(k, h * dh, dh)?;
            let vh = g.slice_cols(v, h * dh, dh)?;
            let kt = g.transpose(kh);
            let logits = g.matmul(qh, kt)?;
            let logits = g.scale(logits, scale);
            let w = g.softmax_rows(logits);
            outs.push(g.matmul(w, vh)?);
            scores.push(w);
        }
        let joined = g.concat_cols(&outs)?;
        Ok(AttentionOutput {
            output: self.o.apply(g, p, joined)?,
            scores,
        })
    }
}

/// Two dense layers with a GeLU in between.
#[derive(Clone, Copy, Debug)]
pub struct FeedForward {
    pub up: Linear,
    pub down: Linear,
}

impl FeedForward {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, width: usize, hidden: usize, rng: &mut R) -> Self {
        Self {
            up: Linear::new(store, &format!("{name}.up"), width, hidden, 1.0, rng),
            down: Linear::new(store, &format!("{name}.down"), hidden, width, 1.0, rng),
        }
    }

    pub fn apply(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        let h = self.up.apply(g, p, x)?;
        let h = g.gelu(h);
        self.down.apply(g, p, h)
    }
}

/// Dropout settings threaded through a forward pass.
pub struct Mode<'r, R: Rng + ?Sized> {
    pub train: bool,
    pub dropout: f64,
    pub rng: &'r mut R,
}

/// Post-norm encoder layer: self-attention then feed-forward, each wrapped
/// in a residual connection and a layer norm.
#[derive(Clone, Copy, Debug)]
pub struct EncoderLayer {
    pub attn: MultiHeadAttention,
    pub norm1: LayerNorm,
    pub ff: FeedForward,
    pub norm2: LayerNorm,
}

impl EncoderLayer {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, width: usize, heads: usize, hidden: usize, rng: &mut R) -> Result<Self> {
        Ok(Self {
            attn: MultiHeadAttention::new(store, &format!("{name}.attn"), width, heads, rng)?,
            norm1: LayerNorm::new(store, &format!("{name}.norm1"), width),
            ff: FeedForward::new(store, &format!("{name}.ff"), width, hidden, rng),
            norm2: LayerNorm::new(store, &format!("{name}.norm2"), width),
        })
    }

    pub fn apply<R: Rng + ?Sized>(&self, g: &mut Graph, p: &Bound, x: Var, mode: &mut Mode<'_, R>) -> Result<Var> {
        let a = self.attn.apply(g, p, x, x, x)?.output;
        let a = g.dropout(a, mode.dropout, mode.train, mode.rng);
        let h = g.add(x, a)?;
        let h = self.norm1.apply(g, p, h)?;
        let f = self.ff.apply(g, p, h)?;
        let f = g.dropout(f, mode.dropout, mode.train, mode.rng);
        let o = g.add(h, f)?;
        self.norm2.apply(g, p, o)
    }
}

/// Post-norm decoder layer: self-attention, attention over the encoder
/// memory, then feed-forward.
#[derive(Clone, Copy, Debug)]
pub struct DecoderLayer {
    pub self_attn: MultiHeadAttention,
    pub norm1: LayerNorm,
    pub cross_attn: MultiHeadAttention,
    pub norm2: LayerNorm,
    pub ff: FeedForward,
    pub norm3: LayerNorm,
}

impl DecoderLayer {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, width: usize, heads: usize, hidden: usize, rng: &mut R) -> Result<Self> {
        Ok(Self {
            self_attn: MultiHeadAttention::new(store, &format!("{name}.self_attn"), width, heads, rng)?,
            norm1: LayerNorm::new(store, &format!("{name}.norm1"), width),
            cross_attn: MultiHeadAttention::new(store, &format!("{name}.cross_attn"), width, heads, rng)?,
            norm2: LayerNorm::new(store, &format!("{name}.norm2"), width),
            ff: FeedForward::new(store, &format!("{name}.ff"), width, hidden, rng),
            norm3: LayerNorm::new(store, &format!("{name}.norm3"), width),
        })
    }

    pub fn apply<R: Rng + ?Sized>(&self, g: &mut Graph, p: &Bound, y: Var, memory: Var, mode: &mut Mode<'_, R>) -> Result<Var> {
        let a = self.self_attn.apply(g, p, y, y, y)?.output;
        let a = g.dropout(a, mode.dropout, mode.train, mode.rng);
        let h = g.add(y, a)?;
        let h = self.norm1.apply(g, p, h)?;
        let c = self.cross_attn.apply(g, p, h, memory, memory)?.output;
        let c = g.dropout(c, mode.dropout, mode.train, mode.rng);
        let h2 = g.add(h, c)?;
        let h2 = self.norm2.apply(g, p, h2)?;
        let f = self.ff.apply(g, p, h2)?;
        let f = g.dropout(f, mode.dropout, mode.train, mode.rng);
        let o = g.add(h2, f)?;
        self.norm3.apply(g, p, o)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_token_attends_to_itself() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let mha = MultiHeadAttention::new(&mut store, "a", 4, 2, &mut rng).unwrap();
        let mut g = Graph::new();
        let p = store.bind(&mut g);
        let x = g.constant(Tensor::row(vec![0.1, -0.4, 2.0, 1.0]));
        let out = mha.apply(&mut g, &p, x, x, x).unwrap();
        for s in out.scores {
            assert_eq!(g.value(s).data(), &[1.0]);
        }
    }

    #[test]
    fn attention_rows_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::new();
        let mha = MultiHeadAttention::new(&mut store, "a", 6, 3, &mut rng).unwrap();
        let mut g = Graph::new();
        let p = store.bind(&mut g);
        let q = g.constant(Tensor::from_fn(5, 6, |_, _| rng.random_range(-3.0..3.0)));
        let kv = g.constant(Tensor::from_fn(7, 6, |_, _| rng.random_range(-3.0..3.0)));
        let out = mha.apply(&mut g, &p, q, kv, kv).unwrap();
        assert_eq!(g.shape(out.output), (5, 6));
        for s in out.scores {
            let t = g.value(s);
            assert_eq!(t.shape(), (5, 7));
            for r in 0..5 {
                assert!((t.row_slice(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn indivisible_width_is_a_config_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        assert!(matches!(
            MultiHeadAttention::new(&mut store, "a", 10, 3, &mut rng),
            Err(Error::Config(_))
        ));
    }
}
