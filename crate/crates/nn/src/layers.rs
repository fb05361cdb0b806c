use rand::Rng;

use crate::error::{NnError, Result};
use crate::graph::{Graph, Var};
use crate::params::{ParamId, ParamStore};
use crate::scalar::Scalar;

/// `y = x W + b` over the last axis.
#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        d_in: usize,
        d_out: usize,
        rng: &mut R,
    ) -> Self {
        let w = store.add_uniform(format!("{name}.weight"), vec![d_in, d_out], d_in, rng);
        let b = store.add_uniform(format!("{name}.bias"), vec![d_out], d_in, rng);
        Self { w, b, d_in, d_out }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let w = g.param(self.w);
        let b = g.param(self.b);
        g.linear(x, w, Some(b))
    }
}

/// 1-D convolution over `(n, c_in, l)` inputs.
#[derive(Clone, Debug)]
pub struct Conv1d {
    pub w: ParamId,
    pub b: ParamId,
    pub stride: usize,
    pub padding: usize,
}

impl Conv1d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut R,
    ) -> Self {
        let fan_in = c_in * kernel;
        let w = store.add_uniform(format!("{name}.weight"), vec![c_out, c_in, kernel], fan_in, rng);
        let b = store.add_uniform(format!("{name}.bias"), vec![c_out], fan_in, rng);
        Self {
            w,
            b,
            stride,
            padding,
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let w = g.param(self.w);
        let b = g.param(self.b);
        g.conv1d(x, w, Some(b), self.stride, self.padding)
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, d: usize) -> Self {
        let gamma = store.add_constant(format!("{name}.gamma"), vec![d], 1.0);
        let beta = store.add_constant(format!("{name}.beta"), vec![d], 0.0);
        Self { gamma, beta }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let gamma = g.param(self.gamma);
        let beta = g.param(self.beta);
        g.layer_norm(x, gamma, beta)
    }
}

/// Multi-head self-attention on `(batch, tokens, d_model)`.
#[derive(Clone, Debug)]
pub struct MultiHeadSelfAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub out: Linear,
    pub heads: usize,
}

impl MultiHeadSelfAttention {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        d_model: usize,
        heads: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if heads == 0 || d_model % heads != 0 {
            return Err(NnError::InvalidArgument(format!(
                "{heads} heads do not divide d_model {d_model}"
            )));
        }
        Ok(Self {
            q: Linear::new(store, &format!("{name}.q"), d_model, d_model, rng),
            k: Linear::new(store, &format!("{name}.k"), d_model, d_model, rng),
            v: Linear::new(store, &format!("{name}.v"), d_model, d_model, rng),
            out: Linear::new(store, &format!("{name}.out"), d_model, d_model, rng),
            heads,
        })
    }

    /// Returns the projected output and the raw attention node, whose
    /// weights are available through [`Graph::attention_probs`].
    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<(Var, Var)> {
        let q = self.q.forward(g, x)?;
        let k = self.k.forward(g, x)?;
        let v = self.v.forward(g, x)?;
        let att = g.sdpa(q, k, v, self.heads)?;
        Ok((self.out.forward(g, att)?, att))
    }
}

/// Position-wise `Linear -> GELU -> Dropout -> Linear`.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub l1: Linear,
    pub l2: Linear,
    pub dropout: f64,
}

impl Mlp {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        d_in: usize,
        hidden: usize,
        d_out: usize,
        dropout: f64,
        rng: &mut R,
    ) -> Self {
        Self {
            l1: Linear::new(store, &format!("{name}.fc1"), d_in, hidden, rng),
            l2: Linear::new(store, &format!("{name}.fc2"), hidden, d_out, rng),
            dropout,
        }
    }

    pub fn forward<T: Scalar, R: Rng + ?Sized>(
        &self,
        g: &mut Graph<'_, T>,
        x: Var,
        rng: &mut R,
    ) -> Result<Var> {
        let h = self.l1.forward(g, x)?;
        let h = g.gelu(h);
        let h = g.dropout(h, self.dropout, rng)?;
        self.l2.forward(g, h)
    }
}

/// Pre-norm encoder block:
/// `x + drop(attn(ln1(x)))` followed by `x + drop(ff(ln2(x)))`.
#[derive(Clone, Debug)]
pub struct TransformerEncoderLayer {
    pub ln1: LayerNorm,
    pub attn: MultiHeadSelfAttention,
    pub ln2: LayerNorm,
    pub ff: Mlp,
    pub dropout: f64,
}

impl TransformerEncoderLayer {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        d_model: usize,
        heads: usize,
        d_ff: usize,
        dropout: f64,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            ln1: LayerNorm::new(store, &format!("{name}.ln1"), d_model),
            attn: MultiHeadSelfAttention::new(store, &format!("{name}.attn"), d_model, heads, rng)?,
            ln2: LayerNorm::new(store, &format!("{name}.ln2"), d_model),
            ff: Mlp::new(store, &format!("{name}.ff"), d_model, d_ff, d_model, dropout, rng),
            dropout,
        })
    }

    pub fn forward<T: Scalar, R: Rng + ?Sized>(
        &self,
        g: &mut Graph<'_, T>,
        x: Var,
        rng: &mut R,
    ) -> Result<Var> {
        let h = self.ln1.forward(g, x)?;
        let (a, _) = self.attn.forward(g, h)?;
        let a = g.dropout(a, self.dropout, rng)?;
        let x = g.add(x, a)?;
        let h = self.ln2.forward(g, x)?;
        let f = self.ff.forward(g, h, rng)?;
        let f = g.dropout(f, self.dropout, rng)?;
        g.add(x, f)
    }
}
