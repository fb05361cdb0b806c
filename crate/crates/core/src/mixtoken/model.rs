use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wristgest_nn::layers::{Conv1d, LayerNorm, Linear, Mlp, TransformerEncoderLayer};
use wristgest_nn::{Graph, Mode, ParamId, ParamStore, Scalar, Tensor, Var};

use super::prepare::{PreparedWindow, N_GROUPS};
use super::{fusion_weights, MixTokenConfig};
use crate::error::{Error, Result};
use crate::features::{token_count, N_TIME_FEATURES};

#[derive(Clone, Debug)]
struct ResBlock {
    conv: Conv1d,
    mix: Conv1d,
    skip: Conv1d,
}

impl ResBlock {
    fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let h = self.conv.forward(g, x)?;
        let h = g.gelu(h);
        let h = self.mix.forward(g, h)?;
        let s = self.skip.forward(g, x)?;
        let y = g.add(h, s)?;
        Ok(g.gelu(y))
    }
}

#[derive(Clone, Debug)]
struct Net {
    blocks: Vec<ResBlock>,
    proj: Vec<Linear>,
    pos: ParamId,
    layers: Vec<TransformerEncoderLayer>,
    final_ln: LayerNorm,
    query: ParamId,
    cnn_head: Mlp,
    attn_head: Mlp,
    fused_head: Mlp,
    fusion: ParamId,
}

/// Graph nodes produced by one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct Outputs {
    pub cnn: Var,
    pub attn: Option<Var>,
    pub fused: Option<Var>,
    /// Final logits: the fusion mixture, or the CNN head alone in CNN-only mode.
    pub logits: Var,
    pub pi: Option<Var>,
    pub e_cnn: Var,
    pub e_attn: Option<Var>,
    /// Attention node of the pooling step; weights via `Graph::attention_probs`.
    pub pool: Option<Var>,
}

#[derive(Clone, Debug)]
pub struct MixTokenModel<T: Scalar> {
    pub config: MixTokenConfig,
    pub store: ParamStore<T>,
    net: Net,
}

impl<T: Scalar> MixTokenModel<T> {
    pub fn new(config: MixTokenConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let mut store = ParamStore::new();
        let c = config.n_channels();
        let mut blocks = Vec::new();
        let mut cin = config.n_bands();
        let k = config.cnn.kernel;
        for (i, (&w, &s)) in config.cnn.widths.iter().zip(&config.cnn.strides).enumerate() {
            let name = format!("cnn.block{i}");
            blocks.push(ResBlock {
                conv: Conv1d::new(&mut store, &format!("{name}.conv"), cin, w, k, s, k / 2, &mut rng),
                mix: Conv1d::new(&mut store, &format!("{name}.mix"), w, w, 1, 1, 0, &mut rng),
                skip: Conv1d::new(&mut store, &format!("{name}.skip"), cin, w, 1, s, 0, &mut rng),
            });
            cin = w;
        }
        let e_cnn = c * cin;
        let t = &config.transformer;
        let d = t.d_model;
        let proj = Self::group_token_lens(&config)
            .iter()
            .enumerate()
            .map(|(i, &len)| Linear::new(&mut store, &format!("stat.proj{i}"), len, d, &mut rng))
            .collect();
        let pos = store.add_uniform("stat.pos", vec![token_count(c), d], d, &mut rng);
        let layers = (0..t.n_layers)
            .map(|i| {
                TransformerEncoderLayer::new(
                    &mut store,
                    &format!("stat.enc{i}"),
                    d,
                    t.n_heads,
                    t.ff_dim,
                    config.dropout,
                    &mut rng,
                )
            })
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let final_ln = LayerNorm::new(&mut store, "stat.ln", d);
        let query = store.add_uniform("stat.query", vec![1, d], d, &mut rng);
        let hid = config.head_hidden;
        let n = config.n_classes;
        let p = config.dropout;
        let cnn_head = Mlp::new(&mut store, "head.cnn", e_cnn, hid, n, p, &mut rng);
        let attn_head = Mlp::new(&mut store, "head.attn", d, hid, n, p, &mut rng);
        let fused_head = Mlp::new(&mut store, "head.fused", e_cnn + d, hid, n, p, &mut rng);
        let fusion = store.add("fusion.w", Tensor::from_f64(vec![3], &config.fusion_init)?);
        Ok(Self {
            config,
            store,
            net: Net {
                blocks,
                proj,
                pos,
                layers,
                final_ln,
                query,
                cnn_head,
                attn_head,
                fused_head,
                fusion,
            },
        })
    }

    /// Builds the architecture for `config` and loads `params` into it; names
    /// and shapes must match exactly.
    pub fn with_params(config: MixTokenConfig, params: &ParamStore<T>) -> Result<Self> {
        let mut m = Self::new(config)?;
        wristgest_nn::checkpoint::restore_into(&mut m.store, params)?;
        Ok(m)
    }

    /// Per-group `(tokens, values per token)`.
    fn group_shapes(config: &MixTokenConfig) -> [(usize, usize); N_GROUPS] {
        let c = config.n_channels();
        [
            (c, N_TIME_FEATURES),
            (c, config.features.freq_len()),
            (c * (c - 1) / 2, 4),
            (1, c.min(3)),
        ]
    }

    fn group_token_lens(config: &MixTokenConfig) -> [usize; N_GROUPS] {
        Self::group_shapes(config).map(|(_, l)| l)
    }

    pub fn num_params(&self) -> usize {
        self.store.num_scalars()
    }

    /// Current `softmax(w)`.
    pub fn fusion_weights(&self) -> [f64; 3] {
        let w = self.store.value(self.net.fusion).to_f64_vec();
        fusion_weights([w[0], w[1], w[2]])
    }

    fn check_batch(&self, batch: &[&PreparedWindow]) -> Result<()> {
        if batch.is_empty() {
            return Err(Error::InvalidInput("empty batch".into()));
        }
        let want_bands = self.config.n_channels() * self.config.n_bands() * self.config.window_len;
        let shapes = Self::group_shapes(&self.config);
        for w in batch {
            if w.bands.len() != want_bands {
                return Err(Error::Shape(format!(
                    "filterbank input has {} values, expected {want_bands}",
                    w.bands.len()
                )));
            }
            for (gi, (n, l)) in shapes.iter().enumerate() {
                if w.groups[gi].len() != n * l {
                    return Err(Error::Shape(format!(
                        "token group {gi} has {} values, positional table expects {n} tokens of {l}",
                        w.groups[gi].len()
                    )));
                }
            }
            if w.label >= self.config.n_classes {
                return Err(Error::InvalidInput(format!("label {} outside {} classes", w.label, self.config.n_classes)));
            }
        }
        Ok(())
    }

    pub fn cnn_branch<R: Rng + ?Sized>(
        &self,
        g: &mut Graph<'_, T>,
        batch: &[&PreparedWindow],
        rng: &mut R,
    ) -> Result<(Var, Var)> {
        let (c, nb, wl) = (self.config.n_channels(), self.config.n_bands(), self.config.window_len);
        let data: Vec<f64> = batch.iter().flat_map(|w| w.bands.iter().copied()).collect();
        let mut x = g.input(Tensor::from_f64(vec![batch.len() * c, nb, wl], &data)?);
        for b in &self.net.blocks {
            x = b.forward(g, x)?;
        }
        let pooled = g.mean_pool_time(x)?;
        let width = *self.config.cnn.widths.last().unwrap();
        let e = g.reshape(pooled, vec![batch.len(), c * width])?;
        let logits = self.net.cnn_head.forward(g, e, rng)?;
        Ok((e, logits))
    }

    /// Returns `(embedding, logits, pooling attention node)`.
    pub fn stat_branch<R: Rng + ?Sized>(
        &self,
        g: &mut Graph<'_, T>,
        batch: &[&PreparedWindow],
        rng: &mut R,
    ) -> Result<(Var, Var, Var)> {
        let b = batch.len();
        let d = self.config.transformer.d_model;
        let mut parts = Vec::with_capacity(N_GROUPS);
        for (gi, (n, l)) in Self::group_shapes(&self.config).into_iter().enumerate() {
            let data: Vec<f64> = batch.iter().flat_map(|w| w.groups[gi].iter().copied()).collect();
            let x = g.input(Tensor::from_f64(vec![b, n, l], &data)?);
            parts.push(self.net.proj[gi].forward(g, x)?);
        }
        let tokens = g.concat(&parts, 1)?;
        let pos = g.param(self.net.pos);
        let mut h = g.add_broadcast(tokens, pos)?;
        for layer in &self.net.layers {
            h = layer.forward(g, h, rng)?;
        }
        let h = self.net.final_ln.forward(g, h)?;
        let q = g.param(self.net.query);
        let q = g.expand(q, b);
        let pool = g.sdpa(q, h, h, 1)?;
        let e = g.reshape(pool, vec![b, d])?;
        let logits = self.net.attn_head.forward(g, e, rng)?;
        Ok((e, logits, pool))
    }

    /// Full forward pass. With `cnn_only` the statistical branch is not
    /// evaluated and the CNN head's logits are returned as the output.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        g: &mut Graph<'_, T>,
        batch: &[&PreparedWindow],
        rng: &mut R,
        cnn_only: bool,
    ) -> Result<Outputs> {
        self.check_batch(batch)?;
        let (e_cnn, cnn) = self.cnn_branch(g, batch, rng)?;
        if cnn_only {
            return Ok(Outputs {
                cnn,
                attn: None,
                fused: None,
                logits: cnn,
                pi: None,
                e_cnn,
                e_attn: None,
                pool: None,
            });
        }
        let (e_attn, attn, pool) = self.stat_branch(g, batch, rng)?;
        let joint = g.concat(&[e_cnn, e_attn], 1)?;
        let fused = self.net.fused_head.forward(g, joint, rng)?;
        let w = g.param(self.net.fusion);
        let pi = g.softmax(w)?;
        let logits = g.mix(&[cnn, attn, fused], pi)?;
        Ok(Outputs {
            cnn,
            attn: Some(attn),
            fused: Some(fused),
            logits,
            pi: Some(pi),
            e_cnn,
            e_attn: Some(e_attn),
            pool: Some(pool),
        })
    }

    /// Evaluation-mode logits, one row per window, computed in chunks.
    pub fn logits(&self, windows: &[PreparedWindow], chunk: usize, cnn_only: bool) -> Result<Vec<Vec<f64>>> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let k = self.config.n_classes;
        let mut out = Vec::with_capacity(windows.len());
        for part in windows.chunks(chunk.max(1)) {
            let refs: Vec<&PreparedWindow> = part.iter().collect();
            let mut g = Graph::new(&self.store, Mode::Eval);
            let o = self.forward(&mut g, &refs, &mut rng, cnn_only)?;
            let v = g.value(o.logits).to_f64_vec();
            out.extend(v.chunks(k).map(<[f64]>::to_vec));
        }
        Ok(out)
    }

    pub fn predict(&self, windows: &[PreparedWindow], chunk: usize, cnn_only: bool) -> Result<Vec<usize>> {
        Ok(self
            .logits(windows, chunk, cnn_only)?
            .iter()
            .map(|row| argmax(row))
            .collect())
    }
}

/// Index of the largest value; the first one wins ties.
pub(crate) fn argmax(row: &[f64]) -> usize {
    row.iter()
        .enumerate()
        .fold(0, |best, (i, v)| if *v > row[best] { i } else { best })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_size_is_near_budget() {
        let m = MixTokenModel::<f32>::new(MixTokenConfig::default()).unwrap();
        let n = m.num_params() as f64;
        assert!((n - 223_000.0).abs() <= 0.1 * 223_000.0, "{n}");
        let r = MixTokenModel::<f64>::new(MixTokenConfig::reduced()).unwrap();
        assert!(r.num_params() <= 5000, "{}", r.num_params());
    }

    #[test]
    fn fusion_starts_uniform() {
        let m = MixTokenModel::<f64>::new(MixTokenConfig::reduced()).unwrap();
        for p in m.fusion_weights() {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn argmax_prefers_first() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
    }
}
