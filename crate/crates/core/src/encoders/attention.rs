use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{DropoutCtx, HiddenStates};
use crate::error::{Error, Result};
use crate::numcore::{Graph, Init, Linear, ParamId, ParamStore, Real, Var};

pub const LAYER_NORM_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttnConfig {
    pub hidden_size: usize,
    #[serde(default = "default_layers")]
    pub layers: usize,
    #[serde(default = "default_heads")]
    pub heads: usize,
    #[serde(default = "default_inner")]
    pub inner_size: usize,
    #[serde(default = "default_attn_dropout")]
    pub attn_dropout: f64,
    #[serde(default)]
    pub hidden_dropout: f64,
    /// Number of learned positions; set from the dataset's max_seq_len when 0.
    #[serde(default)]
    pub max_positions: usize,
}

fn default_layers() -> usize {
    2
}
fn default_heads() -> usize {
    2
}
fn default_inner() -> usize {
    256
}
fn default_attn_dropout() -> f64 {
    0.1
}

impl AttnConfig {
    pub fn new(hidden_size: usize, max_positions: usize) -> Self {
        AttnConfig {
            hidden_size,
            layers: default_layers(),
            heads: default_heads(),
            inner_size: default_inner(),
            attn_dropout: default_attn_dropout(),
            hidden_dropout: 0.0,
            max_positions,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_size == 0 || self.layers == 0 || self.heads == 0 || self.inner_size == 0 {
            return Err(Error::Config("attention: sizes must be positive".into()));
        }
        if self.hidden_size % self.heads != 0 {
            return Err(Error::Config(format!(
                "attention: hidden_size {} not divisible by heads {}",
                self.hidden_size, self.heads
            )));
        }
        if self.max_positions == 0 {
            return Err(Error::Config("attention: max_positions must be positive".into()));
        }
        for p in [self.attn_dropout, self.hidden_dropout] {
            if !(0.0..1.0).contains(&p) {
                return Err(Error::Config(format!("attention: dropout {p} not in [0, 1)")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Block {
    query: Linear,
    key: Linear,
    value: Linear,
    out: Linear,
    ln1_gain: ParamId,
    ln1_bias: ParamId,
    ff1: Linear,
    ff2: Linear,
    ln2_gain: ParamId,
    ln2_bias: ParamId,
}

/// Causal self-attention encoder with learned positions and post-norm blocks
/// (residual, then layer norm).
#[derive(Debug, Clone)]
pub struct SelfAttention {
    pub config: AttnConfig,
    pub positions: ParamId,
    blocks: Vec<Block>,
}

/// Attention weights recorded during a forward pass, `[layer][head]`.
pub type AttentionTrace = Vec<Vec<Var>>;

impl SelfAttention {
    pub fn register<F: Real, R: Rng>(store: &mut ParamStore<F>, config: &AttnConfig, std: f64, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let h = config.hidden_size;
        let positions = store.register("attn.positions", &[config.max_positions, h], Init::Normal { std }, rng)?;
        let mut blocks = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            let p = |s: &str| format!("attn.layer{l}.{s}");
            blocks.push(Block {
                query: Linear::register(store, &p("query"), h, h, std, rng)?,
                key: Linear::register(store, &p("key"), h, h, std, rng)?,
                value: Linear::register(store, &p("value"), h, h, std, rng)?,
                out: Linear::register(store, &p("out"), h, h, std, rng)?,
                ln1_gain: store.register(&p("ln1.gain"), &[h], Init::Ones, rng)?,
                ln1_bias: store.register(&p("ln1.bias"), &[h], Init::Zeros, rng)?,
                ff1: Linear::register(store, &p("ff1"), h, config.inner_size, std, rng)?,
                ff2: Linear::register(store, &p("ff2"), config.inner_size, h, std, rng)?,
                ln2_gain: store.register(&p("ln2.gain"), &[h], Init::Ones, rng)?,
                ln2_bias: store.register(&p("ln2.bias"), &[h], Init::Zeros, rng)?,
            });
        }
        Ok(SelfAttention { config: config.clone(), positions, blocks })
    }

    /// Query and key projections of every layer (used to build controlled
    /// instances in tests).
    pub fn query_key(&self) -> Vec<(Linear, Linear)> {
        self.blocks.iter().map(|b| (b.query, b.key)).collect()
    }

    fn norm<F: Real>(g: &mut Graph<F>, store: &ParamStore<F>, x: Var, gain: ParamId, bias: ParamId) -> Result<Var> {
        let n = g.layer_norm(x, F::of(LAYER_NORM_EPS));
        let gv = g.param(store, gain);
        let bv = g.param(store, bias);
        let y = g.mul(n, gv)?;
        g.add(y, bv)
    }

    pub fn forward<F: Real>(
        &self,
        g: &mut Graph<F>,
        store: &ParamStore<F>,
        x: Var,
        drop: &mut DropoutCtx<'_>,
    ) -> Result<HiddenStates> {
        Ok(self.forward_traced(g, store, x, drop)?.0)
    }

    pub fn forward_traced<F: Real>(
        &self,
        g: &mut Graph<F>,
        store: &ParamStore<F>,
        x: Var,
        drop: &mut DropoutCtx<'_>,
    ) -> Result<(HiddenStates, AttentionTrace)> {
        let cfg = &self.config;
        let t = g.value(x).rows();
        if t > cfg.max_positions {
            return Err(Error::Shape(format!("attention: window {t} exceeds {} positions", cfg.max_positions)));
        }
        let pos_table = g.param(store, self.positions);
        let pos = g.embedding_gather(pos_table, &(0..t).collect::<Vec<_>>())?;
        let mut x = g.add(x, pos)?;
        x = drop.apply(g, x, cfg.hidden_dropout)?;

        let dh = cfg.hidden_size / cfg.heads;
        let scale = F::of(1.0 / (dh as f64).sqrt());
        let mut layers = Vec::with_capacity(self.blocks.len());
        let mut trace = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let q = b.query.forward(g, store, x)?;
            let k = b.key.forward(g, store, x)?;
            let v = b.value.forward(g, store, x)?;
            let mut heads = Vec::with_capacity(cfg.heads);
            let mut probs = Vec::with_capacity(cfg.heads);
            for hd in 0..cfg.heads {
                let qh = g.slice_cols(q, hd * dh, dh)?;
                let kh = g.slice_cols(k, hd * dh, dh)?;
                let vh = g.slice_cols(v, hd * dh, dh)?;
                let s = g.matmul(qh, kh, true)?;
                let s = g.scale(s, scale);
                let p = g.causal_softmax(s)?;
                probs.push(p);
                let p = drop.apply(g, p, cfg.attn_dropout)?;
                heads.push(g.matmul(p, vh, false)?);
            }
            let ctx = if heads.len() == 1 { heads[0] } else { g.concat(&heads)? };
            let o = b.out.forward(g, store, ctx)?;
            let o = drop.apply(g, o, cfg.hidden_dropout)?;
            let r = g.add(x, o)?;
            let x1 = Self::norm(g, store, r, b.ln1_gain, b.ln1_bias)?;

            let f = b.ff1.forward(g, store, x1)?;
            let f = g.gelu(f);
            let f = b.ff2.forward(g, store, f)?;
            let f = drop.apply(g, f, cfg.hidden_dropout)?;
            let r = g.add(x1, f)?;
            x = Self::norm(g, store, r, b.ln2_gain, b.ln2_bias)?;
            layers.push(x);
            trace.push(probs);
        }
        Ok((HiddenStates { layers }, trace))
    }
}
