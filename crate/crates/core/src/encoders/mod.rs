//! Sequence encoders producing per-position hidden states.

mod attention;
mod gru;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use attention::{AttentionTrace, AttnConfig, SelfAttention, LAYER_NORM_EPS};
pub use gru::{Gru, GruConfig};

use crate::error::Result;
use crate::numcore::{Graph, ParamStore, Real, Var};

/// Per-layer state matrices `[T, hidden]`, bottom layer first. Row `j`
/// depends only on inputs `0..=j`.
#[derive(Debug, Clone)]
pub struct HiddenStates {
    pub layers: Vec<Var>,
}

impl HiddenStates {
    pub fn top(&self) -> Var {
        *self.layers.last().unwrap()
    }
}

/// Source of dropout masks. Without an rng every dropout is the identity
/// (evaluation mode).
pub struct DropoutCtx<'a> {
    rng: Option<&'a mut ChaCha8Rng>,
}

impl<'a> DropoutCtx<'a> {
    pub fn eval() -> Self {
        DropoutCtx { rng: None }
    }

    pub fn train(rng: &'a mut ChaCha8Rng) -> Self {
        DropoutCtx { rng: Some(rng) }
    }

    pub fn is_training(&self) -> bool {
        self.rng.is_some()
    }

    pub fn apply<F: Real>(&mut self, g: &mut Graph<F>, x: Var, p: f64) -> Result<Var> {
        let Some(rng) = self.rng.as_deref_mut() else {
            return Ok(x);
        };
        if p <= 0.0 {
            return Ok(x);
        }
        let keep = F::of(1.0 / (1.0 - p));
        let mask = (0..g.value(x).len())
            .map(|_| if rng.random::<f64>() < p { F::zero() } else { keep })
            .collect();
        g.dropout(x, mask)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EncoderConfig {
    Gru(GruConfig),
    Attention(AttnConfig),
}

impl EncoderConfig {
    pub fn hidden_size(&self) -> usize {
        match self {
            EncoderConfig::Gru(c) => c.hidden_size,
            EncoderConfig::Attention(c) => c.hidden_size,
        }
    }

    /// Size of the shared item embeddings consumed by this encoder.
    pub fn embedding_size(&self) -> usize {
        match self {
            EncoderConfig::Gru(c) => c.embedding_size,
            EncoderConfig::Attention(c) => c.hidden_size,
        }
    }

    /// Number of layers whose states are exposed for Mi expansion.
    pub fn num_layers(&self) -> usize {
        match self {
            EncoderConfig::Gru(_) => 1,
            EncoderConfig::Attention(c) => c.layers,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            EncoderConfig::Gru(c) => c.validate(),
            EncoderConfig::Attention(c) => c.validate(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            EncoderConfig::Gru(_) => "GRU4Rec",
            EncoderConfig::Attention(_) => "SASRec",
        }
    }
}

#[derive(Debug, Clone)]
pub enum Encoder {
    Gru(Gru),
    Attention(SelfAttention),
}

impl Encoder {
    pub fn register<F: Real, R: Rng>(store: &mut ParamStore<F>, config: &EncoderConfig, std: f64, rng: &mut R) -> Result<Self> {
        Ok(match config {
            EncoderConfig::Gru(c) => Encoder::Gru(Gru::register(store, c, std, rng)?),
            EncoderConfig::Attention(c) => Encoder::Attention(SelfAttention::register(store, c, std, rng)?),
        })
    }

    /// Encode already embedded inputs `x` (`[T, embedding_size]`).
    pub fn forward<F: Real>(
        &self,
        g: &mut Graph<F>,
        store: &ParamStore<F>,
        x: Var,
        drop: &mut DropoutCtx<'_>,
    ) -> Result<HiddenStates> {
        match self {
            Encoder::Gru(e) => e.forward(g, store, x, drop),
            Encoder::Attention(e) => e.forward(g, store, x, drop),
        }
    }
}
