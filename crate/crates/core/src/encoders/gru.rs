use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{DropoutCtx, HiddenStates};
use crate::error::{Error, Result};
use crate::numcore::{Graph, Init, ParamId, ParamStore, Real, Tensor, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GruConfig {
    pub hidden_size: usize,
    #[serde(default = "default_embedding_size")]
    pub embedding_size: usize,
    /// Dropout on the input embeddings.
    #[serde(default)]
    pub dropout: f64,
}

fn default_embedding_size() -> usize {
    64
}

impl GruConfig {
    pub fn new(hidden_size: usize) -> Self {
        GruConfig { hidden_size, embedding_size: default_embedding_size(), dropout: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_size == 0 || self.embedding_size == 0 {
            return Err(Error::Config("gru: hidden_size and embedding_size must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("gru: dropout {} not in [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

/// Single-layer GRU with gates ordered (reset, update, candidate):
///
/// ```text
/// r = σ(x W_ir + b_ir + h W_hr + b_hr)
/// z = σ(x W_iz + b_iz + h W_hz + b_hz)
/// n = tanh(x W_in + b_in + r ⊙ (h W_hn + b_hn))
/// h' = (1 - z) ⊙ n + z ⊙ h
/// ```
#[derive(Debug, Clone)]
pub struct Gru {
    pub config: GruConfig,
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub b_ih: ParamId,
    pub b_hh: ParamId,
}

impl Gru {
    pub fn register<F: Real, R: Rng>(store: &mut ParamStore<F>, config: &GruConfig, std: f64, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let (e, h) = (config.embedding_size, config.hidden_size);
        Ok(Gru {
            config: config.clone(),
            w_ih: store.register("gru.w_ih", &[e, 3 * h], Init::Normal { std }, rng)?,
            w_hh: store.register("gru.w_hh", &[h, 3 * h], Init::Normal { std }, rng)?,
            b_ih: store.register("gru.b_ih", &[3 * h], Init::Zeros, rng)?,
            b_hh: store.register("gru.b_hh", &[3 * h], Init::Zeros, rng)?,
        })
    }

    /// States for every position of `x` (`[T, embedding_size]`), starting
    /// from a zero state.
    pub fn forward<F: Real>(
        &self,
        g: &mut Graph<F>,
        store: &ParamStore<F>,
        x: Var,
        drop: &mut DropoutCtx<'_>,
    ) -> Result<HiddenStates> {
        let h = self.config.hidden_size;
        let steps = g.value(x).rows();
        let x = drop.apply(g, x, self.config.dropout)?;
        let w_ih = g.param(store, self.w_ih);
        let w_hh = g.param(store, self.w_hh);
        let b_ih = g.param(store, self.b_ih);
        let b_hh = g.param(store, self.b_hh);
        let gi = g.matmul(x, w_ih, false)?;
        let gi = g.add(gi, b_ih)?;

        let mut state = g.constant(Tensor::zeros(&[1, h]));
        let mut states = Vec::with_capacity(steps);
        for t in 0..steps {
            let gi_t = g.gather_rows(gi, vec![Some(t)])?;
            let gh = g.matmul(state, w_hh, false)?;
            let gh = g.add(gh, b_hh)?;
            let (ir, iz, inn) = (g.slice_cols(gi_t, 0, h)?, g.slice_cols(gi_t, h, h)?, g.slice_cols(gi_t, 2 * h, h)?);
            let (hr, hz, hn) = (g.slice_cols(gh, 0, h)?, g.slice_cols(gh, h, h)?, g.slice_cols(gh, 2 * h, h)?);
            let r = g.add(ir, hr)?;
            let r = g.sigmoid(r);
            let z = g.add(iz, hz)?;
            let z = g.sigmoid(z);
            let rn = g.mul(hn, r)?;
            let n = g.add(inn, rn)?;
            let n = g.tanh(n);
            // h' = n + z ⊙ (h - n)
            let diff = g.sub(state, n)?;
            let zd = g.mul(diff, z)?;
            state = g.add(n, zd)?;
            states.push(state);
        }
        let all = g.concat_rows(&states)?;
        Ok(HiddenStates { layers: vec![all] })
    }
}
