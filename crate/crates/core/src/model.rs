//! A complete next-item model: shared item embeddings, an encoder and an
//! output head over one parameter store.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoders::{DropoutCtx, Encoder, EncoderConfig};
use crate::error::{Error, Result};
use crate::heads::{Head, HeadConfig, HeadOutput};
use crate::numcore::{Graph, Init, ParamId, ParamStore, Real, Var};

pub const DEFAULT_INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub head: HeadConfig,
    #[serde(default = "default_init_std")]
    pub init_std: f64,
}

fn default_init_std() -> f64 {
    DEFAULT_INIT_STD
}

impl ModelConfig {
    pub fn new(encoder: EncoderConfig, head: HeadConfig) -> Self {
        ModelConfig { encoder, head, init_std: DEFAULT_INIT_STD }
    }

    pub fn validate(&self, item_count: usize) -> Result<()> {
        if item_count == 0 {
            return Err(Error::Config("empty catalog".into()));
        }
        if !(self.init_std > 0.0 && self.init_std.is_finite()) {
            return Err(Error::Config(format!("init_std must be positive, got {}", self.init_std)));
        }
        self.encoder.validate()?;
        self.head.validate(item_count)
    }
}

#[derive(Debug, Clone)]
pub struct SeqRecModel<F> {
    pub config: ModelConfig,
    pub item_count: usize,
    pub store: ParamStore<F>,
    pub item_embedding: ParamId,
    pub encoder: Encoder,
    pub head: Head,
}

impl<F: Real> SeqRecModel<F> {
    /// Build and initialize from `seed`. Registration order is fixed, so the
    /// same seed always yields the same parameters.
    pub fn new(config: ModelConfig, item_count: usize, seed: u64) -> Result<Self> {
        config.validate(item_count)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let std = config.init_std;
        let mut store = ParamStore::new();
        let e = config.encoder.embedding_size();
        let item_embedding = store.register("item_embedding", &[item_count, e], Init::Normal { std }, &mut rng)?;
        let encoder = Encoder::register(&mut store, &config.encoder, std, &mut rng)?;
        let head = Head::register(
            &mut store,
            &config.head,
            config.encoder.hidden_size(),
            config.encoder.num_layers(),
            e,
            std,
            &mut rng,
        )?;
        Ok(SeqRecModel { config, item_count, store, item_embedding, encoder, head })
    }

    /// Logits `[positions.len(), item_count]` for a window of items.
    pub fn forward(
        &self,
        g: &mut Graph<F>,
        items: &[usize],
        positions: &[usize],
        drop: &mut DropoutCtx<'_>,
        want_partitions: bool,
    ) -> Result<HeadOutput> {
        if items.is_empty() {
            return Err(Error::Shape("empty input window".into()));
        }
        if let Some(&bad) = items.iter().find(|&&i| i >= self.item_count) {
            return Err(Error::Shape(format!("item id {bad} outside catalog of {}", self.item_count)));
        }
        let table = g.param(&self.store, self.item_embedding);
        let x = g.embedding_gather(table, items)?;
        let states = self.encoder.forward(g, &self.store, x, drop)?;
        self.head.forward(g, &self.store, items, &states.layers, table, positions, want_partitions)
    }

    /// Mean cross-entropy over every position of `inputs`, position `t`
    /// predicting `targets[t]`.
    pub fn window_loss(
        &self,
        g: &mut Graph<F>,
        inputs: &[usize],
        targets: &[usize],
        drop: &mut DropoutCtx<'_>,
    ) -> Result<Var> {
        if inputs.len() != targets.len() {
            return Err(Error::Shape(format!("{} inputs but {} targets", inputs.len(), targets.len())));
        }
        let positions: Vec<usize> = (0..inputs.len()).collect();
        let out = self.forward(g, inputs, &positions, drop, false)?;
        g.softmax_cross_entropy(out.logits, targets)
    }

    /// Evaluation-mode logits for the item following `items`.
    pub fn score_next(&self, items: &[usize]) -> Result<Vec<F>> {
        let Some(last) = items.len().checked_sub(1) else {
            return Err(Error::Shape("empty input window".into()));
        };
        let mut g = Graph::new();
        let out = self.forward(&mut g, items, &[last], &mut DropoutCtx::eval(), false)?;
        Ok(g.value(out.logits).data().to_vec())
    }
}
