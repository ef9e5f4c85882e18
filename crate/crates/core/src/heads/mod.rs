//! Output heads: next-item logits over the whole catalog from encoder states
//! and the shared item embedding table.

pub mod ops;
mod partition;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use ops::{
    apply_context, context_scores, dedup_postprocess, local_embeddings, local_embeddings_projected, logits_context,
    logits_cp, logits_cpr, logits_mos, logits_vanilla, mi_expand, probabilities, rerank_cascade, window_set,
    ContextScores, CpProjections, CprProjections,
};
pub use partition::{LogitSource, PartitionMap};

use crate::error::{Error, Result};
use crate::numcore::{Graph, Linear, ParamStore, Real, Var};

/// Number of trailing positions concatenated by Mi expansion.
pub const MI_POSITIONS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Vanilla,
    C,
    Cp,
    Cpr,
    Mos,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadConfig {
    pub variant: Variant,
    /// Reranker sizes for `cpr`, strictly increasing, one to three entries.
    #[serde(default)]
    pub k_list: Vec<usize>,
    #[serde(default = "default_mos_k")]
    pub mos_k: usize,
    #[serde(default)]
    pub mi: bool,
    /// Zero the probability of window items at evaluation time.
    #[serde(default)]
    pub dedup: bool,
    /// Skip window items during reranker top-k selection.
    #[serde(default)]
    pub exclude_context_before_topk: bool,
}

fn default_mos_k() -> usize {
    3
}

impl HeadConfig {
    pub fn new(variant: Variant) -> Self {
        HeadConfig {
            variant,
            k_list: Vec::new(),
            mos_k: default_mos_k(),
            mi: false,
            dedup: false,
            exclude_context_before_topk: false,
        }
    }

    pub fn cpr(k_list: &[usize]) -> Self {
        HeadConfig { k_list: k_list.to_vec(), ..Self::new(Variant::Cpr) }
    }

    pub fn with_mi(mut self, mi: bool) -> Self {
        self.mi = mi;
        self
    }

    pub fn with_dedup(mut self, dedup: bool) -> Self {
        self.dedup = dedup;
        self
    }

    pub fn validate(&self, item_count: usize) -> Result<()> {
        match self.variant {
            Variant::Cpr => {
                if self.k_list.is_empty() || self.k_list.len() > 3 {
                    return Err(Error::Config(format!("cpr needs 1 to 3 reranker sizes, got {:?}", self.k_list)));
                }
                if self.k_list.windows(2).any(|w| w[0] >= w[1]) || self.k_list[0] == 0 {
                    return Err(Error::Config(format!("k_list {:?} must be positive and strictly increasing", self.k_list)));
                }
                let kmax = *self.k_list.last().unwrap();
                if kmax >= item_count {
                    return Err(Error::Config(format!(
                        "reranker k={kmax} must be smaller than the catalog size {item_count}"
                    )));
                }
            }
            _ if !self.k_list.is_empty() => {
                return Err(Error::Config(format!("k_list is only valid for cpr, got variant {:?}", self.variant)));
            }
            Variant::Mos if self.mos_k == 0 => {
                return Err(Error::Config("mos_k must be positive".into()));
            }
            _ => {}
        }
        if self.exclude_context_before_topk && self.variant != Variant::Cpr {
            return Err(Error::Config("exclude_context_before_topk only applies to cpr".into()));
        }
        Ok(())
    }

    /// Row label in the style of the result tables.
    pub fn label(&self) -> String {
        let mut s = match self.variant {
            Variant::Vanilla => "Softmax".to_string(),
            Variant::C => "Softmax + C".into(),
            Variant::Cp => "Softmax + CP".into(),
            Variant::Cpr => {
                let ks: Vec<String> = self.k_list.iter().map(usize::to_string).collect();
                format!("Softmax + CPR:{}", ks.join(","))
            }
            Variant::Mos => "Mixture of Softmax (MoS)".into(),
        };
        if self.mi {
            s.push_str(" + Mi");
        }
        if self.dedup {
            s.push_str(" w/o Duplication");
        }
        s
    }
}

/// The affine maps a head owns. Only the ones its variant needs exist.
#[derive(Debug, Clone, Default)]
pub struct ProjectionSet {
    pub base: Option<Linear>,
    pub vocab: Option<Linear>,
    pub context: Option<Linear>,
    pub pointer: Option<Linear>,
    pub local: Option<Linear>,
    pub rerank: Vec<Linear>,
    pub mos: Vec<Linear>,
    pub mi_reducer: Option<Linear>,
}

#[derive(Debug, Clone)]
pub struct Head {
    pub config: HeadConfig,
    pub proj: ProjectionSet,
    pub decision_size: usize,
}

/// Result of scoring a set of positions of one window.
pub struct HeadOutput {
    /// `[positions, item_count]`.
    pub logits: Var,
    /// One map per position for `cpr` when requested, empty otherwise.
    pub partitions: Vec<PartitionMap>,
}

impl Head {
    /// Register projections. `hidden` is the encoder state size, `layers`
    /// the number of encoder layers exposed to Mi, `embedding` the item
    /// embedding size.
    pub fn register<F: Real, R: Rng>(
        store: &mut ParamStore<F>,
        config: &HeadConfig,
        hidden: usize,
        layers: usize,
        embedding: usize,
        std: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let d = if config.mi { 2 * hidden } else { hidden };
        let mut lin = |name: &str, input: usize, rng: &mut R| {
            Linear::register(store, &format!("head.{name}"), input, embedding, std, rng)
        };
        let mut p = ProjectionSet::default();
        match config.variant {
            Variant::Vanilla => p.base = Some(lin("base", d, rng)?),
            Variant::Mos => {
                for k in 0..config.mos_k {
                    p.mos.push(lin(&format!("mos{}", k + 1), d, rng)?);
                }
            }
            Variant::C | Variant::Cp | Variant::Cpr => {
                p.vocab = Some(lin("vocab", d, rng)?);
                p.context = Some(lin("context", d, rng)?);
                if config.variant != Variant::C {
                    p.pointer = Some(lin("pointer", d, rng)?);
                    p.local = Some(lin("local", d, rng)?);
                }
                if config.variant == Variant::Cpr {
                    for i in 0..config.k_list.len() {
                        p.rerank.push(lin(&format!("rerank{}", i + 1), d, rng)?);
                    }
                }
            }
        }
        if config.mi {
            p.mi_reducer =
                Some(Linear::register(store, "head.mi_reducer", MI_POSITIONS * layers * hidden, hidden, std, rng)?);
        }
        Ok(Head { config: config.clone(), proj: p, decision_size: d })
    }

    /// Per-position decision vectors: the top layer, or its Mi expansion.
    pub fn decision_states<F: Real>(&self, g: &mut Graph<F>, store: &ParamStore<F>, layers: &[Var]) -> Result<Var> {
        match &self.proj.mi_reducer {
            Some(r) => mi_expand(g, store, layers, r),
            None => Ok(*layers.last().unwrap()),
        }
    }

    /// Logits for `positions` of a window. Position `t` sees the window
    /// prefix `items[..=t]` as its context set.
    pub fn forward<F: Real>(
        &self,
        g: &mut Graph<F>,
        store: &ParamStore<F>,
        items: &[usize],
        layers: &[Var],
        table: Var,
        positions: &[usize],
        want_partitions: bool,
    ) -> Result<HeadOutput> {
        let all = self.decision_states(g, store, layers)?;
        let t = g.value(all).rows();
        if t != items.len() {
            return Err(Error::Shape(format!("head: {t} states for {} items", items.len())));
        }
        if positions.iter().any(|&p| p >= t) {
            return Err(Error::Shape(format!("head: position out of window of {t}")));
        }
        let dense = positions.len() == t && positions.iter().enumerate().all(|(i, &p)| i == p);
        let d = if dense { all } else { g.gather_rows(all, positions.iter().map(|&p| Some(p)).collect())? };

        let p = &self.proj;
        match self.config.variant {
            Variant::Vanilla => {
                let logits = logits_vanilla(g, store, d, table, p.base.as_ref().unwrap())?;
                return Ok(HeadOutput { logits, partitions: Vec::new() });
            }
            Variant::Mos => {
                let logits = logits_mos(g, store, d, table, &p.mos)?;
                return Ok(HeadOutput { logits, partitions: Vec::new() });
            }
            _ => {}
        }

        let vocab = p.vocab.as_ref().unwrap();
        let f_v = vocab.forward(g, store, d)?;
        let base = g.matmul(f_v, table, true)?;
        let f_c = p.context.as_ref().unwrap().forward(g, store, d)?;
        let pointer = match (&p.pointer, &p.local) {
            (Some(pp), Some(ll)) => Some((pp.forward(g, store, d)?, ll.forward(g, store, all)?)),
            _ => None,
        };
        let mut f_r = Vec::with_capacity(p.rerank.len());
        for r in &p.rerank {
            f_r.push(r.forward(g, store, d)?);
        }
        let n = g.value(base).cols();

        let mut rows = Vec::with_capacity(positions.len());
        let mut partitions = Vec::new();
        for (i, &pos) in positions.iter().enumerate() {
            let window = &items[..=pos];
            let set = window_set(window);
            let pick = |g: &mut Graph<F>, v: Var| g.gather_rows(v, vec![Some(i)]);
            let row = pick(g, base)?;
            let fc = pick(g, f_c)?;
            let ptr = match pointer {
                Some((fp, proj_states)) => {
                    let fp = pick(g, fp)?;
                    let local = local_embeddings_projected(g, &set, window, proj_states)?;
                    Some((fp, local))
                }
                None => None,
            };
            let ctx = context_scores(g, table, set.clone(), fc, ptr)?;
            let row = if self.config.variant == Variant::Cpr {
                let mut fr = Vec::with_capacity(f_r.len());
                for &v in &f_r {
                    fr.push(pick(g, v)?);
                }
                let (row, sel) = rerank_cascade(
                    g,
                    row,
                    &self.config.k_list,
                    &fr,
                    table,
                    Some(&ctx),
                    self.config.exclude_context_before_topk,
                )?;
                if want_partitions {
                    partitions.push(PartitionMap::from_selections(n, &set, &sel));
                }
                row
            } else {
                apply_context(g, row, &ctx)?
            };
            rows.push(row);
        }
        let logits = if rows.len() == 1 { rows[0] } else { g.concat_rows(&rows)? };
        Ok(HeadOutput { logits, partitions })
    }
}
