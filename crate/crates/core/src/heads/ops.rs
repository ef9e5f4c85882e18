//! Logit constructions for the softmax head family.
//!
//! `f_*` vectors are projected decision vectors (one row each); `table` is the
//! shared item embedding matrix `[item_count, embedding_size]`.

use super::partition::PartitionMap;
use crate::error::{Error, Result};
use crate::numcore::{top_k, Graph, Linear, ParamStore, Real, Tensor, Var};

/// Distinct items of a window, ascending.
pub fn window_set(window: &[usize]) -> Vec<usize> {
    let mut s = window.to_vec();
    s.sort_unstable();
    s.dedup();
    s
}

/// `logit(x) = L_base(h) · p_x` for every row of `h`.
pub fn logits_vanilla<F: Real>(
    g: &mut Graph<F>,
    store: &ParamStore<F>,
    h: Var,
    table: Var,
    base: &Linear,
) -> Result<Var> {
    let f = base.forward(g, store, h)?;
    g.matmul(f, table, true)
}

/// Efficient mixture of softmax: elementwise max over per-projection logits.
pub fn logits_mos<F: Real>(
    g: &mut Graph<F>,
    store: &ParamStore<F>,
    h: Var,
    table: Var,
    projections: &[Linear],
) -> Result<Var> {
    if projections.is_empty() {
        return Err(Error::Config("mixture of softmax needs at least one projection".into()));
    }
    let mut parts = Vec::with_capacity(projections.len());
    for p in projections {
        parts.push(logits_vanilla(g, store, h, table, p)?);
    }
    if parts.len() == 1 {
        return Ok(parts[0]);
    }
    g.max(&parts)
}

/// Context-dependent scores for the distinct window items.
pub struct ContextScores {
    /// Distinct window items, ascending.
    pub items: Vec<usize>,
    /// `[1, items.len()]` row of final logits for `items`.
    pub values: Var,
}

/// Averaging matrix `[w, len]`: row `i` averages the positions `< upto`
/// holding `items[i]`.
fn occurrence_mean_matrix<F: Real>(items: &[usize], window: &[usize], len: usize) -> Result<Tensor<F>> {
    let mut a = vec![F::zero(); items.len() * len];
    for (r, &x) in items.iter().enumerate() {
        let pos: Vec<usize> = window.iter().enumerate().filter(|(_, &w)| w == x).map(|(j, _)| j).collect();
        if pos.is_empty() {
            return Err(Error::Config(format!("local embedding requested for item {x} absent from window")));
        }
        let wgt = F::one() / F::of(pos.len() as f64);
        for j in pos {
            a[r * len + j] = wgt;
        }
    }
    Tensor::matrix(items.len(), len, a)
}

/// Pointer-network local embeddings from already projected per-position
/// states `projected` (`[T, e]`, row `j` is `L_L(q_j)`), using only the first
/// `window.len()` positions. Returns `[items.len(), e]`, one averaged row per
/// distinct item.
pub fn local_embeddings_projected<F: Real>(
    g: &mut Graph<F>,
    items: &[usize],
    window: &[usize],
    projected: Var,
) -> Result<Var> {
    let rows = g.value(projected).rows();
    if window.len() > rows {
        return Err(Error::Shape(format!("local_embeddings: window {} longer than {} states", window.len(), rows)));
    }
    let a = occurrence_mean_matrix::<F>(items, window, rows)?;
    let a = g.constant(a);
    g.matmul(a, projected, false)
}

/// `f_{x,L}` = mean over positions holding `x` of `L_L(states_j)`. `states`
/// rows align with `window`.
pub fn local_embeddings<F: Real>(
    g: &mut Graph<F>,
    store: &ParamStore<F>,
    window: &[usize],
    states: Var,
    local: &Linear,
) -> Result<(Vec<usize>, Var)> {
    if g.value(states).rows() != window.len() {
        return Err(Error::Shape(format!(
            "local_embeddings: {} states for a window of {}",
            g.value(states).rows(),
            window.len()
        )));
    }
    let items = window_set(window);
    let projected = local.forward(g, store, states)?;
    let emb = local_embeddings_projected(g, &items, window, projected)?;
    Ok((items, emb))
}

/// Context logits `f_C · p_x (+ f_P · f_{x,L})` for the distinct window items.
pub fn context_scores<F: Real>(
    g: &mut Graph<F>,
    table: Var,
    items: Vec<usize>,
    f_c: Var,
    pointer: Option<(Var, Var)>,
) -> Result<ContextScores> {
    let emb = g.embedding_gather(table, &items)?;
    let mut values = g.matmul(f_c, emb, true)?;
    if let Some((f_p, local)) = pointer {
        let p = g.matmul(f_p, local, true)?;
        values = g.add(values, p)?;
    }
    Ok(ContextScores { items, values })
}

/// Overwrite the window items of a `[1, N]` logit row.
pub fn apply_context<F: Real>(g: &mut Graph<F>, row: Var, ctx: &ContextScores) -> Result<Var> {
    g.index_scatter_assign(row, &ctx.items, ctx.values)
}

/// Context partition for one decision row: window items scored with
/// `L_C(h)`, everything else with `L_V(h)`.
pub fn logits_context<F: Real>(
    g: &mut Graph<F>,
    store: &ParamStore<F>,
    h_row: Var,
    window: &[usize],
    table: Var,
    context: &Linear,
    vocab: &Linear,
) -> Result<Var> {
    let row = logits_vanilla(g, store, h_row, table, vocab)?;
    if window.is_empty() {
        return Ok(row);
    }
    let f_c = context.forward(g, store, h_row)?;
    let ctx = context_scores(g, table, window_set(window), f_c, None)?;
    apply_context(g, row, &ctx)
}

/// Projections used by the pointer-network head.
#[derive(Debug, Clone, Copy)]
pub struct CpProjections<'a> {
    pub vocab: &'a Linear,
    pub context: &'a Linear,
    pub pointer: &'a Linear,
    pub local: &'a Linear,
}

/// Context partition plus pointer network for one decision row. `states`
/// holds the per-position states aligned with `window`.
#[allow(clippy::too_many_arguments)]
pub fn logits_cp<F: Real>(
    g: &mut Graph<F>,
    store: &ParamStore<F>,
    h_row: Var,
    window: &[usize],
    states: Var,
    table: Var,
    proj: CpProjections<'_>,
) -> Result<Var> {
    let row = logits_vanilla(g, store, h_row, table, proj.vocab)?;
    if window.is_empty() {
        return Ok(row);
    }
    let (items, local) = local_embeddings(g, store, window, states, proj.local)?;
    let f_c = proj.context.forward(g, store, h_row)?;
    let f_p = proj.pointer.forward(g, store, h_row)?;
    let ctx = context_scores(g, table, items, f_c, Some((f_p, local)))?;
    apply_context(g, row, &ctx)
}

/// Reranker cascade on a `[1, N]` row of base logits.
///
/// For `k_list = [k1, .., km]` (ascending) stages run from `km` down to
/// `k1`: take the top-k of the current row and overwrite those entries with
/// `f_R · p_x` of the matching reranker (`f_rerank[i]` pairs with `k_list[i]`).
/// Finally the context scores, when given, overwrite the window items. When
/// `exclude_context` is set, window items are skipped during selection.
pub fn rerank_cascade<F: Real>(
    g: &mut Graph<F>,
    base_row: Var,
    k_list: &[usize],
    f_rerank: &[Var],
    table: Var,
    context: Option<&ContextScores>,
    exclude_context: bool,
) -> Result<(Var, Vec<Vec<usize>>)> {
    if k_list.len() != f_rerank.len() {
        return Err(Error::Config(format!("{} k values but {} reranker states", k_list.len(), f_rerank.len())));
    }
    let n = g.value(base_row).len();
    if let Some(&k) = k_list.iter().find(|&&k| k >= n) {
        return Err(Error::Config(format!("reranker k={k} must be smaller than the catalog size {n}")));
    }
    let mut row = base_row;
    let mut selections = vec![Vec::new(); k_list.len()];
    for stage in (0..k_list.len()).rev() {
        let mut vals = g.value(row).data().to_vec();
        let mut k = k_list[stage];
        if let (true, Some(ctx)) = (exclude_context, context) {
            for &x in &ctx.items {
                vals[x] = F::neg_infinity();
            }
            k = k.min(n - ctx.items.len());
        }
        if k == 0 {
            continue;
        }
        let (ids, _) = top_k(&vals, k)?;
        let emb = g.embedding_gather(table, &ids)?;
        let scores = g.matmul(f_rerank[stage], emb, true)?;
        row = g.index_scatter_assign(row, &ids, scores)?;
        selections[stage] = ids;
    }
    if let Some(ctx) = context {
        if !ctx.items.is_empty() {
            row = apply_context(g, row, ctx)?;
        }
    }
    Ok((row, selections))
}

/// Projections of the full reranker head.
#[derive(Debug, Clone, Copy)]
pub struct CprProjections<'a> {
    pub cp: CpProjections<'a>,
    pub rerank: &'a [Linear],
}

/// Softmax-CPR logits for one decision row, plus the partition map.
#[allow(clippy::too_many_arguments)]
pub fn logits_cpr<F: Real>(
    g: &mut Graph<F>,
    store: &ParamStore<F>,
    h_row: Var,
    window: &[usize],
    states: Var,
    table: Var,
    k_list: &[usize],
    proj: CprProjections<'_>,
    exclude_context: bool,
) -> Result<(Var, PartitionMap)> {
    let row = logits_vanilla(g, store, h_row, table, proj.cp.vocab)?;
    let n = g.value(row).len();
    let ctx = if window.is_empty() {
        None
    } else {
        let (items, local) = local_embeddings(g, store, window, states, proj.cp.local)?;
        let f_c = proj.cp.context.forward(g, store, h_row)?;
        let f_p = proj.cp.pointer.forward(g, store, h_row)?;
        Some(context_scores(g, table, items, f_c, Some((f_p, local)))?)
    };
    let mut f_r = Vec::with_capacity(proj.rerank.len());
    for l in proj.rerank {
        f_r.push(l.forward(g, store, h_row)?);
    }
    let (row, sel) = rerank_cascade(g, row, k_list, &f_r, table, ctx.as_ref(), exclude_context)?;
    let part = PartitionMap::from_selections(n, &window_set(window), &sel);
    Ok((row, part))
}

/// Widen per-position decision vectors with the last three positions of every
/// layer: `q_t = h_top_t ⊕ GELU(L_h(⊕_{j<3, m} h^{M-m}_{t-j}))`. Missing
/// positions (t - j < 0) contribute zero vectors. `layers` is ordered bottom
/// to top; the result has one row per position.
pub fn mi_expand<F: Real>(g: &mut Graph<F>, store: &ParamStore<F>, layers: &[Var], reducer: &Linear) -> Result<Var> {
    const LAST: usize = 3;
    let top = *layers.last().ok_or_else(|| Error::Shape("mi_expand: no layers".into()))?;
    let t = g.value(top).rows();
    let mut parts = Vec::with_capacity(LAST * layers.len());
    for j in 0..LAST {
        let ids: Vec<Option<usize>> = (0..t).map(|p| p.checked_sub(j)).collect();
        for &layer in layers.iter().rev() {
            parts.push(g.gather_rows(layer, ids.clone())?);
        }
    }
    let cat = g.concat(&parts)?;
    let reduced = reducer.forward(g, store, cat)?;
    let act = g.gelu(reduced);
    g.concat(&[top, act])
}

/// Numerically stable softmax of one logit row.
pub fn probabilities<F: Real>(logits: &[F]) -> Result<Vec<F>> {
    if logits.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("probabilities: non-finite logit".into()));
    }
    let mx = logits.iter().copied().fold(F::neg_infinity(), F::max);
    let e: Vec<F> = logits.iter().map(|&x| (x - mx).exp()).collect();
    let z: F = e.iter().copied().sum();
    Ok(e.into_iter().map(|v| v / z).collect())
}

/// Zero the probability of every window item. The result is left
/// unnormalized; rankings are unaffected by renormalization.
pub fn dedup_postprocess<F: Real>(dist: &mut [F], window: &[usize]) {
    for &x in window {
        dist[x] = F::zero();
    }
}
