use serde::Serialize;

/// Which logit expression produced an item's final score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum LogitSource {
    Context,
    /// Reranker partition, 1-based (`Rerank(1)` scores the smallest top-k).
    Rerank(u8),
    Vocabulary,
}

/// Assignment of every catalog item to exactly one logit source for one
/// prediction step.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PartitionMap {
    /// Distinct window items, ascending.
    pub context: Vec<usize>,
    /// `rerank[i]` is `P(k_{i+1})` minus every smaller top-k set and the window.
    pub rerank: Vec<Vec<usize>>,
    pub vocabulary: Vec<usize>,
    pub source: Vec<LogitSource>,
}

impl PartitionMap {
    /// Build from the window and the raw top-k selections, `selections[i]`
    /// holding `P(k_{i+1})`.
    pub fn from_selections(item_count: usize, window: &[usize], selections: &[Vec<usize>]) -> Self {
        let mut source = vec![LogitSource::Vocabulary; item_count];
        for (i, sel) in selections.iter().enumerate().rev() {
            for &x in sel {
                source[x] = LogitSource::Rerank(i as u8 + 1);
            }
        }
        for &x in window {
            source[x] = LogitSource::Context;
        }
        let mut context = Vec::new();
        let mut rerank = vec![Vec::new(); selections.len()];
        let mut vocabulary = Vec::new();
        for (x, s) in source.iter().enumerate() {
            match s {
                LogitSource::Context => context.push(x),
                LogitSource::Rerank(r) => rerank[*r as usize - 1].push(x),
                LogitSource::Vocabulary => vocabulary.push(x),
            }
        }
        PartitionMap { context, rerank, vocabulary, source }
    }

    /// Sets are pairwise disjoint and their union is `0..item_count`.
    pub fn is_exhaustive_partition(&self) -> bool {
        let n = self.source.len();
        let mut seen = vec![0u8; n];
        let all = self.context.iter().chain(self.rerank.iter().flatten()).chain(&self.vocabulary);
        for &x in all {
            if x >= n {
                return false;
            }
            seen[x] += 1;
        }
        seen.iter().all(|&c| c == 1)
    }
}
