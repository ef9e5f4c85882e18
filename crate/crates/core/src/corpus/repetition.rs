use std::collections::HashMap;
use std::io::Write;

use super::sequences::UserSequence;

/// Counts for one prefix length `n`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RepetitionPoint {
    pub count_with_dup: u64,
    pub repeat_with_dup: u64,
    pub count_without_dup: u64,
    pub repeat_without_dup: u64,
}

impl RepetitionPoint {
    pub fn p_with_dup(&self) -> Option<f64> {
        (self.count_with_dup > 0).then(|| self.repeat_with_dup as f64 / self.count_with_dup as f64)
    }

    pub fn p_without_dup(&self) -> Option<f64> {
        (self.count_without_dup > 0).then(|| self.repeat_without_dup as f64 / self.count_without_dup as f64)
    }
}

/// Probability that the next item repeats something in the prefix, split by
/// whether the prefix itself already contains a repetition. Index `n` is the
/// prefix length; index 0 is unused.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RepetitionCurve {
    points: Vec<RepetitionPoint>,
}

impl RepetitionCurve {
    pub fn at(&self, n: usize) -> RepetitionPoint {
        self.points.get(n).copied().unwrap_or_default()
    }

    /// Largest prefix length with any observation.
    pub fn max_len(&self) -> usize {
        self.points.len().saturating_sub(1)
    }

    pub fn totals(&self) -> RepetitionPoint {
        self.points.iter().fold(RepetitionPoint::default(), |a, p| RepetitionPoint {
            count_with_dup: a.count_with_dup + p.count_with_dup,
            repeat_with_dup: a.repeat_with_dup + p.repeat_with_dup,
            count_without_dup: a.count_without_dup + p.count_without_dup,
            repeat_without_dup: a.repeat_without_dup + p.repeat_without_dup,
        })
    }

    /// CSV with header `n,class,count,repeats,probability`; classes with no
    /// observations at a given `n` are omitted.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "n,class,count,repeats,probability")?;
        for (n, p) in self.points.iter().enumerate().skip(1) {
            if let Some(prob) = p.p_with_dup() {
                writeln!(w, "{n},with_dup,{},{},{prob}", p.count_with_dup, p.repeat_with_dup)?;
            }
            if let Some(prob) = p.p_without_dup() {
                writeln!(w, "{n},without_dup,{},{},{prob}", p.count_without_dup, p.repeat_without_dup)?;
            }
        }
        Ok(())
    }
}

pub fn repetition_stats(sequences: &[UserSequence]) -> RepetitionCurve {
    let mut points: Vec<RepetitionPoint> = Vec::new();
    for s in sequences {
        if s.items.len() < 2 {
            continue;
        }
        if points.len() < s.items.len() {
            points.resize(s.items.len(), RepetitionPoint::default());
        }
        let mut seen: HashMap<usize, u32> = HashMap::new();
        let mut has_dup = false;
        for n in 1..s.items.len() {
            let c = seen.entry(s.items[n - 1]).or_default();
            *c += 1;
            has_dup |= *c >= 2;
            let repeat = seen.contains_key(&s.items[n]) as u64;
            let p = &mut points[n];
            if has_dup {
                p.count_with_dup += 1;
                p.repeat_with_dup += repeat;
            } else {
                p.count_without_dup += 1;
                p.repeat_without_dup += repeat;
            }
        }
    }
    RepetitionCurve { points }
}
