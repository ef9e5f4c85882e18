use super::sequences::UserSequence;

/// A model input window with one next-item target per position:
/// position `t` reads `items[..=t]` and predicts `items[t + 1]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainWindow {
    pub user: usize,
    pub items: Vec<usize>,
}

impl TrainWindow {
    pub fn inputs(&self) -> &[usize] {
        &self.items[..self.items.len() - 1]
    }

    pub fn targets(&self) -> &[usize] {
        &self.items[1..]
    }

    pub fn num_targets(&self) -> usize {
        self.items.len() - 1
    }
}

/// A single held-out prediction: rank `target` given `input`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalCase {
    pub user: usize,
    pub input: Vec<usize>,
    pub target: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitDataset {
    pub max_seq_len: usize,
    pub train: Vec<TrainWindow>,
    pub valid: Vec<EvalCase>,
    pub test: Vec<EvalCase>,
}

impl SplitDataset {
    pub fn num_train_targets(&self) -> usize {
        self.train.iter().map(TrainWindow::num_targets).sum()
    }

    /// Every (input prefix, target) pair covered by the training windows,
    /// inputs truncated to `max_seq_len`.
    pub fn train_pairs(&self) -> Vec<(usize, Vec<usize>, usize)> {
        let mut out = Vec::new();
        for w in &self.train {
            for t in 0..w.num_targets() {
                let start = (t + 1).saturating_sub(self.max_seq_len);
                out.push((w.user, w.items[start..=t].to_vec(), w.items[t + 1]));
            }
        }
        out
    }
}

fn suffix(items: &[usize], max_len: usize) -> Vec<usize> {
    items[items.len().saturating_sub(max_len)..].to_vec()
}

/// Chop a training history into windows of at most `max_seq_len` inputs so
/// that every position `1..len` is a target exactly once.
fn train_windows(user: usize, history: &[usize], max_seq_len: usize) -> Vec<TrainWindow> {
    let mut out = Vec::new();
    let mut end = history.len();
    while end >= 2 {
        let start = end.saturating_sub(max_seq_len + 1);
        out.push(TrainWindow { user, items: history[start..end].to_vec() });
        end = start + 1;
    }
    out.reverse();
    out
}

/// Leave-one-out split: last item is the test target, second to last the
/// validation target, everything before trains. Users shorter than 3 only
/// contribute training windows.
pub fn split_leave_one_out(sequences: &[UserSequence], max_seq_len: usize) -> SplitDataset {
    assert!(max_seq_len >= 1, "max_seq_len must be positive");
    let mut split = SplitDataset { max_seq_len, train: Vec::new(), valid: Vec::new(), test: Vec::new() };
    for s in sequences {
        let n = s.items.len();
        if n < 3 {
            split.train.extend(train_windows(s.user, &s.items, max_seq_len));
            continue;
        }
        split.test.push(EvalCase { user: s.user, input: suffix(&s.items[..n - 1], max_seq_len), target: s.items[n - 1] });
        split.valid.push(EvalCase { user: s.user, input: suffix(&s.items[..n - 2], max_seq_len), target: s.items[n - 2] });
        split.train.extend(train_windows(s.user, &s.items[..n - 2], max_seq_len));
    }
    split
}
