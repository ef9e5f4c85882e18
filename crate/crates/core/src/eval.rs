//! Full-catalog ranking metrics and their aggregation across datasets.

use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::EvalCase;
use crate::error::{Error, Result};
use crate::model::SeqRecModel;
use crate::numcore::Real;

pub const DEFAULT_K: usize = 10;

/// 1-based rank of `target`: one plus the number of items scoring strictly
/// higher, plus the equal-scored items with a smaller id. `-inf` scores are
/// allowed (masked items); NaN is rejected.
pub fn full_rank<F: Real>(scores: &[F], target: usize) -> Result<usize> {
    let Some(&t) = scores.get(target) else {
        return Err(Error::Shape(format!("target {target} outside {} scores", scores.len())));
    };
    if t.is_nan() {
        return Err(Error::NonFinite(format!("score of target {target} is NaN")));
    }
    let mut rank = 1;
    for (i, &s) in scores.iter().enumerate() {
        if s.is_nan() {
            return Err(Error::NonFinite(format!("score of item {i} is NaN")));
        }
        if s > t || (s == t && i < target) {
            rank += 1;
        }
    }
    Ok(rank)
}

pub fn ndcg_at_k(rank: usize, k: usize) -> f64 {
    if rank >= 1 && rank <= k {
        1.0 / ((rank + 1) as f64).log2()
    } else {
        0.0
    }
}

pub fn hr_at_k(rank: usize, k: usize) -> f64 {
    if rank >= 1 && rank <= k {
        1.0
    } else {
        0.0
    }
}

pub fn mrr_at_k(rank: usize, k: usize) -> f64 {
    if rank >= 1 && rank <= k {
        1.0 / rank as f64
    } else {
        0.0
    }
}

/// `exp(mean(ln v))`. A zero anywhere yields 0 with a logged warning.
pub fn geometric_mean(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Config("geometric mean of no values".into()));
    }
    if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
        return Err(Error::NonFinite(format!("geometric mean needs non-negative finite values, got {v}")));
    }
    if values.contains(&0.0) {
        log::warn!("geometric mean over {} values contains a zero; reporting 0", values.len());
        return Ok(0.0);
    }
    Ok((values.iter().map(|v| v.ln()).sum::<f64>() / values.len() as f64).exp())
}

/// Outcome for one evaluated user.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankingResult {
    pub user: usize,
    /// Rank among all items; `None` when dedup removed the target itself.
    pub rank: Option<usize>,
}

impl RankingResult {
    pub fn metrics(&self, k: usize) -> Metrics {
        match self.rank {
            Some(r) => Metrics { ndcg: ndcg_at_k(r, k), hr: hr_at_k(r, k), mrr: mrr_at_k(r, k) },
            None => Metrics::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub ndcg: f64,
    pub hr: f64,
    pub mrr: f64,
}

impl Metrics {
    pub fn get(&self, name: MetricName) -> f64 {
        match name {
            MetricName::Ndcg => self.ndcg,
            MetricName::Hr => self.hr,
            MetricName::Mrr => self.mrr,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum MetricName {
    Ndcg,
    Hr,
    Mrr,
}

impl MetricName {
    pub const ALL: [MetricName; 3] = [MetricName::Ndcg, MetricName::Hr, MetricName::Mrr];

    pub fn label(self, k: usize) -> String {
        match self {
            MetricName::Ndcg => format!("NDCG@{k}"),
            MetricName::Hr => format!("HR@{k}"),
            MetricName::Mrr => format!("MRR@{k}"),
        }
    }

    /// Parse a label such as `NDCG@10` into the metric and its cutoff.
    pub fn parse(label: &str) -> Option<(MetricName, usize)> {
        let (name, k) = label.split_once('@')?;
        let k = k.parse().ok()?;
        let m = match name {
            "NDCG" => MetricName::Ndcg,
            "HR" => MetricName::Hr,
            "MRR" => MetricName::Mrr,
            _ => return None,
        };
        Some((m, k))
    }
}

/// Mean metrics over the users of one dataset split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub k: usize,
    pub users: usize,
    /// Users whose target was in the window under dedup.
    pub excluded: usize,
    pub metrics: Metrics,
}

impl MetricReport {
    pub fn from_results(results: &[RankingResult], k: usize) -> Self {
        let mut sum = Metrics::default();
        for r in results {
            let m = r.metrics(k);
            sum.ndcg += m.ndcg;
            sum.hr += m.hr;
            sum.mrr += m.mrr;
        }
        let n = results.len().max(1) as f64;
        MetricReport {
            k,
            users: results.len(),
            excluded: results.iter().filter(|r| r.rank.is_none()).count(),
            metrics: Metrics { ndcg: sum.ndcg / n, hr: sum.hr / n, mrr: sum.mrr / n },
        }
    }

    pub fn ndcg(&self) -> f64 {
        self.metrics.ndcg
    }
}

/// Rank one case: window items are masked when `dedup` is set, and a target
/// inside the window yields no rank at all.
pub fn rank_case<F: Real>(mut scores: Vec<F>, case: &EvalCase, dedup: bool) -> Result<RankingResult> {
    if dedup {
        if case.input.contains(&case.target) {
            return Ok(RankingResult { user: case.user, rank: None });
        }
        for &i in &case.input {
            scores[i] = F::neg_infinity();
        }
    }
    Ok(RankingResult { user: case.user, rank: Some(full_rank(&scores, case.target)?) })
}

/// Score every case with the model in evaluation mode, in parallel over
/// users. Results keep the order of `cases`.
pub fn evaluate<F: Real>(model: &SeqRecModel<F>, cases: &[EvalCase], k: usize) -> Result<(Vec<RankingResult>, MetricReport)> {
    let dedup = model.config.head.dedup;
    let results = cases
        .par_iter()
        .map(|c| rank_case(model.score_next(&c.input)?, c, dedup))
        .collect::<Result<Vec<_>>>()?;
    let report = MetricReport::from_results(&results, k);
    Ok((results, report))
}

/// One row of a metrics CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub dataset: String,
    pub variant: String,
    pub metric: String,
    pub value: f64,
}

pub fn metric_rows(dataset: &str, variant: &str, report: &MetricReport) -> Vec<MetricRow> {
    MetricName::ALL
        .iter()
        .map(|&m| MetricRow {
            dataset: dataset.to_string(),
            variant: variant.to_string(),
            metric: m.label(report.k),
            value: report.metrics.get(m),
        })
        .collect()
}

/// Write `dataset,variant,metric,value` rows with a header.
pub fn write_metrics_csv<W: Write>(w: W, rows: &[MetricRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let err = |e: csv::Error| Error::Config(format!("writing metrics: {e}"));
    out.write_record(["dataset", "variant", "metric", "value"]).map_err(err)?;
    for r in rows {
        out.write_record([&r.dataset, &r.variant, &r.metric, &r.value.to_string()]).map_err(err)?;
    }
    out.flush().map_err(|e| Error::Config(format!("writing metrics: {e}")))?;
    Ok(())
}

pub fn read_metrics_csv(path: &std::path::Path) -> Result<Vec<MetricRow>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        msg: e.to_string(),
    })?;
    let mut rows = Vec::new();
    for (i, r) in rdr.deserialize().enumerate() {
        rows.push(r.map_err(|e: csv::Error| Error::Parse {
            path: path.to_path_buf(),
            line: i + 2,
            msg: e.to_string(),
        })?);
    }
    Ok(rows)
}

/// Metrics of many runs laid out per model row, per dataset, with
/// geometric means over dataset groups.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReportTable {
    /// Dataset names in first-seen order.
    pub datasets: Vec<String>,
    /// Group name → member datasets.
    pub groups: Vec<(String, Vec<String>)>,
    /// Metric labels in first-seen order.
    pub metrics: Vec<String>,
    /// Row label → (dataset, metric) → value.
    pub rows: Vec<(String, BTreeMap<(String, String), f64>)>,
}

impl ReportTable {
    /// `groups` maps a group name to its datasets; an implicit `all` group
    /// covering every dataset is appended when there is more than one.
    pub fn build(rows: &[MetricRow], groups: &[(String, Vec<String>)]) -> Result<Self> {
        let mut t = ReportTable::default();
        for r in rows {
            if !t.datasets.contains(&r.dataset) {
                t.datasets.push(r.dataset.clone());
            }
            if !t.metrics.contains(&r.metric) {
                t.metrics.push(r.metric.clone());
            }
            let idx = match t.rows.iter().position(|(v, _)| *v == r.variant) {
                Some(i) => i,
                None => {
                    t.rows.push((r.variant.clone(), BTreeMap::new()));
                    t.rows.len() - 1
                }
            };
            let key = (r.dataset.clone(), r.metric.clone());
            if t.rows[idx].1.insert(key, r.value).is_some() {
                return Err(Error::Config(format!(
                    "duplicate metric {} for {} on {}",
                    r.metric, r.variant, r.dataset
                )));
            }
        }
        t.groups = groups.to_vec();
        if t.datasets.len() > 1 && !t.groups.iter().any(|(g, _)| g == "all") {
            t.groups.push(("all".into(), t.datasets.clone()));
        }
        Ok(t)
    }

    pub fn value(&self, row: usize, dataset: &str, metric: &str) -> Option<f64> {
        self.rows[row].1.get(&(dataset.to_string(), metric.to_string())).copied()
    }

    /// Geometric mean of a row over a group; `None` when any member is
    /// missing for that row.
    pub fn group_mean(&self, row: usize, group: &[String], metric: &str) -> Result<Option<f64>> {
        let vals: Option<Vec<f64>> = group.iter().map(|d| self.value(row, d, metric)).collect();
        match vals {
            Some(v) if !v.is_empty() => Ok(Some(geometric_mean(&v)?)),
            _ => Ok(None),
        }
    }

    /// Long-form CSV `variant,column,metric,value`, where column is a
    /// dataset or `gmean:<group>`. Values are written unrounded.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let err = |e: csv::Error| Error::Config(format!("writing report: {e}"));
        out.write_record(["variant", "column", "metric", "value"]).map_err(err)?;
        for (i, (variant, _)) in self.rows.iter().enumerate() {
            for d in &self.datasets {
                for m in &self.metrics {
                    if let Some(v) = self.value(i, d, m) {
                        out.write_record([variant, d, m, &v.to_string()]).map_err(err)?;
                    }
                }
            }
            for (g, members) in &self.groups {
                for m in &self.metrics {
                    if let Some(v) = self.group_mean(i, members, m)? {
                        out.write_record([variant, &format!("gmean:{g}"), m, &v.to_string()]).map_err(err)?;
                    }
                }
            }
        }
        out.flush().map_err(|e| Error::Config(format!("writing report: {e}")))?;
        Ok(())
    }

    /// Markdown table, values in percent with two decimals.
    pub fn to_markdown(&self) -> Result<String> {
        let mut cols: Vec<(String, String)> = Vec::new();
        for d in &self.datasets {
            for m in &self.metrics {
                cols.push((d.clone(), m.clone()));
            }
        }
        for (g, _) in &self.groups {
            for m in &self.metrics {
                cols.push((format!("gmean:{g}"), m.clone()));
            }
        }
        let mut s = String::from("| model |");
        for (c, m) in &cols {
            s.push_str(&format!(" {c} {m} |"));
        }
        s.push_str("\n|---|");
        s.push_str(&"---:|".repeat(cols.len()));
        s.push('\n');
        for (i, (variant, _)) in self.rows.iter().enumerate() {
            s.push_str(&format!("| {variant} |"));
            for (c, m) in &cols {
                let v = match c.strip_prefix("gmean:") {
                    Some(g) => {
                        let members = &self.groups.iter().find(|(n, _)| n == g).unwrap().1;
                        self.group_mean(i, members, m)?
                    }
                    None => self.value(i, c, m),
                };
                match v {
                    Some(v) => s.push_str(&format!(" {:.2} |", 100.0 * v)),
                    None => s.push_str(" - |"),
                }
            }
            s.push('\n');
        }
        Ok(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_examples() {
        assert_eq!(full_rank(&[0.1, 0.9, 0.3], 1).unwrap(), 1);
        assert_eq!(full_rank(&[0.5; 4], 0).unwrap(), 1);
        assert_eq!(full_rank(&[0.5; 4], 3).unwrap(), 4);
        assert!(full_rank(&[f64::NAN, 0.0], 1).is_err());
    }

    #[test]
    fn metric_closed_forms() {
        assert_eq!((ndcg_at_k(1, 10), hr_at_k(1, 10), mrr_at_k(1, 10)), (1.0, 1.0, 1.0));
        assert!((ndcg_at_k(2, 10) - 0.630_929_753_571_457_4).abs() < 1e-12);
        assert_eq!(mrr_at_k(2, 10), 0.5);
        assert_eq!((ndcg_at_k(11, 10), hr_at_k(11, 10), mrr_at_k(11, 10)), (0.0, 0.0, 0.0));
    }

    #[test]
    fn geometric_means() {
        assert!((geometric_mean(&[0.04, 0.09]).unwrap() - 0.06).abs() < 1e-12);
        assert_eq!(geometric_mean(&[0.3]).unwrap(), 0.3);
        assert_eq!(geometric_mean(&[1.0, 1.0, 1.0]).unwrap(), 1.0);
        assert_eq!(geometric_mean(&[0.5, 0.0]).unwrap(), 0.0);
        assert!(geometric_mean(&[]).is_err());
    }

    #[test]
    fn dedup_excludes_repeated_target() {
        let case = EvalCase { user: 3, input: vec![1, 2], target: 2 };
        let r = rank_case(vec![0.0, 1.0, 5.0, 0.5], &case, true).unwrap();
        assert_eq!(r.rank, None);
        assert_eq!(r.metrics(10), Metrics::default());
        let case = EvalCase { user: 3, input: vec![1, 2], target: 3 };
        let r = rank_case(vec![0.0, 1.0, 5.0, 0.5], &case, true).unwrap();
        assert_eq!(r.rank, Some(1));
    }
}
