use std::collections::BTreeMap;
use std::fmt::Write;

use serde::{Deserialize, Serialize};

use super::EvalError;

pub const DEFAULT_K_GRID: [usize; 6] = [1, 2, 4, 8, 16, 50];

/// Answer-quality metrics in report column order.
pub const TRACE_METRICS: [&str; 5] = ["completeness", "utilization", "context_relevance", "hallucination", "accuracy"];

const DEFAULT_DATASET: &str = "default";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryMetrics {
    pub query_id: String,
    pub dataset: String,
    pub values: BTreeMap<String, f64>,
}

impl QueryMetrics {
    pub fn new(query_id: &str, dataset: Option<&str>) -> Self {
        Self {
            query_id: query_id.to_string(),
            dataset: dataset.unwrap_or(DEFAULT_DATASET).to_string(),
            values: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRow {
    pub dataset: String,
    pub n_queries: usize,
    pub means: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub k_grid: Vec<usize>,
    /// Metric names in column order.
    pub metrics: Vec<String>,
    pub per_query: Vec<QueryMetrics>,
    /// Mean over the queries of each dataset, in order of first appearance.
    pub datasets: Vec<DatasetRow>,
    /// Mean over all queries.
    pub micro: BTreeMap<String, f64>,
    /// Unweighted mean of the dataset means.
    pub macro_of_datasets: BTreeMap<String, f64>,
}

/// Combines rows that share a dataset and query id, keeping the position of
/// the first one.
pub fn merge_metrics(rows: Vec<QueryMetrics>) -> Vec<QueryMetrics> {
    let mut out: Vec<QueryMetrics> = Vec::with_capacity(rows.len());
    let mut at: BTreeMap<(String, String), usize> = BTreeMap::new();
    for row in rows {
        let key = (row.dataset.clone(), row.query_id.clone());
        match at.get(&key) {
            Some(&i) => out[i].values.extend(row.values),
            None => {
                at.insert(key, out.len());
                out.push(row);
            }
        }
    }
    out
}

fn column_order(rows: &[QueryMetrics], k_grid: &[usize]) -> Vec<String> {
    let present: std::collections::BTreeSet<&str> =
        rows.iter().flat_map(|r| r.values.keys().map(String::as_str)).collect();
    let mut order: Vec<String> = Vec::new();
    let preferred = k_grid
        .iter()
        .map(|k| format!("recall@{k}"))
        .chain(k_grid.iter().map(|k| format!("precision@{k}")))
        .chain(TRACE_METRICS.iter().map(|m| m.to_string()));
    for name in preferred {
        if present.contains(name.as_str()) && !order.contains(&name) {
            order.push(name);
        }
    }
    for name in present {
        if !order.iter().any(|o| o == name) {
            order.push(name.to_string());
        }
    }
    order
}

fn mean_of<'a>(values: impl Iterator<Item = &'a f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Per-dataset, micro and macro-of-datasets means of every metric. A metric
/// is averaged over the queries (or datasets) that report it.
pub fn aggregate_report(rows: &[QueryMetrics], k_grid: &[usize]) -> Result<MetricsReport, EvalError> {
    if rows.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let metrics = column_order(rows, k_grid);
    let mut groups: Vec<(String, Vec<&QueryMetrics>)> = Vec::new();
    for row in rows {
        match groups.iter_mut().find(|(d, _)| *d == row.dataset) {
            Some((_, members)) => members.push(row),
            None => groups.push((row.dataset.clone(), vec![row])),
        }
    }
    let datasets: Vec<DatasetRow> = groups
        .into_iter()
        .map(|(dataset, members)| DatasetRow {
            n_queries: members.len(),
            means: metrics
                .iter()
                .filter_map(|m| mean_of(members.iter().filter_map(|r| r.values.get(m))).map(|v| (m.clone(), v)))
                .collect(),
            dataset,
        })
        .collect();
    let micro = metrics
        .iter()
        .filter_map(|m| mean_of(rows.iter().filter_map(|r| r.values.get(m))).map(|v| (m.clone(), v)))
        .collect();
    let macro_of_datasets = metrics
        .iter()
        .filter_map(|m| mean_of(datasets.iter().filter_map(|d| d.means.get(m))).map(|v| (m.clone(), v)))
        .collect();
    Ok(MetricsReport { k_grid: k_grid.to_vec(), metrics, per_query: rows.to_vec(), datasets, micro, macro_of_datasets })
}

fn is_retrieval(metric: &str) -> bool {
    metric.starts_with("recall@") || metric.starts_with("precision@")
}

fn header_for(metric: &str) -> String {
    if let Some(k) = metric.strip_prefix("recall@") {
        format!("R@{k}")
    } else if let Some(k) = metric.strip_prefix("precision@") {
        format!("P@{k}")
    } else {
        metric.to_string()
    }
}

fn render_table(headers: &[String], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = headers.iter().map(|h| h.chars().count()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |cells: &[String]| {
        let mut s = String::new();
        for (i, (cell, w)) in cells.iter().zip(&widths).enumerate() {
            if i == 0 {
                let _ = write!(s, "{cell:<w$}");
            } else {
                let _ = write!(s, "  {cell:>w$}");
            }
        }
        s.trim_end().to_string()
    };
    let mut out = line(headers);
    out.push('\n');
    out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
    out.push('\n');
    for row in rows {
        out.push_str(&line(row));
        out.push('\n');
    }
    out
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    fn rows_for(&self, metrics: &[&String], fmt: impl Fn(f64) -> String) -> Vec<Vec<String>> {
        let cells = |name: &str, means: &BTreeMap<String, f64>| {
            std::iter::once(name.to_string())
                .chain(metrics.iter().map(|m| means.get(*m).map_or_else(|| "-".to_string(), |v| fmt(*v))))
                .collect::<Vec<_>>()
        };
        let mut rows: Vec<Vec<String>> = self.datasets.iter().map(|d| cells(&d.dataset, &d.means)).collect();
        rows.push(cells("micro", &self.micro));
        rows.push(cells("macro", &self.macro_of_datasets));
        rows
    }

    /// Plain-text tables: retrieval metrics as percentages with two decimals,
    /// answer-quality metrics as fractions with four (accuracy keeps its 1
    /// to 5 scale).
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let retrieval: Vec<&String> = self.metrics.iter().filter(|m| is_retrieval(m)).collect();
        if !retrieval.is_empty() {
            let headers: Vec<String> =
                std::iter::once("Dataset".to_string()).chain(retrieval.iter().map(|m| header_for(m))).collect();
            out.push_str(&render_table(&headers, &self.rows_for(&retrieval, |v| format!("{:.2}", v * 100.0))));
        }
        let quality: Vec<&String> = self.metrics.iter().filter(|m| !is_retrieval(m)).collect();
        if !quality.is_empty() {
            if !out.is_empty() {
                out.push('\n');
            }
            let headers: Vec<String> =
                std::iter::once("Dataset".to_string()).chain(quality.iter().map(|m| header_for(m))).collect();
            out.push_str(&render_table(&headers, &self.rows_for(&quality, |v| format!("{v:.4}"))));
        }
        out
    }
}
