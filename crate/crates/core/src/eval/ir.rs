use std::collections::BTreeSet;

use super::{EvalError, Qrels, QueryMetrics, RunRecord};

fn hits_in_top_k(run: &RunRecord, qrels: &Qrels, k: usize) -> Result<(usize, usize), EvalError> {
    if k == 0 {
        return Err(EvalError::InvalidK);
    }
    run.validate()?;
    let relevant = qrels.relevant(&run.query_id)?;
    let hits = run.ranked.iter().take(k).filter(|id| relevant.contains(*id)).count();
    Ok((hits, relevant.len()))
}

/// Share of the relevant chunks found in the top `k`. A run shorter than `k`
/// is scored over what it has.
pub fn recall_at_k(run: &RunRecord, qrels: &Qrels, k: usize) -> Result<f64, EvalError> {
    let (hits, relevant) = hits_in_top_k(run, qrels, k)?;
    Ok(hits as f64 / relevant as f64)
}

/// Share of the top `k` that is relevant, always dividing by `k`.
pub fn precision_at_k(run: &RunRecord, qrels: &Qrels, k: usize) -> Result<f64, EvalError> {
    let (hits, _) = hits_in_top_k(run, qrels, k)?;
    Ok(hits as f64 / k as f64)
}

/// Recall and precision over `k_grid` for every run record.
pub fn evaluate_runs(runs: &[RunRecord], qrels: &Qrels, k_grid: &[usize]) -> Result<Vec<QueryMetrics>, EvalError> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(runs.len());
    for run in runs {
        if !seen.insert(run.query_id.as_str()) {
            return Err(EvalError::DuplicateQuery(run.query_id.clone()));
        }
        let mut row = QueryMetrics::new(&run.query_id, run.dataset.as_deref());
        for &k in k_grid {
            row.values.insert(format!("recall@{k}"), recall_at_k(run, qrels, k)?);
            row.values.insert(format!("precision@{k}"), precision_at_k(run, qrels, k)?);
        }
        out.push(row);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup(relevant: &[&str], ranked: &[&str]) -> (RunRecord, Qrels) {
        let mut q = Qrels::new();
        q.insert("q", relevant.iter().copied());
        (RunRecord::new("q", ranked.iter().map(|s| s.to_string()).collect()), q)
    }

    #[test]
    fn examples() {
        let (r, q) = setup(&["d1"], &["d1", "d2"]);
        assert_eq!(recall_at_k(&r, &q, 1).unwrap(), 1.0);
        assert_eq!(precision_at_k(&r, &q, 2).unwrap(), 0.5);
        let (r, q) = setup(&["d1", "d2"], &["d3", "d1"]);
        assert_eq!(recall_at_k(&r, &q, 2).unwrap(), 0.5);
    }

    #[test]
    fn short_runs() {
        let (r, q) = setup(&["d1", "d2"], &["d1", "d2"]);
        assert_eq!(recall_at_k(&r, &q, 50).unwrap(), 1.0);
        assert_eq!(precision_at_k(&r, &q, 8).unwrap(), 2.0 / 8.0);
    }

    #[test]
    fn errors() {
        let (r, q) = setup(&["d1"], &["d1"]);
        assert!(matches!(recall_at_k(&r, &q, 0), Err(EvalError::InvalidK)));
        let other = RunRecord::new("missing", vec![]);
        assert!(matches!(precision_at_k(&other, &q, 1), Err(EvalError::UnknownQuery(_))));
        assert!(matches!(evaluate_runs(&[r.clone(), r], &q, &[1]), Err(EvalError::DuplicateQuery(_))));
    }
}
