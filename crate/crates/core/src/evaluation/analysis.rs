//! AUC as a function of a per-example covariate (contamination, trajectory
//! count) over equal-count quantile bins.

use serde::{Deserialize, Serialize};

use super::metrics::{roc_auc, slope, spearman};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalysisRow {
    pub score: f64,
    pub label: bool,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bin {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
    pub n_positive: usize,
    /// Lower median of the covariate inside the bin.
    pub median: f64,
    pub auc: Option<f64>,
    /// Why the AUC was suppressed, if it was.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinCurve {
    pub method: String,
    pub variable: String,
    pub bins: Vec<Bin>,
    /// Rank correlation between bin medians and bin AUCs.
    pub spearman: Option<f64>,
    /// Least-squares slope of bin AUC on bin median.
    pub slope: Option<f64>,
}

/// Interior cut points at the `i/bins` quantiles (`i = 1..bins`), taking the
/// sorted value at rank `⌊i·n/bins⌋`; duplicates are dropped.
pub fn quantile_edges(values: &[f64], bins: usize) -> Vec<f64> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() || bins < 2 {
        return Vec::new();
    }
    v.sort_by(f64::total_cmp);
    let mut edges: Vec<f64> = (1..bins).map(|i| v[i * v.len() / bins]).collect();
    edges.dedup();
    edges
}

/// Number of edges not above `v`.
pub fn bin_index(edges: &[f64], v: f64) -> usize {
    edges.partition_point(|&e| e <= v)
}

/// Bins `rows` by value and scores each non-empty bin. Bins with fewer than
/// `min_examples` rows or a single class keep their counts but get no AUC.
pub fn binned_auc(
    method: &str,
    variable: &str,
    rows: &[AnalysisRow],
    bins: usize,
    min_examples: usize,
) -> BinCurve {
    let rows: Vec<&AnalysisRow> = rows.iter().filter(|r| r.value.is_finite()).collect();
    let values: Vec<f64> = rows.iter().map(|r| r.value).collect();
    let edges = quantile_edges(&values, bins);
    let mut members: Vec<Vec<&AnalysisRow>> = vec![Vec::new(); edges.len() + 1];
    for r in &rows {
        members[bin_index(&edges, r.value)].push(r);
    }
    let mut out = Vec::new();
    for m in members.into_iter().filter(|m| !m.is_empty()) {
        let mut vals: Vec<f64> = m.iter().map(|r| r.value).collect();
        vals.sort_by(f64::total_cmp);
        let n_positive = m.iter().filter(|r| r.label).count();
        let scores: Vec<f64> = m.iter().map(|r| r.score).collect();
        let labels: Vec<bool> = m.iter().map(|r| r.label).collect();
        let (auc, note) = if m.len() < min_examples {
            (None, Some(format!("only {} examples", m.len())))
        } else if n_positive == 0 || n_positive == m.len() {
            (None, Some("single class".to_string()))
        } else {
            (roc_auc(&scores, &labels).ok(), None)
        };
        out.push(Bin {
            lo: vals[0],
            hi: vals[vals.len() - 1],
            n: m.len(),
            n_positive,
            median: vals[(vals.len() - 1) / 2],
            auc,
            note,
        });
    }
    let scored: Vec<(f64, f64)> = out
        .iter()
        .filter_map(|b| b.auc.map(|a| (b.median, a)))
        .collect();
    let xs: Vec<f64> = scored.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = scored.iter().map(|p| p.1).collect();
    let (rho, beta) = if scored.len() >= 3 {
        (spearman(&xs, &ys).ok(), Some(slope(&xs, &ys)))
    } else {
        (None, None)
    };
    BinCurve {
        method: method.into(),
        variable: variable.into(),
        bins: out,
        spearman: rho,
        slope: beta,
    }
}
