//! Top-N ranking evaluation, interaction-frequency cohort analysis,
//! and intent-disentanglement statistics export.
//!
//! Ranking uses raw relevance scores: the training-time softmax is a
//! strictly increasing per-user transform of the raw score, so it
//! cannot change item order and is skipped at inference.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::graph::InteractionGraph;
use crate::model::{score_items_for_user, EntityTables, ModelParameters};
use crate::tensor::Tensor2;

/// One user's candidate ranking: items in descending raw score, ties
/// broken by ascending item index, training items excluded.
#[derive(Debug, Clone)]
pub struct RankedList {
    pub user: usize,
    pub items: Vec<u32>,
    pub scores: Vec<f64>,
}

/// Scores every non-excluded item for `user` through the full forward
/// pipeline and sorts. `exclude` must be sorted ascending (training
/// adjacency lists already are).
pub fn rank_items(
    params: &ModelParameters,
    tables: &EntityTables,
    user: usize,
    exclude: &[u32],
) -> Result<RankedList> {
    let candidates: Vec<u32> = (0..params.num_items as u32)
        .filter(|i| exclude.binary_search(i).is_err())
        .collect();
    let scores = score_items_for_user(params, tables, user, &candidates)?;
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .expect("scores are finite")
            .then(candidates[a].cmp(&candidates[b]))
    });
    Ok(RankedList {
        user,
        items: order.iter().map(|&i| candidates[i]).collect(),
        scores: order.iter().map(|&i| scores[i]).collect(),
    })
}

/// Fraction of the relevant set found in the top `n`. `relevant` must
/// be sorted and nonempty.
pub fn recall_at(ranked: &RankedList, relevant: &[u32], n: usize) -> f64 {
    debug_assert!(!relevant.is_empty());
    let hits = ranked
        .items
        .iter()
        .take(n)
        .filter(|i| relevant.binary_search(i).is_ok())
        .count();
    hits as f64 / relevant.len() as f64
}

/// Binary-relevance NDCG with a `1/log2(rank+1)` discount, normalized
/// by the ideal ordering's gain.
pub fn ndcg_at(ranked: &RankedList, relevant: &[u32], n: usize) -> f64 {
    debug_assert!(!relevant.is_empty());
    let mut dcg = 0.0;
    for (pos, item) in ranked.items.iter().take(n).enumerate() {
        if relevant.binary_search(item).is_ok() {
            dcg += 1.0 / ((pos + 2) as f64).log2();
        }
    }
    let ideal_slots = n.min(relevant.len());
    let idcg: f64 = (0..ideal_slots).map(|p| 1.0 / ((p + 2) as f64).log2()).sum();
    dcg / idcg
}

/// One interaction-frequency bucket of the cohort report.
#[derive(Debug, Clone, PartialEq)]
pub struct CohortRow {
    pub lo: usize,
    /// Upper bound (exclusive); `None` for the open-ended last bucket.
    pub hi: Option<usize>,
    pub count: usize,
    pub mean_recall: Option<f64>,
}

/// Buckets `(train_degree, recall)` pairs into [0,10), [10,20), …,
/// [90,inf) and averages the metric per bucket. Empty buckets report
/// count 0 and no metric.
pub fn cohort_report(entries: &[(usize, f64)]) -> Vec<CohortRow> {
    let mut sums = [0.0f64; 10];
    let mut counts = [0usize; 10];
    for &(degree, recall) in entries {
        let bucket = (degree / 10).min(9);
        sums[bucket] += recall;
        counts[bucket] += 1;
    }
    (0..10)
        .map(|b| CohortRow {
            lo: b * 10,
            hi: (b < 9).then_some((b + 1) * 10),
            count: counts[b],
            mean_recall: (counts[b] > 0).then(|| sums[b] / counts[b] as f64),
        })
        .collect()
}

/// Cohort analysis is pinned to Recall@40 regardless of the headline
/// cutoffs.
pub const COHORT_CUTOFF: usize = 40;

/// Ranking metrics at each cutoff plus the per-cohort breakdown.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub cutoffs: Vec<usize>,
    pub recall: Vec<f64>,
    pub ndcg: Vec<f64>,
    pub users_evaluated: usize,
    pub cohorts: Vec<CohortRow>,
}

impl MetricsReport {
    /// Key-value text document with a nested cohort table.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str("intentcf-metrics v1\n");
        let _ = writeln!(out, "users_evaluated {}", self.users_evaluated);
        for (i, &n) in self.cutoffs.iter().enumerate() {
            let _ = writeln!(out, "recall@{n} {}", self.recall[i]);
            let _ = writeln!(out, "ndcg@{n} {}", self.ndcg[i]);
        }
        let _ = writeln!(out, "cohorts recall@{COHORT_CUTOFF}");
        for row in &self.cohorts {
            let hi = match row.hi {
                Some(h) => h.to_string(),
                None => "inf".to_string(),
            };
            let recall = match row.mean_recall {
                Some(r) => r.to_string(),
                None => "null".to_string(),
            };
            let _ = writeln!(out, "bucket [{},{hi}) count {} recall {recall}", row.lo, row.count);
        }
        out.push_str("end\n");
        out
    }
}

/// Full test-split evaluation: macro-averaged Recall@N / NDCG@N over
/// users with nonempty test sets, plus the cohort report keyed by
/// training degree.
pub fn evaluate(
    params: &ModelParameters,
    graph: &InteractionGraph,
    test: &[Vec<u32>],
    cutoffs: &[usize],
) -> Result<MetricsReport> {
    if cutoffs.is_empty() {
        return Err(Error::Config("at least one cutoff is required".into()));
    }
    let tables = EntityTables::new(params, graph)?;
    let mut recall_sums = vec![0.0; cutoffs.len()];
    let mut ndcg_sums = vec![0.0; cutoffs.len()];
    let mut cohort_entries = Vec::new();
    let mut users_evaluated = 0usize;

    for (user, relevant) in test.iter().enumerate() {
        if relevant.is_empty() {
            continue;
        }
        let ranked = rank_items(params, &tables, user, graph.items_of(user))?;
        for (i, &n) in cutoffs.iter().enumerate() {
            recall_sums[i] += recall_at(&ranked, relevant, n);
            ndcg_sums[i] += ndcg_at(&ranked, relevant, n);
        }
        cohort_entries.push((
            graph.user_degree(user),
            recall_at(&ranked, relevant, COHORT_CUTOFF),
        ));
        users_evaluated += 1;
    }
    if users_evaluated == 0 {
        return Err(Error::Usage(
            "evaluation impossible: no user has test interactions".into(),
        ));
    }
    let denom = users_evaluated as f64;
    Ok(MetricsReport {
        cutoffs: cutoffs.to_vec(),
        recall: recall_sums.iter().map(|s| s / denom).collect(),
        ndcg: ndcg_sums.iter().map(|s| s / denom).collect(),
        users_evaluated,
        cohorts: cohort_report(&cohort_entries),
    })
}

/// Per-dimension mean/variance of the four intent embedding tables,
/// with the raw prototype matrices, at one training stage.
#[derive(Debug, Clone)]
pub struct IntentStats {
    pub epoch_tag: String,
    pub intent_dim: usize,
    pub num_prototypes: usize,
    pub embedding_dim: usize,
    /// (table name, per-dimension means, per-dimension variances).
    pub tables: Vec<(String, Vec<f64>, Vec<f64>)>,
    pub c_user: Tensor2,
    pub c_item: Tensor2,
}

/// Two-pass population mean/variance of each column.
pub fn column_stats(t: &Tensor2) -> (Vec<f64>, Vec<f64>) {
    let n = t.rows() as f64;
    let mut means = vec![0.0; t.cols()];
    for r in 0..t.rows() {
        for (m, &v) in means.iter_mut().zip(t.row(r)) {
            *m += v;
        }
    }
    for m in &mut means {
        *m /= n;
    }
    let mut vars = vec![0.0; t.cols()];
    for r in 0..t.rows() {
        for ((va, &v), &m) in vars.iter_mut().zip(t.row(r)).zip(&means) {
            *va += (v - m) * (v - m);
        }
    }
    for v in &mut vars {
        *v /= n;
    }
    (means, vars)
}

/// Computes intent embeddings for every user and item and reduces them
/// to per-dimension statistics.
pub fn intent_stats(
    params: &ModelParameters,
    graph: &InteractionGraph,
    epoch_tag: &str,
) -> Result<IntentStats> {
    let tables = EntityTables::new(params, graph)?;
    let named = [
        ("h_user", &tables.h_user),
        ("h_user_x", &tables.h_user_x),
        ("h_item", &tables.h_item),
        ("h_item_x", &tables.h_item_x),
    ];
    let stats = named
        .iter()
        .map(|(name, t)| {
            let (mean, var) = column_stats(t);
            (name.to_string(), mean, var)
        })
        .collect();
    Ok(IntentStats {
        epoch_tag: epoch_tag.to_string(),
        intent_dim: params.config.intent_dim,
        num_prototypes: params.config.num_prototypes,
        embedding_dim: params.config.embedding_dim,
        tables: stats,
        c_user: params.c_user.clone(),
        c_item: params.c_item.clone(),
    })
}

impl IntentStats {
    /// Sectioned text export: header, four `dim mean variance` tables,
    /// then the raw prototype matrices row-major.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str("intentcf-intent-stats v1\n");
        let _ = writeln!(out, "epoch_tag {}", self.epoch_tag);
        let _ = writeln!(out, "d_prime {}", self.intent_dim);
        let _ = writeln!(out, "k {}", self.num_prototypes);
        let _ = writeln!(out, "d {}", self.embedding_dim);
        for (name, means, vars) in &self.tables {
            let _ = writeln!(out, "table {name}");
            for (dim, (m, v)) in means.iter().zip(vars).enumerate() {
                let _ = writeln!(out, "{dim} {m} {v}");
            }
        }
        for (name, t) in [("c_user", &self.c_user), ("c_item", &self.c_item)] {
            let _ = writeln!(out, "prototypes {name} {} {}", t.rows(), t.cols());
            for r in 0..t.rows() {
                let row: Vec<String> = t.row(r).iter().map(|v| v.to_string()).collect();
                let _ = writeln!(out, "{}", row.join(" "));
            }
        }
        out.push_str("end\n");
        out
    }

    pub fn write_to(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())
            .map_err(|e| Error::io(path.display().to_string(), e))
    }
}

/// Computes and writes the intent statistics export for one snapshot.
pub fn export_intent_stats(
    params: &ModelParameters,
    graph: &InteractionGraph,
    epoch_tag: &str,
    path: &Path,
) -> Result<()> {
    intent_stats(params, graph, epoch_tag)?.write_to(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ranked(items: &[u32]) -> RankedList {
        RankedList {
            user: 0,
            items: items.to_vec(),
            scores: (0..items.len()).map(|i| -(i as f64)).collect(),
        }
    }

    #[test]
    fn recall_counts_hits_over_relevant() {
        // relevant {a=1, b=2}, top-N contains only a.
        let r = ranked(&[1, 5, 6]);
        assert_eq!(recall_at(&r, &[1, 2], 3), 0.5);
        // relevant subset of top-N.
        assert_eq!(recall_at(&r, &[1, 5], 3), 1.0);
        // relevant {a,b,c}, N=2, top-2 = {a,c}.
        let r = ranked(&[1, 3, 2]);
        assert!((recall_at(&r, &[1, 2, 3], 2) - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn ndcg_ideal_and_empty_cases() {
        let r = ranked(&[4, 7, 9]);
        assert_eq!(ndcg_at(&r, &[4, 7], 3), 1.0);
        assert_eq!(ndcg_at(&r, &[8], 3), 0.0);
    }

    #[test]
    fn ndcg_hand_computed_case() {
        // relevant {a, b}, ranked [a, x, b], N=3:
        // DCG = 1 + 1/log2(4), IDCG = 1 + 1/log2(3).
        let r = ranked(&[10, 99, 20]);
        let expect = (1.0 + 1.0 / 4f64.log2()) / (1.0 + 1.0 / 3f64.log2());
        let got = ndcg_at(&r, &[10, 20], 3);
        assert!((got - expect).abs() < 1e-12);
        assert!((got - 0.9198).abs() < 1e-4);
    }

    #[test]
    fn cohort_buckets_cover_the_degree_axis() {
        // All users degree 5: one nonempty bucket.
        let rows = cohort_report(&[(5, 1.0), (5, 0.5)]);
        assert_eq!(rows.len(), 10);
        assert_eq!(rows[0].count, 2);
        assert_eq!(rows[0].mean_recall, Some(0.75));
        assert!(rows[1..].iter().all(|r| r.count == 0 && r.mean_recall.is_none()));

        // Boundary check: 15 and 95.
        let rows = cohort_report(&[(15, 1.0), (95, 0.0)]);
        assert_eq!(rows[1].count, 1);
        assert_eq!(rows[9].count, 1);
        assert_eq!(rows[9].hi, None);

        // Counts always sum to the number of users.
        let entries: Vec<(usize, f64)> = (0..100).map(|i| (i * 7 % 130, 0.5)).collect();
        let rows = cohort_report(&entries);
        assert_eq!(rows.iter().map(|r| r.count).sum::<usize>(), 100);
    }

    #[test]
    fn column_stats_match_two_pass_oracle() {
        let t = crate::tensor::xavier_init(50, 8, 123);
        let (means, vars) = column_stats(&t);
        for c in 0..8 {
            let col: Vec<f64> = (0..50).map(|r| t.get(r, c)).collect();
            let m = col.iter().sum::<f64>() / 50.0;
            let v = col.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / 50.0;
            assert!((means[c] - m).abs() < 1e-10);
            assert!((vars[c] - v).abs() < 1e-10);
            assert!(vars[c] >= 0.0);
        }
    }

    #[test]
    fn constant_rows_have_zero_variance() {
        let t = Tensor2::filled(12, 3, 0.4);
        let (means, vars) = column_stats(&t);
        assert!(means.iter().all(|&m| (m - 0.4).abs() < 1e-15));
        assert!(vars.iter().all(|&v| v.abs() < 1e-30));
    }
}
