//! Query generation and F1 evaluation against ground-truth communities.

use crate::error::{MlcsError, Result};
use crate::graph::Query;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum QueryMode {
    #[default]
    Transductive,
    Inductive,
    Hybrid,
}

impl std::str::FromStr for QueryMode {
    type Err = MlcsError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "transductive" => Ok(QueryMode::Transductive),
            "inductive" => Ok(QueryMode::Inductive),
            "hybrid" => Ok(QueryMode::Hybrid),
            other => Err(MlcsError::Config(format!("unknown query mode '{other}'"))),
        }
    }
}

impl std::fmt::Display for QueryMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            QueryMode::Transductive => "transductive",
            QueryMode::Inductive => "inductive",
            QueryMode::Hybrid => "hybrid",
        };
        write!(f, "{name}")
    }
}

/// P = |pred∩truth|/|pred|, R = |pred∩truth|/|truth|, F1 = 2PR/(P+R);
/// empty predictions score 0, empty truth is a caller error.
pub fn f1_score(pred: &[usize], truth: &[usize]) -> Result<(f64, f64, f64)> {
    if truth.is_empty() {
        return Err(MlcsError::Contract("empty ground-truth community".into()));
    }
    let truth_set: std::collections::BTreeSet<usize> = truth.iter().copied().collect();
    let pred_set: std::collections::BTreeSet<usize> = pred.iter().copied().collect();
    let hit = pred_set.intersection(&truth_set).count() as f64;
    let precision = if pred_set.is_empty() {
        0.0
    } else {
        hit / pred_set.len() as f64
    };
    let recall = hit / truth_set.len() as f64;
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok((precision, recall, f1))
}

/// Queries of 1–3 distinct nodes sampled from ground-truth communities.
///
/// Transductive draws from every community. Inductive splits the communities
/// about 1:1 (odd counts round up on the held-in side) and draws only from
/// the held-out half. Hybrid splits the same way but draws from all.
pub fn generate_queries(
    communities: &[Vec<usize>],
    mode: QueryMode,
    count: usize,
    seed: u64,
) -> Result<Vec<(Query, Vec<usize>)>> {
    if communities.is_empty() || communities.iter().any(Vec::is_empty) {
        return Err(MlcsError::Config("communities must be non-empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pool: Vec<usize> = match mode {
        QueryMode::Transductive => (0..communities.len()).collect(),
        QueryMode::Inductive | QueryMode::Hybrid => {
            if communities.len() < 2 {
                return Err(MlcsError::Config(
                    "community split needs at least two communities".into(),
                ));
            }
            let mut order: Vec<usize> = (0..communities.len()).collect();
            for i in (1..order.len()).rev() {
                let j = rng.random_range(0..=i);
                order.swap(i, j);
            }
            let train_count = communities.len().div_ceil(2);
            match mode {
                QueryMode::Inductive => order[train_count..].to_vec(),
                _ => (0..communities.len()).collect(),
            }
        }
    };
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let c = &communities[pool[rng.random_range(0..pool.len())]];
        let size = rng.random_range(1..=3usize).min(c.len());
        let mut picked = Vec::with_capacity(size);
        while picked.len() < size {
            let v = c[rng.random_range(0..c.len())];
            if !picked.contains(&v) {
                picked.push(v);
            }
        }
        out.push((Query::new(picked)?, c.clone()));
    }
    Ok(out)
}

/// Per-query outcome of the full pipeline.
#[derive(Debug, Clone, Serialize)]
pub struct QueryOutcome {
    pub query: Vec<usize>,
    pub consensus: Vec<usize>,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub per_layer_f1: Vec<f64>,
    pub vote_f1: f64,
    pub em_iterations: usize,
    pub em_converged: bool,
}

#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct StageTimings {
    pub load_secs: f64,
    pub train_secs: f64,
    pub search_secs: f64,
    pub merge_secs: f64,
    pub total_secs: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub outcomes: Vec<QueryOutcome>,
    pub mean_f1: f64,
    pub std_f1: f64,
    pub mean_precision: f64,
    pub mean_recall: f64,
    pub mean_vote_f1: f64,
    pub per_layer_mean_f1: Vec<f64>,
    pub timings: StageTimings,
}

impl EvalReport {
    pub fn from_outcomes(outcomes: Vec<QueryOutcome>, timings: StageTimings) -> Self {
        let count = outcomes.len().max(1) as f64;
        let mean_f1 = outcomes.iter().map(|o| o.f1).sum::<f64>() / count;
        let std_f1 = (outcomes
            .iter()
            .map(|o| (o.f1 - mean_f1) * (o.f1 - mean_f1))
            .sum::<f64>()
            / count)
            .sqrt();
        let mean_precision = outcomes.iter().map(|o| o.precision).sum::<f64>() / count;
        let mean_recall = outcomes.iter().map(|o| o.recall).sum::<f64>() / count;
        let mean_vote_f1 = outcomes.iter().map(|o| o.vote_f1).sum::<f64>() / count;
        let layer_count = outcomes.first().map_or(0, |o| o.per_layer_f1.len());
        let per_layer_mean_f1 = (0..layer_count)
            .map(|r| outcomes.iter().map(|o| o.per_layer_f1[r]).sum::<f64>() / count)
            .collect();
        EvalReport {
            outcomes,
            mean_f1,
            std_f1,
            mean_precision,
            mean_recall,
            mean_vote_f1,
            per_layer_mean_f1,
            timings,
        }
    }

    pub fn best_layer_mean_f1(&self) -> f64 {
        self.per_layer_mean_f1
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// One CSV row per query; deterministic for a fixed run.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "query_nodes,f1,precision,recall,per_layer_f1,vote_f1,em_iterations\n",
        );
        for o in &self.outcomes {
            let query = o
                .query
                .iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join(";");
            let layers = o
                .per_layer_f1
                .iter()
                .map(|v| format!("{v:.6}"))
                .collect::<Vec<_>>()
                .join(";");
            out.push_str(&format!(
                "{},{:.6},{:.6},{:.6},{},{:.6},{}\n",
                query, o.f1, o.precision, o.recall, layers, o.vote_f1, o.em_iterations
            ));
        }
        out
    }

    pub fn summary_json(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Summary<'a> {
            queries: usize,
            mean_f1: f64,
            std_f1: f64,
            mean_precision: f64,
            mean_recall: f64,
            mean_vote_f1: f64,
            per_layer_mean_f1: &'a [f64],
            best_layer_mean_f1: f64,
            timings: &'a StageTimings,
        }
        serde_json::to_string_pretty(&Summary {
            queries: self.outcomes.len(),
            mean_f1: self.mean_f1,
            std_f1: self.std_f1,
            mean_precision: self.mean_precision,
            mean_recall: self.mean_recall,
            mean_vote_f1: self.mean_vote_f1,
            per_layer_mean_f1: &self.per_layer_mean_f1,
            best_layer_mean_f1: self.best_layer_mean_f1(),
            timings: &self.timings,
        })
        .map_err(|e| MlcsError::Numeric(format!("summary serialization: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn f1_identity_and_disjoint() {
        let (p, r, f1) = f1_score(&[1, 2, 3], &[1, 2, 3]).unwrap();
        assert_eq!((p, r, f1), (1.0, 1.0, 1.0));
        let (_, _, zero) = f1_score(&[4, 5], &[1, 2]).unwrap();
        assert_eq!(zero, 0.0);
        let (p, _, f1) = f1_score(&[], &[1]).unwrap();
        assert_eq!(p, 0.0);
        assert_eq!(f1, 0.0);
    }

    #[test]
    fn f1_partial_overlap() {
        let (p, r, f1) = f1_score(&[1, 2, 3], &[2, 3, 4]).unwrap();
        assert!((p - 2.0 / 3.0).abs() < 1e-12);
        assert!((r - 2.0 / 3.0).abs() < 1e-12);
        assert!((f1 - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn f1_empty_truth_is_error() {
        assert!(matches!(
            f1_score(&[1], &[]),
            Err(MlcsError::Contract(_))
        ));
    }

    #[test]
    fn f1_symmetric_under_relabeling() {
        let (p1, r1, f1a) = f1_score(&[0, 1, 5], &[1, 5, 9]).unwrap();
        // relabel v -> v + 100
        let (p2, r2, f1b) = f1_score(&[100, 101, 105], &[101, 105, 109]).unwrap();
        assert_eq!((p1, r1, f1a), (p2, r2, f1b));
    }

    #[test]
    fn transductive_queries_stay_inside_their_community() {
        let communities = vec![vec![0, 1, 2]];
        let queries = generate_queries(&communities, QueryMode::Transductive, 20, 7).unwrap();
        for (q, truth) in &queries {
            assert!(q.nodes().iter().all(|v| truth.contains(v)));
            assert!((1..=3).contains(&q.nodes().len()));
        }
    }

    #[test]
    fn query_generation_is_deterministic() {
        let communities = vec![vec![0, 1, 2, 3], vec![4, 5, 6], vec![7, 8]];
        let a = generate_queries(&communities, QueryMode::Hybrid, 10, 3).unwrap();
        let b = generate_queries(&communities, QueryMode::Hybrid, 10, 3).unwrap();
        for ((qa, ta), (qb, tb)) in a.iter().zip(b.iter()) {
            assert_eq!(qa.nodes(), qb.nodes());
            assert_eq!(ta, tb);
        }
    }

    #[test]
    fn inductive_needs_two_communities_and_uses_held_out() {
        let single = vec![vec![0, 1]];
        assert!(matches!(
            generate_queries(&single, QueryMode::Inductive, 5, 1),
            Err(MlcsError::Config(_))
        ));
        let communities = vec![vec![0, 1], vec![2, 3], vec![4, 5]];
        // ceil(3/2) = 2 train, 1 test: all queries come from one community
        let queries = generate_queries(&communities, QueryMode::Inductive, 30, 5).unwrap();
        let mut sources: Vec<Vec<usize>> = queries.iter().map(|(_, t)| t.clone()).collect();
        sources.dedup();
        assert_eq!(sources.len(), 1);
    }

    #[test]
    fn report_aggregates() {
        let outcomes = vec![
            QueryOutcome {
                query: vec![0],
                consensus: vec![0, 1],
                precision: 1.0,
                recall: 0.5,
                f1: 2.0 / 3.0,
                per_layer_f1: vec![0.5, 0.7],
                vote_f1: 0.6,
                em_iterations: 3,
                em_converged: true,
            },
            QueryOutcome {
                query: vec![1, 2],
                consensus: vec![1],
                precision: 1.0,
                recall: 1.0,
                f1: 1.0,
                per_layer_f1: vec![0.9, 0.4],
                vote_f1: 1.0,
                em_iterations: 2,
                em_converged: true,
            },
        ];
        let report = EvalReport::from_outcomes(outcomes, StageTimings::default());
        assert!((report.mean_f1 - (2.0 / 3.0 + 1.0) / 2.0).abs() < 1e-12);
        assert!((report.per_layer_mean_f1[0] - 0.7).abs() < 1e-12);
        assert!((report.best_layer_mean_f1() - 0.7).abs() < 1e-12);
        let csv = report.to_csv();
        assert!(csv.starts_with("query_nodes,"));
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.contains("1;2"));
    }
}
