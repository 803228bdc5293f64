//! Command-line frontend: synthetic data generation, encoder training,
//! per-layer community search, EM consensus merging, F1 evaluation, and the
//! end-to-end pipeline.

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use mlcs::config::RunConfig;
use mlcs::consensus::{consensus_json, extract_community, run_em, DecisionTensor};
use mlcs::diffusion;
use mlcs::encoder::{encode_all, EncoderConfig, EncoderParams};
use mlcs::eval::{f1_score, generate_queries};
use mlcs::graph::{load_communities, load_queries, IdMap, MultilayerGraph};
use mlcs::pipeline::{load_or_synthesize, run_pipeline, write_outputs};
use mlcs::search::{layer_community_scores, scores_csv, search_all_layers, LayerCommunityJson};
use mlcs::synth::synthetic_multilayer;
use mlcs::training::train_with_diffusion;
use serde::Deserialize;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(
    name = "mlcs",
    about = "Ensemble-based community search over multilayer graphs",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Run configuration file (key = value lines).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. --set loss.alpha=0.5 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Random seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory override.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl ConfigArgs {
    fn build(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::from_file(path)
                .with_context(|| format!("loading config {}", path.display()))?,
            None => RunConfig::default(),
        };
        for pair in &self.sets {
            let (key, value) = pair
                .split_once('=')
                .with_context(|| format!("--set expects KEY=VALUE, got '{pair}'"))?;
            cfg.set(key.trim(), value.trim())?;
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(out) = &self.out {
            cfg.out_dir = out.clone();
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a planted-partition multilayer dataset and write it in the
    /// edge/feature/communities file formats.
    Generate {
        #[command(flatten)]
        config: ConfigArgs,
        /// Also emit a queries file with this many queries.
        #[arg(long)]
        emit_queries: Option<usize>,
    },
    /// Train the encoder and write the model checkpoint plus the per-epoch
    /// loss report.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Load a trained model and emit per-layer communities for each query as
    /// JSON lines, plus optional per-node score dumps.
    Search {
        #[command(flatten)]
        config: ConfigArgs,
        /// Model checkpoint written by `train`.
        #[arg(long)]
        model: PathBuf,
        /// Queries file (one query per line, whitespace-separated ids).
        #[arg(long)]
        queries_file: PathBuf,
        /// Also write per-node score CSVs (one file per query and layer).
        #[arg(long)]
        dump_scores: bool,
    },
    /// Merge per-layer community JSON lines into consensus communities.
    Merge {
        #[command(flatten)]
        config: ConfigArgs,
        /// JSON-lines file produced by `search`.
        #[arg(long)]
        layer_communities: PathBuf,
    },
    /// Score predicted communities against ground truth.
    Evaluate {
        /// JSON-lines predictions carrying `query` and `nodes` fields.
        #[arg(long)]
        predictions: PathBuf,
        /// Ground-truth communities file.
        #[arg(long)]
        communities: PathBuf,
        /// Output directory.
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Optional id-mapping file (one label per line) applied to output.
        #[arg(long)]
        id_map: Option<PathBuf>,
    },
    /// Full run: load or synthesize, train, search, merge, evaluate.
    Pipeline {
        #[command(flatten)]
        config: ConfigArgs,
        /// Query generation mode: transductive, inductive, or hybrid.
        #[arg(long)]
        mode: Option<String>,
        /// Number of evaluation queries.
        #[arg(long)]
        queries: Option<usize>,
    },
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn cmd_generate(config: ConfigArgs, emit_queries: Option<usize>) -> Result<()> {
    let cfg = config.build()?;
    let (graph, communities) = synthetic_multilayer(&cfg.synth, cfg.seed)?;
    ensure_dir(&cfg.out_dir)?;

    for r in 0..graph.r_max() {
        let path = cfg.out_dir.join(format!("layer_{r}.txt"));
        let mut file = fs::File::create(&path)?;
        mlcs::graph::write_layer(graph.layer(r), graph.n(), &mut file)?;
    }
    for r in 0..graph.r_max() {
        let mut text = String::new();
        let x = graph.feature(r);
        for i in 0..x.rows() {
            let row: Vec<String> = x.row(i).iter().map(|v| v.to_string()).collect();
            text.push_str(&row.join(" "));
            text.push('\n');
        }
        fs::write(cfg.out_dir.join(format!("features_{r}.txt")), text)?;
    }
    let mut communities_text = String::new();
    for c in &communities {
        let row: Vec<String> = c.iter().map(|v| v.to_string()).collect();
        communities_text.push_str(&row.join(" "));
        communities_text.push('\n');
    }
    fs::write(cfg.out_dir.join("communities.txt"), communities_text)?;

    if let Some(count) = emit_queries {
        let queries = generate_queries(&communities, cfg.query_mode, count, cfg.seed)?;
        let mut text = String::new();
        for (q, _) in &queries {
            let row: Vec<String> = q.nodes().iter().map(|v| v.to_string()).collect();
            text.push_str(&row.join(" "));
            text.push('\n');
        }
        fs::write(cfg.out_dir.join("queries.txt"), text)?;
    }

    println!(
        "generated {} nodes, {} layers, {} communities -> {}",
        graph.n(),
        graph.r_max(),
        communities.len(),
        cfg.out_dir.display()
    );
    Ok(())
}

fn load_graph(cfg: &RunConfig) -> Result<MultilayerGraph> {
    Ok(load_or_synthesize(cfg)?.0)
}

fn cmd_train(config: ConfigArgs) -> Result<()> {
    let cfg = config.build()?;
    let graph = load_graph(&cfg)?;
    let graph_diffusion =
        diffusion::precompute(&graph, &cfg.train.heat, cfg.train.omega_loop, cfg.train.k_max)?;
    let (params, report) = train_with_diffusion(&graph, &graph_diffusion, &cfg.train, cfg.seed)?;
    ensure_dir(&cfg.out_dir)?;
    params.save(&cfg.out_dir.join("model.json"))?;
    fs::write(cfg.out_dir.join("train_report.csv"), report.to_csv())?;
    let last = report.epochs.last().expect("at least one epoch");
    println!(
        "trained {} epochs in {:.2}s (final total loss {:.6}) -> {}",
        report.stopped_epoch,
        report.wall_time_secs,
        last.total,
        cfg.out_dir.display()
    );
    Ok(())
}

fn encoder_config(cfg: &RunConfig, graph: &MultilayerGraph) -> EncoderConfig {
    let mut enc = EncoderConfig::new(
        graph.feat_dim(),
        cfg.train.hidden_dim,
        graph.r_max(),
        cfg.train.k_max,
    );
    enc.share_layer_ffns = cfg.train.share_layer_ffns;
    enc.activation = cfg.train.activation;
    enc
}

fn cmd_search(
    config: ConfigArgs,
    model: PathBuf,
    queries_file: PathBuf,
    dump_scores: bool,
) -> Result<()> {
    let cfg = config.build()?;
    let graph = load_graph(&cfg)?;
    let params = EncoderParams::load(encoder_config(&cfg, &graph), &model)?;
    let graph_diffusion =
        diffusion::precompute(&graph, &cfg.train.heat, cfg.train.omega_loop, cfg.train.k_max)?;
    let diffused: Vec<_> = graph_diffusion.diffused.iter().map(|d| d.h.clone()).collect();
    let reps = encode_all(&params, &diffused, &graph_diffusion.hop_stacks)?;
    let queries = load_queries(&queries_file)?;
    ensure_dir(&cfg.out_dir)?;

    let jsonl_path = cfg.out_dir.join("layer_communities.jsonl");
    let mut jsonl = fs::File::create(&jsonl_path)?;
    for (qi, query) in queries.iter().enumerate() {
        query.validate(graph.n())?;
        let (communities, _) = search_all_layers(query, &reps, &graph, &cfg.score)?;
        for c in &communities {
            let record = LayerCommunityJson {
                query: query.nodes(),
                layer: c.layer,
                nodes: &c.nodes,
                esg: c.esg,
                n: graph.n(),
            };
            writeln!(jsonl, "{}", serde_json::to_string(&record)?)?;
        }
        if dump_scores {
            for r in 0..graph.r_max() {
                let score = layer_community_scores(query, &reps.c[r], &reps.p[r], &cfg.score)?;
                fs::write(
                    cfg.out_dir.join(format!("scores_q{qi}_layer{r}.csv")),
                    scores_csv(&score),
                )?;
            }
        }
    }
    println!(
        "searched {} queries over {} layers -> {}",
        queries.len(),
        graph.r_max(),
        jsonl_path.display()
    );
    Ok(())
}

#[derive(Deserialize)]
struct LayerRecord {
    query: Vec<usize>,
    layer: usize,
    nodes: Vec<usize>,
    #[allow(dead_code)]
    esg: f64,
    n: usize,
}

fn cmd_merge(config: ConfigArgs, layer_communities: PathBuf) -> Result<()> {
    let cfg = config.build()?;
    let text = fs::read_to_string(&layer_communities)
        .with_context(|| format!("reading {}", layer_communities.display()))?;
    let mut records: Vec<LayerRecord> = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: LayerRecord = serde_json::from_str(line)
            .with_context(|| format!("parsing line {} of layer communities", idx + 1))?;
        records.push(record);
    }
    if records.is_empty() {
        bail!("no layer community records to merge");
    }

    // group consecutive records by query
    let mut groups: Vec<Vec<LayerRecord>> = Vec::new();
    for record in records {
        match groups.last_mut() {
            Some(group) if group[0].query == record.query => group.push(record),
            _ => groups.push(vec![record]),
        }
    }

    ensure_dir(&cfg.out_dir)?;
    let out_path = cfg.out_dir.join("consensus.jsonl");
    let mut out = fs::File::create(&out_path)?;
    for group in &groups {
        let n = group[0].n;
        let r_max = group.iter().map(|g| g.layer).max().unwrap_or(0) + 1;
        let mut memberships = vec![Vec::new(); r_max];
        for record in group {
            memberships[record.layer] = record.nodes.clone();
        }
        let tensor = DecisionTensor::from_layer_memberships(n, &memberships)?;
        let state = run_em(&tensor, &cfg.em)?;
        let nodes = extract_community(&state, &group[0].query);
        let json = consensus_json(&state, &group[0].query, nodes);
        writeln!(out, "{}", serde_json::to_string(&json)?)?;
    }
    println!("merged {} queries -> {}", groups.len(), out_path.display());
    Ok(())
}

#[derive(Deserialize)]
struct PredictionRecord {
    query: Vec<usize>,
    nodes: Vec<usize>,
}

fn cmd_evaluate(
    predictions: PathBuf,
    communities: PathBuf,
    out_dir: PathBuf,
    id_map: Option<PathBuf>,
) -> Result<()> {
    let text = fs::read_to_string(&predictions)
        .with_context(|| format!("reading {}", predictions.display()))?;
    let truth_communities = load_communities(&communities)?;
    let id_map = id_map.map(|p| IdMap::load(&p)).transpose()?;

    let mut rows = String::from("query_nodes,f1,precision,recall\n");
    let mut f1s = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: PredictionRecord = serde_json::from_str(line)
            .with_context(|| format!("parsing prediction line {}", idx + 1))?;
        // ground truth: the community with the largest query overlap
        let truth = truth_communities
            .iter()
            .max_by_key(|c| record.query.iter().filter(|q| c.contains(q)).count())
            .context("no ground-truth communities")?;
        let (p, r, f1) = f1_score(&record.nodes, truth)?;
        let query_text = match &id_map {
            Some(map) => record
                .query
                .iter()
                .map(|&v| map.label(v).unwrap_or("?").to_string())
                .collect::<Vec<_>>()
                .join(";"),
            None => record
                .query
                .iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join(";"),
        };
        rows.push_str(&format!("{query_text},{f1:.6},{p:.6},{r:.6}\n"));
        f1s.push(f1);
    }
    if f1s.is_empty() {
        bail!("no predictions to evaluate");
    }
    ensure_dir(&out_dir)?;
    fs::write(out_dir.join("evaluation.csv"), &rows)?;
    let mean = f1s.iter().sum::<f64>() / f1s.len() as f64;
    let std = (f1s.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / f1s.len() as f64).sqrt();
    let summary = serde_json::json!({
        "queries": f1s.len(),
        "mean_f1": mean,
        "std_f1": std,
    });
    fs::write(
        out_dir.join("evaluation_summary.json"),
        serde_json::to_string_pretty(&summary)?,
    )?;
    println!("evaluated {} predictions, mean F1 {mean:.4}", f1s.len());
    Ok(())
}

fn cmd_pipeline(config: ConfigArgs, mode: Option<String>, queries: Option<usize>) -> Result<()> {
    let mut cfg = config.build()?;
    if let Some(mode) = mode {
        cfg.query_mode = mode.parse()?;
    }
    if let Some(q) = queries {
        cfg.queries = q;
    }
    let out = run_pipeline(&cfg)?;
    write_outputs(&out, &cfg.out_dir)?;
    println!(
        "pipeline done: {} queries, mean F1 {:.4} (vote {:.4}, best layer {:.4}), total {:.1}s -> {}",
        out.report.outcomes.len(),
        out.report.mean_f1,
        out.report.mean_vote_f1,
        out.report.best_layer_mean_f1(),
        out.report.timings.total_secs,
        cfg.out_dir.display()
    );
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Generate {
            config,
            emit_queries,
        } => cmd_generate(config, emit_queries),
        Command::Train { config } => cmd_train(config),
        Command::Search {
            config,
            model,
            queries_file,
            dump_scores,
        } => cmd_search(config, model, queries_file, dump_scores),
        Command::Merge {
            config,
            layer_communities,
        } => cmd_merge(config, layer_communities),
        Command::Evaluate {
            predictions,
            communities,
            out,
            id_map,
        } => cmd_evaluate(predictions, communities, out, id_map),
        Command::Pipeline {
            config,
            mode,
            queries,
        } => cmd_pipeline(config, mode, queries),
    }
}
