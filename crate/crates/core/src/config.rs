//! Flat key = value run configuration. Lines starting with '#' are comments;
//! command-line flags override file values. Unknown keys are rejected so
//! typos fail loudly instead of silently falling back to defaults.

use crate::consensus::EmConfig;
use crate::error::{MlcsError, Result};
use crate::eval::QueryMode;
use crate::search::{ScoreConfig, Similarity};
use crate::synth::SyntheticSpec;
use crate::training::TrainConfig;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub layer_paths: Vec<PathBuf>,
    pub feature_paths: Vec<PathBuf>,
    pub communities_path: Option<PathBuf>,
    pub id_map_path: Option<PathBuf>,
    pub synth: SyntheticSpec,
    pub train: TrainConfig,
    pub score: ScoreConfig,
    pub em: EmConfig,
    pub seed: u64,
    pub query_mode: QueryMode,
    pub queries: usize,
    pub out_dir: PathBuf,
    pub feature_buckets: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            layer_paths: Vec::new(),
            feature_paths: Vec::new(),
            communities_path: None,
            id_map_path: None,
            synth: SyntheticSpec {
                community_sizes: vec![100, 100, 100],
                r_max: 3,
                p_in: 0.3,
                p_out: 0.02,
                layer_noise: 0.1,
                feature_buckets: 8,
                bump_scale: 1.0,
            },
            train: TrainConfig::default(),
            score: ScoreConfig::default(),
            em: EmConfig::default(),
            seed: 7,
            query_mode: QueryMode::Transductive,
            queries: 30,
            out_dir: PathBuf::from("out"),
            feature_buckets: 8,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse::<T>().map_err(|_| {
        MlcsError::Config(format!("invalid value '{value}' for key '{key}'"))
    })
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(MlcsError::Config(format!(
            "invalid boolean '{value}' for key '{key}'"
        ))),
    }
}

fn parse_usize_list(key: &str, value: &str) -> Result<Vec<usize>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse::<usize>(key, s))
        .collect()
}

fn parse_paths(value: &str) -> Vec<PathBuf> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(PathBuf::from)
        .collect()
}

impl RunConfig {
    /// A synthetic instance is used whenever no layer files are configured.
    pub fn uses_synthetic(&self) -> bool {
        self.layer_paths.is_empty()
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let mut cfg = RunConfig::default();
        cfg.load_file(path)?;
        Ok(cfg)
    }

    pub fn load_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| MlcsError::io(path, e))?;
        for (idx, line) in text.lines().enumerate() {
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let Some((key, value)) = trimmed.split_once('=') else {
                return Err(MlcsError::Parse {
                    path: path.display().to_string(),
                    line: idx + 1,
                    message: "expected 'key = value'".into(),
                });
            };
            self.set(key.trim(), value.trim()).map_err(|e| MlcsError::Parse {
                path: path.display().to_string(),
                line: idx + 1,
                message: e.to_string(),
            })?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "layers" => self.layer_paths = parse_paths(value),
            "features" => self.feature_paths = parse_paths(value),
            "communities" => self.communities_path = Some(PathBuf::from(value)),
            "id_map" => self.id_map_path = Some(PathBuf::from(value)),

            "synth.communities" => self.synth.community_sizes = parse_usize_list(key, value)?,
            "synth.layers" => self.synth.r_max = parse(key, value)?,
            "synth.p_in" => self.synth.p_in = parse(key, value)?,
            "synth.p_out" => self.synth.p_out = parse(key, value)?,
            "synth.noise" => self.synth.layer_noise = parse(key, value)?,
            "synth.bump_scale" => self.synth.bump_scale = parse(key, value)?,

            "diffusion.t" => self.train.heat.t = parse(key, value)?,
            "diffusion.threshold" => self.train.heat.theta_threshold = parse(key, value)?,
            "diffusion.omega_loop" => self.train.omega_loop = parse(key, value)?,
            "diffusion.k_max" => self.train.k_max = parse(key, value)?,

            "encoder.hidden_dim" => self.train.hidden_dim = parse(key, value)?,
            "encoder.share_layer_ffns" => self.train.share_layer_ffns = parse_bool(key, value)?,
            "encoder.activation" => self.train.activation = parse(key, value)?,

            "loss.alpha" => self.train.loss.alpha = parse(key, value)?,
            "loss.beta" => self.train.loss.beta = parse(key, value)?,
            "loss.margin" => self.train.loss.margin = parse(key, value)?,
            "loss.neg_samples" => self.train.loss.neg_samples_per_node = parse(key, value)?,
            "loss.epochs" => self.train.loss.epochs = parse(key, value)?,
            "loss.patience" => self.train.loss.patience_window = parse(key, value)?,
            "loss.min_improvement" => self.train.loss.min_improvement = parse(key, value)?,
            "loss.lr_init" => self.train.loss.lr_init = parse(key, value)?,
            "loss.lr_peak" => self.train.loss.lr_peak = parse(key, value)?,
            "loss.weight_decay" => self.train.loss.weight_decay = parse(key, value)?,
            "loss.exact_pairs" => self.train.loss.exact_pairs = parse_bool(key, value)?,
            "loss.literal_hinge" => self.train.loss.literal_negated_hinge = parse_bool(key, value)?,
            "loss.pearson_per_column" => self.train.loss.pearson_per_column = parse_bool(key, value)?,

            "score.lambda" => self.score.lambda = parse(key, value)?,
            "score.tau" => self.score.tau = parse(key, value)?,
            "score.similarity" => self.score.similarity = parse::<Similarity>(key, value)?,
            "score.connected_filter" => self.score.connected_filter = parse_bool(key, value)?,

            "em.tolerance" => self.em.tolerance = parse(key, value)?,
            "em.max_iterations" => self.em.max_iterations = parse(key, value)?,
            "em.clamp_floor" => self.em.clamp_floor = parse(key, value)?,

            "seed" => self.seed = parse(key, value)?,
            "mode" => self.query_mode = parse(key, value)?,
            "queries" => self.queries = parse(key, value)?,
            "out" => self.out_dir = PathBuf::from(value),
            "feature_buckets" => self.feature_buckets = parse(key, value)?,

            other => {
                return Err(MlcsError::Config(format!("unknown config key '{other}'")));
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.train.heat.validate()?;
        self.train.loss.validate()?;
        self.score.validate()?;
        self.em.validate()?;
        if self.uses_synthetic() {
            self.synth.validate()?;
        } else {
            for p in self.layer_paths.iter().chain(self.feature_paths.iter()) {
                if !p.exists() {
                    return Err(MlcsError::Config(format!(
                        "configured path does not exist: {}",
                        p.display()
                    )));
                }
            }
            if let Some(p) = &self.communities_path {
                if !p.exists() {
                    return Err(MlcsError::Config(format!(
                        "communities file does not exist: {}",
                        p.display()
                    )));
                }
            }
        }
        if self.queries == 0 {
            return Err(MlcsError::Config("queries must be positive".into()));
        }
        Ok(())
    }
}
