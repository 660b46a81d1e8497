//! Flat TOML run configuration shared by every command.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::ctdg::{generate_synthetic, ingest_csv, CsvSchema, CtdgStore, Intensity, Spike, SplitSpec, SyntheticSpec};
use crate::decoder_loss::ElboConfig;
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::latent::AggregatorKind;
use crate::model::{EvalSettings, ModelConfig};
use crate::odeint::{GradMode, Method, SolverConfig};
use crate::train::TrainConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataSource {
    Synthetic,
    Csv,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IntensityKind {
    Homogeneous,
    Bursty,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GradModeChoice {
    /// Adjoint for adaptive solves, backprop for fixed-step ones.
    Auto,
    Backprop,
    Adjoint,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Seed for synthetic data; defaults to `seed`.
    pub data_seed: Option<u64>,
    pub variant: AggregatorKind,
    pub out_dir: PathBuf,

    pub data: DataSource,
    pub csv_path: Option<PathBuf>,
    /// Edge feature width used when the CSV has no feature columns.
    pub csv_edge_dim: usize,

    pub synth_nodes: usize,
    pub synth_communities: usize,
    pub synth_events: usize,
    pub synth_edge_dim: usize,
    pub synth_intensity: IntensityKind,
    pub synth_rate: f64,
    pub synth_duration: f64,
    /// `[start, end, multiplier]` triples for bursty arrivals.
    pub synth_spikes: Vec<[f64; 3]>,
    pub synth_intra_prob: f64,
    pub synth_triadic_prob: f64,
    pub synth_repeat_prob: f64,
    pub synth_drift_period: f64,
    pub synth_activity_skew: f64,

    pub train_ratio: f64,
    pub valid_ratio: f64,
    pub test_ratio: f64,
    pub sample_ratio: f64,

    pub node_dim: usize,
    pub time_dim: usize,
    pub layers: usize,
    pub neighbors: usize,
    pub dropout: f64,
    pub latent_dim: usize,
    pub ode_hidden: usize,
    pub decoder_hidden: usize,

    pub solver: Method,
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
    pub initial_step: f64,
    pub step_size: f64,
    pub grad_mode: GradModeChoice,

    pub mc_samples: usize,
    pub kl_weight: f64,

    pub learning_rate: f64,
    pub steps: usize,
    pub window: usize,
    pub train_negatives: usize,
    pub grad_clip: f64,
    pub val_every: usize,
    pub val_queries: usize,

    pub eval_negatives: usize,
    pub eval_samples: usize,
    /// Most recent history events forming the evaluation context.
    pub eval_context: usize,
    /// Queries per context refresh; 0 keeps one context for the whole split.
    pub eval_batch: usize,
    /// Test links scored; 0 scores all of them.
    pub test_queries: usize,
    pub time_groups: usize,

    pub variants: Vec<AggregatorKind>,
    pub seeds: Vec<u64>,
    pub ratios: Vec<f64>,
    /// Event counts for the timing sweep.
    pub bench_sizes: Vec<usize>,
    pub bench_nodes: usize,
    pub bench_repeats: usize,
    /// Worker threads for multi-run commands; 0 uses all cores.
    pub threads: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let synth = SyntheticSpec::default();
        let split = SplitSpec::default();
        let enc = EncoderConfig::default();
        let model = ModelConfig::default();
        let solver = SolverConfig::default();
        let train = TrainConfig::default();
        RunConfig {
            seed: 0,
            data_seed: None,
            variant: AggregatorKind::Gsnop,
            out_dir: PathBuf::from("out"),
            data: DataSource::Synthetic,
            csv_path: None,
            csv_edge_dim: CsvSchema::default().fallback_edge_dim,
            synth_nodes: synth.nodes,
            synth_communities: synth.communities,
            synth_events: synth.events,
            synth_edge_dim: synth.edge_dim,
            synth_intensity: IntensityKind::Homogeneous,
            synth_rate: 1.0,
            synth_duration: 2000.0,
            synth_spikes: Vec::new(),
            synth_intra_prob: synth.intra_prob,
            synth_triadic_prob: synth.triadic_prob,
            synth_repeat_prob: synth.repeat_prob,
            synth_drift_period: synth.drift_period,
            synth_activity_skew: synth.activity_skew,
            train_ratio: split.train_ratio,
            valid_ratio: split.valid_ratio,
            test_ratio: split.test_ratio,
            sample_ratio: split.sample_ratio,
            node_dim: enc.node_dim,
            time_dim: enc.time_dim,
            layers: enc.layers,
            neighbors: enc.neighbors,
            dropout: enc.dropout,
            latent_dim: model.latent_dim,
            ode_hidden: model.ode_hidden,
            decoder_hidden: model.decoder_hidden,
            solver: solver.method,
            rtol: solver.rtol,
            atol: solver.atol,
            max_steps: solver.max_steps,
            initial_step: solver.initial_step,
            step_size: solver.step_size,
            grad_mode: GradModeChoice::Auto,
            mc_samples: model.elbo.mc_samples,
            kl_weight: model.elbo.kl_weight,
            learning_rate: train.learning_rate,
            steps: train.steps,
            window: train.window,
            train_negatives: train.train_negatives,
            grad_clip: train.grad_clip,
            val_every: train.val_every,
            val_queries: train.val_queries,
            eval_negatives: train.eval.negatives,
            eval_samples: train.eval.samples,
            eval_context: train.eval.context,
            eval_batch: train.eval.batch,
            test_queries: 0,
            time_groups: train.eval.groups,
            variants: AggregatorKind::ALL.to_vec(),
            seeds: vec![0, 1, 2, 3, 4],
            ratios: vec![1.0, 0.5, 0.1],
            bench_sizes: vec![500, 750, 1000, 1500, 2000],
            bench_nodes: 200,
            bench_repeats: 5,
            threads: 0,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Serde(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.split_spec().validate()?;
        self.model_config(self.variant).validate()?;
        self.train_config().validate()?;
        if self.data == DataSource::Csv && self.csv_path.is_none() {
            return Err(Error::Config("data = \"csv\" requires csv_path".into()));
        }
        if self.data == DataSource::Synthetic {
            self.synthetic_spec().validate()?;
        }
        if self.ratios.iter().any(|&r| !(r > 0.0 && r <= 1.0)) {
            return Err(Error::Config(format!("ratios must lie in (0, 1], got {:?}", self.ratios)));
        }
        Ok(())
    }

    pub fn data_seed(&self) -> u64 {
        self.data_seed.unwrap_or(self.seed)
    }

    pub fn synthetic_spec(&self) -> SyntheticSpec {
        let intensity = match self.synth_intensity {
            IntensityKind::Homogeneous => Intensity::Homogeneous { rate: self.synth_rate },
            IntensityKind::Bursty => Intensity::Bursty {
                duration: self.synth_duration,
                spikes: self
                    .synth_spikes
                    .iter()
                    .map(|&[start, end, multiplier]| Spike { start, end, multiplier })
                    .collect(),
            },
        };
        SyntheticSpec {
            nodes: self.synth_nodes,
            communities: self.synth_communities,
            events: self.synth_events,
            edge_dim: self.synth_edge_dim,
            intensity,
            intra_prob: self.synth_intra_prob,
            triadic_prob: self.synth_triadic_prob,
            repeat_prob: self.synth_repeat_prob,
            drift_period: self.synth_drift_period,
            activity_skew: self.synth_activity_skew,
        }
    }

    pub fn split_spec(&self) -> SplitSpec {
        SplitSpec {
            train_ratio: self.train_ratio,
            valid_ratio: self.valid_ratio,
            test_ratio: self.test_ratio,
            sample_ratio: self.sample_ratio,
        }
    }

    pub fn model_config(&self, variant: AggregatorKind) -> ModelConfig {
        ModelConfig {
            variant,
            encoder: EncoderConfig {
                node_dim: self.node_dim,
                time_dim: self.time_dim,
                layers: self.layers,
                neighbors: self.neighbors,
                dropout: self.dropout,
            },
            latent_dim: self.latent_dim,
            ode_hidden: self.ode_hidden,
            decoder_hidden: self.decoder_hidden,
            solver: SolverConfig {
                method: self.solver,
                rtol: self.rtol,
                atol: self.atol,
                max_steps: self.max_steps,
                initial_step: self.initial_step,
                step_size: self.step_size,
            },
            grad_mode: match self.grad_mode {
                GradModeChoice::Auto => None,
                GradModeChoice::Backprop => Some(GradMode::Backprop),
                GradModeChoice::Adjoint => Some(GradMode::Adjoint),
            },
            elbo: ElboConfig {
                mc_samples: self.mc_samples,
                kl_weight: self.kl_weight,
            },
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            steps: self.steps,
            window: self.window,
            learning_rate: self.learning_rate,
            train_negatives: self.train_negatives,
            grad_clip: self.grad_clip,
            val_every: self.val_every,
            val_queries: self.val_queries,
            eval: EvalSettings {
                negatives: self.eval_negatives,
                samples: self.eval_samples,
                groups: self.time_groups,
                context: self.eval_context,
                context_negatives: self.train_negatives,
                batch: self.eval_batch,
            },
        }
    }

    /// Loads or generates the full event stream.
    pub fn load_data(&self) -> Result<CtdgStore> {
        match self.data {
            DataSource::Synthetic => generate_synthetic(&self.synthetic_spec(), self.data_seed()),
            DataSource::Csv => {
                let path = self.csv_path.as_ref().expect("validated");
                let schema = CsvSchema {
                    fallback_edge_dim: self.csv_edge_dim,
                    feature_seed: self.data_seed(),
                };
                Ok(ingest_csv(path, &schema)?.store)
            }
        }
    }
}
