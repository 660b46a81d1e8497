//! Chronological window training with Adam and validation-based model
//! selection.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{optimizer_step, AdamState, Tape};
use crate::ctdg::{chrono_split, CtdgStore, Split, SplitSpec, TemporalEvent};
use crate::error::{Error, Result};
use crate::eval::MetricReport;
use crate::model::{make_window, EvalSettings, Model};

/// Independent random streams derived from one run seed.
#[derive(Clone, Copy, Debug)]
pub enum Stream {
    Split = 1,
    TrainNegatives = 2,
    Noise = 3,
    Dropout = 4,
}

pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

/// A dataset with its chronological split.
#[derive(Clone, Debug)]
pub struct Experiment {
    pub full: CtdgStore,
    pub split: Split,
    pub data_hash: String,
}

impl Experiment {
    pub fn new(full: CtdgStore, spec: &SplitSpec, seed: u64) -> Result<Self> {
        let split = chrono_split(&full, spec, &mut stream_rng(seed, Stream::Split))?;
        if split.train.is_empty() {
            return Err(Error::Data("training split is empty".into()));
        }
        Ok(Experiment {
            data_hash: full.content_hash(),
            full,
            split,
        })
    }

    /// History visible while validating.
    pub fn observed_valid(&self) -> Result<CtdgStore> {
        self.split.train.merge(&self.split.valid)
    }

    /// History visible while testing.
    pub fn observed_test(&self) -> Result<CtdgStore> {
        self.observed_valid()?.merge(&self.split.test)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub window: usize,
    pub learning_rate: f64,
    pub train_negatives: usize,
    pub grad_clip: f64,
    /// Steps between validations; 0 validates once per pass over the windows.
    pub val_every: usize,
    /// Validation links scored per check; 0 disables model selection.
    pub val_queries: usize,
    pub eval: EvalSettings,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 200,
            window: 200,
            learning_rate: 1e-5,
            train_negatives: 1,
            grad_clip: 5.0,
            val_every: 0,
            val_queries: 200,
            eval: EvalSettings::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window < 2 {
            return Err(Error::Config("window must hold at least 2 events".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if !(self.grad_clip > 0.0) {
            return Err(Error::Config("grad_clip must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub epoch: usize,
    pub window: usize,
    pub loss: f64,
    pub nll: f64,
    pub kl: f64,
    pub grad_norm: f64,
    /// Validation MRR when a check ran after this step.
    pub val_mrr: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub steps_run: usize,
    pub windows_per_epoch: usize,
    pub best_step: Option<usize>,
    pub best_val_mrr: Option<f64>,
    pub train_events: usize,
    pub data_hash: String,
}

pub struct TrainOutcome {
    pub log: Vec<StepLog>,
    pub summary: TrainSummary,
    /// Set when training stopped early; the model then holds the last
    /// parameters that produced a finite loss and gradient.
    pub aborted: Option<Error>,
}

/// Training windows: consecutive chunks of `window` events.
pub fn windows(train: &CtdgStore, window: usize) -> Vec<&[TemporalEvent]> {
    train.events().chunks(window).filter(|c| c.len() >= 2).collect()
}

pub fn train(model: &mut Model, exp: &Experiment, cfg: &TrainConfig, seed: u64) -> Result<TrainOutcome> {
    cfg.validate()?;
    let graph = &exp.split.train;
    let chunks = windows(graph, cfg.window);
    if chunks.is_empty() && cfg.steps > 0 {
        return Err(Error::Data(format!("{} training events cannot fill a window", graph.len())));
    }
    let mut neg_rng = stream_rng(seed, Stream::TrainNegatives);
    let mut noise = stream_rng(seed, Stream::Noise);
    let mut drop_rng = stream_rng(seed, Stream::Dropout);
    let mut adam = AdamState::new(&model.params, cfg.learning_rate);
    let validate = cfg.val_queries > 0 && !exp.split.valid.is_empty();
    let val_every = if cfg.val_every > 0 { cfg.val_every } else { chunks.len().max(1) };
    let val_graph = if validate { Some(exp.observed_valid()?) } else { None };
    let val_links = &exp.split.valid.events()[..exp.split.valid.len().min(cfg.val_queries)];

    let mut log = Vec::with_capacity(cfg.steps);
    let mut best: Option<(usize, f64, crate::autodiff::ParamStore)> = None;
    let mut aborted = None;
    for step in 0..cfg.steps {
        let w = step % chunks.len();
        let window = make_window(chunks[w], graph.node_count(), cfg.train_negatives, &mut neg_rng)?;
        let tape = Tape::new();
        let p = model.params.bind(&tape);
        let dropout = (model.cfg.encoder.dropout > 0.0).then_some(&mut drop_rng);
        let terms = match model.window_loss(&p, graph, &window, &mut noise, dropout) {
            Ok(t) => t,
            Err(e @ (Error::NonFiniteLoss(_) | Error::Divergence { .. } | Error::Integration { .. })) => {
                aborted = Some(e);
                break;
            }
            Err(e) => return Err(e),
        };
        let grads = tape.backward(terms.loss)?;
        model.params.accumulate_grads(&p, &grads);
        let grad_norm = model.params.clip_grad_norm(cfg.grad_clip);
        if let Err(e) = optimizer_step(&mut model.params, &mut adam) {
            model.params.zero_grads();
            aborted = Some(e);
            break;
        }
        let mut entry = StepLog {
            step,
            epoch: step / chunks.len(),
            window: w,
            loss: terms.loss.value().item(),
            nll: terms.nll,
            kl: terms.kl,
            grad_norm,
            val_mrr: None,
        };
        if validate && ((step + 1) % val_every == 0 || step + 1 == cfg.steps) {
            let vg = val_graph.as_ref().expect("validation graph");
            let report = model.evaluate(vg, vg.events(), val_links, &cfg.eval, seed)?;
            entry.val_mrr = Some(report.mrr);
            if best.as_ref().is_none_or(|b| report.mrr > b.1) {
                best = Some((step, report.mrr, model.params.clone()));
            }
        }
        log.push(entry);
    }
    let (best_step, best_val_mrr) = match best {
        Some((s, m, params)) if aborted.is_none() => {
            model.params = params;
            (Some(s), Some(m))
        }
        Some((s, m, _)) => (Some(s), Some(m)),
        None => (None, None),
    };
    Ok(TrainOutcome {
        summary: TrainSummary {
            steps_run: log.len(),
            windows_per_epoch: chunks.len(),
            best_step,
            best_val_mrr,
            train_events: graph.len(),
            data_hash: exp.data_hash.clone(),
        },
        log,
        aborted,
    })
}

/// Test-split metrics, conditioning on every interaction observed before
/// each batch of queries.
pub fn evaluate_test(
    model: &Model,
    exp: &Experiment,
    cfg: &TrainConfig,
    max_queries: usize,
    seed: u64,
) -> Result<MetricReport> {
    let graph = exp.observed_test()?;
    let test = exp.split.test.events();
    let n = if max_queries == 0 { test.len() } else { test.len().min(max_queries) };
    model.evaluate(&graph, graph.events(), &test[..n], &cfg.eval, seed)
}
