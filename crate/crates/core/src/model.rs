//! The assembled link predictor: encoder, aggregator, latent dynamics and
//! decoder over one parameter store.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Bound, Checkpoint, CheckpointMeta, ParamStore, Tape, Tensor, Var};
use crate::ctdg::{sample_negatives, CtdgStore, TemporalEvent};
use crate::decoder_loss::{
    build_posterior, elbo_loss, predict, standard_normal, Decoder, ElboConfig, ElboTerms, GaussianDiag, Targets, LOG_EPS,
};
use crate::encoder::{EncoderConfig, NodeStates, PairEncoder, TemporalEncoder};
use crate::error::{Error, Result};
use crate::eval::{mrr, pooled_average_precision, time_group_loss, uniform_edges, MetricReport, RankedQuery};
use crate::latent::{AggregatorKind, LatentCode, LatentModule};
use crate::odeint::{ode_solve_at, GradMode, SolverConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: AggregatorKind,
    pub encoder: EncoderConfig,
    pub latent_dim: usize,
    pub ode_hidden: usize,
    pub decoder_hidden: usize,
    pub solver: SolverConfig,
    /// `None` picks the default for the solver method.
    pub grad_mode: Option<GradMode>,
    pub elbo: ElboConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            variant: AggregatorKind::Gsnop,
            encoder: EncoderConfig::default(),
            latent_dim: 256,
            ode_hidden: 256,
            decoder_hidden: 100,
            solver: SolverConfig::default(),
            grad_mode: None,
            elbo: ElboConfig::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.solver.validate()?;
        self.elbo.validate()?;
        if self.latent_dim == 0 || self.ode_hidden == 0 || self.decoder_hidden == 0 {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        Ok(())
    }

    pub fn grad_mode(&self) -> GradMode {
        self.grad_mode.unwrap_or_else(|| GradMode::default_for(self.solver.method))
    }
}

pub struct Model {
    pub cfg: ModelConfig,
    pub params: ParamStore,
    pub encoder: TemporalEncoder,
    pub pair: PairEncoder,
    pub latent: LatentModule,
    pub decoder: Decoder,
    pub meta: CheckpointMeta,
}

/// One training step's events: labelled context followed by labelled targets.
#[derive(Clone, Debug, PartialEq)]
pub struct Window {
    pub context: Vec<TemporalEvent>,
    pub targets: Vec<TemporalEvent>,
}

/// Splits `events` (time-sorted positives) at the midpoint of their time span
/// into context and targets, falling back to a half-count split when one side
/// would be empty, and interleaves `negatives` corruptions after each positive.
pub fn make_window(
    events: &[TemporalEvent],
    node_count: usize,
    negatives: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Window> {
    if events.len() < 2 {
        return Err(Error::Data(format!("a window needs at least 2 events, got {}", events.len())));
    }
    let (t0, t1) = (events[0].t, events[events.len() - 1].t);
    let mid = 0.5 * (t0 + t1);
    let mut cut = events.partition_point(|e| e.t <= mid);
    if cut == 0 || cut == events.len() {
        cut = events.len() / 2;
    }
    let mut label = |part: &[TemporalEvent]| -> Result<Vec<TemporalEvent>> {
        let mut out = Vec::with_capacity(part.len() * (1 + negatives));
        for e in part {
            out.push(e.clone());
            out.extend(sample_negatives(node_count, e, negatives, rng)?);
        }
        Ok(out)
    };
    Ok(Window {
        context: label(&events[..cut])?,
        targets: label(&events[cut..])?,
    })
}

/// Labelled context for evaluation: the most recent `limit` positives of
/// `history`, each followed by `negatives` corruptions.
pub fn eval_context(
    history: &[TemporalEvent],
    limit: usize,
    node_count: usize,
    negatives: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<TemporalEvent>> {
    let start = history.len().saturating_sub(limit);
    let mut out = Vec::new();
    for e in &history[start..] {
        out.push(e.clone());
        out.extend(sample_negatives(node_count, e, negatives, rng)?);
    }
    Ok(out)
}

/// Settings for scoring held-out links.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSettings {
    pub negatives: usize,
    pub samples: usize,
    pub groups: usize,
    /// Most recent history events forming the latent context.
    pub context: usize,
    /// Corruptions labelled 0 after each context positive.
    pub context_negatives: usize,
    /// Queries sharing one context, which is refreshed from the history
    /// before the first of them; 0 keeps one context for all queries.
    pub batch: usize,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            negatives: 50,
            samples: 10,
            groups: 4,
            context: 100,
            context_negatives: 1,
            batch: 0,
        }
    }
}

struct Encoded<'t> {
    reps: Option<Var<'t>>,
    times: Vec<f64>,
}

impl Model {
    pub fn new(cfg: ModelConfig, meta: CheckpointMeta, seed: u64) -> Result<Self> {
        cfg.validate()?;
        if !(meta.time_scale > 0.0 && meta.time_scale.is_finite()) {
            return Err(Error::Config(format!("time_scale must be positive, got {}", meta.time_scale)));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let encoder = TemporalEncoder::new(&mut params, cfg.encoder.clone(), meta.num_nodes, meta.edge_dim, &mut rng)?;
        let pair = PairEncoder::new(&mut params, cfg.encoder.node_dim, cfg.latent_dim, &mut rng);
        let latent = LatentModule::new(&mut params, cfg.variant, pair.time, cfg.ode_hidden, &mut rng);
        let decoder = Decoder::new(&mut params, cfg.encoder.node_dim, cfg.latent_dim, cfg.decoder_hidden, &mut rng);
        Ok(Model {
            cfg,
            params,
            encoder,
            pair,
            latent,
            decoder,
            meta,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        self.params.to_checkpoint(self.meta.clone())
    }

    /// Rebuilds the architecture from `cfg` and the checkpoint's data
    /// constants, then loads the stored weights.
    pub fn from_checkpoint(cfg: ModelConfig, ckpt: &Checkpoint) -> Result<Self> {
        let mut model = Model::new(cfg, ckpt.meta.clone(), 0)?;
        model.params.load_checkpoint(ckpt)?;
        Ok(model)
    }

    pub fn normalize(&self, t: f64) -> f64 {
        t / self.meta.time_scale
    }

    fn check_graph(&self, graph: &CtdgStore) -> Result<()> {
        if graph.node_count() != self.meta.num_nodes || graph.edge_dim() != self.meta.edge_dim {
            return Err(Error::Config(format!(
                "graph has {} nodes / edge dim {}, model was built for {} / {}",
                graph.node_count(),
                graph.edge_dim(),
                self.meta.num_nodes,
                self.meta.edge_dim
            )));
        }
        Ok(())
    }

    fn encode_events<'t>(
        &self,
        p: &Bound<'t>,
        states: &NodeStates<'t>,
        events: &[TemporalEvent],
    ) -> Result<Encoded<'t>> {
        let times: Vec<f64> = events.iter().map(|e| self.normalize(e.t)).collect();
        if events.is_empty() {
            return Ok(Encoded { reps: None, times });
        }
        let hs = states.gather(&events.iter().map(|e| (e.src, e.t)).collect::<Vec<_>>())?;
        let hd = states.gather(&events.iter().map(|e| (e.dst, e.t)).collect::<Vec<_>>())?;
        let labels: Vec<f64> = events.iter().map(|e| e.label as f64).collect();
        Ok(Encoded {
            reps: Some(self.pair.encode(p, hs, hd, &labels, &times)?),
            times,
        })
    }

    fn endpoint_queries(events: &[TemporalEvent]) -> Vec<(usize, f64)> {
        events.iter().flat_map(|e| [(e.src, e.t), (e.dst, e.t)]).collect()
    }

    /// Negative ELBO for one window. `noise` drives the Monte-Carlo draws and
    /// `dropout` enables encoder dropout.
    pub fn window_loss<'t>(
        &self,
        p: &Bound<'t>,
        graph: &CtdgStore,
        window: &Window,
        noise: &mut ChaCha8Rng,
        dropout: Option<&mut ChaCha8Rng>,
    ) -> Result<ElboTerms<'t>> {
        self.check_graph(graph)?;
        if window.targets.is_empty() {
            return Err(Error::Data("window has no targets".into()));
        }
        let mut queries = Self::endpoint_queries(&window.context);
        queries.extend(Self::endpoint_queries(&window.targets));
        let states = self.encoder.node_states(p, graph, &queries, self.meta.time_scale, dropout)?;
        let ctx = self.encode_events(p, &states, &window.context)?;
        let tgt = self.encode_events(p, &states, &window.targets)?;
        let state = self.latent.context_state(p, ctx.reps, &ctx.times)?;
        let target_t = tgt.times.iter().copied().fold(state.t_ref, f64::max);
        let prior = self
            .latent
            .prior_from_state(p, state, target_t, &self.cfg.solver, self.cfg.grad_mode())?;
        let posterior = build_posterior(&self.latent, p, ctx.reps, state, tgt.reps, &tgt.times)?;
        let targets = Targets {
            h_src: states.gather(&window.targets.iter().map(|e| (e.src, e.t)).collect::<Vec<_>>())?,
            h_dst: states.gather(&window.targets.iter().map(|e| (e.dst, e.t)).collect::<Vec<_>>())?,
            labels: window.targets.iter().map(|e| e.label as f64).collect(),
        };
        elbo_loss(&self.decoder, p, prior, posterior, &targets, &self.cfg.elbo, noise)
    }

    /// Scores each positive against `settings.negatives` corruptions drawn from
    /// `seed`. Each batch of positives conditions on a context cut from the
    /// time-sorted `history` strictly before the batch, and node states use
    /// `graph` strictly before each query time.
    pub fn evaluate(
        &self,
        graph: &CtdgStore,
        history: &[TemporalEvent],
        positives: &[TemporalEvent],
        settings: &EvalSettings,
        seed: u64,
    ) -> Result<MetricReport> {
        self.check_graph(graph)?;
        if positives.is_empty() {
            return Err(Error::Data("no links to evaluate".into()));
        }
        let mut neg_rng = ChaCha8Rng::seed_from_u64(seed);
        let mut noise = ChaCha8Rng::seed_from_u64(seed);
        noise.set_stream(1);
        let mut ctx_rng = ChaCha8Rng::seed_from_u64(seed);
        ctx_rng.set_stream(2);
        let mut candidates = Vec::with_capacity(positives.len());
        for e in positives {
            let mut c = vec![e.clone()];
            c.extend(sample_negatives(graph.node_count(), e, settings.negatives, &mut neg_rng)?);
            candidates.push(c);
        }

        let mut scores: Vec<Vec<f64>> = Vec::with_capacity(positives.len());
        let batch = if settings.batch == 0 { positives.len() } else { settings.batch };
        for start in (0..positives.len()).step_by(batch) {
            let end = (start + batch).min(positives.len());
            let cut = history.partition_point(|e| e.t < positives[start].t);
            let context = eval_context(
                &history[..cut],
                settings.context,
                graph.node_count(),
                settings.context_negatives,
                &mut ctx_rng,
            )?;
            let codes = self.query_codes(graph, &context, &positives[start..end])?;
            let tape = Tape::new();
            let p = self.params.bind(&tape);
            let rows: Vec<TemporalEvent> = candidates[start..end].iter().flatten().cloned().collect();
            let states = self
                .encoder
                .node_states(&p, graph, &Self::endpoint_queries(&rows), self.meta.time_scale, None)?;
            let hs = states.gather(&rows.iter().map(|e| (e.src, e.t)).collect::<Vec<_>>())?;
            let hd = states.gather(&rows.iter().map(|e| (e.dst, e.t)).collect::<Vec<_>>())?;
            let ps = self.decoder.project_nodes(&p, hs)?;
            let pd = self.decoder.project_nodes(&p, hd)?;
            let mut acc = vec![0.0; rows.len()];
            let draws = match &codes {
                QueryCodes::Deterministic(_) => 1,
                _ => settings.samples.max(1),
            };
            for _ in 0..draws {
                let z = self.latent_rows(&codes, &candidates[start..end], &mut noise)?;
                let y = self.decoder.decode_projected(&p, ps, pd, tape.constant(z))?.value();
                for (a, v) in acc.iter_mut().zip(y.data()) {
                    *a += v / draws as f64;
                }
            }
            let mut off = 0;
            for c in &candidates[start..end] {
                scores.push(acc[off..off + c.len()].to_vec());
                off += c.len();
            }
        }

        let queries: Vec<RankedQuery> = scores
            .iter()
            .map(|s| RankedQuery {
                positive: s[0],
                negatives: s[1..].to_vec(),
            })
            .collect();
        let bce = |y: f64, label: bool| -> f64 {
            if label {
                -y.max(LOG_EPS).ln()
            } else {
                -(1.0 - y).max(LOG_EPS).ln()
            }
        };
        let per_query: Vec<f64> = scores
            .iter()
            .map(|s| s.iter().enumerate().map(|(i, &y)| bce(y, i == 0)).sum::<f64>() / s.len() as f64)
            .collect();
        let (t0, t1) = (positives[0].t, positives[positives.len() - 1].t);
        let positions: Vec<f64> = positives
            .iter()
            .map(|e| if t1 > t0 { (e.t - t0) / (t1 - t0) } else { 0.0 })
            .collect();
        let edges = uniform_edges(settings.groups);
        Ok(MetricReport {
            ap: pooled_average_precision(&queries)?,
            mrr: mrr(&queries)?,
            n_queries: queries.len(),
            negatives_per_query: settings.negatives,
            mean_loss: per_query.iter().sum::<f64>() / per_query.len() as f64,
            time_group_loss: time_group_loss(&positions, &per_query, &edges)?,
            time_group_edges: edges,
        })
    }

    /// Latent distribution (or code) governing each positive.
    fn query_codes(
        &self,
        graph: &CtdgStore,
        context: &[TemporalEvent],
        positives: &[TemporalEvent],
    ) -> Result<QueryCodes> {
        let tape = Tape::new();
        let p = self.params.bind(&tape);
        let states = self.encoder.node_states(
            &p,
            graph,
            &Self::endpoint_queries(context),
            self.meta.time_scale,
            None,
        )?;
        let ctx = self.encode_events(&p, &states, context)?;
        let state = self.latent.context_state(&p, ctx.reps, &ctx.times)?;
        let gauss = |g: GaussianDiag<'_>| (g.mu.value().as_ref().clone(), g.sigma.value().as_ref().clone());
        Ok(match self.cfg.variant {
            AggregatorKind::Cnp => QueryCodes::Deterministic(state.r.value().as_ref().clone()),
            AggregatorKind::Np | AggregatorKind::Snp => {
                let (mu, sigma) = gauss(self.latent.head.forward(&p, state.r)?);
                QueryCodes::Shared { mu, sigma }
            }
            AggregatorKind::Gsnop => {
                let mut times: Vec<f64> = positives.iter().map(|e| self.normalize(e.t).max(state.t_ref)).collect();
                times.dedup();
                let f = self.latent.ode.dynamics_from_store(&self.params);
                let r0 = state.r.value().data().to_vec();
                let rs = ode_solve_at(&f, &r0, state.t_ref, &times, &self.cfg.solver)?;
                let stacked = Tensor::from_rows(&rs)?;
                let (mu, sigma) = gauss(self.latent.head.forward(&p, tape.constant(stacked))?);
                let mut index = Vec::with_capacity(positives.len());
                let mut k = 0;
                for e in positives {
                    let t = self.normalize(e.t).max(state.t_ref);
                    while times[k] != t {
                        k += 1;
                    }
                    index.push(k);
                }
                QueryCodes::PerTime { mu, sigma, index }
            }
        })
    }

    /// One latent row per candidate: a fresh draw per query, shared by its
    /// candidates.
    fn latent_rows(
        &self,
        codes: &QueryCodes,
        candidates: &[Vec<TemporalEvent>],
        noise: &mut ChaCha8Rng,
    ) -> Result<Tensor> {
        let d = self.cfg.latent_dim;
        if let QueryCodes::Deterministic(r) = codes {
            return Ok(r.clone());
        }
        let total: usize = candidates.iter().map(Vec::len).sum();
        let mut data = Vec::with_capacity(total * d);
        for (i, c) in candidates.iter().enumerate() {
            let (mu, sigma) = match codes {
                QueryCodes::Shared { mu, sigma } => (mu.data(), sigma.data()),
                QueryCodes::PerTime { mu, sigma, index } => {
                    let k = index[i];
                    (mu.row_slice(k), sigma.row_slice(k))
                }
                QueryCodes::Deterministic(_) => unreachable!(),
            };
            let eps = standard_normal(1, d, noise);
            let z: Vec<f64> = (0..d).map(|j| mu[j] + sigma[j] * eps.data()[j]).collect();
            for _ in 0..c.len() {
                data.extend_from_slice(&z);
            }
        }
        Tensor::new(total, d, data)
    }

    /// One inference pass: encodes `context`, builds the prior at the latest
    /// target time and returns a single-sample probability per target.
    pub fn forward(
        &self,
        graph: &CtdgStore,
        context: &[TemporalEvent],
        targets: &[TemporalEvent],
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<f64>> {
        self.check_graph(graph)?;
        let tape = Tape::new();
        let p = self.params.bind(&tape);
        let mut queries = Self::endpoint_queries(context);
        queries.extend(Self::endpoint_queries(targets));
        let states = self.encoder.node_states(&p, graph, &queries, self.meta.time_scale, None)?;
        let ctx = self.encode_events(&p, &states, context)?;
        let state = self.latent.context_state(&p, ctx.reps, &ctx.times)?;
        if targets.is_empty() {
            return Ok(Vec::new());
        }
        let target_t = targets
            .iter()
            .map(|e| self.normalize(e.t))
            .fold(state.t_ref, f64::max);
        let prior = self
            .latent
            .prior_from_state(&p, state, target_t, &self.cfg.solver, self.cfg.grad_mode())?;
        let hs = states.gather(&targets.iter().map(|e| (e.src, e.t)).collect::<Vec<_>>())?;
        let hd = states.gather(&targets.iter().map(|e| (e.dst, e.t)).collect::<Vec<_>>())?;
        predict(&self.decoder, &p, prior, hs, hd, 1, rng)
    }

    /// Prior or code for a single batch of context reps, exposed for
    /// inspection and tests.
    pub fn prior<'t>(
        &self,
        p: &Bound<'t>,
        graph: &CtdgStore,
        context: &[TemporalEvent],
        target_t: f64,
    ) -> Result<LatentCode<'t>> {
        let states = self
            .encoder
            .node_states(p, graph, &Self::endpoint_queries(context), self.meta.time_scale, None)?;
        let ctx = self.encode_events(p, &states, context)?;
        let (_, code) = self.latent.build_prior(
            p,
            ctx.reps,
            &ctx.times,
            self.normalize(target_t),
            &self.cfg.solver,
            self.cfg.grad_mode(),
        )?;
        Ok(code)
    }
}

enum QueryCodes {
    Deterministic(Tensor),
    Shared { mu: Tensor, sigma: Tensor },
    PerTime { mu: Tensor, sigma: Tensor, index: Vec<usize> },
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ctdg::{generate_synthetic, SyntheticSpec};

    fn tiny_cfg(variant: AggregatorKind) -> ModelConfig {
        ModelConfig {
            variant,
            encoder: EncoderConfig {
                node_dim: 4,
                time_dim: 3,
                layers: 2,
                neighbors: 3,
                dropout: 0.0,
            },
            latent_dim: 5,
            ode_hidden: 4,
            decoder_hidden: 4,
            solver: SolverConfig::default(),
            grad_mode: None,
            elbo: ElboConfig { mc_samples: 2, kl_weight: 1.0 },
        }
    }

    fn data() -> CtdgStore {
        let spec = SyntheticSpec {
            nodes: 12,
            communities: 2,
            events: 60,
            edge_dim: 2,
            ..SyntheticSpec::default()
        };
        generate_synthetic(&spec, 1).unwrap()
    }

    fn meta(g: &CtdgStore) -> CheckpointMeta {
        CheckpointMeta {
            time_scale: g.max_t(),
            num_nodes: g.node_count(),
            edge_dim: g.edge_dim(),
        }
    }

    #[test]
    fn window_split_and_negatives() {
        let g = data();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let w = make_window(&g.events()[..20], g.node_count(), 1, &mut rng).unwrap();
        assert_eq!(w.context.len() + w.targets.len(), 40);
        let last_ctx = w.context.last().unwrap().t;
        assert!(w.targets.iter().all(|e| e.t > last_ctx));
        assert_eq!(w.context.iter().filter(|e| e.label == 0).count() * 2, w.context.len());
        assert!(w.context.windows(2).all(|p| p[0].t <= p[1].t));
    }

    #[test]
    fn all_variants_produce_finite_losses_and_reports() {
        let g = data();
        for kind in AggregatorKind::ALL {
            let model = Model::new(tiny_cfg(kind), meta(&g), 3).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            let w = make_window(&g.events()[10..40], g.node_count(), 1, &mut rng).unwrap();
            let tape = Tape::new();
            let p = model.params.bind(&tape);
            let terms = model.window_loss(&p, &g, &w, &mut rng, None).unwrap();
            assert!(terms.loss.value().item().is_finite());
            if kind == AggregatorKind::Cnp {
                assert_eq!(terms.kl, 0.0);
            } else {
                assert!(terms.kl >= 0.0);
            }
            let grads = tape.backward(terms.loss).unwrap();
            assert!(grads.wrt(p[model.encoder.base]).norm_sq() > 0.0);

            let settings = EvalSettings {
                negatives: 5,
                samples: 2,
                groups: 4,
                context: 10,
                context_negatives: 1,
                batch: 3,
            };
            let r1 = model.evaluate(&g, g.events(), &g.events()[40..], &settings, 9).unwrap();
            let r2 = model.evaluate(&g, g.events(), &g.events()[40..], &settings, 9).unwrap();
            assert_eq!(r1, r2);
            assert!((0.0..=1.0).contains(&r1.ap) && (0.0..=1.0).contains(&r1.mrr));
            assert_eq!(r1.n_queries, 20);
        }
    }

    #[test]
    fn context_comes_from_history_before_each_batch() {
        let g = data();
        let model = Model::new(tiny_cfg(AggregatorKind::Gsnop), meta(&g), 5).unwrap();
        let s = EvalSettings {
            negatives: 3,
            samples: 2,
            groups: 2,
            context: 10,
            context_negatives: 1,
            batch: 5,
        };
        let queries = &g.events()[40..50];
        let full = model.evaluate(&g, g.events(), queries, &s, 2).unwrap();
        // History at or after the last batch start cannot matter.
        let cut = g.events().partition_point(|e| e.t < g.events()[45].t);
        let head = model.evaluate(&g, &g.events()[..cut], queries, &s, 2).unwrap();
        assert_eq!(full, head);
        let fixed = EvalSettings { batch: 0, ..s.clone() };
        let one = model.evaluate(&g, g.events(), queries, &fixed, 2).unwrap();
        let early = model.evaluate(&g, &g.events()[..40], queries, &fixed, 2).unwrap();
        assert_eq!(one, early);
        assert_ne!(one, full);
    }

    #[test]
    fn checkpoint_round_trip_preserves_predictions() {
        let g = data();
        let model = Model::new(tiny_cfg(AggregatorKind::Gsnop), meta(&g), 4).unwrap();
        let restored = Model::from_checkpoint(tiny_cfg(AggregatorKind::Gsnop), &model.checkpoint()).unwrap();
        let s = EvalSettings {
            negatives: 3,
            samples: 2,
            groups: 2,
            context: 10,
            context_negatives: 1,
            batch: 8,
        };
        assert_eq!(
            model.evaluate(&g, g.events(), &g.events()[40..], &s, 1).unwrap(),
            restored.evaluate(&g, g.events(), &g.events()[40..], &s, 1).unwrap()
        );
        let mut other = tiny_cfg(AggregatorKind::Gsnop);
        other.latent_dim = 6;
        assert!(Model::from_checkpoint(other, &model.checkpoint()).is_err());
    }
}
