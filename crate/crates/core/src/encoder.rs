//! Temporal graph encoder: functional time encoding, recency-sampled mean
//! message passing for node states, and per-link context representations.

use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{concat, Bound, Linear, ParamId, ParamStore, Tensor, Var};
use crate::ctdg::{CtdgStore, NodeId};
use crate::error::{Error, Result};

/// `cos(ω·t + φ)` with learnable frequencies and phases.
#[derive(Clone, Copy, Debug)]
pub struct TimeEncoding {
    pub omega: ParamId,
    pub phase: ParamId,
    pub dim: usize,
}

impl TimeEncoding {
    /// Frequencies spaced log-uniformly over `[1, 1000]`, phases zero.
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        let omega = (0..dim)
            .map(|i| {
                let f = if dim > 1 { i as f64 / (dim - 1) as f64 } else { 0.0 };
                10f64.powf(3.0 * f)
            })
            .collect();
        TimeEncoding {
            omega: store.add(format!("{name}.omega"), Tensor::row(omega)),
            phase: store.add(format!("{name}.phase"), Tensor::zeros(1, dim)),
            dim,
        }
    }

    /// One encoded row per entry of `times`.
    pub fn encode<'t>(&self, p: &Bound<'t>, times: &[f64]) -> Result<Var<'t>> {
        let tape = p[self.omega].tape();
        let t = tape.constant(Tensor::column(times.to_vec()));
        t.matmul(p[self.omega])?.add(p[self.phase]).map(Var::cos)
    }

    /// Plain evaluation for a single time.
    pub fn encode_value(&self, store: &ParamStore, t: f64) -> Vec<f64> {
        let (w, ph) = (store.get(self.omega).data(), store.get(self.phase).data());
        w.iter().zip(ph).map(|(w, ph)| (w * t + ph).cos()).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub node_dim: usize,
    pub time_dim: usize,
    pub layers: usize,
    pub neighbors: usize,
    pub dropout: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            node_dim: 100,
            time_dim: 100,
            layers: 2,
            neighbors: 10,
            dropout: 0.1,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.node_dim == 0 || self.time_dim == 0 {
            return Err(Error::Config("encoder dimensions must be positive".into()));
        }
        if self.neighbors == 0 && self.layers > 0 {
            return Err(Error::Config("encoder neighbors must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout must lie in [0, 1), got {}", self.dropout)));
        }
        Ok(())
    }
}

/// Stacked temporal message passing over the `k` most recent interactions.
#[derive(Clone, Debug)]
pub struct TemporalEncoder {
    pub cfg: EncoderConfig,
    pub base: ParamId,
    pub time: TimeEncoding,
    pub message: Vec<Linear>,
    pub combine: Vec<Linear>,
    pub edge_dim: usize,
}

type Query = (NodeId, f64);

fn key(q: Query) -> (NodeId, u64) {
    (q.0, q.1.to_bits())
}

/// Node states for a batch of `(node, time)` queries.
pub struct NodeStates<'t> {
    /// One row per distinct query.
    pub h: Var<'t>,
    rows: HashMap<(NodeId, u64), usize>,
}

impl<'t> NodeStates<'t> {
    pub fn row(&self, v: NodeId, t: f64) -> Option<usize> {
        self.rows.get(&key((v, t))).copied()
    }

    /// Stacks the states of `queries`, which must all have been encoded.
    pub fn gather(&self, queries: &[Query]) -> Result<Var<'t>> {
        let idx = queries
            .iter()
            .map(|&q| {
                self.row(q.0, q.1)
                    .ok_or_else(|| Error::Usage(format!("node state ({}, {}) was not encoded", q.0, q.1)))
            })
            .collect::<Result<Vec<_>>>()?;
        self.h.gather_rows(&idx)
    }
}

impl TemporalEncoder {
    pub fn new(
        store: &mut ParamStore,
        cfg: EncoderConfig,
        num_nodes: usize,
        edge_dim: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        cfg.validate()?;
        let base = store.add_uniform("encoder.base", num_nodes, cfg.node_dim, 1, rng);
        let time = TimeEncoding::new(store, "encoder.time", cfg.time_dim);
        let mut message = Vec::new();
        let mut combine = Vec::new();
        for l in 0..cfg.layers {
            let msg_in = cfg.node_dim + edge_dim + cfg.time_dim;
            message.push(Linear::new(store, &format!("encoder.l{l}.message"), msg_in, cfg.node_dim, rng));
            combine.push(Linear::new(store, &format!("encoder.l{l}.combine"), 2 * cfg.node_dim, cfg.node_dim, rng));
        }
        Ok(TemporalEncoder {
            cfg,
            base,
            time,
            message,
            combine,
            edge_dim,
        })
    }

    /// States of the distinct `queries` given the history in `graph`.
    /// Timestamps are divided by `time_scale` before time encoding.
    /// Dropout is active only when `dropout_rng` is supplied.
    pub fn node_states<'t>(
        &self,
        p: &Bound<'t>,
        graph: &CtdgStore,
        queries: &[Query],
        time_scale: f64,
        mut dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<NodeStates<'t>> {
        if graph.edge_dim() != self.edge_dim {
            return Err(Error::Config(format!(
                "graph has edge dim {}, encoder expects {}",
                graph.edge_dim(),
                self.edge_dim
            )));
        }
        let n = p[self.base].shape()[0];
        if let Some(q) = queries.iter().find(|q| q.0 >= n) {
            return Err(Error::Config(format!("node {} outside the encoder's {n} nodes", q.0)));
        }
        let mut uniq = Vec::new();
        let mut rows = HashMap::new();
        for &q in queries {
            rows.entry(key(q)).or_insert_with(|| {
                uniq.push(q);
                uniq.len() - 1
            });
        }
        let h = self.layer(p, graph, &uniq, self.cfg.layers, time_scale, &mut dropout_rng)?;
        Ok(NodeStates { h, rows })
    }

    fn layer<'t>(
        &self,
        p: &Bound<'t>,
        graph: &CtdgStore,
        queries: &[Query],
        l: usize,
        time_scale: f64,
        rng: &mut Option<&mut ChaCha8Rng>,
    ) -> Result<Var<'t>> {
        if l == 0 {
            let ids: Vec<usize> = queries.iter().map(|q| q.0).collect();
            return p[self.base].gather_rows(&ids);
        }
        let mut sub = Vec::new();
        let mut sub_rows: HashMap<(NodeId, u64), usize> = HashMap::new();
        let mut intern = |q: Query| {
            *sub_rows.entry(key(q)).or_insert_with(|| {
                sub.push(q);
                sub.len() - 1
            })
        };
        let mut self_idx = Vec::with_capacity(queries.len());
        let mut nbr_idx = Vec::new();
        let mut offsets = vec![0];
        let mut edge = Vec::new();
        let mut dts = Vec::new();
        for &(v, t) in queries {
            self_idx.push(intern((v, t)));
            for a in graph.neighbors_before(v, t, self.cfg.neighbors) {
                nbr_idx.push(intern((a.neighbor, a.t)));
                edge.extend_from_slice(&graph.events()[a.event].edge_feat);
                dts.push((t - a.t) / time_scale);
            }
            offsets.push(nbr_idx.len());
        }
        let below = self.layer(p, graph, &sub, l - 1, time_scale, rng)?;
        let own = below.gather_rows(&self_idx)?;
        if nbr_idx.is_empty() {
            return Ok(own);
        }
        let tape = own.tape();
        let m = nbr_idx.len();
        let feats = tape.constant(Tensor::new(m, self.edge_dim, edge)?);
        let msg_in = concat(&[below.gather_rows(&nbr_idx)?, feats, self.time.encode(p, &dts)?], 1)?;
        let mut msg = self.message[l - 1].forward(p, msg_in)?.relu();
        if let Some(r) = rng.as_deref_mut() {
            msg = dropout(msg, self.cfg.dropout, r)?;
        }
        let agg = msg.segment_mean(&offsets)?;
        let combined = self.combine[l - 1].forward(p, own.concat(agg, 1)?)?.relu();
        // Queries without history keep the state from the layer below.
        let q = queries.len();
        let pick: Vec<usize> = (0..q)
            .map(|i| if offsets[i + 1] > offsets[i] { i } else { q + i })
            .collect();
        combined.concat(own, 0)?.gather_rows(&pick)
    }
}

/// Inverted dropout.
pub fn dropout<'t>(x: Var<'t>, rate: f64, rng: &mut ChaCha8Rng) -> Result<Var<'t>> {
    if rate <= 0.0 {
        return Ok(x);
    }
    let [r, c] = x.shape();
    let keep = 1.0 / (1.0 - rate);
    let mask = (0..r * c)
        .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
        .collect();
    x.mul(x.tape().constant(Tensor::new(r, c, mask)?))
}

/// `r = MLP(h_i || h_j || y) + t_emb(t)`.
#[derive(Clone, Debug)]
pub struct PairEncoder {
    pub hidden: Linear,
    pub out: Linear,
    pub time: TimeEncoding,
    pub latent_dim: usize,
}

impl PairEncoder {
    pub fn new(store: &mut ParamStore, node_dim: usize, latent_dim: usize, rng: &mut impl Rng) -> Self {
        PairEncoder {
            hidden: Linear::new(store, "pair.hidden", 2 * node_dim + 1, latent_dim, rng),
            out: Linear::new(store, "pair.out", latent_dim, latent_dim, rng),
            time: TimeEncoding::new(store, "pair.time", latent_dim),
            latent_dim,
        }
    }

    /// One representation per row of `h_src`/`h_dst`; `times` are normalized.
    pub fn encode<'t>(
        &self,
        p: &Bound<'t>,
        h_src: Var<'t>,
        h_dst: Var<'t>,
        labels: &[f64],
        times: &[f64],
    ) -> Result<Var<'t>> {
        let n = h_src.shape()[0];
        if h_dst.shape()[0] != n || labels.len() != n || times.len() != n {
            return Err(Error::Config(format!(
                "pair batch mismatch: {n} sources, {} destinations, {} labels, {} times",
                h_dst.shape()[0],
                labels.len(),
                times.len()
            )));
        }
        let y = h_src.tape().constant(Tensor::column(labels.to_vec()));
        let x = concat(&[h_src, h_dst, y], 1)?;
        let r = self.out.forward(p, self.hidden.forward(p, x)?.relu())?;
        r.add(self.time.encode(p, times)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{finite_difference, max_relative_error, Tape};
    use crate::ctdg::TemporalEvent;
    use rand::SeedableRng;

    fn small_cfg() -> EncoderConfig {
        EncoderConfig {
            node_dim: 6,
            time_dim: 4,
            layers: 2,
            neighbors: 3,
            dropout: 0.0,
        }
    }

    fn graph() -> CtdgStore {
        let ev = |s, d, t: f64| TemporalEvent::new(s, d, t, vec![t * 0.1, 1.0]);
        CtdgStore::new(
            vec![ev(0, 1, 1.0), ev(1, 2, 2.0), ev(0, 2, 3.0), ev(2, 3, 4.0), ev(0, 3, 5.0)],
            6,
            2,
        )
        .unwrap()
    }

    fn setup() -> (ParamStore, TemporalEncoder) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let enc = TemporalEncoder::new(&mut store, small_cfg(), 6, 2, &mut rng).unwrap();
        (store, enc)
    }

    fn state(store: &ParamStore, enc: &TemporalEncoder, g: &CtdgStore, v: usize, t: f64) -> Vec<f64> {
        let tape = Tape::new();
        let p = store.bind(&tape);
        let s = enc.node_states(&p, g, &[(v, t)], 5.0, None).unwrap();
        s.h.value().data().to_vec()
    }

    #[test]
    fn time_encoding_at_zero_is_ones() {
        let mut store = ParamStore::new();
        let te = TimeEncoding::new(&mut store, "te", 8);
        assert_eq!(te.encode_value(&store, 0.0), vec![1.0; 8]);
        let tape = Tape::new();
        let p = store.bind(&tape);
        let v = te.encode(&p, &[0.3, -2.0, 17.0]).unwrap().value();
        assert_eq!(v.shape(), [3, 8]);
        assert!(v.data().iter().all(|x| (-1.0..=1.0).contains(x)));
    }

    #[test]
    fn time_encoding_frequency_gradient() {
        let mut store = ParamStore::new();
        let te = TimeEncoding::new(&mut store, "te", 5);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let omega = Tensor::row((0..5).map(|_| rng.random_range(-2.0..2.0)).collect());
        let phase = store.get(te.phase).clone();
        let times = [0.4, 1.3];
        let loss = |inputs: &[Tensor]| {
            let tape = Tape::new();
            let w = tape.var(inputs[0].clone());
            let t = tape.constant(Tensor::column(times.to_vec()));
            let ph = tape.constant(phase.clone());
            t.matmul(w).unwrap().add(ph).unwrap().cos().sum().value().item()
        };
        let tape = Tape::new();
        *store.get_mut(te.omega) = omega.clone();
        let p = store.bind(&tape);
        let out = te.encode(&p, &times).unwrap().sum();
        let g = tape.backward(out).unwrap().wrt(p[te.omega]);
        let fd = finite_difference(loss, &[omega], 1e-5);
        assert!(max_relative_error(&g, &fd[0], 1e-8) < 1e-5);
    }

    #[test]
    fn isolated_node_is_its_base_embedding() {
        let (store, enc) = setup();
        let g = graph();
        let h = state(&store, &enc, &g, 5, 10.0);
        assert_eq!(h, store.get(enc.base).row_slice(5));
        // No history before the first event either.
        assert_eq!(state(&store, &enc, &g, 0, 1.0), store.get(enc.base).row_slice(0));
        assert_ne!(state(&store, &enc, &g, 0, 1.5), store.get(enc.base).row_slice(0));
    }

    #[test]
    fn future_events_do_not_change_state() {
        let (store, enc) = setup();
        let g = graph();
        let before = state(&store, &enc, &g, 0, 3.0);
        let trimmed = g.filter(|_, e| e.t < 3.0);
        assert_eq!(before, state(&store, &enc, &trimmed, 0, 3.0));
    }

    #[test]
    fn identical_histories_give_identical_states() {
        let (mut store, enc) = setup();
        let base = store.get(enc.base).clone();
        let mut b = base.clone();
        let row4 = base.row_slice(4).to_vec();
        b.data_mut()[5 * 6..6 * 6].copy_from_slice(&row4);
        *store.get_mut(enc.base) = b;
        let ev = |s, d, t: f64| TemporalEvent::new(s, d, t, vec![0.5, 0.5]);
        let g = CtdgStore::new(vec![ev(4, 0, 1.0), ev(5, 0, 1.0)], 6, 2).unwrap();
        assert_eq!(state(&store, &enc, &g, 4, 2.0), state(&store, &enc, &g, 5, 2.0));
    }

    #[test]
    fn larger_neighbor_budget_beyond_history_is_inert() {
        let (store, mut enc) = setup();
        let g = graph();
        enc.cfg.neighbors = 10;
        let a = state(&store, &enc, &g, 0, 6.0);
        enc.cfg.neighbors = 50;
        assert_eq!(a, state(&store, &enc, &g, 0, 6.0));
    }

    #[test]
    fn pair_encoding_depends_on_label_and_reaches_both_ends() {
        let (mut store, enc) = setup();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pair = PairEncoder::new(&mut store, 6, 8, &mut rng);
        let g = graph();
        let tape = Tape::new();
        let p = store.bind(&tape);
        let s = enc.node_states(&p, &g, &[(0, 6.0), (3, 6.0)], 5.0, None).unwrap();
        let hi = s.gather(&[(0, 6.0), (0, 6.0)]).unwrap();
        let hj = s.gather(&[(3, 6.0), (3, 6.0)]).unwrap();
        let r = pair.encode(&p, hi, hj, &[1.0, 0.0], &[1.2, 1.2]).unwrap();
        let v = r.value();
        assert_eq!(v.shape(), [2, 8]);
        assert_ne!(v.row_slice(0), v.row_slice(1));
        let w = tape.constant(Tensor::new(2, 8, (0..16).map(|i| (i as f64).sin()).collect()).unwrap());
        let grads = tape.backward(r.mul(w).unwrap().sum()).unwrap();
        assert!(grads.wrt(hi).norm_sq() > 0.0);
        assert!(grads.wrt(hj).norm_sq() > 0.0);
        assert!(grads.wrt(p[enc.base]).norm_sq() > 0.0);
    }

    #[test]
    fn outputs_are_finite_and_dropout_only_in_training() {
        let (store, mut enc) = setup();
        enc.cfg.dropout = 0.5;
        let g = graph();
        let tape = Tape::new();
        let p = store.bind(&tape);
        let q = [(0, 6.0), (2, 6.0)];
        let eval = enc.node_states(&p, &g, &q, 5.0, None).unwrap().h.value();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let train = enc.node_states(&p, &g, &q, 5.0, Some(&mut rng)).unwrap().h.value();
        assert!(eval.is_finite() && train.is_finite());
        assert_ne!(eval.data(), train.data());
        assert_eq!(eval.data(), enc.node_states(&p, &g, &q, 5.0, None).unwrap().h.value().data());
    }
}
