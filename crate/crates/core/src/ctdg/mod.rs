//! Continuous-time dynamic graph storage: a chronologically sorted event log
//! with per-node time-indexed adjacency, plus splitting, negative sampling,
//! CSV ingestion and synthetic stream generation.

mod csv;
mod synthetic;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub use self::csv::{ingest_csv, CsvSchema, Ingested};
pub use synthetic::{generate_synthetic, Intensity, Spike, SyntheticSpec};

pub type NodeId = usize;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TemporalEvent {
    pub src: NodeId,
    pub dst: NodeId,
    pub t: f64,
    pub edge_feat: Vec<f64>,
    /// Existence flag: 1 for observed links, 0 for sampled negatives.
    pub label: u8,
}

impl TemporalEvent {
    pub fn new(src: NodeId, dst: NodeId, t: f64, edge_feat: Vec<f64>) -> Self {
        TemporalEvent {
            src,
            dst,
            t,
            edge_feat,
            label: 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdjEntry {
    pub neighbor: NodeId,
    pub t: f64,
    /// Index into [`CtdgStore::events`].
    pub event: usize,
}

/// Immutable event log over a fixed node universe `0..node_count`.
#[derive(Clone, Debug)]
pub struct CtdgStore {
    events: Vec<TemporalEvent>,
    adjacency: Vec<Vec<AdjEntry>>,
    node_count: usize,
    edge_dim: usize,
}

impl CtdgStore {
    /// Builds a store from observed events. Events are stably sorted by time;
    /// self-loops, out-of-range endpoints and feature-length mismatches are
    /// rejected.
    pub fn new(mut events: Vec<TemporalEvent>, node_count: usize, edge_dim: usize) -> Result<Self> {
        for (i, e) in events.iter().enumerate() {
            if e.src == e.dst {
                return Err(Error::Data(format!("event {i} is a self-loop on node {}", e.src)));
            }
            if e.src >= node_count || e.dst >= node_count {
                return Err(Error::Data(format!(
                    "event {i} ({} -> {}) outside node universe of {node_count}",
                    e.src, e.dst
                )));
            }
            if !e.t.is_finite() || e.t < 0.0 {
                return Err(Error::Data(format!("event {i} has invalid timestamp {}", e.t)));
            }
            if e.edge_feat.len() != edge_dim {
                return Err(Error::Data(format!(
                    "event {i} has {} edge features, expected {edge_dim}",
                    e.edge_feat.len()
                )));
            }
            if e.label != 1 {
                return Err(Error::Data(format!("event {i}: stored events must have label 1")));
            }
        }
        events.sort_by(|a, b| a.t.total_cmp(&b.t));
        let mut adjacency = vec![Vec::new(); node_count];
        for (i, e) in events.iter().enumerate() {
            adjacency[e.src].push(AdjEntry {
                neighbor: e.dst,
                t: e.t,
                event: i,
            });
            adjacency[e.dst].push(AdjEntry {
                neighbor: e.src,
                t: e.t,
                event: i,
            });
        }
        Ok(CtdgStore {
            events,
            adjacency,
            node_count,
            edge_dim,
        })
    }

    pub fn events(&self) -> &[TemporalEvent] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn edge_dim(&self) -> usize {
        self.edge_dim
    }

    pub fn min_t(&self) -> f64 {
        self.events.first().map_or(0.0, |e| e.t)
    }

    pub fn max_t(&self) -> f64 {
        self.events.last().map_or(0.0, |e| e.t)
    }

    pub fn adjacency(&self, v: NodeId) -> &[AdjEntry] {
        &self.adjacency[v]
    }

    /// Number of nodes incident to at least one event.
    pub fn active_nodes(&self) -> usize {
        self.adjacency.iter().filter(|a| !a.is_empty()).count()
    }

    /// The `k` most recent interactions of `v` strictly before `t`, newest first.
    pub fn neighbors_before(&self, v: NodeId, t: f64, k: usize) -> Vec<AdjEntry> {
        let adj = match self.adjacency.get(v) {
            Some(a) => a,
            None => return Vec::new(),
        };
        let end = adj.partition_point(|a| a.t < t);
        adj[..end].iter().rev().take(k).copied().collect()
    }

    /// Store over the same node universe holding only events accepted by `keep`.
    pub fn filter(&self, mut keep: impl FnMut(usize, &TemporalEvent) -> bool) -> CtdgStore {
        let events = self
            .events
            .iter()
            .enumerate()
            .filter(|(i, e)| keep(*i, e))
            .map(|(_, e)| e.clone())
            .collect();
        CtdgStore::new(events, self.node_count, self.edge_dim).expect("subset of a valid store")
    }

    /// Union of two stores over the same universe.
    pub fn merge(&self, other: &CtdgStore) -> Result<CtdgStore> {
        if self.node_count != other.node_count || self.edge_dim != other.edge_dim {
            return Err(Error::Config("cannot merge stores over different universes".into()));
        }
        let mut events = self.events.clone();
        events.extend(other.events.iter().cloned());
        CtdgStore::new(events, self.node_count, self.edge_dim)
    }

    /// SHA-256 over the canonical event stream, hex encoded.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.node_count as u64).to_le_bytes());
        h.update((self.edge_dim as u64).to_le_bytes());
        for e in &self.events {
            h.update((e.src as u64).to_le_bytes());
            h.update((e.dst as u64).to_le_bytes());
            h.update(e.t.to_le_bytes());
            for f in &e.edge_feat {
                h.update(f.to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// `2|E| / (|V|(|V|-1))` where `|E|` counts the store's links and `|V|` the
/// nodes they touch.
pub fn density_score(store: &CtdgStore) -> Result<f64> {
    let v = store.active_nodes();
    if v < 2 {
        return Err(Error::Data(format!("density is undefined for {v} node(s)")));
    }
    let e = store.len() as f64;
    Ok(2.0 * e / (v as f64 * (v as f64 - 1.0)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_ratio: f64,
    pub valid_ratio: f64,
    pub test_ratio: f64,
    /// Fraction of training events retained.
    #[serde(default = "one")]
    pub sample_ratio: f64,
}

fn one() -> f64 {
    1.0
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train_ratio: 0.3,
            valid_ratio: 0.2,
            test_ratio: 0.5,
            sample_ratio: 1.0,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train_ratio, self.valid_ratio, self.test_ratio];
        if parts.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return Err(Error::Config(format!("split ratios must lie in [0, 1]: {parts:?}")));
        }
        if (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split ratios must sum to 1: {parts:?}")));
        }
        if !(self.sample_ratio > 0.0 && self.sample_ratio <= 1.0) {
            return Err(Error::Config(format!(
                "sample_ratio must lie in (0, 1], got {}",
                self.sample_ratio
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Split {
    pub train: CtdgStore,
    pub valid: CtdgStore,
    pub test: CtdgStore,
    /// Training events before `sample_ratio` masking.
    pub train_full_len: usize,
    /// Time boundaries `(train_end, valid_end)`.
    pub boundaries: (f64, f64),
}

/// Chronological split by fractions of the total duration; `sample_ratio`
/// keeps `floor(ratio · |train|)` training events chosen uniformly.
pub fn chrono_split(store: &CtdgStore, spec: &SplitSpec, rng: &mut impl Rng) -> Result<Split> {
    spec.validate()?;
    let (t0, t1) = (store.min_t(), store.max_t());
    let span = t1 - t0;
    let train_end = t0 + spec.train_ratio * span;
    let valid_end = t0 + (spec.train_ratio + spec.valid_ratio) * span;
    let part = |e: &TemporalEvent| {
        if e.t <= train_end {
            0
        } else if e.t <= valid_end {
            1
        } else {
            2
        }
    };
    let train_full = store.filter(|_, e| part(e) == 0);
    let valid = store.filter(|_, e| part(e) == 1);
    let test = store.filter(|_, e| part(e) == 2);
    let n = train_full.len();
    let train = if spec.sample_ratio < 1.0 {
        let keep_n = (spec.sample_ratio * n as f64).floor() as usize;
        let mut keep = vec![false; n];
        for i in index::sample(rng, n, keep_n) {
            keep[i] = true;
        }
        train_full.filter(|i, _| keep[i])
    } else {
        train_full
    };
    Ok(Split {
        train,
        valid,
        test,
        train_full_len: n,
        boundaries: (train_end, valid_end),
    })
}

/// `n` corruptions of `positive` sharing its source and time, with distinct
/// destinations drawn uniformly from nodes other than its endpoints.
pub fn sample_negatives(
    node_count: usize,
    positive: &TemporalEvent,
    n: usize,
    rng: &mut impl Rng,
) -> Result<Vec<TemporalEvent>> {
    if n == 0 {
        return Ok(Vec::new());
    }
    let excluded = if positive.src == positive.dst { 1 } else { 2 };
    let pool = node_count.saturating_sub(excluded);
    if pool < n {
        return Err(Error::Data(format!(
            "cannot draw {n} distinct negatives from {node_count} nodes"
        )));
    }
    let (lo, hi) = (positive.src.min(positive.dst), positive.src.max(positive.dst));
    Ok(index::sample(rng, pool, n)
        .into_iter()
        .map(|mut d| {
            // Map 0..pool onto the universe with both endpoints skipped.
            if d >= lo {
                d += 1;
            }
            if lo != hi && d >= hi {
                d += 1;
            }
            TemporalEvent {
                src: positive.src,
                dst: d,
                t: positive.t,
                edge_feat: positive.edge_feat.clone(),
                label: 0,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ev(src: usize, dst: usize, t: f64) -> TemporalEvent {
        TemporalEvent::new(src, dst, t, vec![])
    }

    fn store(events: Vec<TemporalEvent>, n: usize) -> CtdgStore {
        CtdgStore::new(events, n, 0).unwrap()
    }

    #[test]
    fn sorts_stably_and_indexes_both_endpoints() {
        let s = store(vec![ev(0, 1, 5.0), ev(1, 2, 1.0), ev(0, 2, 3.0), ev(2, 0, 3.0)], 3);
        let ts: Vec<f64> = s.events().iter().map(|e| e.t).collect();
        assert_eq!(ts, vec![1.0, 3.0, 3.0, 5.0]);
        assert_eq!((s.events()[1].src, s.events()[2].src), (0, 2));
        assert_eq!(s.adjacency(0).len(), 3);
        for v in 0..3 {
            for a in s.adjacency(v) {
                let e = &s.events()[a.event];
                assert!(e.src == v || e.dst == v);
            }
        }
    }

    #[test]
    fn rejects_self_loops() {
        assert!(CtdgStore::new(vec![ev(1, 1, 0.0)], 3, 0).is_err());
    }

    #[test]
    fn neighbors_are_strictly_earlier_and_recent_first() {
        let s = store(vec![ev(0, 1, 1.0), ev(0, 2, 2.0), ev(0, 3, 3.0)], 5);
        let n = s.neighbors_before(0, 3.0, 10);
        assert_eq!(n.iter().map(|a| a.t).collect::<Vec<_>>(), vec![2.0, 1.0]);
        assert!(s.neighbors_before(4, 10.0, 10).is_empty());
        let one = s.neighbors_before(0, 10.0, 1);
        assert_eq!((one.len(), one[0].neighbor), (1, 3));
    }

    #[test]
    fn density_examples() {
        let tri = store(vec![ev(0, 1, 0.0), ev(1, 2, 1.0), ev(0, 2, 2.0)], 3);
        assert_eq!(density_score(&tri).unwrap(), 1.0);
        let path = store(vec![ev(0, 1, 0.0), ev(1, 2, 1.0), ev(2, 3, 2.0)], 4);
        assert_eq!(density_score(&path).unwrap(), 0.5);
        assert!(density_score(&store(vec![], 4)).is_err());
    }

    #[test]
    fn split_by_time_fraction() {
        let events = (1..=10).map(|i| ev(0, 1, 10.0 * i as f64)).collect();
        let s = store(events, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let split = chrono_split(&s, &SplitSpec::default(), &mut rng).unwrap();
        let times = |st: &CtdgStore| st.events().iter().map(|e| e.t).collect::<Vec<_>>();
        assert_eq!(times(&split.train), vec![10.0, 20.0, 30.0]);
        assert_eq!(times(&split.valid), vec![40.0, 50.0]);
        assert_eq!(times(&split.test), vec![60.0, 70.0, 80.0, 90.0, 100.0]);
    }

    #[test]
    fn sample_ratio_keeps_floor_count() {
        let events = (0..100).map(|i| ev(0, 1, i as f64)).collect();
        let s = store(events, 2);
        let spec = SplitSpec {
            train_ratio: 1.0,
            valid_ratio: 0.0,
            test_ratio: 0.0,
            sample_ratio: 0.5,
        };
        let split = chrono_split(&s, &spec, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(split.train.len(), 50);
        assert_eq!(split.train_full_len, 100);
        let full = SplitSpec { sample_ratio: 1.0, ..spec };
        let split = chrono_split(&s, &full, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(split.train.events(), s.events());
    }

    #[test]
    fn bad_split_specs() {
        let bad = SplitSpec { train_ratio: 0.5, ..SplitSpec::default() };
        assert!(bad.validate().is_err());
        let bad = SplitSpec { sample_ratio: 0.0, ..SplitSpec::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn negatives_exclude_endpoints_and_are_unique() {
        let pos = ev(3, 7, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let negs = sample_negatives(60, &pos, 50, &mut rng).unwrap();
        assert_eq!(negs.len(), 50);
        let mut dsts: Vec<usize> = negs.iter().map(|e| e.dst).collect();
        assert!(negs.iter().all(|e| e.label == 0 && e.src == 3 && e.t == 1.0));
        assert!(dsts.iter().all(|&d| d != 3 && d != 7 && d < 60));
        dsts.sort_unstable();
        dsts.dedup();
        assert_eq!(dsts.len(), 50);
        assert!(sample_negatives(60, &pos, 0, &mut rng).unwrap().is_empty());
        assert!(sample_negatives(51, &pos, 50, &mut rng).is_err());
        let a = sample_negatives(60, &pos, 10, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = sample_negatives(60, &pos, 10, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }
}
