use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::weighted::WeightedIndex;
use rand_distr::{Distribution, Exp, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{CtdgStore, TemporalEvent};
use crate::error::{Error, Result};

/// Interval where the event intensity is multiplied by `multiplier`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Spike {
    pub start: f64,
    pub end: f64,
    pub multiplier: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Intensity {
    /// Poisson arrivals at a constant rate; the horizon follows from the event count.
    Homogeneous { rate: f64 },
    /// Unit base intensity on `[0, duration]` raised inside non-overlapping spikes.
    Bursty { duration: f64, spikes: Vec<Spike> },
}

impl Intensity {
    fn validate(&self) -> Result<()> {
        match self {
            Intensity::Homogeneous { rate } if !(*rate > 0.0 && rate.is_finite()) => {
                Err(Error::Config(format!("rate must be positive, got {rate}")))
            }
            Intensity::Bursty { duration, spikes } => {
                if !(*duration > 0.0 && duration.is_finite()) {
                    return Err(Error::Config(format!("duration must be positive, got {duration}")));
                }
                let mut sorted: Vec<&Spike> = spikes.iter().collect();
                sorted.sort_by(|a, b| a.start.total_cmp(&b.start));
                for (i, s) in sorted.iter().enumerate() {
                    if !(0.0 <= s.start && s.start < s.end && s.end <= *duration && s.multiplier >= 1.0) {
                        return Err(Error::Config(format!("invalid spike {s:?}")));
                    }
                    if i > 0 && sorted[i - 1].end > s.start {
                        return Err(Error::Config("spikes overlap".into()));
                    }
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    fn rate_at(spikes: &[Spike], t: f64) -> f64 {
        spikes
            .iter()
            .find(|s| s.start <= t && t < s.end)
            .map_or(1.0, |s| s.multiplier)
    }

    /// Integral of a bursty intensity over `[a, b]`.
    pub fn mass(&self, a: f64, b: f64) -> f64 {
        match self {
            Intensity::Homogeneous { rate } => rate * (b - a).max(0.0),
            Intensity::Bursty { spikes, .. } => {
                let mut m = (b - a).max(0.0);
                for s in spikes {
                    let overlap = (b.min(s.end) - a.max(s.start)).max(0.0);
                    m += (s.multiplier - 1.0) * overlap;
                }
                m
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub nodes: usize,
    pub communities: usize,
    pub events: usize,
    pub edge_dim: usize,
    pub intensity: Intensity,
    /// Probability that a fresh destination is drawn from the source's partner community.
    pub intra_prob: f64,
    /// Probability of closing a triangle through a recent partner.
    pub triadic_prob: f64,
    /// Probability of repeating one of the source's recent partners.
    pub repeat_prob: f64,
    /// Every `drift_period` time units the partner community shifts by one; 0 disables.
    pub drift_period: f64,
    /// Node `v` is active with weight `(v + 1)^-activity_skew`, both as a
    /// source and as a fresh destination; 0 makes activity uniform.
    pub activity_skew: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            nodes: 100,
            communities: 4,
            events: 2000,
            edge_dim: 8,
            intensity: Intensity::Homogeneous { rate: 1.0 },
            intra_prob: 0.8,
            triadic_prob: 0.1,
            repeat_prob: 0.2,
            drift_period: 0.0,
            activity_skew: 0.0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.nodes < 2 {
            return Err(Error::Config("synthetic graph needs at least 2 nodes".into()));
        }
        if self.communities == 0 || self.communities > self.nodes / 2 {
            return Err(Error::Config(format!(
                "communities must be in 1..={} for {} nodes",
                self.nodes / 2,
                self.nodes
            )));
        }
        for (name, p) in [
            ("intra_prob", self.intra_prob),
            ("triadic_prob", self.triadic_prob),
            ("repeat_prob", self.repeat_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {p}")));
            }
        }
        if self.triadic_prob + self.repeat_prob > 1.0 {
            return Err(Error::Config("triadic_prob + repeat_prob exceeds 1".into()));
        }
        if !(0.0..=10.0).contains(&self.activity_skew) {
            return Err(Error::Config(format!("activity_skew must lie in [0, 10], got {}", self.activity_skew)));
        }
        if !(self.drift_period >= 0.0) {
            return Err(Error::Config("drift_period must be non-negative".into()));
        }
        self.intensity.validate()
    }

    pub fn community(&self, v: usize) -> usize {
        v % self.communities
    }

    /// Community a source in `c` prefers at time `t`.
    pub fn partner_community(&self, c: usize, t: f64) -> usize {
        let shift = if self.drift_period > 0.0 {
            (t / self.drift_period).floor() as usize
        } else {
            0
        };
        (c + shift) % self.communities
    }
}

const RECENT: usize = 5;

/// Deterministic event stream under `seed`.
pub fn generate_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<CtdgStore> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let times = sample_times(&spec.intensity, spec.events, &mut rng);
    let members: Vec<Vec<usize>> = (0..spec.communities)
        .map(|c| (0..spec.nodes).filter(|&v| spec.community(v) == c).collect())
        .collect();
    let skewed = spec.activity_skew > 0.0;
    let weight = |v: usize| ((v + 1) as f64).powf(-spec.activity_skew);
    let any_node = WeightedIndex::new((0..spec.nodes).map(weight)).expect("positive weights");
    let in_pool: Vec<WeightedIndex<f64>> = members
        .iter()
        .map(|m| WeightedIndex::new(m.iter().map(|&v| weight(v))).expect("positive weights"))
        .collect();
    let draw = |rng: &mut ChaCha8Rng, pool: Option<usize>| -> usize {
        match (pool, skewed) {
            (Some(c), true) => members[c][in_pool[c].sample(rng)],
            (Some(c), false) => members[c][rng.random_range(0..members[c].len())],
            (None, true) => any_node.sample(rng),
            (None, false) => rng.random_range(0..spec.nodes),
        }
    };
    let mut recent: Vec<VecDeque<usize>> = vec![VecDeque::new(); spec.nodes];
    let mut events = Vec::with_capacity(spec.events);
    for t in times {
        let src = draw(&mut rng, None);
        let u: f64 = rng.random();
        let mut dst = None;
        if u < spec.repeat_prob {
            dst = pick(&recent[src], &mut rng);
        } else if u < spec.repeat_prob + spec.triadic_prob {
            if let Some(mid) = pick(&recent[src], &mut rng) {
                dst = pick(&recent[mid], &mut rng).filter(|&w| w != src);
            }
        }
        let dst = match dst {
            Some(d) => d,
            None => {
                let pool = spec.partner_community(spec.community(src), t);
                loop {
                    let d = if rng.random::<f64>() < spec.intra_prob {
                        draw(&mut rng, Some(pool))
                    } else {
                        draw(&mut rng, None)
                    };
                    if d != src {
                        break d;
                    }
                }
            }
        };
        for (a, b) in [(src, dst), (dst, src)] {
            if recent[a].len() == RECENT {
                recent[a].pop_front();
            }
            recent[a].push_back(b);
        }
        let feat = (0..spec.edge_dim)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        events.push(TemporalEvent::new(src, dst, t, feat));
    }
    CtdgStore::new(events, spec.nodes, spec.edge_dim)
}

fn pick(q: &VecDeque<usize>, rng: &mut impl Rng) -> Option<usize> {
    if q.is_empty() {
        None
    } else {
        Some(q[rng.random_range(0..q.len())])
    }
}

fn sample_times(intensity: &Intensity, n: usize, rng: &mut impl Rng) -> Vec<f64> {
    match intensity {
        Intensity::Homogeneous { rate } => {
            let exp = Exp::new(*rate).expect("validated rate");
            let mut t = 0.0;
            (0..n)
                .map(|_| {
                    t += exp.sample(rng);
                    t
                })
                .collect()
        }
        Intensity::Bursty { duration, spikes } => {
            // Conditional on the count, arrival times are i.i.d. with density
            // proportional to the intensity; draw them by thinning.
            let peak = spikes.iter().map(|s| s.multiplier).fold(1.0, f64::max);
            let mut out = Vec::with_capacity(n);
            while out.len() < n {
                let t = rng.random_range(0.0..*duration);
                if rng.random::<f64>() * peak < Intensity::rate_at(spikes, t) {
                    out.push(t);
                }
            }
            out.sort_by(f64::total_cmp);
            out
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_under_seed() {
        let spec = SyntheticSpec {
            events: 300,
            ..SyntheticSpec::default()
        };
        let a = generate_synthetic(&spec, 5).unwrap();
        let b = generate_synthetic(&spec, 5).unwrap();
        let c = generate_synthetic(&spec, 6).unwrap();
        assert_eq!(a.events(), b.events());
        assert_ne!(a.events(), c.events());
        assert_eq!(a.content_hash(), b.content_hash());
    }

    #[test]
    fn homogeneous_interarrival_mean() {
        let spec = SyntheticSpec {
            events: 5000,
            intensity: Intensity::Homogeneous { rate: 2.0 },
            ..SyntheticSpec::default()
        };
        let s = generate_synthetic(&spec, 1).unwrap();
        let mean = s.max_t() / s.len() as f64;
        assert!((mean - 0.5).abs() < 0.5 * 0.15, "mean inter-arrival {mean}");
    }

    #[test]
    fn bursty_mass_concentrates_in_spike() {
        let intensity = Intensity::Bursty {
            duration: 100.0,
            spikes: vec![Spike {
                start: 40.0,
                end: 50.0,
                multiplier: 30.0,
            }],
        };
        let expected = intensity.mass(40.0, 50.0) / intensity.mass(0.0, 100.0);
        assert!((expected - 300.0 / 390.0).abs() < 1e-12);
        let spec = SyntheticSpec {
            events: 4000,
            intensity,
            ..SyntheticSpec::default()
        };
        let s = generate_synthetic(&spec, 3).unwrap();
        let inside = s.events().iter().filter(|e| (40.0..50.0).contains(&e.t)).count();
        let frac = inside as f64 / s.len() as f64;
        assert!((frac - expected).abs() < 0.03, "{frac} vs {expected}");
    }

    #[test]
    fn community_preference_shows_up() {
        let spec = SyntheticSpec {
            events: 3000,
            triadic_prob: 0.0,
            repeat_prob: 0.0,
            intra_prob: 0.9,
            ..SyntheticSpec::default()
        };
        let s = generate_synthetic(&spec, 2).unwrap();
        let same = s
            .events()
            .iter()
            .filter(|e| spec.community(e.src) == spec.community(e.dst))
            .count() as f64
            / s.len() as f64;
        assert!(same > 0.85, "{same}");
    }

    #[test]
    fn rejects_bad_specs() {
        let bad = SyntheticSpec {
            communities: 0,
            ..SyntheticSpec::default()
        };
        assert!(generate_synthetic(&bad, 0).is_err());
        let bad = SyntheticSpec {
            intensity: Intensity::Bursty {
                duration: 10.0,
                spikes: vec![
                    Spike { start: 1.0, end: 5.0, multiplier: 2.0 },
                    Spike { start: 4.0, end: 6.0, multiplier: 2.0 },
                ],
            },
            ..SyntheticSpec::default()
        };
        assert!(generate_synthetic(&bad, 0).is_err());
    }
}
