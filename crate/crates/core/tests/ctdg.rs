use std::collections::HashSet;

use gsnop::ctdg::{chrono_split, density_score, CtdgStore, SplitSpec, TemporalEvent};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn arb_events(max_nodes: usize) -> impl Strategy<Value = (usize, Vec<TemporalEvent>)> {
    (3..max_nodes).prop_flat_map(|n| {
        let ev = (0..n, 1..n, 0u32..200).prop_map(move |(s, off, t)| {
            TemporalEvent::new(s, (s + off) % n, t as f64 * 0.5, vec![])
        });
        (Just(n), prop::collection::vec(ev, 0..120))
    })
}

proptest! {
    #[test]
    fn neighbor_lookup_never_leaks_the_future(
        (n, events) in arb_events(30),
        q in 0usize..30,
        t in 0u32..220,
        k in 1usize..15,
    ) {
        let store = CtdgStore::new(events, n, 0).unwrap();
        let v = q % n;
        let t = t as f64 * 0.5;
        let got = store.neighbors_before(v, t, k);
        // Brute force: all interactions of v strictly before t, newest first.
        let mut expect: Vec<(f64, usize, usize)> = store
            .events()
            .iter()
            .enumerate()
            .filter(|(_, e)| e.t < t && (e.src == v || e.dst == v))
            .map(|(i, e)| (e.t, i, if e.src == v { e.dst } else { e.src }))
            .collect();
        expect.sort_by(|a, b| b.0.total_cmp(&a.0).then(b.1.cmp(&a.1)));
        expect.truncate(k);
        prop_assert_eq!(got.len(), expect.len());
        for (a, (et, ei, en)) in got.iter().zip(&expect) {
            prop_assert!(a.t < t);
            prop_assert_eq!((a.t, a.event, a.neighbor), (*et, *ei, *en));
        }
    }

    #[test]
    fn density_matches_brute_force((n, events) in arb_events(50)) {
        let store = CtdgStore::new(events.clone(), n, 0).unwrap();
        let touched: HashSet<usize> = events.iter().flat_map(|e| [e.src, e.dst]).collect();
        let v = touched.len() as f64;
        match density_score(&store) {
            Ok(d) => prop_assert!((d - 2.0 * events.len() as f64 / (v * (v - 1.0))).abs() < 1e-12),
            Err(_) => prop_assert!(touched.len() < 2),
        }
    }

    #[test]
    fn split_partitions_in_time_order((n, events) in arb_events(20), seed in 0u64..100) {
        let store = CtdgStore::new(events, n, 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = chrono_split(&store, &SplitSpec::default(), &mut rng).unwrap();
        prop_assert_eq!(s.train.len() + s.valid.len() + s.test.len(), store.len());
        let last = |st: &CtdgStore| st.events().last().map(|e| e.t);
        let first = |st: &CtdgStore| st.events().first().map(|e| e.t);
        if let (Some(a), Some(b)) = (last(&s.train), first(&s.valid)) { prop_assert!(a < b); }
        if let (Some(a), Some(b)) = (last(&s.valid), first(&s.test)) { prop_assert!(a < b); }
        if let (Some(a), Some(b)) = (last(&s.train), first(&s.test)) { prop_assert!(a < b); }
    }
}
