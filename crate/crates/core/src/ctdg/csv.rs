use std::collections::HashMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{CtdgStore, TemporalEvent};
use crate::error::{Error, Result};

/// Options for reading `src,dst,t[,f1..fd]` files.
#[derive(Clone, Debug)]
pub struct CsvSchema {
    /// Width of the random edge features drawn when the file has none.
    pub fallback_edge_dim: usize,
    pub feature_seed: u64,
}

impl Default for CsvSchema {
    fn default() -> Self {
        CsvSchema {
            fallback_edge_dim: 8,
            feature_seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Ingested {
    pub store: CtdgStore,
    /// Original identifier of each dense node id.
    pub node_names: Vec<String>,
    pub self_loops_rejected: usize,
}

pub fn ingest_csv(path: &Path, schema: &CsvSchema) -> Result<Ingested> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = ::csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(::csv::Trim::All)
        .from_reader(file);
    let csv_err = |line: usize, reason: String| Error::Csv {
        path: path.to_path_buf(),
        line,
        reason,
    };

    let headers = reader.headers().map_err(|e| csv_err(1, e.to_string()))?.clone();
    let cols: Vec<&str> = headers.iter().collect();
    if cols.len() < 3 || cols[0] != "src" || cols[1] != "dst" || cols[2] != "t" {
        return Err(csv_err(1, format!("header must start with src,dst,t; found {cols:?}")));
    }
    let feat_cols = cols.len() - 3;

    let mut ids: HashMap<String, usize> = HashMap::new();
    let mut names = Vec::new();
    let mut intern = |name: &str| -> usize {
        if let Some(&i) = ids.get(name) {
            return i;
        }
        ids.insert(name.to_string(), names.len());
        names.push(name.to_string());
        names.len() - 1
    };

    let mut rows = Vec::new();
    let mut self_loops = 0;
    for (i, rec) in reader.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| csv_err(line, e.to_string()))?;
        if rec.len() != cols.len() {
            return Err(csv_err(line, format!("expected {} fields, found {}", cols.len(), rec.len())));
        }
        let (src, dst) = (&rec[0], &rec[1]);
        if src.is_empty() || dst.is_empty() {
            return Err(csv_err(line, "empty node identifier".into()));
        }
        let t: f64 = rec[2]
            .parse()
            .map_err(|_| csv_err(line, format!("timestamp `{}` is not a number", &rec[2])))?;
        if !t.is_finite() || t < 0.0 {
            return Err(csv_err(line, format!("timestamp {t} must be finite and non-negative")));
        }
        let feat = (3..rec.len())
            .map(|j| {
                rec[j]
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| csv_err(line, format!("feature `{}` is not a finite number", &rec[j])))
            })
            .collect::<Result<Vec<f64>>>()?;
        if src == dst {
            self_loops += 1;
            continue;
        }
        rows.push(TemporalEvent::new(intern(src), intern(dst), t, feat));
    }

    let edge_dim = if feat_cols > 0 {
        feat_cols
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(schema.feature_seed);
        for e in &mut rows {
            e.edge_feat = (0..schema.fallback_edge_dim)
                .map(|_| StandardNormal.sample(&mut rng))
                .collect();
        }
        schema.fallback_edge_dim
    };
    let store = CtdgStore::new(rows, names.len(), edge_dim)?;
    Ok(Ingested {
        store,
        node_names: names,
        self_loops_rejected: self_loops,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn densifies_sorts_and_drops_self_loops() {
        let f = write("src,dst,t,f1\nalice,bob,3.0,0.5\nbob,bob,1.0,0\ncarol,alice,1.5,-1\n");
        let got = ingest_csv(f.path(), &CsvSchema::default()).unwrap();
        assert_eq!(got.self_loops_rejected, 1);
        assert_eq!(got.node_names, vec!["alice", "bob", "carol"]);
        let s = &got.store;
        assert_eq!((s.len(), s.node_count(), s.edge_dim()), (2, 3, 1));
        assert_eq!((s.events()[0].src, s.events()[0].dst, s.events()[0].t), (2, 0, 1.5));
        assert_eq!(s.events()[1].edge_feat, vec![0.5]);
    }

    #[test]
    fn fills_missing_features_deterministically() {
        let f = write("src,dst,t\n1,2,0\n2,3,1\n");
        let schema = CsvSchema {
            fallback_edge_dim: 4,
            feature_seed: 7,
        };
        let a = ingest_csv(f.path(), &schema).unwrap();
        let b = ingest_csv(f.path(), &schema).unwrap();
        assert_eq!(a.store.edge_dim(), 4);
        assert_eq!(a.store.events(), b.store.events());
    }

    #[test]
    fn reports_line_of_bad_row() {
        let f = write("src,dst,t\n1,2,0\n2,3,soon\n");
        match ingest_csv(f.path(), &CsvSchema::default()) {
            Err(Error::Csv { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        let f = write("a,b,c\n1,2,0\n");
        assert!(matches!(ingest_csv(f.path(), &CsvSchema::default()), Err(Error::Csv { line: 1, .. })));
    }
}
