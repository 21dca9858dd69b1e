//! Line-delimited JSON records: training labels, score interchange and
//! scorer queries.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Mutex;

use polytrace::geometry::Point2;
use polytrace::mcr::LabeledSample;
use polytrace::tracer::{RingKey, ScoreQuery, Scorer, StepScores};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RecordError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: usize, message: String },
}

/// One reconstructed ring aligned with its reference: `r` are the
/// contour points, `g_prime` the aligned targets, `c` the vertex flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub instance_id: usize,
    pub ring: usize,
    pub class_id: u8,
    pub gt_index: usize,
    pub r: Vec<[f64; 2]>,
    pub g_prime: Vec<[f64; 2]>,
    pub c: Vec<u8>,
    pub matched: usize,
}

impl From<&LabeledSample> for LabelRecord {
    fn from(s: &LabeledSample) -> Self {
        Self {
            instance_id: s.instance_id,
            ring: s.ring_index,
            class_id: s.class,
            gt_index: s.gt_index,
            r: s.sample.r.points().iter().map(|p| [p.x, p.y]).collect(),
            g_prime: s.sample.g_prime.iter().map(|p| [p.x, p.y]).collect(),
            c: s.sample.labels.clone(),
            matched: s.sample.matched(),
        }
    }
}

/// Scores for one ring: offsets per refinement iteration and the final
/// vertex probabilities, each indexed by ring point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub instance_id: usize,
    pub ring: usize,
    pub offsets: Vec<Vec<[f64; 2]>>,
    pub probs: Vec<f64>,
}

/// A ring as presented to a scorer before refinement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub instance_id: usize,
    pub ring: usize,
    pub points: Vec<[f64; 2]>,
    /// Interior angles at neighbour steps 1, 2 and 3.
    pub theta: Vec<[f64; 3]>,
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: impl IntoIterator<Item = T>) -> Result<(), RecordError> {
    let io = |source| RecordError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut out = BufWriter::new(File::create(path).map_err(io)?);
    for r in records {
        serde_json::to_writer(&mut out, &r).map_err(|e| io(e.into()))?;
        out.write_all(b"\n").map_err(io)?;
    }
    out.flush().map_err(io)
}

/// Reads one record per non-blank line.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, RecordError> {
    let name = path.display().to_string();
    let file = File::open(path).map_err(|source| RecordError::Io {
        path: name.clone(),
        source,
    })?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| RecordError::Io {
            path: name.clone(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| RecordError::Parse {
            path: name.clone(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

/// Replays precomputed scores keyed by instance and ring. Queries before
/// `iterations` take that iteration's offsets; the final query gets zero
/// offsets and the stored probabilities.
#[derive(Debug, Default)]
pub struct FileScorer {
    records: HashMap<(usize, usize), ScoreRecord>,
    iterations: usize,
}

impl FileScorer {
    pub fn from_records(records: Vec<ScoreRecord>, iterations: usize) -> Result<Self, String> {
        let mut map = HashMap::with_capacity(records.len());
        for r in records {
            let key = (r.instance_id, r.ring);
            if map.insert(key, r).is_some() {
                return Err(format!("duplicate scores for instance {} ring {}", key.0, key.1));
            }
        }
        Ok(Self { records: map, iterations })
    }

    pub fn load(path: &Path, iterations: usize) -> Result<Self, RecordError> {
        let records = read_jsonl(path)?;
        Self::from_records(records, iterations).map_err(|message| RecordError::Parse {
            path: path.display().to_string(),
            line: 0,
            message,
        })
    }
}

impl Scorer for FileScorer {
    fn score(&self, q: &ScoreQuery<'_>) -> Result<StepScores, String> {
        let RingKey { instance, ring } = q.key;
        let rec = self
            .records
            .get(&(instance, ring))
            .ok_or_else(|| format!("no scores for instance {instance} ring {ring}"))?;
        let n = q.ring.len();
        let offsets = match rec.offsets.get(q.iteration) {
            _ if q.iteration >= self.iterations => vec![Point2::default(); n],
            Some(o) => o.iter().map(|&[x, y]| Point2::new(x, y)).collect(),
            None => {
                return Err(format!(
                    "instance {instance} ring {ring}: offsets for iteration {} missing ({} given)",
                    q.iteration,
                    rec.offsets.len()
                ))
            }
        };
        Ok(StepScores {
            offsets,
            vertex_prob: rec.probs.clone(),
        })
    }
}

/// Wraps a scorer and records every first-iteration query.
pub struct RecordingScorer<'a> {
    pub inner: &'a dyn Scorer,
    seen: Mutex<Vec<QueryRecord>>,
}

impl<'a> RecordingScorer<'a> {
    pub fn new(inner: &'a dyn Scorer) -> Self {
        Self {
            inner,
            seen: Mutex::new(Vec::new()),
        }
    }

    /// Recorded queries in instance and ring order.
    pub fn into_records(self) -> Vec<QueryRecord> {
        let mut v = self.seen.into_inner().unwrap_or_else(|e| e.into_inner());
        v.sort_by_key(|r| (r.instance_id, r.ring));
        v
    }
}

impl Scorer for RecordingScorer<'_> {
    fn score(&self, q: &ScoreQuery<'_>) -> Result<StepScores, String> {
        if q.iteration == 0 {
            let rec = QueryRecord {
                instance_id: q.key.instance,
                ring: q.key.ring,
                points: q.ring.points().iter().map(|p| [p.x, p.y]).collect(),
                theta: q.angles.theta.clone(),
            };
            self.seen.lock().unwrap_or_else(|e| e.into_inner()).push(rec);
        }
        self.inner.score(q)
    }

    fn concurrent(&self) -> bool {
        self.inner.concurrent()
    }
}

#[cfg(test)]
mod tests {
    use polytrace::geometry::Ring;
    use polytrace::tracer::angle_feature_block;
    use proptest::prelude::*;

    use super::*;

    fn finite() -> impl Strategy<Value = f64> {
        prop_oneof![-1e6f64..1e6, Just(0.1), Just(1.0 / 3.0), Just(f64::MIN_POSITIVE), Just(1e-300)]
    }

    proptest! {
        #[test]
        fn label_and_score_records_round_trip(
            pts in proptest::collection::vec((finite(), finite()), 3..20),
            probs in proptest::collection::vec(0.0f64..=1.0, 0..20),
        ) {
            let dir = tempfile::tempdir().unwrap();
            let label = LabelRecord {
                instance_id: 3,
                ring: 1,
                class_id: 2,
                gt_index: 7,
                r: pts.iter().map(|&(x, y)| [x, y]).collect(),
                g_prime: pts.iter().map(|&(x, y)| [y, x]).collect(),
                c: pts.iter().map(|&(x, _)| u8::from(x > 0.0)).collect(),
                matched: 4,
            };
            let p = dir.path().join("l.jsonl");
            write_jsonl(&p, [&label, &label])?;
            prop_assert_eq!(read_jsonl::<LabelRecord>(&p)?, vec![label.clone(), label]);

            let score = ScoreRecord {
                instance_id: 0,
                ring: 0,
                offsets: vec![pts.iter().map(|&(x, y)| [x, y]).collect(); 2],
                probs,
            };
            let q = dir.path().join("s.jsonl");
            write_jsonl(&q, [&score])?;
            prop_assert_eq!(read_jsonl::<ScoreRecord>(&q)?, vec![score]);
        }
    }

    #[test]
    fn file_scorer_serves_iterations() {
        let ring = Ring::new((0..8).map(|i| Point2::new((i * 3 % 8) as f64, (i * i) as f64)).collect()).unwrap();
        let angles = angle_feature_block(&ring).unwrap();
        let rec = ScoreRecord {
            instance_id: 2,
            ring: 0,
            offsets: vec![vec![[1.0, 0.0]; 8]],
            probs: vec![0.5; 8],
        };
        let s = FileScorer::from_records(vec![rec.clone()], 2).unwrap();
        let q = |iteration, instance| ScoreQuery {
            key: RingKey { instance, ring: 0 },
            iteration,
            ring: &ring,
            angles: &angles,
        };
        assert_eq!(s.score(&q(0, 2)).unwrap().offsets[0], Point2::new(1.0, 0.0));
        // second iteration is missing from the file
        assert!(s.score(&q(1, 2)).is_err());
        assert_eq!(s.score(&q(2, 2)).unwrap().offsets[0], Point2::default());
        assert_eq!(s.score(&q(2, 2)).unwrap().vertex_prob, vec![0.5; 8]);
        assert!(s.score(&q(0, 5)).is_err());
        let one = FileScorer::from_records(vec![rec.clone()], 1).unwrap();
        assert_eq!(one.score(&q(1, 2)).unwrap().offsets[0], Point2::default());
        assert!(FileScorer::from_records(vec![rec.clone(), rec], 1).is_err());
    }

    #[test]
    fn malformed_line_reports_position() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.jsonl");
        std::fs::write(&p, "{\"instance_id\":0,\"ring\":0,\"offsets\":[],\"probs\":[]}\n\n{nope\n").unwrap();
        match read_jsonl::<ScoreRecord>(&p).unwrap_err() {
            RecordError::Parse { line, .. } => assert_eq!(line, 3),
            e => panic!("{e}"),
        }
    }
}
