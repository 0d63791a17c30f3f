//! Top-K candidate extraction from the frozen pretrained backbone.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{ItemCatalog, ItemId, Session};
use crate::error::{Error, Result};
use crate::eval::{top_k, Scorer};
use crate::exec::Exec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub session_id: String,
    pub item_ids: Vec<ItemId>,
    pub titles: Vec<String>,
    pub scores: Vec<f64>,
}

/// Result of a batch extraction: sets in session order plus the sessions
/// that could not be scored.
#[derive(Debug, Default)]
pub struct Extraction {
    pub sets: Vec<CandidateSet>,
    pub failures: Vec<(String, Error)>,
}

pub fn candidates_from_scores(
    session_id: &str,
    scores: &[f64],
    catalog: &ItemCatalog,
    k: usize,
) -> Result<CandidateSet> {
    let idx = top_k(scores, k);
    let item_ids: Vec<ItemId> = idx.iter().map(|&i| (i + 1) as ItemId).collect();
    Ok(CandidateSet {
        session_id: session_id.to_string(),
        titles: catalog.titles_for(&item_ids)?,
        scores: idx.iter().map(|&i| scores[i]).collect(),
        item_ids,
    })
}

/// Scores every session and keeps its `k` best items (ties → smaller id).
/// A session that fails is logged and reported; the rest continue.
pub fn extract_candidates<S: Scorer>(
    sessions: &[Session],
    scorer: &S,
    catalog: &ItemCatalog,
    k: usize,
    exec: Exec,
) -> Result<Extraction> {
    if k == 0 {
        return Err(Error::Config("candidate count K must be ≥ 1".into()));
    }
    let results = exec.map(sessions, |s| {
        if let Some(&bad) = s.items.iter().find(|&&i| !catalog.contains(i)) {
            return Err(Error::UnknownItem(bad));
        }
        let scores = scorer.scores(s)?;
        candidates_from_scores(&s.session_id, scores.as_slice().expect("contiguous"), catalog, k)
    });
    let mut out = Extraction::default();
    for (s, r) in sessions.iter().zip(results) {
        match r {
            Ok(c) => out.sets.push(c),
            Err(e) => {
                log::warn!("candidate extraction failed for session {}: {e}", s.session_id);
                out.failures.push((s.session_id.clone(), e));
            }
        }
    }
    Ok(out)
}

pub const CANDIDATES_FILE: &str = "candidates.jsonl";

pub fn write_candidates(path: &Path, sets: &[CandidateSet]) -> Result<()> {
    crate::corpus::write_jsonl(path, sets)
}

pub fn read_candidates(path: &Path) -> Result<Vec<CandidateSet>> {
    crate::corpus::read_jsonl(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn catalog(n: u32) -> ItemCatalog {
        ItemCatalog {
            id_to_title: (1..=n).map(|i| (i, format!("item {i}"))).collect(),
        }
    }

    #[test]
    fn sorted_top_k() {
        let c = candidates_from_scores("s", &[0.9, 0.1, 0.5], &catalog(3), 2).unwrap();
        assert_eq!(c.item_ids, vec![1, 3]);
        assert_eq!(c.titles, vec!["item 1", "item 3"]);
        assert_eq!(c.scores, vec![0.9, 0.5]);
    }

    #[test]
    fn ties_prefer_smaller_id() {
        let c = candidates_from_scores("s", &[0.5, 0.5], &catalog(2), 1).unwrap();
        assert_eq!(c.item_ids, vec![1]);
    }

    #[test]
    fn k_larger_than_catalog() {
        let c = candidates_from_scores("s", &[0.2, 0.7], &catalog(2), 50).unwrap();
        assert_eq!(c.item_ids, vec![2, 1]);
    }

    struct Fixed;
    impl Scorer for Fixed {
        fn scores(&self, s: &Session) -> Result<ndarray::Array1<f64>> {
            Ok(ndarray::Array1::from_shape_fn(4, |i| (i as f64 - s.items[0] as f64).abs()))
        }
    }

    #[test]
    fn unknown_ids_fail_per_record() {
        let mk = |id: &str, items: Vec<u32>| Session {
            session_id: id.into(),
            titles: vec![String::new(); items.len()],
            items,
            target: 1,
        };
        let sessions = vec![mk("a", vec![1]), mk("b", vec![9]), mk("c", vec![2])];
        let ex = extract_candidates(&sessions, &Fixed, &catalog(4), 2, Exec::Parallel).unwrap();
        assert_eq!(ex.sets.len(), 2);
        assert_eq!(ex.failures.len(), 1);
        assert_eq!(ex.failures[0].0, "b");
        assert!(extract_candidates(&sessions, &Fixed, &catalog(4), 0, Exec::Sequential).is_err());
    }
}
