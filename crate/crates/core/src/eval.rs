//! Ranking metrics and the evaluation loop.

use std::cmp::Ordering;
use std::path::Path;

use ndarray::Array1;
use serde::{Deserialize, Serialize};

use crate::backbone::BackboneParams;
use crate::corpus::Session;
use crate::error::{Error, Result};
use crate::exec::Exec;

/// Anything that produces one score per catalog item (index = id − 1).
pub trait Scorer: Sync {
    fn scores(&self, session: &Session) -> Result<Array1<f64>>;
}

impl Scorer for BackboneParams {
    fn scores(&self, session: &Session) -> Result<Array1<f64>> {
        self.score_session(&session.items)
    }
}

/// Higher score first, then the smaller index.
#[inline]
pub fn rank_order(scores: &[f64], a: usize, b: usize) -> Ordering {
    scores[b].total_cmp(&scores[a]).then(a.cmp(&b))
}

/// Indices of the `k` best scores in rank order.
pub fn top_k(scores: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    let k = k.min(idx.len());
    if k == 0 {
        return Vec::new();
    }
    if k < idx.len() {
        idx.select_nth_unstable_by(k - 1, |&a, &b| rank_order(scores, a, b));
        idx.truncate(k);
    }
    idx.sort_unstable_by(|&a, &b| rank_order(scores, a, b));
    idx
}

/// 1-based rank of `target` under [`rank_order`].
pub fn rank_of(scores: &[f64], target: usize) -> Option<usize> {
    if target >= scores.len() {
        return None;
    }
    let better = (0..scores.len())
        .filter(|&j| rank_order(scores, j, target) == Ordering::Less)
        .count();
    Some(better + 1)
}

/// `(P@K, MRR@K)` in percent from 1-based target ranks.
pub fn compute_metrics(ranks: &[usize], k: usize) -> Result<(f64, f64)> {
    if ranks.is_empty() {
        return Err(Error::Validation("no evaluation sessions".into()));
    }
    let n = ranks.len() as f64;
    let hits = ranks.iter().filter(|&&r| r <= k).count() as f64;
    let rr: f64 = ranks.iter().filter(|&&r| r <= k).map(|&r| 1.0 / r as f64).sum();
    Ok((100.0 * hits / n, 100.0 * rr / n))
}

pub const DEFAULT_KS: [usize; 3] = [5, 10, 20];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub run_id: String,
    pub variant: String,
    pub ks: Vec<usize>,
    pub p_at_k: Vec<f64>,
    pub mrr_at_k: Vec<f64>,
    pub n_sessions: usize,
}

impl EvalResult {
    pub fn p(&self, k: usize) -> Option<f64> {
        self.ks.iter().position(|&x| x == k).map(|i| self.p_at_k[i])
    }

    pub fn mrr(&self, k: usize) -> Option<f64> {
        self.ks.iter().position(|&x| x == k).map(|i| self.mrr_at_k[i])
    }
}

/// Target ranks for every session.
pub fn ranks<S: Scorer + ?Sized>(scorer: &S, sessions: &[Session], exec: Exec) -> Result<Vec<usize>> {
    let per = exec.map(sessions, |s| -> Result<usize> {
        let scores = scorer.scores(s)?;
        let t = (s.target as usize)
            .checked_sub(1)
            .ok_or(Error::UnknownItem(s.target))?;
        rank_of(scores.as_slice().expect("contiguous"), t).ok_or(Error::UnknownItem(s.target))
    });
    per.into_iter().collect()
}

pub fn evaluate<S: Scorer + ?Sized>(
    scorer: &S,
    sessions: &[Session],
    ks: &[usize],
    exec: Exec,
) -> Result<EvalResult> {
    let r = ranks(scorer, sessions, exec)?;
    let mut p_at_k = Vec::with_capacity(ks.len());
    let mut mrr_at_k = Vec::with_capacity(ks.len());
    for &k in ks {
        let (p, m) = compute_metrics(&r, k)?;
        p_at_k.push(p);
        mrr_at_k.push(m);
    }
    Ok(EvalResult {
        run_id: String::new(),
        variant: String::new(),
        ks: ks.to_vec(),
        p_at_k,
        mrr_at_k,
        n_sessions: sessions.len(),
    })
}

pub const REPORT_JSONL: &str = "report.jsonl";
pub const REPORT_TXT: &str = "report.txt";

/// Fixed-width table with one row per result.
pub fn render_table(results: &[EvalResult]) -> String {
    let Some(first) = results.first() else {
        return String::new();
    };
    let mut out = format!("{:<16}", "Variant");
    for &k in &first.ks {
        out.push_str(&format!(" {:>8} {:>8}", format!("P@{k}"), format!("MRR@{k}")));
    }
    out.push('\n');
    for r in results {
        out.push_str(&format!("{:<16}", r.variant));
        for (p, m) in r.p_at_k.iter().zip(&r.mrr_at_k) {
            out.push_str(&format!(" {p:>8.2} {m:>8.2}"));
        }
        out.push('\n');
    }
    out
}

pub fn write_report(dir: &Path, results: &[EvalResult]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    crate::corpus::write_jsonl(&dir.join(REPORT_JSONL), results)?;
    let txt = dir.join(REPORT_TXT);
    std::fs::write(&txt, render_table(results)).map_err(|e| Error::io(&txt, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metrics_hand_case() {
        let (p, m) = compute_metrics(&[1, 4, 9], 5).unwrap();
        assert!((p - 200.0 / 3.0).abs() < 1e-9);
        assert!((m - 100.0 * 1.25 / 3.0).abs() < 1e-9);
        assert_eq!(compute_metrics(&[1, 1], 10).unwrap(), (100.0, 100.0));
        assert_eq!(compute_metrics(&[11, 12], 10).unwrap(), (0.0, 0.0));
        assert!(compute_metrics(&[], 5).is_err());
    }

    #[test]
    fn rank_with_ties() {
        let s = [0.5, 0.9, 0.5, 0.1];
        assert_eq!(rank_of(&s, 1), Some(1));
        assert_eq!(rank_of(&s, 0), Some(2));
        assert_eq!(rank_of(&s, 2), Some(3));
        assert_eq!(rank_of(&s, 4), None);
        assert_eq!(top_k(&s, 3), vec![1, 0, 2]);
        assert_eq!(top_k(&s, 0), Vec::<usize>::new());
    }

    #[test]
    fn top_k_agrees_with_rank() {
        let s: Vec<f64> = (0..40).map(|i| ((i * 37) % 11) as f64).collect();
        let t = top_k(&s, 10);
        for (pos, &i) in t.iter().enumerate() {
            assert_eq!(rank_of(&s, i), Some(pos + 1));
        }
    }

    #[test]
    fn table_layout() {
        let r = EvalResult {
            run_id: "r".into(),
            variant: "full".into(),
            ks: vec![5],
            p_at_k: vec![50.0],
            mrr_at_k: vec![25.0],
            n_sessions: 2,
        };
        let t = render_table(&[r]);
        assert!(t.contains("P@5"));
        assert!(t.contains("50.00"));
        assert!(t.contains("25.00"));
    }
}
