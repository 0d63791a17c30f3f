use std::collections::{BTreeMap, HashSet};

use ndarray::Array1;
use proptest::prelude::*;

use dmsrec_core::corpus::{filter_corpus, FilterConfig, InteractionEvent, ItemId};
use dmsrec_core::encoder::pool_bucket;
use dmsrec_core::eval::{compute_metrics, rank_of, top_k};
use dmsrec_core::fusion::kl_alignment;
use dmsrec_core::Exec;

fn scores() -> impl Strategy<Value = Vec<f64>> {
    // small integer grid so ties are common
    prop::collection::vec((-4i32..4).prop_map(f64::from), 1..40)
}

proptest! {
    #[test]
    fn metrics_are_bounded_and_monotone(ranks in prop::collection::vec(1usize..60, 1..80)) {
        let mut prev = (0.0, 0.0);
        for k in 1..=60 {
            let (p, m) = compute_metrics(&ranks, k).unwrap();
            prop_assert!((0.0..=100.0).contains(&p));
            prop_assert!(m <= p + 1e-12);
            prop_assert!(p >= prev.0 && m >= prev.1);
            prev = (p, m);
        }
    }

    #[test]
    fn top_k_is_a_stable_sort_prefix(s in scores(), k in 0usize..50) {
        let mut order: Vec<usize> = (0..s.len()).collect();
        order.sort_by(|&a, &b| s[b].partial_cmp(&s[a]).unwrap());
        order.truncate(k);
        prop_assert_eq!(top_k(&s, k), order);
    }

    #[test]
    fn rank_of_agrees_with_top_k(s in scores()) {
        for (pos, idx) in top_k(&s, s.len()).into_iter().enumerate() {
            prop_assert_eq!(rank_of(&s, idx), Some(pos + 1));
        }
        prop_assert_eq!(rank_of(&s, s.len()), None);
    }

    #[test]
    fn pooling_ignores_order(rows in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 4), 1..8), rot in 0usize..8) {
        let vs: Vec<Array1<f64>> = rows.into_iter().map(Array1::from).collect();
        let mut shuffled = vs.clone();
        shuffled.rotate_left(rot % vs.len());
        shuffled.reverse();
        let (a, ha) = pool_bucket(&vs, 4);
        let (b, hb) = pool_bucket(&shuffled, 4);
        prop_assert!(ha && hb);
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn kl_is_shift_invariant_and_nonnegative(
        g in prop::collection::vec(-5.0f64..5.0, 2..12),
        c1 in -20.0f64..20.0,
        c2 in -20.0f64..20.0,
        seed in 0u64..1000,
    ) {
        let e: Array1<f64> = g.iter().enumerate().map(|(i, x)| x * 0.5 + ((i as u64 * 7 + seed) % 5) as f64).collect();
        let g = Array1::from(g);
        let base = kl_alignment(g.view(), e.view()).unwrap();
        let shifted = kl_alignment((&g + c1).view(), (&e + c2).view()).unwrap();
        prop_assert!(base >= -1e-12);
        prop_assert!((base - shifted).abs() <= 1e-9 * base.max(1.0));
        prop_assert!(kl_alignment(g.view(), g.view()).unwrap().abs() <= 1e-12);
    }

    #[test]
    fn exec_modes_agree(xs in prop::collection::vec(-1e6f64..1e6, 0..500)) {
        let f = |x: &f64| (x.sin() * 1e3).to_bits();
        prop_assert_eq!(Exec::Sequential.map(&xs, f), Exec::Parallel.map(&xs, f));
    }
}

/// Deletes one offending item or session at a time until none is left.
fn filter_oracle(events: &[InteractionEvent], cfg: FilterConfig) -> Vec<(String, ItemId, u64)> {
    let mut live: Vec<(String, ItemId, u64)> =
        events.iter().map(|e| (e.user_id.clone(), e.item_id, e.timestamp)).collect();
    loop {
        let mut freq: BTreeMap<ItemId, usize> = BTreeMap::new();
        let mut len: BTreeMap<&str, usize> = BTreeMap::new();
        for (u, i, _) in &live {
            *freq.entry(*i).or_default() += 1;
            *len.entry(u.as_str()).or_default() += 1;
        }
        if let Some((&rare, _)) = freq.iter().find(|(_, &n)| n < cfg.min_item_freq) {
            live.retain(|(_, i, _)| *i != rare);
        } else if let Some((&short, _)) = len.iter().find(|(_, &n)| n <= cfg.min_session_len) {
            let short = short.to_string();
            live.retain(|(u, _, _)| *u != short);
        } else {
            return live;
        }
    }
}

fn event_rows() -> impl Strategy<Value = Vec<InteractionEvent>> {
    prop::collection::vec((0u8..8, 1u32..10), 1..120).prop_map(|rows| {
        rows.into_iter()
            .enumerate()
            .map(|(t, (u, i))| InteractionEvent {
                user_id: format!("u{u}"),
                item_id: i,
                timestamp: t as u64,
                title: None,
            })
            .collect()
    })
}

proptest! {
    #[test]
    fn filter_matches_brute_force(events in event_rows(), min_item_freq in 1usize..6, min_session_len in 0usize..4) {
        let cfg = FilterConfig { min_item_freq, min_session_len };
        let want = filter_oracle(&events, cfg);
        match filter_corpus(&events, cfg) {
            Ok(f) => {
                let got: Vec<(String, ItemId, u64)> = f
                    .events
                    .iter()
                    .map(|e| (e.user_id.clone(), f.original_ids[(e.item_id - 1) as usize], e.timestamp))
                    .collect();
                prop_assert_eq!(&got, &want);
                // new ids follow first appearance
                let mut seen = HashSet::new();
                let firsts: Vec<ItemId> = f.events.iter().map(|e| e.item_id).filter(|i| seen.insert(*i)).collect();
                prop_assert_eq!(firsts, (1..=f.catalog.n_items() as ItemId).collect::<Vec<_>>());
                let fallback = format!("item {}", f.original_ids[0]);
                prop_assert_eq!(f.catalog.title(1), Some(fallback.as_str()));
            }
            Err(_) => prop_assert!(want.is_empty()),
        }
    }
}
