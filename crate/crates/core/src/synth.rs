//! Deterministic-rule corpus: item `x` is always followed by `x + 1`
//! (wrapping), so the next item is a function of the last click.

use rand::Rng;

use crate::corpus::InteractionEvent;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SynthConfig {
    pub n_items: u32,
    pub n_sessions: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_items: 50,
            n_sessions: 2000,
            min_len: 3,
            max_len: 7,
            seed: 0,
        }
    }
}

/// Title of item `x`: one token unique to the item.
pub fn synth_title(x: u32) -> String {
    format!("sku{x:03}")
}

/// One user per session, sessions one hour apart, clicks 30 s apart.
pub fn rule_corpus(cfg: &SynthConfig) -> Vec<InteractionEvent> {
    let mut rng = crate::seed::rng(cfg.seed, "synth-rule-corpus");
    let mut events = Vec::new();
    for s in 0..cfg.n_sessions {
        let start = rng.random_range(1..=cfg.n_items);
        let len = rng.random_range(cfg.min_len..=cfg.max_len.max(cfg.min_len));
        for k in 0..len {
            let item = (start - 1 + k as u32) % cfg.n_items + 1;
            events.push(InteractionEvent {
                user_id: format!("u{s:05}"),
                item_id: item,
                timestamp: s as u64 * 3600 + k as u64 * 30,
                title: Some(synth_title(item)),
            });
        }
    }
    events
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn successor_rule_holds() {
        let ev = rule_corpus(&SynthConfig {
            n_sessions: 50,
            ..SynthConfig::default()
        });
        for w in ev.windows(2) {
            if w[0].user_id == w[1].user_id {
                assert_eq!(w[1].item_id, w[0].item_id % 50 + 1);
            }
        }
        assert_eq!(ev, rule_corpus(&SynthConfig { n_sessions: 50, ..SynthConfig::default() }));
    }
}
