#![allow(dead_code)]

use std::path::Path;

use dmsrec_core::backbone::{BackboneConfig, BackboneParams};
use dmsrec_core::candidates::{extract_candidates, CandidateSet};
use dmsrec_core::corpus::{preprocess, write_jsonl, PreparedCorpus, PreprocessConfig, Session};
use dmsrec_core::encoder::{encode_intents, EncodingCache, HashProjectionEncoder, TextEncoder};
use dmsrec_core::eval::write_report;
use dmsrec_core::harness::{run_ablations, Experiment};
use dmsrec_core::intent::{mine_intents, MiningConfig, MiningOutput, MockLlm};
use dmsrec_core::seed::derive;
use dmsrec_core::synth::{rule_corpus, SynthConfig};
use dmsrec_core::trainer::{intent_table, pretrain, Ablation, IntentTable, TrainConfig, TrainOutcome, METRICS_FILE};
use dmsrec_core::{Exec, Result};

pub const D_TEXT: usize = 64;

pub struct Sizes {
    pub n_sessions: usize,
    pub d: usize,
    pub epochs: usize,
}

pub const SMALL: Sizes = Sizes {
    n_sessions: 300,
    d: 16,
    epochs: 2,
};

pub const FULL: Sizes = Sizes {
    n_sessions: 2000,
    d: 100,
    epochs: 5,
};

pub struct Pipeline {
    pub corpus: PreparedCorpus,
    pub backbone: BackboneConfig,
    pub config: TrainConfig,
    pub pretrained: TrainOutcome<BackboneParams>,
    pub candidates: Vec<CandidateSet>,
    pub mined: MiningOutput,
    pub intents: IntentTable,
}

impl Pipeline {
    pub fn all_sessions(&self) -> Vec<Session> {
        let mut all = self.corpus.train.clone();
        all.extend(self.corpus.test.iter().cloned());
        all
    }

    pub fn experiment(&self) -> Experiment<'_> {
        Experiment {
            train: &self.corpus.train,
            test: &self.corpus.test,
            intents: &self.intents,
            d_text: D_TEXT,
            backbone: self.backbone,
            config: &self.config,
        }
    }
}

/// Synthetic corpus → pretrain → top-50 candidates → mock mining → hash
/// encoding, every seed fanned out from `root`.
pub fn build(root: u64, sizes: &Sizes) -> Result<Pipeline> {
    let events = rule_corpus(&SynthConfig {
        n_sessions: sizes.n_sessions,
        seed: derive(root, "synth"),
        ..SynthConfig::default()
    });
    let corpus = preprocess(&events, &PreprocessConfig::default())?;
    let backbone = BackboneConfig {
        d: sizes.d,
        n_items: corpus.catalog.n_items(),
        steps: 1,
        seed: derive(root, "backbone"),
    };
    let config = TrainConfig {
        epochs: sizes.epochs,
        seed: derive(root, "train"),
        ..TrainConfig::default()
    };
    let pretrained = pretrain(BackboneParams::init(backbone)?, &corpus.train, &corpus.test, &config)?;
    let mut all = corpus.train.clone();
    all.extend(corpus.test.iter().cloned());
    let candidates = extract_candidates(&all, &pretrained.model.backbone, &corpus.catalog, 50, Exec::Parallel)?.sets;
    let mined = mine_intents(&all, &candidates, &MockLlm, &MiningConfig::default())?;
    let enc = HashProjectionEncoder::new(D_TEXT, 4096, derive(root, "encoder"))?;
    let mut cache = EncodingCache::new(enc.fingerprint(), enc.dim());
    let intents = intent_table(encode_intents(&mined.records, &enc, &mut cache, Exec::Parallel)?);
    Ok(Pipeline {
        corpus,
        backbone,
        config,
        pretrained,
        candidates,
        mined,
        intents,
    })
}

/// Runs the full pipeline plus ablations into `out`, writing
/// `metrics.jsonl` (full variant) and `report.jsonl`/`report.txt`.
pub fn run_into(root: u64, sizes: &Sizes, out: &Path) -> Result<()> {
    let p = build(root, sizes)?;
    let report = run_ablations(&p.experiment(), &Ablation::ALL);
    if let Some((_, e)) = report.failed {
        return Err(e);
    }
    let full = &report.rows[0].1;
    write_jsonl(&out.join(METRICS_FILE), &full.epochs)?;
    write_report(out, &report.results())
}
