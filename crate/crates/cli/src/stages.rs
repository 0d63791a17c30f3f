//! Stage bodies. Each stage reads its predecessors' outputs from the work
//! directory and writes into `<work>/<stage>/`.

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Duration;

use dmsrec_core::backbone::{BackboneConfig, BackboneParams};
use dmsrec_core::candidates::{extract_candidates, read_candidates, write_candidates, CANDIDATES_FILE};
use dmsrec_core::corpus::{
    read_events, read_jsonl, write_jsonl, PreparedCorpus, PreprocessConfig, Session, CATALOG_FILE, TEST_FILE,
    TRAIN_FILE,
};
use dmsrec_core::encoder::{
    encode_intents, read_embeddings, write_embeddings, EncodingCache, HashProjectionEncoder, HttpEncoder,
    TextEncoder, EMBEDDINGS_FILE, EMBEDDINGS_INDEX,
};
use dmsrec_core::eval::{evaluate, render_table, write_report, DEFAULT_KS, REPORT_JSONL, REPORT_TXT};
use dmsrec_core::fusion::AlignmentConfig;
use dmsrec_core::harness::{run_ablations, run_id, sweep, Experiment, SWEEP_FILE};
use dmsrec_core::intent::{
    mine_intents, CachedClient, HttpLlm, HttpLlmConfig, IntentRecord, LlmClient, MiningConfig, MockLlm,
    CACHE_FILE, FAILURES_FILE, INTENTS_FILE,
};
use dmsrec_core::seed::{derive, sha256_hex};
use dmsrec_core::synth::{rule_corpus, SynthConfig};
use dmsrec_core::trainer::{
    intent_table, load_checkpoint, pretrain, save_checkpoint, train, Ablation, FusedScorer, IntentTable,
    TrainConfig, TrainOutcome, CHECKPOINT_FILE, METRICS_FILE, STEPS_FILE,
};
use dmsrec_core::Exec;

use crate::config::Settings;
use crate::error::{io, CliError, CliResult};
use crate::manifest::{self, digest, verify_lineage, FileDigest, RunManifest, StageLock};

pub const EVENTS_FILE: &str = "events.tsv";
pub const MINING_STATS_FILE: &str = "mining_stats.json";
pub const CANDIDATE_FAILURES_FILE: &str = "candidates.failures.jsonl";
const ENCODING_CACHE_FILE: &str = "encodings.bin";

pub struct Ctx {
    pub work: PathBuf,
    pub settings: Settings,
    pub force: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ran {
    Fresh,
    UpToDate,
}

fn rel(stage: &str, file: &str) -> String {
    format!("{stage}/{file}")
}

impl Ctx {
    fn exec(&self) -> Exec {
        if self.settings.bool("global.sequential") {
            Exec::Sequential
        } else {
            Exec::Parallel
        }
    }

    fn root_seed(&self) -> CliResult<u64> {
        self.settings.int("global.seed")
    }

    fn path(&self, stage: &str, file: &str) -> PathBuf {
        self.work.join(stage).join(file)
    }

    fn cache_dir(&self) -> CliResult<PathBuf> {
        let dir = self.work.join("cache");
        std::fs::create_dir_all(&dir).map_err(|e| io(&dir, e))?;
        Ok(dir)
    }

    /// Lineage check, up-to-date skip, lock, body, then the manifest.
    fn stage(
        &self,
        name: &str,
        sections: &[&str],
        inputs: Vec<String>,
        body: impl FnOnce(&Path) -> CliResult<Vec<String>>,
    ) -> CliResult<Ran> {
        verify_lineage(&self.work, &inputs)?;
        let dir = self.work.join(name);
        std::fs::create_dir_all(&dir).map_err(|e| io(&dir, e))?;
        let config = self.settings.snapshot(sections);
        let version = env!("CARGO_PKG_VERSION");
        let fingerprint = sha256_hex(
            &serde_json::to_vec(&(name, version, &config)).map_err(dmsrec_core::Error::from)?,
        );
        let in_digests = inputs
            .iter()
            .map(|r| digest(&self.work, r))
            .collect::<CliResult<Vec<FileDigest>>>()?;
        if !self.force && manifest::up_to_date(&self.work, &dir, &fingerprint, &in_digests) {
            println!("{name}: up-to-date");
            return Ok(Ran::UpToDate);
        }
        let _lock = StageLock::acquire(&dir)?;
        let old = dir.join(manifest::MANIFEST_FILE);
        if old.exists() {
            std::fs::remove_file(&old).map_err(|e| io(&old, e))?;
        }
        let started = manifest::unix_now();
        log::info!("{name}: running");
        let outputs = body(&dir)?;
        let out_digests = outputs
            .iter()
            .map(|f| digest(&self.work, &rel(name, f)))
            .collect::<CliResult<Vec<FileDigest>>>()?;
        manifest::write_manifest(
            &dir,
            &RunManifest {
                stage: name.to_string(),
                tool_version: version.to_string(),
                config,
                config_fingerprint: fingerprint,
                inputs: in_digests,
                outputs: out_digests,
                started_unix: started,
                finished_unix: manifest::unix_now(),
            },
        )?;
        println!("{name}: done");
        Ok(Ran::Fresh)
    }

    /// Work-relative when the file lives in the work directory, absolute
    /// otherwise.
    fn input_ref(&self, p: &str) -> CliResult<String> {
        if manifest::is_internal(p) && self.work.join(p).is_file() {
            return Ok(p.to_string());
        }
        let abs = std::path::absolute(p).map_err(|e| io(Path::new(p), e))?;
        Ok(abs.to_string_lossy().into_owned())
    }

    fn corpus_inputs() -> Vec<String> {
        [TRAIN_FILE, TEST_FILE, CATALOG_FILE].iter().map(|f| rel("preprocess", f)).collect()
    }

    fn backbone_config(&self, n_items: usize) -> CliResult<BackboneConfig> {
        Ok(BackboneConfig {
            d: self.settings.usize("model.d")?,
            n_items,
            steps: self.settings.usize("model.steps")?,
            seed: derive(self.root_seed()?, "backbone"),
        })
    }

    fn train_config(&self, epochs_key: &str) -> CliResult<TrainConfig> {
        let s = &self.settings;
        let cfg = TrainConfig {
            batch_size: s.usize("optim.batch_size")?,
            learning_rate: s.float("optim.learning_rate"),
            lr_decay: s.float("optim.lr_decay"),
            lr_decay_every: s.usize("optim.lr_decay_every")?,
            weight_decay: s.float("optim.weight_decay"),
            epochs: s.usize(epochs_key)?,
            seed: derive(self.root_seed()?, "train"),
            sigma: s.float("train.sigma"),
            align: AlignmentConfig {
                strategy: s.parse("train.strategy")?,
                alpha: s.float("train.alpha"),
                beta: s.float("train.beta"),
                temperature: s.float("train.temperature"),
                margin: s.float("train.margin"),
                stop_grad_structural: s.bool("train.stop_grad_structural"),
            },
            ablation: s.parse("train.ablation")?,
            ce: s.parse("optim.ce")?,
            exec: self.exec(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn corpus(&self) -> CliResult<PreparedCorpus> {
        Ok(PreparedCorpus::read(&self.work.join("preprocess"))?)
    }

    fn intents(&self) -> CliResult<(usize, IntentTable)> {
        let (index, rows) = read_embeddings(&self.work.join("encode"))?;
        Ok((index.d_text, intent_table(rows)))
    }

    pub fn synth(&self) -> CliResult<Ran> {
        self.stage("synth", &["global", "synth"], vec![], |dir| {
            let s = &self.settings;
            let cfg = SynthConfig {
                n_items: s.int("synth.items")? as u32,
                n_sessions: s.usize("synth.sessions")?,
                min_len: s.usize("synth.min_len")?,
                max_len: s.usize("synth.max_len")?,
                seed: derive(self.root_seed()?, "synth"),
            };
            if cfg.n_items == 0 || cfg.min_len == 0 || cfg.max_len < cfg.min_len {
                return Err(CliError::Config("synth: need items ≥ 1 and 1 ≤ min_len ≤ max_len".into()));
            }
            let mut out = String::new();
            for e in rule_corpus(&cfg) {
                out.push_str(&format!(
                    "{}\t{}\t{}\t{}\n",
                    e.user_id,
                    e.item_id,
                    e.timestamp,
                    e.title.unwrap_or_default()
                ));
            }
            dmsrec_core::encoder::write_atomic(&dir.join(EVENTS_FILE), out.as_bytes())?;
            Ok(vec![EVENTS_FILE.into()])
        })
    }

    pub fn preprocess(&self) -> CliResult<Ran> {
        let s = &self.settings;
        let input = s
            .opt_str("preprocess.input")
            .ok_or_else(|| CliError::Config("preprocess needs an input file (--input or preprocess.input)".into()))?;
        let input = self.input_ref(input)?;
        let metadata = s.opt_str("preprocess.metadata").map(|m| self.input_ref(m)).transpose()?;
        let mut inputs = vec![input.clone()];
        inputs.extend(metadata.clone());
        self.stage("preprocess", &["preprocess"], inputs, |dir| {
            let cfg = PreprocessConfig {
                mode: s.parse("preprocess.mode")?,
                min_item_freq: s.usize("preprocess.min_item_freq")?,
                min_session_len: s.usize("preprocess.min_session_len")?,
                gap_secs: (s.float("preprocess.gap_minutes") * 60.0).round() as u64,
                max_span_secs: (s.float("preprocess.max_span_hours") * 3600.0).round() as u64,
                test_fraction: s.float("preprocess.test_fraction"),
                augment: s.bool("preprocess.augment"),
            };
            if !(0.0..1.0).contains(&cfg.test_fraction) {
                return Err(CliError::Config("preprocess.test_fraction must be in [0, 1)".into()));
            }
            let meta = metadata.as_deref().map(|m| manifest::resolve(&self.work, m));
            let events = read_events(&manifest::resolve(&self.work, &input), meta.as_deref())?;
            let corpus = dmsrec_core::corpus::preprocess(&events, &cfg)?;
            log::info!(
                "preprocess: {} items, {} train / {} test sessions",
                corpus.catalog.n_items(),
                corpus.train.len(),
                corpus.test.len()
            );
            corpus.write(dir)?;
            Ok(vec![TRAIN_FILE.into(), TEST_FILE.into(), CATALOG_FILE.into()])
        })
    }

    fn write_training(&self, dir: &Path, out: &TrainOutcome<BackboneParams>, meta: serde_json::Value) -> CliResult<Vec<String>> {
        save_checkpoint(&dir.join(CHECKPOINT_FILE), &out.model, Some(&out.adam), &sha256_hex(meta.to_string().as_bytes()), meta)?;
        write_jsonl(&dir.join(METRICS_FILE), &out.epochs)?;
        write_jsonl(&dir.join(STEPS_FILE), &out.steps)?;
        if out.fallbacks > 0 {
            log::warn!("{} sessions trained without intent vectors", out.fallbacks);
        }
        Ok(vec![CHECKPOINT_FILE.into(), METRICS_FILE.into(), STEPS_FILE.into()])
    }

    pub fn pretrain(&self) -> CliResult<Ran> {
        self.stage("pretrain", &["global", "model", "optim", "pretrain"], Self::corpus_inputs(), |dir| {
            let corpus = self.corpus()?;
            let bcfg = self.backbone_config(corpus.catalog.n_items())?;
            let cfg = self.train_config("pretrain.epochs")?;
            let out = pretrain(BackboneParams::init(bcfg)?, &corpus.train, &corpus.test, &cfg)?;
            let meta = serde_json::json!({"stage": "pretrain", "run_id": run_id(&bcfg, &cfg)});
            self.write_training(dir, &out, meta)
        })
    }

    pub fn candidates(&self) -> CliResult<Ran> {
        let mut inputs = Self::corpus_inputs();
        inputs.push(rel("pretrain", CHECKPOINT_FILE));
        self.stage("candidates", &["candidates"], inputs, |dir| {
            let corpus = self.corpus()?;
            let model = load_checkpoint(&self.path("pretrain", CHECKPOINT_FILE), 0.0)?.model;
            let all = all_sessions(&corpus);
            let k = self.settings.usize("candidates.k")?.min(corpus.catalog.n_items());
            let ex = extract_candidates(&all, &model.backbone, &corpus.catalog, k, self.exec())?;
            let failures: Vec<serde_json::Value> = ex
                .failures
                .iter()
                .map(|(id, e)| serde_json::json!({"session_id": id, "error": e.to_string()}))
                .collect();
            write_candidates(&dir.join(CANDIDATES_FILE), &ex.sets)?;
            write_jsonl(&dir.join(CANDIDATE_FAILURES_FILE), &failures)?;
            log::info!("candidates: {} sets, {} failures", ex.sets.len(), failures.len());
            Ok(vec![CANDIDATES_FILE.into(), CANDIDATE_FAILURES_FILE.into()])
        })
    }

    pub fn mine(&self) -> CliResult<Ran> {
        let mut inputs = Self::corpus_inputs();
        inputs.push(rel("candidates", CANDIDATES_FILE));
        self.stage("mine", &["mine"], inputs, |dir| {
            let s = &self.settings;
            let cache = self.cache_dir()?.join(CACHE_FILE);
            match s.str("mine.client") {
                "mock" => self.mine_with(dir, CachedClient::with_file(MockLlm, &cache)?),
                "http" => {
                    let cfg = HttpLlmConfig {
                        url: s.str("mine.url").to_string(),
                        model: s.str("mine.model").to_string(),
                        temperature: s.float("mine.temperature"),
                        max_tokens: s.int("mine.max_tokens")? as u32,
                        api_key: s.opt_str("mine.api_key").map(str::to_string),
                        max_retries: s.int("mine.retries")? as u32,
                        backoff: Duration::from_millis(s.int("mine.backoff_ms")?),
                        timeout: Duration::from_secs(s.int("mine.timeout_secs")?),
                    };
                    self.mine_with(dir, CachedClient::with_file(HttpLlm::new(cfg), &cache)?)
                }
                other => Err(CliError::Config(format!("mine.client must be mock or http, got {other:?}"))),
            }
        })
    }

    fn mine_with<C: LlmClient>(&self, dir: &Path, client: CachedClient<C>) -> CliResult<Vec<String>> {
        let s = &self.settings;
        let corpus = self.corpus()?;
        let cands = read_candidates(&self.path("candidates", CANDIDATES_FILE))?;
        let cfg = MiningConfig {
            workers: s.usize("mine.workers")?.max(1),
            max_intents: s.usize("mine.max_intents")?,
            strict: s.bool("mine.strict"),
            match_mode: s.parse("mine.match_mode")?,
        };
        let out = mine_intents(&all_sessions(&corpus), &cands, &client, &cfg)?;
        log::info!(
            "mine: {} records, {} failed, hallucination rate {:.4}, cache {} hits / {} misses",
            out.stats.records,
            out.stats.failed,
            out.stats.hallucination_rate,
            client.hits.load(std::sync::atomic::Ordering::Relaxed),
            client.misses.load(std::sync::atomic::Ordering::Relaxed)
        );
        write_jsonl(&dir.join(INTENTS_FILE), &out.records)?;
        write_jsonl(&dir.join(FAILURES_FILE), &out.failures)?;
        let mut stats = serde_json::to_vec_pretty(&out.stats).map_err(dmsrec_core::Error::from)?;
        stats.push(b'\n');
        dmsrec_core::encoder::write_atomic(&dir.join(MINING_STATS_FILE), &stats)?;
        Ok(vec![INTENTS_FILE.into(), FAILURES_FILE.into(), MINING_STATS_FILE.into()])
    }

    pub fn encode(&self) -> CliResult<Ran> {
        self.stage("encode", &["global", "encode"], vec![rel("mine", INTENTS_FILE)], |dir| {
            let s = &self.settings;
            let records: Vec<IntentRecord> = read_jsonl(&self.path("mine", INTENTS_FILE))?;
            let encoder: Box<dyn TextEncoder> = match s.str("encode.encoder") {
                "hash" => Box::new(HashProjectionEncoder::new(
                    s.usize("encode.dim")?,
                    s.usize("encode.buckets")?,
                    derive(self.root_seed()?, "encoder"),
                )?),
                "pretrained" => Box::new(HttpEncoder::connect(
                    s.str("encode.url"),
                    s.str("encode.model"),
                    s.opt_str("encode.api_key").map(str::to_string),
                )?),
                other => return Err(CliError::Config(format!("encode.encoder must be hash or pretrained, got {other:?}"))),
            };
            let cache_path = self.cache_dir()?.join(ENCODING_CACHE_FILE);
            let mut cache = EncodingCache::load(&cache_path)
                .ok()
                .filter(|c| c.fingerprint == encoder.fingerprint() && c.dim == encoder.dim())
                .unwrap_or_else(|| EncodingCache::new(encoder.fingerprint(), encoder.dim()));
            let rows = encode_intents(&records, encoder.as_ref(), &mut cache, self.exec())?;
            log::info!("encode: {} records, cache {} hits / {} misses", rows.len(), cache.hits, cache.misses);
            cache.save(&cache_path)?;
            write_embeddings(dir, encoder.dim(), &encoder.fingerprint(), &rows)?;
            Ok(vec![EMBEDDINGS_FILE.into(), EMBEDDINGS_INDEX.into()])
        })
    }

    fn embedding_inputs() -> Vec<String> {
        let mut v = Self::corpus_inputs();
        v.push(rel("encode", EMBEDDINGS_FILE));
        v.push(rel("encode", EMBEDDINGS_INDEX));
        v
    }

    pub fn train(&self) -> CliResult<Ran> {
        let warm = self.settings.bool("train.warm_start");
        let mut inputs = Self::embedding_inputs();
        if warm {
            inputs.push(rel("pretrain", CHECKPOINT_FILE));
        }
        self.stage("train", &["global", "model", "optim", "train"], inputs, |dir| {
            let corpus = self.corpus()?;
            let (d_text, intents) = self.intents()?;
            let bcfg = self.backbone_config(corpus.catalog.n_items())?;
            let cfg = self.train_config("train.epochs")?;
            let backbone = if warm {
                load_checkpoint(&self.path("pretrain", CHECKPOINT_FILE), 0.0)?.model.backbone
            } else {
                BackboneParams::init(bcfg)?
            };
            let out = train(backbone, d_text, &corpus.train, &corpus.test, &intents, &cfg)?;
            let meta = serde_json::json!({
                "stage": "train",
                "run_id": run_id(&bcfg, &cfg),
                "ablation": cfg.ablation.key(),
            });
            self.write_training(dir, &out, meta)
        })
    }

    pub fn eval(&self) -> CliResult<Ran> {
        let mut inputs = Self::embedding_inputs();
        inputs.push(rel("train", CHECKPOINT_FILE));
        self.stage("eval", &[], inputs, |dir| {
            let corpus = self.corpus()?;
            let (_, intents) = self.intents()?;
            let loaded = load_checkpoint(&self.path("train", CHECKPOINT_FILE), 0.0)?;
            let ablation: Ablation = loaded.meta["ablation"]
                .as_str()
                .unwrap_or("full")
                .parse()?;
            let scorer = FusedScorer {
                model: &loaded.model,
                intents: Some(&intents),
                ablation,
            };
            let mut result = evaluate(&scorer, &corpus.test, &DEFAULT_KS, self.exec())?;
            result.run_id = loaded.meta["run_id"].as_str().unwrap_or_default().to_string();
            result.variant = ablation.label().to_string();
            write_report(dir, std::slice::from_ref(&result))?;
            print!("{}", render_table(&[result]));
            Ok(vec![REPORT_JSONL.into(), REPORT_TXT.into()])
        })
    }

    fn experiment<'a>(
        &self,
        corpus: &'a PreparedCorpus,
        intents: &'a IntentTable,
        d_text: usize,
        cfg: &'a TrainConfig,
    ) -> CliResult<Experiment<'a>> {
        Ok(Experiment {
            train: &corpus.train,
            test: &corpus.test,
            intents,
            d_text,
            backbone: self.backbone_config(corpus.catalog.n_items())?,
            config: cfg,
        })
    }

    pub fn ablate(&self) -> CliResult<Ran> {
        self.stage("ablate", &["global", "model", "optim", "train"], Self::embedding_inputs(), |dir| {
            let corpus = self.corpus()?;
            let (d_text, intents) = self.intents()?;
            let cfg = self.train_config("train.epochs")?;
            let report = run_ablations(&self.experiment(&corpus, &intents, d_text, &cfg)?, &Ablation::ALL);
            let results = report.results();
            write_report(dir, &results)?;
            print!("{}", render_table(&results));
            if let Some((ab, e)) = report.failed {
                return Err(CliError::Runtime(format!("ablation {} failed: {e}", ab.label())));
            }
            Ok(vec![REPORT_JSONL.into(), REPORT_TXT.into()])
        })
    }

    pub fn sweep(&self) -> CliResult<Ran> {
        self.stage("sweep", &["global", "model", "optim", "train", "sweep"], Self::embedding_inputs(), |dir| {
            let corpus = self.corpus()?;
            let (d_text, intents) = self.intents()?;
            let cfg = self.train_config("train.epochs")?;
            let param = self.settings.parse("sweep.param")?;
            let points = sweep(
                &self.experiment(&corpus, &intents, d_text, &cfg)?,
                param,
                &self.settings.floats("sweep.values"),
            )?;
            write_jsonl(&dir.join(SWEEP_FILE), &points)?;
            let mut stdout = std::io::stdout().lock();
            for p in &points {
                let _ = match (&p.result, &p.error) {
                    (Some(r), _) => writeln!(
                        stdout,
                        "{}={:<6} P@20 {:>6.2}  MRR@20 {:>6.2}",
                        p.param,
                        p.value,
                        r.p(20).unwrap_or(f64::NAN),
                        r.mrr(20).unwrap_or(f64::NAN)
                    ),
                    (None, e) => writeln!(stdout, "{}={:<6} failed: {}", p.param, p.value, e.as_deref().unwrap_or("")),
                };
            }
            Ok(vec![SWEEP_FILE.into()])
        })
    }

    /// The eight-stage chain. Synthesizes a corpus when no input is set.
    pub fn all(&mut self) -> CliResult<()> {
        if self.settings.opt_str("preprocess.input").is_none() {
            self.synth()?;
            let rel_events = rel("synth", EVENTS_FILE);
            self.settings = self.settings.with("preprocess.input", &rel_events)?;
        }
        self.preprocess()?;
        self.pretrain()?;
        self.candidates()?;
        self.mine()?;
        self.encode()?;
        self.train()?;
        self.eval()?;
        Ok(())
    }
}

fn all_sessions(corpus: &PreparedCorpus) -> Vec<Session> {
    corpus.train.iter().chain(&corpus.test).cloned().collect()
}
